"""Command-line interface.

Every subcommand runs a study from a JSON spec file, prints a short report,
and exits 0 exactly when all of that study's assertions pass. Seed-level
thread parallelism is controlled by --threads, overridden by the
COVSHIFT_THREADS environment variable.
"""
from __future__ import annotations

import json
import os
import sys

import click

from . import acceptance, experiments
from .estimators import default_noise_coeff
from .model import whiten
from .precond import MaxIterationsError, PrecondProgram, precond_to_json, solve_general


def _load_spec(path, out, tol, seed) -> experiments.ExperimentSpec:
    with open(path) as fh:
        obj = json.load(fh)
    if "kind" not in obj:  # bare instance description: wrap it
        inst = obj.get("instance", obj)
        obj = {"kind": "duality", "instance": inst, "n_grid": [256], "seeds": 1}
    spec = experiments.spec_from_json(obj)
    params = dict(spec.params)
    if tol is not None:
        params["tol"] = tol
    if seed is not None:
        params["seed_base"] = seed
    from dataclasses import replace

    return replace(spec, params=params, output_path=out or spec.output_path)


def _threads(threads: int) -> int:
    env = os.environ.get("COVSHIFT_THREADS")
    return int(env) if env else threads


def _finish(ok: bool):
    click.echo("OK" if ok else "FAILED")
    sys.exit(0 if ok else 1)


common = [
    click.option("--spec", "spec_path", required=True, type=click.Path(exists=True)),
    click.option("--out", default=None, type=click.Path()),
    click.option("--tol", default=None, type=float),
    click.option("--threads", default=1, type=int, show_default=True),
    click.option("--seed", default=None, type=int),
]


def _with_common(fn):
    for opt in reversed(common):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Minimax-optimal linear regression under covariate shift: lower
    bounds, optimal preconditioners, and staged accelerated SGD."""


@main.command()
@_with_common
def duality(spec_path, out, tol, threads, seed):
    """Certify lower-bound value == preconditioner objective per n."""
    spec = _load_spec(spec_path, out, tol, seed)
    rep = experiments.run_duality(spec, threads=_threads(threads))
    for row in rep.rows:
        click.echo(
            f"n={row['n']:>6} eps={row['epsilon']:.1e} "
            f"lower={row['lower_value']:.10e} upper={row['upper_value']:.10e} "
            f"gap={row['relative_gap']:.3e}"
        )
    click.echo(f"worst gap {rep.worst_gap:.3e}; ladder monotone: {rep.ladder_monotone}")
    _finish(rep.ok)


@main.command()
@_with_common
def precondition(spec_path, out, tol, threads, seed):
    """Solve the preconditioner program; write the certified A as JSON."""
    spec = _load_spec(spec_path, out, tol, seed)
    inst = experiments.resolve_instance(spec)
    n = int(spec.n_grid[0])
    prog = PrecondProgram(whiten(inst), 1.0 / 3.141592653589793**2,
                          default_noise_coeff(inst, n))
    gap_tol = spec.params.get("tol", 1e-4)
    ok = True
    try:
        prec = solve_general(prog, tol=gap_tol)
    except MaxIterationsError as err:
        prec, ok = err.best, False
    click.echo(
        f"objective={prec.objective_value:.10e} gap={prec.gap:.3e} "
        f"(bias {prec.bias_term:.3e} + variance {prec.variance_term:.3e})"
    )
    if out:
        with open(out, "w") as fh:
            json.dump(precond_to_json(prec), fh, indent=2)
        click.echo(f"wrote {out}")
    _finish(ok)


@main.command()
@_with_common
@click.option("--n", "n_override", default=None, type=int)
@click.option("--seeds", "seeds_override", default=None, type=int)
def asgd(spec_path, out, tol, threads, seed, n_override, seeds_override):
    """Monte-Carlo risk of the staged method vs. the closed-form bound."""
    spec = _load_spec(spec_path, out, tol, seed)
    from dataclasses import replace

    if n_override is not None:
        spec = replace(spec, n_grid=(n_override,))
    if seeds_override is not None:
        spec = replace(spec, seeds=seeds_override)
    rep = experiments.run_bound_check(spec, threads=_threads(threads))
    for row in rep.rows:
        click.echo(
            f"n={row['n']:>6} risk={row['mc_mean']:.6e} (+-{row['mc_stderr']:.1e}) "
            f"bound={row['bound_total']:.6e} k*={row['k_star']} "
            f"semi={row['semi_bias'] + row['semi_variance']:.6e}"
        )
    _finish(rep.ok)


@main.command()
@_with_common
def sweep(spec_path, out, tol, threads, seed):
    """Rate sweep: fitted log-log slope vs. the predicted exponent."""
    spec = _load_spec(spec_path, out, tol, seed)
    rep = experiments.run_rate_sweep(spec, threads=_threads(threads))
    click.echo(
        f"predicted exponent {rep.predicted_exponent:+.4f}; "
        f"raw slope {rep.fit_raw.slope:+.4f} (r2 {rep.fit_raw.r2:.3f}); "
        f"deflated slope {rep.fit_deflated.slope:+.4f} "
        f"(gap {rep.fit_deflated.gap:.3f}); "
        f"lower-bound slope {rep.fit_lower.slope:+.4f}"
    )
    _finish(rep.ok)


@main.command()
@_with_common
def emergence(spec_path, out, tol, threads, seed):
    """Plateau/knee/drop shape of the risk curve for a plateau target."""
    spec = _load_spec(spec_path, out, tol, seed)
    rep = experiments.run_emergence(spec, threads=_threads(threads))
    click.echo(
        f"knee at n={rep.knee_n} (target {rep.knee_target:.0f}, "
        f"ok={rep.knee_ok}); plateau ratio {rep.plateau_ratio:.3f} "
        f"(ok={rep.plateau_ok}); drop ratio {rep.drop_ratio:.3f} "
        f"(ok={rep.drop_ok}); nonincreasing={rep.isotonic_ok}"
    )
    _finish(rep.ok)


@main.command()
@click.option("--threads", default=1, type=int, show_default=True)
@click.option("--only", default=None, type=str, help="comma-separated criterion numbers")
def verify(threads, only):
    """Run the full acceptance suite (one line per criterion)."""
    selected = None
    if only:
        selected = [int(tok) for tok in only.split(",")]
    ok = acceptance.run_all(threads=_threads(threads), selected=selected)
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
