"""Optimal preconditioner selection.

The one-shot estimator w_A = (1/n) M^{-1/2} A M^{1/2} S^{-1} sum x_i y_i has
worst-case (over the ellipsoid) excess-risk bound

    bias_coeff * |(I-A)' T' (I-A)|_op  +  noise_coeff * <T', A S'^{-1} A'>

in whitened coordinates. This module minimizes that bound over A:

* ``solve_diagonal`` — exact water-filling closed form when S, T, M are
  simultaneously diagonal: a single scalar threshold tau determines every
  diagonal entry of A.
* ``solve_general`` — arbitrary PD S, M and PSD T. Strong duality gives

    min_A obj(A) = sup { <T', (F^{-1} + S'/noise_coeff)^{-1}> :
                         F PSD, trace F <= bias_coeff },

  so the solver runs projected gradient ascent on the dual (reusing the
  lower-bound machinery), recovers a primal A from the dual optimum, and
  certifies the duality gap, with a Polyak subgradient polish to close the
  last digits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .estimators import Preconditioner, eval_upper_objective, make_preconditioner
from .lowerbound import MaxIterationsError, maximize_F
from .model import SpectralTriple
from .psdlinalg import eigh, spectral_norm, sym

__all__ = [
    "PrecondProgram",
    "DiagonalSolution",
    "MaxIterationsError",
    "solve_diagonal",
    "solve_general",
    "recover_A_from_F",
    "precond_to_json",
]


@dataclass(frozen=True, eq=False)
class PrecondProgram:
    """Objective data: whitened triple plus the two bound coefficients.

    bias_coeff multiplies the operator-norm bias term (1/pi^2 for the
    lower-bound-matching program); noise_coeff multiplies the variance trace
    (sigma2/n, or the inflated finite-sample (2 sigma2 + 2 psi |S'|)/n).
    epsilon_reg = None asks the solver to pick a ridge for singular T'.
    """

    triple: SpectralTriple
    bias_coeff: float
    noise_coeff: float
    epsilon_reg: float | None = None

    def __post_init__(self):
        if not self.bias_coeff > 0:
            raise ValueError("bias_coeff must be positive")
        if self.noise_coeff < 0:
            raise ValueError("noise_coeff must be nonnegative")
        if self.epsilon_reg is not None and self.epsilon_reg < 0:
            raise ValueError("epsilon_reg must be nonnegative")


@dataclass(frozen=True, eq=False)
class DiagonalSolution:
    """Water-filling solution: threshold tau, shrinkage factors a (diagonal of
    A), the active coordinate set, and the attained objective value."""

    tau: float
    a: np.ndarray
    active_set: np.ndarray
    value: float


def _diag_objective(tau, t_w, t_raw, lam, bias_coeff, noise_coeff):
    """Objective of the diagonal program as a function of the threshold tau.

    t_w is the whitened target spectrum t_i/m_i; coordinates with
    t_w > tau^2 are shrunk to a_i = 1 - tau/sqrt(t_w_i), the rest zeroed.
    """
    tau = np.asarray(tau, dtype=float)
    scalar = tau.ndim == 0
    tau2 = np.atleast_1d(tau) ** 2
    active = t_w[None, :] > tau2[:, None]
    safe = np.sqrt(np.where(t_w > 0, t_w, 1.0))  # dead coordinates never activate
    a = np.where(active, 1.0 - np.atleast_1d(tau)[:, None] / safe[None, :], 0.0)
    noise = np.sum(a**2 * (t_raw / lam)[None, :], axis=1)
    vals = bias_coeff * np.atleast_1d(tau) ** 2 + noise_coeff * noise
    return float(vals[0]) if scalar else vals


def _golden_min(f, lo, hi, tol=1e-12):
    """Golden-section minimum of a unimodal-enough scalar function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def solve_diagonal(lam, m, t, bias_coeff: float, noise_coeff: float) -> DiagonalSolution:
    """Exact solution when S = diag(lam), M = diag(m), T = diag(t).

    In whitened coordinates the objective of a diagonal A = diag(a) is

        bias_coeff * max_i t_w_i (1 - a_i)^2  +  noise_coeff * sum_i a_i^2 t_i / lam_i

    with t_w_i = t_i / m_i. For a fixed bias level tau^2 the best a is the
    soft shrinkage a_i = max(0, 1 - tau / sqrt(t_w_i)), so the problem
    reduces to a 1-D convex C^1 minimization over tau, solved by
    golden-section search on each interval between consecutive breakpoints
    sqrt(t_w_i) (where the active set changes).
    """
    lam = np.asarray(lam, dtype=float).reshape(-1)
    m = np.asarray(m, dtype=float).reshape(-1)
    t = np.asarray(t, dtype=float).reshape(-1)
    if not (lam.size == m.size == t.size):
        raise ValueError("lam, m, t must have equal length")
    if np.any(lam <= 0) or np.any(m <= 0):
        raise ValueError("lam and m must be positive")
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    if not bias_coeff > 0:
        raise ValueError("bias_coeff must be positive")
    if noise_coeff < 0:
        raise ValueError("noise_coeff must be nonnegative")

    t_w = t / m
    support = t_w > 0

    def g(tau):
        return _diag_objective(tau, t_w, t, lam, bias_coeff, noise_coeff)

    if noise_coeff == 0 or not support.any():
        tau = 0.0
    else:
        knots = np.unique(np.concatenate([[0.0], np.sqrt(t_w[support])]))
        candidates = list(knots)
        for lo, hi in zip(knots[:-1], knots[1:]):
            candidates.append(_golden_min(g, lo, hi))
        candidates = np.asarray(candidates)
        tau = float(candidates[np.argmin(g(candidates))])

    active = t_w > tau**2
    a = np.where(active, 1.0 - tau / np.sqrt(np.where(active, t_w, 1.0)), 0.0)
    return DiagonalSolution(
        tau=tau, a=a, active_set=np.flatnonzero(active), value=g(tau)
    )


def recover_A_from_F(triple: SpectralTriple, F, noise_coeff: float) -> np.ndarray:
    """Primal preconditioner induced by a dual variable F:

        A = I - S'^{-1} (I + S' F / noise_coeff)^{-1} S'.

    This is the KKT stationarity map of the duality above; at the dual
    optimum it attains the dual value (zero gap).
    """
    d = triple.d
    I = np.eye(d)
    Sp = triple.S_prime
    inner = np.linalg.solve(I + Sp @ sym(np.asarray(F, dtype=float)) / noise_coeff, Sp)
    return I - np.linalg.solve(Sp, inner)


def _subgradient(T_eff, A, S_chol, bias_coeff, noise_coeff):
    d = A.shape[0]
    R = np.eye(d) - A
    B = sym(R.T @ T_eff @ R)
    dec = eigh(B)
    u = dec.eigenvectors[:, 0]
    Tu = T_eff @ (R @ u)
    g_bias = -2.0 * bias_coeff * np.outer(Tu, u)
    g_noise = 2.0 * noise_coeff * (T_eff @ cho_solve(S_chol, A.T).T)
    return g_bias + g_noise


def solve_general(
    prog: PrecondProgram,
    tol: float = 1e-6,
    max_iter: int = 10_000,
    dual_max_iter: int = 5000,
) -> Preconditioner:
    """Minimize the preconditioner objective for arbitrary PD S', PSD T'.

    Pipeline: dual projected-gradient ascent for a certified floor, primal
    recovery from the dual optimum, a closed-form warm start when S' and T'
    commute, then Polyak-stepped subgradient descent until the relative
    duality gap is below ``tol``. Raises MaxIterationsError (carrying the
    best preconditioner and its gap) if the budget runs out first.

    Singular T' is ridged to T' + eps I with eps = epsilon_reg, defaulting
    to 1e-8 |T'|_op; the reported objective is for the ridged program.
    """
    triple = prog.triple
    d = triple.d
    I = np.eye(d)
    T_prime = triple.T_prime
    t_norm = spectral_norm(T_prime)

    # -------- degenerate programs with exact answers --------
    if t_norm == 0.0:
        prec = make_preconditioner(
            triple, np.zeros((d, d)), prog.bias_coeff, prog.noise_coeff
        )
        return replace(prec, gap=0.0)
    if prog.noise_coeff == 0.0:
        prec = make_preconditioner(triple, I, prog.bias_coeff, prog.noise_coeff)
        return replace(prec, gap=0.0)

    eps = prog.epsilon_reg
    if eps is None:
        min_eig = float(np.linalg.eigvalsh(T_prime).min())
        eps = 1e-8 * t_norm if min_eig < 1e-10 * t_norm else 0.0
    T_eff = T_prime + eps * I if eps > 0 else T_prime
    triple_eff = (
        SpectralTriple(
            S_prime=triple.S_prime,
            T_prime=T_eff,
            eig_S_prime=triple.eig_S_prime,
            M_sqrt=triple.M_sqrt,
            M_inv_sqrt=triple.M_inv_sqrt,
        )
        if eps > 0
        else triple
    )

    # -------- certified dual floor --------
    try:
        cert = maximize_F(
            triple_eff,
            sigma2=prog.noise_coeff,
            n=1,
            radius=prog.bias_coeff,
            max_iter=dual_max_iter,
        )
    except MaxIterationsError as err:  # keep the best floor we got
        cert = err.best
    lower = cert.value

    def objective(A):
        return eval_upper_objective(
            triple_eff, A, prog.noise_coeff, bias_coeff=prog.bias_coeff
        )

    # -------- primal candidates --------
    candidates = [recover_A_from_F(triple_eff, cert.F, prog.noise_coeff)]
    Sp = triple_eff.S_prime
    comm = np.linalg.norm(Sp @ T_eff - T_eff @ Sp)
    scale = np.linalg.norm(Sp) * np.linalg.norm(T_eff)
    if comm <= 1e-10 * max(scale, 1.0):
        # simultaneously diagonalizable: rotate to S' eigenbasis, already
        # whitened there (m = 1), and reuse the exact water-filling solution
        U = triple_eff.eig_S_prime.eigenvectors
        lam_w = triple_eff.eig_S_prime.eigenvalues
        t_diag = np.maximum(np.einsum("ij,jk,ki->i", U.T, T_eff, U), 0.0)
        diag = solve_diagonal(
            lam_w, np.ones(d), t_diag, prog.bias_coeff, prog.noise_coeff
        )
        candidates.append(sym(U @ (diag.a[:, None] * U.T)))
    candidates.extend([np.zeros((d, d)), I])

    scored = [(objective(A).objective, float(np.linalg.norm(A)), A) for A in candidates]
    scored.sort(key=lambda item: (item[0], item[1]))
    best_val, _, best_A = scored[0]

    def rel_gap(val):
        return (val - lower) / max(lower, 1e-300)

    # -------- Polyak subgradient polish toward the certified floor --------
    S_chol = cho_factor(Sp)
    A = best_A.copy()
    val = best_val
    it = 0
    while rel_gap(best_val) > tol and it < max_iter:
        it += 1
        G = _subgradient(T_eff, A, S_chol, prog.bias_coeff, prog.noise_coeff)
        g2 = float(np.sum(G * G))
        if g2 == 0.0:
            break
        step = (val - lower) / g2
        if step <= 0:
            break
        A = A - step * G
        val = objective(A).objective
        if val < best_val or (
            val == best_val and np.linalg.norm(A) < np.linalg.norm(best_A)
        ):
            best_val, best_A = val, A.copy()

    gap = rel_gap(best_val)
    prec = make_preconditioner(
        triple_eff, best_A, prog.bias_coeff, prog.noise_coeff
    )
    prec = replace(prec, gap=float(max(gap, 0.0)))
    if gap > tol:
        raise MaxIterationsError(
            f"duality gap {gap:.3e} above tol {tol:.1e} after {it} polish steps",
            best=prec,
            gap=float(gap),
        )
    return prec


def precond_to_json(prec: Preconditioner) -> dict:
    return {
        "A": prec.A.tolist(),
        "objective": prec.objective_value,
        "bias_term": prec.bias_term,
        "variance_term": prec.variance_term,
        "bias_coeff": prec.bias_coeff,
        "noise_coeff": prec.noise_coeff,
        "gap": prec.gap,
        "n": prec.n,
    }
