"""Exact per-eigendirection dynamics for the staged accelerated SGD.

In the eigenbasis of S, the method's population dynamics decouple into
independent 2-state linear systems: with h = (w - w*, u - w*) components
along eigendirection i, one step in a stage with steps (delta, gamma) maps

    h <- A(lambda_i) h,   A(lambda) = [[0, 1 - delta*lambda],
                                       [-c, 1 + c - q*lambda]]

where c = alpha(1-beta) and q = alpha*delta + (1-alpha)*gamma. This module
implements that matrix family (eigenvalues, regimes, powers), the
closed-form per-stage stationary second-moment matrices U and Q of the
driven recursion, and the semi-stochastic risk oracle: the exact bias of
the noiseless dynamics plus the exact variance of the noise-driven 2x2
second-moment recursion, whose sum predicts the algorithm's risk without
Monte Carlo.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .asgd import ASGDConfig, effective_dimension
from .model import ProblemInstance
from .psdlinalg import eigh

__all__ = [
    "MomentumMatrix2x2",
    "RegimeLabel",
    "StationaryPair",
    "DivergentStationaryState",
    "momentum_matrix",
    "momentum_eigenvalues",
    "eig_pair",
    "eig_pair_pm",
    "spectral_radius",
    "lambda_dagger",
    "lambda_ddagger",
    "regime",
    "momentum_power",
    "stationary_U",
    "SemiStochastic",
    "semi_stochastic_bias",
    "semi_stochastic_variance",
    "semi_stochastic_variance_bound",
    "per_direction_table",
]


class DivergentStationaryState(ArithmeticError):
    """The driven 2x2 recursion has no finite stationary point (U22*lambda >= 1)."""


@dataclass(frozen=True)
class MomentumMatrix2x2:
    """One-direction transition matrix; only the products of step sizes with
    the eigenvalue enter."""

    lam: float
    c: float
    q: float
    delta: float

    @property
    def entries(self) -> np.ndarray:
        return np.array(
            [
                [0.0, 1.0 - self.delta * self.lam],
                [-self.c, 1.0 + self.c - self.q * self.lam],
            ]
        )

    @property
    def trace(self) -> float:
        return 1.0 + self.c - self.q * self.lam

    @property
    def det(self) -> float:
        return self.c * (1.0 - self.delta * self.lam)


def momentum_matrix(
    lam: float,
    cfg_or_c,
    q: float | None = None,
    delta: float | None = None,
    ell: int = 1,
) -> MomentumMatrix2x2:
    """Build A(lambda) either from raw constants (lam, c, q, delta) or from
    an ASGDConfig and a stage number."""
    if isinstance(cfg_or_c, ASGDConfig):
        d_l, _, q_l = cfg_or_c.stage_steps(ell)
        return MomentumMatrix2x2(lam=lam, c=cfg_or_c.c, q=q_l, delta=d_l)
    return MomentumMatrix2x2(lam=lam, c=cfg_or_c, q=q, delta=delta)


def eig_pair_pm(c, q, delta, lam):
    """Eigenvalues of A(lambda) in the minus/plus-branch convention,
    vectorized, as complex arrays: x_{1,2} = (tr -+ sqrt(tr^2 - 4 det))/2
    with tr = 1+c-q*lam and det = c(1-delta*lam)."""
    tr = np.asarray(1.0 + c - q * lam, dtype=complex)
    det = np.asarray(c * (1.0 - delta * lam), dtype=complex)
    root = np.sqrt(tr * tr - 4.0 * det)
    return (tr - root) / 2.0, (tr + root) / 2.0


def eig_pair(c, q, delta, lam):
    """Same pair ordered by magnitude, |x1| <= |x2| (the conventions agree
    whenever the trace is nonnegative, i.e. q*lam <= 1+c)."""
    x1, x2 = eig_pair_pm(c, q, delta, lam)
    swap = np.abs(x1) > np.abs(x2)
    return np.where(swap, x2, x1), np.where(swap, x1, x2)


def momentum_eigenvalues(A: MomentumMatrix2x2) -> tuple[complex, complex]:
    x1, x2 = eig_pair(A.c, A.q, A.delta, A.lam)
    return complex(x1), complex(x2)


def spectral_radius(c, q, delta, lam):
    _, x2 = eig_pair(c, q, delta, lam)
    return np.abs(x2)


def lambda_dagger(c: float, q: float, delta: float) -> float:
    """Lower regime breakpoint (1-c)^2/(sqrt(q-c*delta)+sqrt(c(q-delta)))^2."""
    if q <= c * delta or q < delta:
        raise ValueError("need q > c*delta and q >= delta")
    return (1.0 - c) ** 2 / (math.sqrt(q - c * delta) + math.sqrt(c * (q - delta))) ** 2


def lambda_ddagger(c: float, q: float, delta: float) -> float:
    """Upper regime breakpoint (1-c)^2/(sqrt(q-c*delta)-sqrt(c(q-delta)))^2,
    +inf when the two square roots coincide."""
    if q <= c * delta or q < delta:
        raise ValueError("need q > c*delta and q >= delta")
    denom = math.sqrt(q - c * delta) - math.sqrt(c * (q - delta))
    if denom == 0.0:
        return math.inf
    return (1.0 - c) ** 2 / denom**2


@dataclass(frozen=True)
class RegimeLabel:
    """Which of the three eigenvalue regimes lambda falls in: I1 = [0, dag]
    (real eigenvalues, slow contraction), I2 = (dag, ddag) (complex pair of
    modulus sqrt(c(1-delta*lambda))), I3 = [ddag, inf) (real again)."""

    label: str
    lambda_dagger: float
    lambda_ddagger: float


def regime(c: float, q: float, delta: float, lam: float) -> RegimeLabel:
    dag = lambda_dagger(c, q, delta)
    ddag = lambda_ddagger(c, q, delta)
    if lam <= dag:
        label = "I1"
    elif lam < ddag:
        label = "I2"
    else:
        label = "I3"
    return RegimeLabel(label=label, lambda_dagger=dag, lambda_ddagger=ddag)


def momentum_power(c, q, delta, lam, k: int) -> np.ndarray:
    """A(lambda)^k in closed form via the eigenvalue pair: with
    a_j = (x2^j - x1^j)/(x2 - x1) (-> j x^(j-1) at a double root),

        A^k = [[-c(1-delta*lam) a_{k-1}, (1-delta*lam) a_k],
               [-c a_k,                  a_{k+1}        ]].

    Vectorized over the parameters; returns shape (..., 2, 2) real.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x1, x2 = eig_pair(c, q, delta, lam)
    diff = x2 - x1
    small = np.abs(diff) <= 1e-13 * np.maximum(1.0, np.abs(x2))
    safe = np.where(small, 1.0, diff)

    def a(j):
        generic = (x2**j - x1**j) / safe
        double = j * x2 ** (j - 1) if j >= 1 else np.zeros_like(x2)
        return np.where(small, double, generic)

    b = np.asarray(1.0 - delta * lam, dtype=complex)
    cc = np.asarray(c, dtype=complex)
    out = np.stack(
        [
            np.stack([-cc * b * a(k - 1), b * a(k)], axis=-1),
            np.stack([-cc * a(k), a(k + 1)], axis=-1),
        ],
        axis=-2,
    )
    imag_max = float(np.abs(out.imag).max())
    scale = max(1.0, float(np.abs(out.real).max()))
    if imag_max > 1e-9 * scale:
        raise ArithmeticError(f"matrix power has imaginary residue {imag_max:.3e}")
    return out.real


@dataclass(frozen=True, eq=False)
class StationaryPair:
    """Stationary second-moment matrices of the one-direction recursion
    driven by unit-variance noise entering as -(delta, q) per step:
    U solves U = A U A' - G U G' + N with N = lam [[d^2, dq],[dq, q^2]],
    G = [[0, d*lam],[0, q*lam]]; Q = sum_k A^k N A'^k = U/(1 - U22 lam)."""

    lam: float
    U11: float
    U12: float
    U22: float
    Q: np.ndarray

    @property
    def U(self) -> np.ndarray:
        return np.array([[self.U11, self.U12], [self.U12, self.U22]])


def stationary_U(lam: float, c: float, q: float, delta: float) -> StationaryPair:
    """Closed-form stationary matrices. Denominator
    D = 2(1 - c^2 + c lam (q + c delta)) must be positive; the geometric
    series behind Q additionally needs U22 * lam < 1, else the recursion is
    divergent at this eigenvalue and DivergentStationaryState is raised."""
    D = 2.0 * (1.0 - c * c + c * lam * (q + c * delta))
    if D <= 0:
        raise ValueError("stationary denominator not positive; recursion unstable")
    U22 = delta / 2.0 + (1.0 + c) * (q - delta) / D
    U11 = (1.0 - 2.0 * delta * lam) * U22 + delta * delta * lam
    U12 = (
        (1.0 + c - lam * (q + c * delta)) * (q - c * delta)
        + delta * lam * (q + c * delta)
    ) / D
    if U22 * lam >= 1.0:
        raise DivergentStationaryState(
            f"U22*lambda = {U22 * lam:.6f} >= 1; no finite stationary state"
        )
    U = np.array([[U11, U12], [U12, U22]])
    return StationaryPair(lam=lam, U11=U11, U12=U12, U22=U22, Q=U / (1.0 - U22 * lam))


# =====================================================================
# semi-stochastic risk oracle
# =====================================================================

@dataclass(frozen=True, eq=False)
class SemiStochastic:
    """per_direction holds each eigendirection's diagonal contribution
    t_ii * (component)^2; total additionally includes the cross terms that
    appear when T is dense in S's eigenbasis (bias only; the variance
    recursion is exactly block-diagonal, so its total is the plain sum)."""

    per_direction: np.ndarray
    total: float


def _stage_mats(cfg: ASGDConfig, lam: np.ndarray, ell: int):
    delta, _, q = cfg.stage_steps(ell)
    b = 1.0 - delta * lam          # A[0,1]
    e = 1.0 + cfg.c - q * lam      # A[1,1]
    return delta, q, b, e


def semi_stochastic_bias(inst: ProblemInstance, cfg: ASGDConfig) -> SemiStochastic:
    """Exact excess risk of the noiseless (population-gradient) dynamics
    after the full schedule, propagated direction-by-direction: h starts at
    (-w*_i, -w*_i) in S's eigenbasis and is multiplied by the stage matrix
    A(lambda_i) once per step. Matches a full-gradient run of the algorithm
    to rounding error."""
    dec = eigh(inst.S)
    lam, V = dec.eigenvalues, dec.eigenvectors
    w0 = -(V.T @ inst.w_star)
    h1 = w0.copy()  # w - w* components
    h2 = w0.copy()  # u - w* components
    c = cfg.c
    for ell in range(1, cfg.stages + 1):
        _, _, b, e = _stage_mats(cfg, lam, ell)
        for _ in range(cfg.stage_len):
            h1, h2 = b * h2, -c * h1 + e * h2
    T_tilde = V.T @ inst.T @ V
    per_direction = np.diag(T_tilde) * h1**2
    total = float(h1 @ T_tilde @ h1)
    return SemiStochastic(per_direction=per_direction, total=total)


def semi_stochastic_variance(inst: ProblemInstance, cfg: ASGDConfig) -> SemiStochastic:
    """Exact noise variance of the dynamics: per direction, the 2x2 second
    moment C obeys C <- A C A' + sigma2 lam [[d^2, dq],[dq, q^2]] from
    C = 0, and the risk contribution is t_ii * C11. Exactly block-diagonal
    across directions, so the total is the sum even for dense T."""
    if inst.sigma2 == 0:
        z = np.zeros(inst.d)
        return SemiStochastic(per_direction=z, total=0.0)
    dec = eigh(inst.S)
    lam, V = dec.eigenvalues, dec.eigenvectors
    c = cfg.c
    C11 = np.zeros_like(lam)
    C12 = np.zeros_like(lam)
    C22 = np.zeros_like(lam)
    for ell in range(1, cfg.stages + 1):
        delta, q, b, e = _stage_mats(cfg, lam, ell)
        n11 = inst.sigma2 * lam * delta * delta
        n12 = inst.sigma2 * lam * delta * q
        n22 = inst.sigma2 * lam * q * q
        for _ in range(cfg.stage_len):
            C11, C12, C22 = (
                b * b * C22 + n11,
                -c * b * C12 + e * b * C22 + n12,
                c * c * C11 - 2.0 * c * e * C12 + e * e * C22 + n22,
            )
    t_diag = np.diag(V.T @ inst.T @ V)
    per_direction = t_diag * C11
    return SemiStochastic(per_direction=per_direction, total=float(per_direction.sum()))


def semi_stochastic_variance_bound(inst: ProblemInstance, cfg: ASGDConfig) -> float:
    """Closed-form cap on the semi-stochastic variance total:

        sigma2 [ sum_{i<=k*} t_ii/(2 K lambda_i)
                 + (128/15) K ((q - c delta)/(1-c))^2 sum_{i>k*} lambda_i t_ii ].
    """
    dec = eigh(inst.S)
    lam, V = dec.eigenvalues, dec.eigenvectors
    t_diag = np.maximum(np.diag(V.T @ inst.T @ V), 0.0)
    K = cfg.stage_len
    k_star = effective_dimension(cfg, lam)
    head = np.arange(lam.size) < k_star
    ratio = (cfg.q - cfg.c * cfg.delta0) / (1.0 - cfg.c)
    return inst.sigma2 * (
        float(np.sum(t_diag[head] / (2.0 * K * lam[head])))
        + (128.0 / 15.0) * K * ratio**2 * float(np.sum(lam[~head] * t_diag[~head]))
    )


def per_direction_table(inst: ProblemInstance, cfg: ASGDConfig) -> list[dict]:
    """Rows (i, lambda_i, t_ii, bias_i, var_i, regime) for CSV diagnostics,
    regimes classified at stage-1 constants."""
    dec = eigh(inst.S)
    lam, V = dec.eigenvalues, dec.eigenvectors
    t_diag = np.diag(V.T @ inst.T @ V)
    bias = semi_stochastic_bias(inst, cfg).per_direction
    var = semi_stochastic_variance(inst, cfg).per_direction
    rows = []
    for i in range(lam.size):
        lab = regime(cfg.c, cfg.q, cfg.delta0, float(lam[i])).label
        rows.append(
            {
                "i": i + 1,
                "lambda": float(lam[i]),
                "t_ii": float(t_diag[i]),
                "bias": float(bias[i]),
                "variance": float(var[i]),
                "regime": lab,
            }
        )
    return rows
