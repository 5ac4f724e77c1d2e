"""Sequential-averaging inner solvers and the step map's VJPs.

One inner iteration averages a gradient step on the inner objective h with a
gradient step on the outer objective g:

    theta_{k+1} = omega_k - t * grad1_h(omega_k, lam)
    phi_{k+1}   = omega_k - s * grad1_g(omega_k, lam)
    omega_{k+1} = alpha_{k+1} * theta_{k+1} + (1 - alpha_{k+1}) * phi_{k+1}

With alpha == 1 the update degenerates to plain gradient descent on h, which
is exactly the inner solver of the basic bilevel model; the improved model
uses the decaying schedule alpha_k = min(1, k^(-exponent)).  Steps with
alpha == 1 skip the grad1_g evaluation entirely, so a run with exponent 0 is
bit-identical to a basic-mode run.

The step map's partial derivatives, consumed adjoint-first by the reverse
pass, are

    a^T d(omega')/d(omega) = a - t*alpha * vjp11_h(a) - s*(1-alpha) * vjp11_g(a)
    a^T d(omega')/d(lam)   =   - t*alpha * vjp12_h(a) - s*(1-alpha) * vjp12_g(a)

evaluated at the step's input iterate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .problem import BilevelProblem, OracleDivergence, as_vector

__all__ = [
    "StepParams",
    "InnerSolveSpec",
    "Tape",
    "alpha_schedule",
    "bigsam_step",
    "vjp_phi_omega",
    "vjp_phi_lambda",
    "solve_inner",
    "bigsam_standalone",
]

MODES = ("improved", "basic")


@dataclass(frozen=True)
class StepParams:
    """Per-step constants: inner step sizes and the averaging weight."""

    t: float
    s: float
    alpha: float

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("t must be positive")
        if not self.s > 0:
            raise ValueError("s must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")


@dataclass(frozen=True)
class InnerSolveSpec:
    """Configuration of one inner solve.

    ``bigsam_frequency`` f applies the averaged step on iterations with
    k % f == 0 (0-based) and a pure h-gradient step otherwise; f = 1 averages
    every step.  ``omega0`` defaults to the problem's start point, or zeros.
    """

    K: int
    t: float
    s: float
    alpha_exponent: float = 0.25
    bigsam_frequency: int = 1
    omega0: Optional[np.ndarray] = None

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 0:
            raise ValueError("K must be a non-negative integer")
        if not (self.t > 0 and self.s > 0):
            raise ValueError("step sizes must be positive")
        if int(self.bigsam_frequency) != self.bigsam_frequency or self.bigsam_frequency < 1:
            raise ValueError("bigsam_frequency must be a positive integer")


@dataclass(frozen=True)
class Tape:
    """Recorded inner trajectory consumed by the reverse pass.

    ``iterates`` stacks omega_0..omega_K row-wise; ``alphas`` holds the K
    averaging weights actually used (alphas[k] produced iterates[k+1]).
    """

    iterates: np.ndarray
    alphas: np.ndarray
    t: float
    s: float
    lam: np.ndarray
    mode: str

    def __post_init__(self):
        if self.iterates.shape[0] != self.alphas.shape[0] + 1:
            raise ValueError("tape must hold exactly one more iterate than alphas")
        if not (np.all(np.isfinite(self.iterates)) and np.all(np.isfinite(self.alphas))):
            raise ValueError("tape contains non-finite entries")

    @property
    def K(self) -> int:
        return self.alphas.shape[0]

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]


def alpha_schedule(k: int, exponent: float) -> float:
    """Averaging weight for the step producing iterate k (1-based): min(1, k^-exponent)."""
    if int(k) != k or k < 1:
        raise ValueError(f"invalid-iteration-index: k must be a positive integer, got {k}")
    return min(1.0, float(k) ** (-exponent))


def _finite(vec: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(vec)):
        raise OracleDivergence(f"oracle-divergence: {what} returned a non-finite value")
    return vec


def bigsam_step(problem: BilevelProblem, omega, lam, p: StepParams) -> np.ndarray:
    """One averaged step; the alpha == 1 branch never evaluates grad1_g."""
    omega = as_vector(omega, problem.inner_dim, "omega")
    lam = as_vector(lam, problem.outer_dim, "lam")
    gh = _finite(np.asarray(problem.grad1_h(omega, lam), dtype=np.float64), "grad1_h")
    theta = omega - p.t * gh
    if p.alpha == 1.0:
        return theta
    gg = _finite(np.asarray(problem.grad1_g(omega, lam), dtype=np.float64), "grad1_g")
    phi = omega - p.s * gg
    return p.alpha * theta + (1.0 - p.alpha) * phi


def vjp_phi_omega(problem: BilevelProblem, a, omega, lam, p: StepParams) -> np.ndarray:
    """Adjoint times the step map's Jacobian in omega."""
    a = as_vector(a, problem.inner_dim, "adjoint")
    out = a - p.t * p.alpha * _finite(problem.vjp11_h(a, omega, lam), "vjp11_h")
    if p.alpha != 1.0:
        out = out - p.s * (1.0 - p.alpha) * _finite(problem.vjp11_g(a, omega, lam), "vjp11_g")
    return out


def vjp_phi_lambda(problem: BilevelProblem, a, omega, lam, p: StepParams) -> np.ndarray:
    """Adjoint times the step map's Jacobian in lam."""
    a = as_vector(a, problem.inner_dim, "adjoint")
    out = -p.t * p.alpha * _finite(problem.vjp12_h(a, omega, lam), "vjp12_h")
    if p.alpha != 1.0:
        out = out - p.s * (1.0 - p.alpha) * _finite(problem.vjp12_g(a, omega, lam), "vjp12_g")
    return out


def step_alpha(k: int, mode: str, spec: InnerSolveSpec) -> float:
    """Averaging weight used on 0-based step k under the given mode."""
    if mode == "basic" or (k % spec.bigsam_frequency) != 0:
        return 1.0
    return alpha_schedule(k + 1, spec.alpha_exponent)


def solve_inner(problem: BilevelProblem, lam, spec: InnerSolveSpec, mode: str) -> Tape:
    """Run K averaged steps from omega_0 and record the full trajectory.

    Basic mode forces alpha == 1 on every step (the averaged update then is
    plain gradient descent on h and never touches g).  No projection, no line
    search, no stopping rule beyond the fixed K.

    The loop applies the expanded single-expression form of the update,
    omega - t*alpha*grad1_h - s*(1-alpha)*grad1_g, which agrees with
    ``bigsam_step``'s two-step average to floating-point roundoff.  A solve
    costs K gradient evaluations of h plus one of g per averaged step;
    finiteness is checked once on the recorded trajectory (the first
    non-finite iterate names the diverging step).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    lam = as_vector(lam, problem.outer_dim, "lam")
    if spec.omega0 is not None:
        omega = as_vector(spec.omega0, problem.inner_dim, "omega0").copy()
    elif problem.omega0 is not None:
        omega = as_vector(problem.omega0, problem.inner_dim, "omega0").copy()
    else:
        omega = np.zeros(problem.inner_dim)

    grad1_h, grad1_g = problem.grad1_h, problem.grad1_g
    t, s, expo, freq = spec.t, spec.s, spec.alpha_exponent, spec.bigsam_frequency
    basic = mode == "basic"
    iterates = np.empty((spec.K + 1, problem.inner_dim))
    iterates[0] = omega
    alphas = []
    for k in range(spec.K):
        if basic or (k % freq) != 0:
            alpha = 1.0
        else:
            # alpha_schedule inlined; k + 1 >= 1 by construction
            alpha = min(1.0, float(k + 1) ** -expo)
        if alpha == 1.0:
            omega = omega - t * grad1_h(omega, lam)
        else:
            # expanded form of the theta/phi average, one pass over omega
            omega = omega - (t * alpha) * grad1_h(omega, lam) \
                          - (s * (1.0 - alpha)) * grad1_g(omega, lam)
        iterates[k + 1] = omega
        alphas.append(alpha)
    finite_rows = np.all(np.isfinite(iterates), axis=1)
    if not finite_rows.all():
        bad = int(np.argmin(finite_rows))
        raise OracleDivergence(
            f"oracle-divergence: non-finite iterate (inner step {max(bad - 1, 0)})")
    return Tape(iterates=iterates, alphas=np.asarray(alphas), t=spec.t, s=spec.s,
                lam=lam.copy(), mode=mode)


def final_inner_iterate(problem: BilevelProblem, lam, spec: InnerSolveSpec, mode: str) -> np.ndarray:
    """The last iterate of ``solve_inner`` without recording the trajectory.

    Same arithmetic, no tape: used by value-only oracles that rerun the inner
    solve many times and never differentiate through it.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    lam = as_vector(lam, problem.outer_dim, "lam")
    if spec.omega0 is not None:
        omega = as_vector(spec.omega0, problem.inner_dim, "omega0").copy()
    elif problem.omega0 is not None:
        omega = as_vector(problem.omega0, problem.inner_dim, "omega0").copy()
    else:
        omega = np.zeros(problem.inner_dim)
    grad1_h, grad1_g = problem.grad1_h, problem.grad1_g
    t, s, expo, freq = spec.t, spec.s, spec.alpha_exponent, spec.bigsam_frequency
    basic = mode == "basic"
    for k in range(spec.K):
        if basic or (k % freq) != 0:
            omega = omega - t * grad1_h(omega, lam)
        else:
            alpha = alpha_schedule(k + 1, expo)
            if alpha == 1.0:
                omega = omega - t * grad1_h(omega, lam)
            else:
                omega = omega - (t * alpha) * grad1_h(omega, lam) \
                              - (s * (1.0 - alpha)) * grad1_g(omega, lam)
    if not np.all(np.isfinite(omega)):
        raise OracleDivergence("oracle-divergence: non-finite final iterate")
    return omega


def final_inner_iterates_many(problem: BilevelProblem, lams: np.ndarray,
                              spec: InnerSolveSpec, mode: str) -> np.ndarray:
    """Row-batched ``final_inner_iterate`` over a stack of outer variables.

    Requires the problem's batched gradient oracles; every row runs the same
    schedule from the same omega_0, so this is the per-row recursion executed
    together.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if problem.grad1_h_many is None or (mode == "improved" and problem.grad1_g_many is None):
        raise ValueError("problem does not provide batched gradient oracles")
    lams = np.asarray(lams, dtype=np.float64)
    B = lams.shape[0]
    if spec.omega0 is not None:
        start = as_vector(spec.omega0, problem.inner_dim, "omega0")
    elif problem.omega0 is not None:
        start = as_vector(problem.omega0, problem.inner_dim, "omega0")
    else:
        start = np.zeros(problem.inner_dim)
    omegas = np.tile(start, (B, 1))
    gh_many, gg_many = problem.grad1_h_many, problem.grad1_g_many
    t, s, expo, freq = spec.t, spec.s, spec.alpha_exponent, spec.bigsam_frequency
    basic = mode == "basic"
    for k in range(spec.K):
        if basic or (k % freq) != 0:
            omegas = omegas - t * gh_many(omegas, lams)
        else:
            alpha = alpha_schedule(k + 1, expo)
            if alpha == 1.0:
                omegas = omegas - t * gh_many(omegas, lams)
            else:
                omegas = omegas - (t * alpha) * gh_many(omegas, lams) \
                                - (s * (1.0 - alpha)) * gg_many(omegas, lams)
    if not np.all(np.isfinite(omegas)):
        raise OracleDivergence("oracle-divergence: non-finite final iterate in batched solve")
    return omegas


def bigsam_standalone(h_oracle: Tuple[Callable, Callable],
                      g_oracle: Tuple[Callable, Callable],
                      omega0, K: int, t: float, s: float,
                      alpha_exponent: float = 0.25) -> np.ndarray:
    """Averaged solver for the single-level form: minimize g over argmin h.

    The oracles are (value, gradient) pairs of a single variable; only the
    gradients drive the iteration.
    """
    if int(K) != K or K < 0:
        raise ValueError("K must be a non-negative integer")
    if not (t > 0 and s > 0):
        raise ValueError("step sizes must be positive")
    _, h_grad = h_oracle
    _, g_grad = g_oracle
    omega = np.array(omega0, dtype=np.float64, copy=True).reshape(-1)
    for k in range(K):
        alpha = alpha_schedule(k + 1, alpha_exponent)
        gh = _finite(np.asarray(h_grad(omega), dtype=np.float64), "h gradient")
        theta = omega - t * gh
        if alpha == 1.0:
            omega = theta
            continue
        gg = _finite(np.asarray(g_grad(omega), dtype=np.float64), "g gradient")
        phi = omega - s * gg
        omega = alpha * theta + (1.0 - alpha) * phi
    return omega
