"""Oracle interface for bilevel problems.

A bilevel problem couples an inner objective h(omega, lam) minimized over the
inner variable omega with an outer objective g(omega, lam) minimized over the
outer variable lam.  Solvers in this package only ever touch a problem through
the oracle record defined here: scalar values, first-order gradients, and
left-multiplied second-order vector-Jacobian products

    vjp11_h(a) = a^T d^2h/domega^2        (length n)
    vjp12_h(a) = a^T d^2h/domega dlam     (length m)

and likewise for g.  Problems may supply these analytically or let the record
fall back to central finite differences of their first-order gradients.

All oracles must be pure: identical inputs produce bit-identical outputs.
Arithmetic is IEEE-754 float64 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "OracleDivergence",
    "BilevelProblem",
    "FirstOrderReport",
    "fd_vjp",
    "default_fd_eps",
    "validate_first_order",
    "as_vector",
]

VJP_NAMES = ("h11", "h12", "g11", "g12")


class OracleDivergence(RuntimeError):
    """An oracle returned a non-finite value ("oracle-divergence")."""


def as_vector(x, length: Optional[int] = None, name: str = "vector") -> np.ndarray:
    """Coerce to a finite float64 1-D array, optionally checking its length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {v.shape}")
    if length is not None and v.shape[0] != length:
        raise ValueError(f"{name} must have length {length}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def default_fd_eps(point: np.ndarray, base: float = 1e-5) -> float:
    """Central-difference step scaled by the sup-norm of the evaluation point."""
    return base * max(1.0, float(np.max(np.abs(point)))) if point.size else base


@dataclass
class BilevelProblem:
    """Oracle record for one bilevel problem instance.

    ``inner_dim`` (n) and ``outer_dim`` (m) fix the lengths of omega and lam.
    Second-order VJPs left as None are wired to finite-difference fallbacks of
    the first-order gradients; ``vjp_flavor`` records which route each one
    uses ("analytic" or "fd-fallback").

    ``answers`` carries optional closed-form attachments (inner solutions,
    outer minima) used by oracles and tests; ``h_batch``/``g_batch`` are
    optional vectorized evaluators over stacks of omega rows used by the
    brute-force grid referee.
    """

    inner_dim: int
    outer_dim: int
    g_value: Callable[[np.ndarray, np.ndarray], float]
    h_value: Callable[[np.ndarray, np.ndarray], float]
    grad1_g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad2_g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad1_h: Callable[[np.ndarray, np.ndarray], np.ndarray]
    vjp11_h: Optional[Callable] = None
    vjp12_h: Optional[Callable] = None
    vjp11_g: Optional[Callable] = None
    vjp12_g: Optional[Callable] = None
    name: str = "unnamed"
    answers: dict = field(default_factory=dict)
    h_batch: Optional[Callable] = None
    g_batch: Optional[Callable] = None
    omega0: Optional[np.ndarray] = None
    vjp_flavor: dict = field(default_factory=dict)
    # set when g never reads lam: grad2_g and vjp12_g are identically zero,
    # and the reverse pass may skip their (exactly zero) contributions
    g_lambda_free: bool = False
    # optional row-batched first-order oracles, (B, n) x (B, m) -> (B, n);
    # value-only probes (the FD hypergradient) solve all probes at once
    grad1_h_many: Optional[Callable] = None
    grad1_g_many: Optional[Callable] = None

    def __post_init__(self):
        if self.inner_dim < 1 or self.outer_dim < 1:
            raise ValueError("dimensions must be at least 1")
        for attr, which in (("vjp11_h", "h11"), ("vjp12_h", "h12"),
                            ("vjp11_g", "g11"), ("vjp12_g", "g12")):
            if getattr(self, attr) is None:
                setattr(self, attr, _make_fd_fallback(self, which))
                self.vjp_flavor[attr] = "fd-fallback"
            else:
                self.vjp_flavor.setdefault(attr, "analytic")

    @property
    def dims(self) -> tuple[int, int]:
        return (self.inner_dim, self.outer_dim)


def _check_finite_grad(vec: np.ndarray, what: str, point_desc: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise OracleDivergence(f"oracle-divergence: {what} non-finite at {point_desc}")
    return vec


def fd_vjp(problem: BilevelProblem, which: str, a, omega, lam, eps: float) -> np.ndarray:
    """Second-order VJP by central differences of a first-order gradient.

    For "h11" the result approximates a^T d11h via the symmetric form
    [grad1_h(omega + eps*a) - grad1_h(omega - eps*a)] / (2 eps); for "h12"
    the j-th entry differentiates a . grad1_h along the j-th lam coordinate.
    "g11"/"g12" do the same with grad1_g.
    """
    if which not in VJP_NAMES:
        raise ValueError(f"unknown vjp selector {which!r}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    n, m = problem.dims
    a = as_vector(a, n, "adjoint")
    omega = as_vector(omega, n, "omega")
    lam = as_vector(lam, m, "lam")
    grad = problem.grad1_h if which[0] == "h" else problem.grad1_g
    gname = "grad1_h" if which[0] == "h" else "grad1_g"

    if which.endswith("11"):
        gp = _check_finite_grad(grad(omega + eps * a, lam), gname, f"omega+eps*a (eps={eps})")
        gm = _check_finite_grad(grad(omega - eps * a, lam), gname, f"omega-eps*a (eps={eps})")
        return (gp - gm) / (2.0 * eps)

    out = np.empty(m)
    for j in range(m):
        e = np.zeros(m)
        e[j] = eps
        gp = _check_finite_grad(grad(omega, lam + e), gname, f"lam+eps*e_{j} (eps={eps})")
        gm = _check_finite_grad(grad(omega, lam - e), gname, f"lam-eps*e_{j} (eps={eps})")
        out[j] = (a @ gp - a @ gm) / (2.0 * eps)
    return out


def _make_fd_fallback(problem: BilevelProblem, which: str) -> Callable:
    """FD-backed VJP with the record's signature.

    The adjoint is normalized before differencing so the effective step stays
    at the default scale regardless of the adjoint's magnitude, then the
    result is scaled back (fd_vjp is linear in the adjoint).
    """

    def vjp(a, omega, lam):
        a = as_vector(a, problem.inner_dim, "adjoint")
        scale = float(np.max(np.abs(a))) if a.size else 0.0
        if scale == 0.0:
            return np.zeros(problem.inner_dim if which.endswith("11") else problem.outer_dim)
        point = omega if which.endswith("11") else lam
        eps = default_fd_eps(np.asarray(point, dtype=np.float64))
        return scale * fd_vjp(problem, which, a / scale, omega, lam, eps)

    vjp.__name__ = f"fd_{which}"
    return vjp


@dataclass(frozen=True)
class FirstOrderReport:
    """Outcome of checking analytic first-order gradients against FD."""

    entries: dict  # gradient name -> (max_rel_err, ok)
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(ok for _, ok in self.entries.values())

    def max_errors(self) -> dict:
        return {k: v[0] for k, v in self.entries.items()}


def _fd_grad(value_fn, x: np.ndarray, other: np.ndarray, eps: float, x_first: bool) -> np.ndarray:
    out = np.empty(x.shape[0])
    for j in range(x.shape[0]):
        e = np.zeros(x.shape[0])
        e[j] = eps
        if x_first:
            out[j] = (value_fn(x + e, other) - value_fn(x - e, other)) / (2.0 * eps)
        else:
            out[j] = (value_fn(other, x + e) - value_fn(other, x - e)) / (2.0 * eps)
    return out


def validate_first_order(problem: BilevelProblem, omega, lam,
                         eps: float = 1e-5, tol: float = 1e-6) -> FirstOrderReport:
    """Compare grad1_g, grad2_g and grad1_h against central differences.

    Mismatches land in the report rather than raising; the per-component
    error is |fd - analytic| / max(1, |analytic|), reported as its maximum.
    """
    if eps <= 0 or tol <= 0:
        raise ValueError("eps and tol must be positive")
    n, m = problem.dims
    omega = as_vector(omega, n, "omega")
    lam = as_vector(lam, m, "lam")

    checks = {
        "grad1_g": (problem.grad1_g(omega, lam), _fd_grad(problem.g_value, omega, lam, eps, True)),
        "grad2_g": (problem.grad2_g(omega, lam), _fd_grad(problem.g_value, lam, omega, eps, False)),
        "grad1_h": (problem.grad1_h(omega, lam), _fd_grad(problem.h_value, omega, lam, eps, True)),
    }
    entries = {}
    for name, (analytic, fd) in checks.items():
        analytic = np.asarray(analytic, dtype=np.float64)
        err = float(np.max(np.abs(fd - analytic) / np.maximum(1.0, np.abs(analytic)))) if analytic.size else 0.0
        entries[name] = (err, err <= tol)
    return FirstOrderReport(entries=entries, tolerance=tol)
