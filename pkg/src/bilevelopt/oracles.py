"""Independent brute-force verifiers.

Everything here checks the fast paths against slower, structurally different
computations: analytic gradients against central differences, analytic VJPs
against the finite-difference fallback, the unrolled reverse pass against a
value-only difference quotient of f_K, and (at tiny dimension) the whole
bilevel minimum against an exhaustive grid that literally enumerates the
inner argmin set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .bigsam import InnerSolveSpec, solve_inner
from .hypergrad import hypergradient_fd_oracle, reverse_hypergradient
from .problem import BilevelProblem, default_fd_eps, fd_vjp, validate_first_order

__all__ = ["OracleReport", "CheckConfig", "grid_min_oracle", "check_suite",
           "default_check_configs"]

ARGMIN_BAND = 1e-6   # membership band converting the exact argmin set to a grid set


@dataclass(frozen=True)
class OracleReport:
    """One verifier's outcome; passed iff max_rel_err <= tolerance."""

    name: str
    problem: str
    max_rel_err: float
    tolerance: float
    passed: bool
    details: tuple = ()

    def to_dict(self) -> dict:
        return {"name": self.name, "problem": self.problem,
                "max_rel_err": self.max_rel_err, "tolerance": self.tolerance,
                "passed": bool(self.passed), "details": list(self.details)}


@dataclass(frozen=True)
class CheckConfig:
    """One bundle of checks: sampling, inner-solve constants, tolerances."""

    seed: int = 0
    n_points: int = 10
    hg_points: int = 5
    K: int = 50
    t: float = 0.1
    s: float = 0.1
    mode: str = "improved"
    alpha_exponent: float = 0.25
    tol_grad: float = 1e-6
    tol_vjp: float = 1e-4
    tol_hg: float = 1e-4
    tol_grid: float = 0.05
    grid_resolution: int = 401
    grid_halfwidth: float = 2.0
    run_grid: bool = False


def _unit_ball(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return v
    return v / norm * rng.uniform() ** (1.0 / dim)


def grid_min_oracle(problem: BilevelProblem, lam_box, omega_box,
                    resolution: int) -> Tuple[np.ndarray, np.ndarray, float]:
    """Exhaustive bilevel minimum at tiny dimension.

    For each grid lam: find the grid argmin set of h (within a 1e-6 band of
    the grid minimum), pick its g-minimizing member, and track the best
    (lam, omega, value) overall.  Ties break toward the lowest lexicographic
    grid index, so the reduction is deterministic.
    """
    n, m = problem.dims
    if n > 2 or m > 2:
        raise ValueError(f"oracle-dim-limit: grid oracle supports at most 2+2 dims, got {n}+{m}")
    if resolution < 3:
        raise ValueError("resolution must be at least 3")
    lam_axes = [np.linspace(lo, hi, resolution) for lo, hi in lam_box]
    om_axes = [np.linspace(lo, hi, resolution) for lo, hi in omega_box]
    om_grid = np.stack([g.ravel() for g in np.meshgrid(*om_axes, indexing="ij")], axis=1)

    def h_all(lam):
        if problem.h_batch is not None:
            return np.asarray(problem.h_batch(om_grid, lam))
        return np.array([problem.h_value(w, lam) for w in om_grid])

    def g_all(lam):
        if problem.g_batch is not None:
            return np.asarray(problem.g_batch(om_grid, lam))
        return np.array([problem.g_value(w, lam) for w in om_grid])

    best_val = np.inf
    best = None
    lam_grid = np.stack([g.ravel() for g in np.meshgrid(*lam_axes, indexing="ij")], axis=1)
    for lam in lam_grid:
        h = h_all(lam)
        members = np.flatnonzero(h <= h.min() + ARGMIN_BAND)
        g = g_all(lam)
        pick = members[np.argmin(g[members])]
        if g[pick] < best_val:
            best_val = float(g[pick])
            best = (lam.copy(), om_grid[pick].copy())
    return best[0], best[1], best_val


def _check_first_order(problem, cfg) -> OracleReport:
    rng = np.random.default_rng(cfg.seed)
    n, m = problem.dims
    worst = 0.0
    details = []
    for _ in range(cfg.n_points):
        omega = _unit_ball(rng, n)
        lam = _unit_ball(rng, m)
        rep = validate_first_order(problem, omega, lam, tol=cfg.tol_grad)
        for gname, (err, _) in rep.entries.items():
            worst = max(worst, err)
            details.append({"gradient": gname, "rel_err": err})
    return OracleReport("first-order-vs-fd", problem.name, worst, cfg.tol_grad,
                        worst <= cfg.tol_grad, tuple(details[:6]))


def _check_vjps(problem, cfg) -> Optional[OracleReport]:
    analytic = [(attr, which) for attr, which in
                (("vjp11_h", "h11"), ("vjp12_h", "h12"), ("vjp11_g", "g11"), ("vjp12_g", "g12"))
                if problem.vjp_flavor.get(attr) == "analytic"]
    if not analytic:
        return None
    rng = np.random.default_rng(cfg.seed + 1)
    n, m = problem.dims
    worst = 0.0
    details = []
    for _ in range(cfg.n_points):
        omega = _unit_ball(rng, n)
        lam = _unit_ball(rng, m)
        a = _unit_ball(rng, n)
        for attr, which in analytic:
            got = getattr(problem, attr)(a, omega, lam)
            point = omega if which.endswith("11") else lam
            want = fd_vjp(problem, which, a, omega, lam, default_fd_eps(point))
            err = float(np.linalg.norm(got - want) / max(1.0, np.linalg.norm(want)))
            worst = max(worst, err)
            details.append({"vjp": attr, "rel_err": err})
    return OracleReport("vjp-vs-fd", problem.name, worst, cfg.tol_vjp,
                        worst <= cfg.tol_vjp, tuple(details[:8]))


def _check_reverse(problem, cfg) -> OracleReport:
    rng = np.random.default_rng(cfg.seed + 2)
    spec = InnerSolveSpec(K=cfg.K, t=cfg.t, s=cfg.s, alpha_exponent=cfg.alpha_exponent)
    worst = 0.0
    details = []
    for _ in range(cfg.hg_points):
        lam = _unit_ball(rng, problem.outer_dim)
        tape = solve_inner(problem, lam, spec, cfg.mode)
        got = reverse_hypergradient(problem, tape)
        want = hypergradient_fd_oracle(problem, lam, spec, cfg.mode)
        err = float(np.linalg.norm(got - want) / max(1.0, np.linalg.norm(want)))
        worst = max(worst, err)
        details.append({"mode": cfg.mode, "K": cfg.K, "rel_err": err})
    return OracleReport("reverse-vs-fd-hypergradient", problem.name, worst, cfg.tol_hg,
                        worst <= cfg.tol_hg, tuple(details))


def _check_grid(problem, cfg) -> Optional[OracleReport]:
    n, m = problem.dims
    if n > 2 or m > 2 or not cfg.run_grid:
        return None
    analytic_min = problem.answers.get("min_f_improved", problem.answers.get("min_f"))
    if analytic_min is None:
        return None
    box = [(-cfg.grid_halfwidth, cfg.grid_halfwidth)]
    _, _, value = grid_min_oracle(problem, box * m, box * n, cfg.grid_resolution)
    err = abs(value - analytic_min)
    return OracleReport("grid-min-vs-analytic", problem.name, float(err), cfg.tol_grid,
                        err <= cfg.tol_grid, ({"grid_value": value, "analytic": analytic_min},))


def check_suite(problem: BilevelProblem, configs: List[CheckConfig]) -> List[OracleReport]:
    """Run every applicable verifier for each config; failures are report rows."""
    reports: List[OracleReport] = []
    for cfg in configs:
        for rep in (_check_first_order(problem, cfg), _check_vjps(problem, cfg),
                    _check_reverse(problem, cfg), _check_grid(problem, cfg)):
            if rep is not None:
                reports.append(rep)
    return reports


def default_check_configs(name: str) -> List[CheckConfig]:
    """Per-problem check bundles sized so the whole suite stays fast."""
    if name in ("closedform_quadratic", "degenerate_quadratic"):
        return [CheckConfig(mode="improved", K=50, run_grid=True),
                CheckConfig(mode="basic", K=50)]
    if name == "hyperclean_synthetic":
        return [CheckConfig(mode="improved", K=20, t=0.01, s=0.001, n_points=5, hg_points=3),
                CheckConfig(mode="basic", K=20, t=0.01, s=0.001, n_points=5, hg_points=3)]
    if name == "hyperrep_synthetic":
        return [CheckConfig(mode="improved", K=10, t=0.01, s=0.01, n_points=3, hg_points=2),
                CheckConfig(mode="basic", K=10, t=0.01, s=0.01, n_points=3, hg_points=2)]
    raise KeyError(f"no default check configs for {name!r}")
