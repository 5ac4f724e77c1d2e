"""Outer-loop drivers for the improved and basic bilevel models.

Each outer iteration re-initializes the inner variable, runs the inner solver
for K steps, differentiates through the recorded trajectory, and takes one
plain gradient-descent step on the outer variable.  Improved and basic runs
differ only in the inner solver's mode; every other constant is shared so
comparisons are matched-budget.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from .bigsam import InnerSolveSpec, solve_inner
from .hypergrad import reverse_hypergradient
from .problem import BilevelProblem, OracleDivergence, as_vector

__all__ = ["SolveConfig", "TraceRecord", "ExperimentTrace", "run_model", "run_ablation"]


@dataclass(frozen=True)
class SolveConfig:
    """All scalars of one run: step sizes, budgets, schedule, seed, mode."""

    t: float
    s: float
    eta: float
    K: int
    T: int
    alpha_exponent: float = 0.25
    bigsam_frequency: int = 1
    seed: int = 0
    mode: str = "improved"

    def __post_init__(self):
        if not (self.t > 0 and self.s > 0 and self.eta > 0):
            raise ValueError("t, s and eta must be positive")
        if self.K < 1 or self.T < 1:
            raise ValueError("K and T must be at least 1")
        if self.bigsam_frequency < 1:
            raise ValueError("bigsam_frequency must be at least 1")
        if self.mode not in ("improved", "basic"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def inner_spec(self, omega0=None) -> InnerSolveSpec:
        return InnerSolveSpec(K=self.K, t=self.t, s=self.s,
                              alpha_exponent=self.alpha_exponent,
                              bigsam_frequency=self.bigsam_frequency,
                              omega0=omega0)


@dataclass(frozen=True)
class TraceRecord:
    index: int
    outer_value: float
    grad_norm: float
    metric: Optional[float]
    wall_ms: float


@dataclass
class ExperimentTrace:
    """Per-iteration records plus the final outer and inner variables.

    Record i reflects the state *before* the i-th update, so a run with T
    outer iterations holds exactly T records and performs T-1 updates.
    """

    records: List[TraceRecord] = field(default_factory=list)
    final_lambda: Optional[np.ndarray] = None
    final_omega: Optional[np.ndarray] = None
    config: Optional[SolveConfig] = None

    @property
    def outer_values(self) -> np.ndarray:
        return np.array([r.outer_value for r in self.records])

    @property
    def metrics(self) -> np.ndarray:
        return np.array([np.nan if r.metric is None else r.metric for r in self.records])

    @property
    def final_outer_value(self) -> float:
        return self.records[-1].outer_value

    @property
    def final_metric(self) -> Optional[float]:
        return self.records[-1].metric


def run_model(problem: BilevelProblem, lam0, config: SolveConfig,
              metric: Optional[Callable] = None,
              collect_timing: bool = True) -> ExperimentTrace:
    """Drive the outer variable for T iterations with unrolled hypergradients.

    The optional ``metric`` evaluator is called once per outer iteration,
    after the inner solve, as metric(omega_hat, lam).  ``collect_timing``
    False zeroes the wall-clock column, for byte-level reproducibility.

    An oracle divergence mid-run aborts with the failing outer iteration in
    the message and the partial trace attached to the exception.
    """
    lam = as_vector(lam0, problem.outer_dim, "lam0").copy()
    trace = ExperimentTrace(config=config)
    spec = config.inner_spec()
    omega_hat = None
    for it in range(config.T):
        started = time.monotonic()
        try:
            tape = solve_inner(problem, lam, spec, config.mode)
            omega_hat = tape.final
            G = reverse_hypergradient(problem, tape)
        except OracleDivergence as exc:
            exc.partial_trace = trace
            exc.failed_iteration = it
            raise OracleDivergence(f"outer iteration {it}: {exc}") from exc
        wall_ms = (time.monotonic() - started) * 1e3 if collect_timing else 0.0
        trace.records.append(TraceRecord(
            index=it,
            outer_value=float(problem.g_value(omega_hat, lam)),
            grad_norm=float(np.linalg.norm(G)),
            metric=None if metric is None else float(metric(omega_hat, lam)),
            wall_ms=wall_ms,
        ))
        if it < config.T - 1:
            lam = lam - config.eta * G
    trace.final_lambda = lam
    trace.final_omega = omega_hat
    return trace


def run_ablation(problem: BilevelProblem, lam0, base_config: SolveConfig,
                 frequencies: List[int], metric: Optional[Callable] = None,
                 collect_timing: bool = True) -> List[ExperimentTrace]:
    """One run per averaging frequency, all other constants held fixed.

    Frequency f applies the averaged step every f-th inner iteration and a
    pure inner-gradient step otherwise; the sentinel 0 runs basic mode on the
    same budget.
    """
    if base_config.mode != "improved":
        raise ValueError("ablation requires an improved-mode base config")
    traces = []
    for f in frequencies:
        if f == 0:
            cfg = replace(base_config, mode="basic", bigsam_frequency=1)
        elif f >= 1:
            cfg = replace(base_config, bigsam_frequency=int(f))
        else:
            raise ValueError(f"frequency must be a positive integer or the 0 sentinel, got {f}")
        traces.append(run_model(problem, lam0, cfg, metric=metric,
                                collect_timing=collect_timing))
    return traces
