"""Reverse-mode hypergradient over a recorded inner trajectory.

The outer objective seen through K inner steps is f_K(lam) = g(omega_K, lam)
with omega_{k+1} = Phi_k(omega_k, lam).  Its gradient unrolls by the chain
rule: initialize the adjoint a = grad1_g(omega_K, lam) and the accumulator
G = grad2_g(omega_K, lam), then walk the transitions newest to oldest,
evaluating each step map's partials at the step's *input* iterate with the
averaging weight that step actually used.

Every transition contributes its lam-partial, including the very first one
(omega_0 -> omega_1): omega_0 itself is lam-independent, but the step that
produced omega_1 is not.  A central-difference oracle on f_K confirms this
bound; truncating the oldest transition leaves an O(alpha_1 * t) error that
is far above tolerance at small K.  The pass therefore performs exactly K
lam-side VJPs and K-1 omega-side VJPs: O(K), matching the forward cost.
"""

from __future__ import annotations

import numpy as np

from .bigsam import InnerSolveSpec, Tape, final_inner_iterate, final_inner_iterates_many
from .problem import BilevelProblem, OracleDivergence, as_vector

__all__ = ["reverse_hypergradient", "hypergradient_fd_oracle"]


def reverse_hypergradient(problem: BilevelProblem, tape: Tape) -> np.ndarray:
    """Accumulate the hypergradient of f_K at the tape's recorded lam.

    The loop performs the same arithmetic as ``vjp_phi_lambda`` and
    ``vjp_phi_omega``, inlined; finiteness is checked once on the result.
    """
    n, m = problem.dims
    if tape.iterates.shape[1] != n or tape.lam.shape[0] != m:
        raise ValueError(
            f"tape-mismatch: tape is ({tape.iterates.shape[1]}, {tape.lam.shape[0]})-dimensional, "
            f"problem expects ({n}, {m})")
    lam = tape.lam
    omega_K = tape.final
    a = np.asarray(problem.grad1_g(omega_K, lam), dtype=np.float64)
    G = np.asarray(problem.grad2_g(omega_K, lam), dtype=np.float64).copy()
    vjp11_h, vjp12_h = problem.vjp11_h, problem.vjp12_h
    vjp11_g, vjp12_g = problem.vjp11_g, problem.vjp12_g
    lam_free_g = problem.g_lambda_free
    t, s = tape.t, tape.s
    iterates = tape.iterates
    alphas = tape.alphas.tolist()
    for k in range(tape.K - 1, -1, -1):
        alpha = alphas[k]
        omega_k = iterates[k]
        G += -(t * alpha) * vjp12_h(a, omega_k, lam)
        if alpha != 1.0 and not lam_free_g:
            G += -(s * (1.0 - alpha)) * vjp12_g(a, omega_k, lam)
        if k > 0:
            a_new = a - (t * alpha) * vjp11_h(a, omega_k, lam)
            if alpha != 1.0:
                a_new = a_new - (s * (1.0 - alpha)) * vjp11_g(a, omega_k, lam)
            a = a_new
    if not np.all(np.isfinite(G)):
        raise OracleDivergence("oracle-divergence: non-finite hypergradient")
    return G


def hypergradient_fd_oracle(problem: BilevelProblem, lam, spec: InnerSolveSpec,
                            mode: str, eps: float = 1e-5) -> np.ndarray:
    """Central-difference hypergradient, rerunning the full inner solve per probe.

    Entry j is [f_K(lam + eps e_j) - f_K(lam - eps e_j)] / (2 eps), each
    evaluation restarting from the same omega_0.  Deliberately independent of
    the VJP machinery: it only consumes values and the forward solver.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    lam = as_vector(lam, problem.outer_dim, "lam")
    m = problem.outer_dim

    batched = problem.grad1_h_many is not None and (
        mode == "basic" or problem.grad1_g_many is not None)
    if batched:
        # all 2m probes share the schedule: solve them as one batch
        probes = np.repeat(lam[None, :], 2 * m, axis=0)
        probes[:m, :] += eps * np.eye(m)
        probes[m:, :] -= eps * np.eye(m)
        finals = final_inner_iterates_many(problem, probes, spec, mode)
        values = np.array([problem.g_value(finals[i], probes[i]) for i in range(2 * m)])
        return (values[:m] - values[m:]) / (2.0 * eps)

    def f_K(lam_probe: np.ndarray) -> float:
        omega_hat = final_inner_iterate(problem, lam_probe, spec, mode)
        return float(problem.g_value(omega_hat, lam_probe))

    out = np.empty(m)
    for j in range(m):
        e = np.zeros(m)
        e[j] = eps
        out[j] = (f_K(lam + e) - f_K(lam - e)) / (2.0 * eps)
    return out
