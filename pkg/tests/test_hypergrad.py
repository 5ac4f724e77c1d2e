"""Reverse pass vs the value-only difference-quotient oracle."""

import dataclasses

import numpy as np
import pytest

import bilevelopt as bl


def counting_problem(problem):
    """Wrap a problem so VJP invocations can be counted."""
    counts = {"vjp11_h": 0, "vjp12_h": 0, "vjp11_g": 0, "vjp12_g": 0}

    def wrap(name):
        inner = getattr(problem, name)

        def counted(a, w, lam):
            counts[name] += 1
            return inner(a, w, lam)

        return counted

    wrapped = dataclasses.replace(
        problem,
        vjp11_h=wrap("vjp11_h"), vjp12_h=wrap("vjp12_h"),
        vjp11_g=wrap("vjp11_g"), vjp12_g=wrap("vjp12_g"),
        vjp_flavor=dict(problem.vjp_flavor),
    )
    return wrapped, counts


class TestReverseAgainstOracle:
    @pytest.mark.parametrize("mode", ["improved", "basic"])
    @pytest.mark.parametrize("K", [1, 2, 5, 50])
    def test_quadratics(self, mode, K):
        rng = np.random.default_rng(11)
        for maker in (bl.make_closedform_quadratic, bl.make_degenerate_quadratic):
            p = maker()
            spec = bl.InnerSolveSpec(K=K, t=0.1, s=0.1)
            for _ in range(3):
                lam = rng.normal(size=p.outer_dim)
                tape = bl.solve_inner(p, lam, spec, mode)
                got = bl.reverse_hypergradient(p, tape)
                want = bl.hypergradient_fd_oracle(p, lam, spec, mode)
                err = np.linalg.norm(got - want) / max(1.0, np.linalg.norm(want))
                assert err < 1e-6, (p.name, mode, K, err)

    @pytest.mark.parametrize("mode", ["improved", "basic"])
    def test_hyperclean(self, mode):
        inst = bl.zoo_problem("hyperclean_synthetic", seed=3)
        p = inst.problem
        rng = np.random.default_rng(5)
        for K in (5, 20):
            spec = bl.InnerSolveSpec(K=K, t=0.01, s=0.001)
            lam = rng.normal(0, 0.4, p.outer_dim)
            tape = bl.solve_inner(p, lam, spec, mode)
            got = bl.reverse_hypergradient(p, tape)
            want = bl.hypergradient_fd_oracle(p, lam, spec, mode)
            err = np.linalg.norm(got - want) / max(1.0, np.linalg.norm(want))
            assert err < 1e-4

    def test_hyperrep(self):
        inst = bl.zoo_problem("hyperrep_synthetic", seed=3)
        p = inst.problem
        spec = bl.InnerSolveSpec(K=8, t=0.01, s=0.01)
        lam = np.random.default_rng(6).normal(0, 0.2, p.outer_dim)
        tape = bl.solve_inner(p, lam, spec, "improved")
        got = bl.reverse_hypergradient(p, tape)
        want = bl.hypergradient_fd_oracle(p, lam, spec, "improved")
        err = np.linalg.norm(got - want) / max(1.0, np.linalg.norm(want))
        assert err < 1e-4


class TestClosedFormValues:
    def test_basic_mode_recovers_exact_outer_gradient(self):
        # with the inner problem solved to convergence, df/dlam = lam
        p = bl.make_closedform_quadratic()
        spec = bl.InnerSolveSpec(K=2000, t=0.1, s=0.1)
        tape = bl.solve_inner(p, np.array([2.0]), spec, "basic")
        G = bl.reverse_hypergradient(p, tape)
        assert G == pytest.approx(2.0, abs=1e-3)

    def test_outer_stationary_point_gives_zero(self):
        p = bl.make_closedform_quadratic()
        spec = bl.InnerSolveSpec(K=2000, t=0.1, s=0.1)
        for mode in ("improved", "basic"):
            tape = bl.solve_inner(p, np.zeros(1), spec, mode)
            G = bl.reverse_hypergradient(p, tape)
            assert G == pytest.approx(0.0, abs=1e-12)

    def test_single_step_tape(self):
        # K=1: omega_1 = t*lam (alpha_1 = 1 and omega_0 = 0), and the single
        # transition contributes t * omega_1 on top of the lam-free grad2_g
        p = bl.make_closedform_quadratic()
        lam = np.array([3.0])
        spec = bl.InnerSolveSpec(K=1, t=0.1, s=0.1)
        tape = bl.solve_inner(p, lam, spec, "improved")
        G = bl.reverse_hypergradient(p, tape)
        assert tape.final == pytest.approx(0.3)
        assert G == pytest.approx(0.1 * 0.3, abs=1e-15)
        want = bl.hypergradient_fd_oracle(p, lam, spec, "improved")
        assert G == pytest.approx(want, rel=1e-6)

    def test_k_zero_tape_is_plain_outer_gradient(self):
        p = bl.make_closedform_quadratic()
        spec = bl.InnerSolveSpec(K=0, t=0.1, s=0.1)
        tape = bl.solve_inner(p, np.array([2.0]), spec, "improved")
        G = bl.reverse_hypergradient(p, tape)
        assert np.array_equal(G, p.grad2_g(tape.final, tape.lam))


class TestOperationCount:
    @pytest.mark.parametrize("mode", ["improved", "basic"])
    @pytest.mark.parametrize("K", [1, 7, 40])
    def test_linear_cost_in_k(self, mode, K):
        # one lam-side VJP per transition, one omega-side VJP per interior
        # transition: K and K-1 calls respectively
        p = bl.make_degenerate_quadratic()
        spec = bl.InnerSolveSpec(K=K, t=0.1, s=0.1)
        tape = bl.solve_inner(p, np.array([0.5]), spec, mode)
        wrapped, counts = counting_problem(p)
        bl.reverse_hypergradient(wrapped, tape)
        assert counts["vjp12_h"] == K
        assert counts["vjp11_h"] == K - 1


class TestModeConsistency:
    def test_basic_tape_equals_all_ones_improved(self):
        p = bl.make_degenerate_quadratic()
        lam = np.array([0.8])
        spec0 = bl.InnerSolveSpec(K=60, t=0.1, s=0.1, alpha_exponent=0.0)
        spec = bl.InnerSolveSpec(K=60, t=0.1, s=0.1)
        tape_imp = bl.solve_inner(p, lam, spec0, "improved")
        tape_bas = bl.solve_inner(p, lam, spec, "basic")
        G_imp = bl.reverse_hypergradient(p, tape_imp)
        G_bas = bl.reverse_hypergradient(p, tape_bas)
        assert np.array_equal(G_imp, G_bas)

    def test_doubling_g_doubles_hypergradient_exactly(self):
        # basic-mode trajectories ignore g, so scaling g by 2 scales every
        # g-derived quantity in the reverse pass by exactly 2
        p = bl.zoo_problem("hyperclean_synthetic", seed=1).problem
        doubled = dataclasses.replace(
            p,
            g_value=lambda w, lam: 2.0 * p.g_value(w, lam),
            grad1_g=lambda w, lam: 2.0 * p.grad1_g(w, lam),
            grad2_g=lambda w, lam: 2.0 * p.grad2_g(w, lam),
            vjp11_g=lambda a, w, lam: 2.0 * p.vjp11_g(a, w, lam),
            vjp12_g=lambda a, w, lam: 2.0 * p.vjp12_g(a, w, lam),
            vjp_flavor=dict(p.vjp_flavor),
        )
        lam = np.random.default_rng(0).normal(0, 0.3, p.outer_dim)
        spec = bl.InnerSolveSpec(K=15, t=0.01, s=0.001)
        tape = bl.solve_inner(p, lam, spec, "basic")
        tape2 = bl.solve_inner(doubled, lam, spec, "basic")
        assert np.array_equal(tape.iterates, tape2.iterates)
        G1 = bl.reverse_hypergradient(p, tape)
        G2 = bl.reverse_hypergradient(doubled, tape2)
        assert np.array_equal(2.0 * G1, G2)


class TestFdOracleEdges:
    def test_constant_outer_objective_gives_zero(self):
        p = bl.BilevelProblem(
            inner_dim=1, outer_dim=2, name="const-g",
            h_value=lambda w, lam: float(0.5 * (w[0] - lam[0]) ** 2),
            g_value=lambda w, lam: 7.0,
            grad1_h=lambda w, lam: np.array([w[0] - lam[0]]),
            grad1_g=lambda w, lam: np.zeros(1),
            grad2_g=lambda w, lam: np.zeros(2),
        )
        out = bl.hypergradient_fd_oracle(p, np.array([0.3, -0.2]),
                                         bl.InnerSolveSpec(K=10, t=0.1, s=0.1),
                                         "basic")
        assert np.all(out == 0.0)

    def test_affine_outer_response_is_exact(self):
        # linear dynamics + linear g make f_K affine in lam, where central
        # differences are exact up to rounding
        p = bl.BilevelProblem(
            inner_dim=1, outer_dim=1, name="affine",
            h_value=lambda w, lam: float(0.5 * (w[0] - lam[0]) ** 2),
            g_value=lambda w, lam: float(w[0] + 2.0 * lam[0]),
            grad1_h=lambda w, lam: w - lam,
            grad1_g=lambda w, lam: np.ones(1),
            grad2_g=lambda w, lam: np.array([2.0]),
            vjp11_h=lambda a, w, lam: a.copy(),
            vjp12_h=lambda a, w, lam: -a,
            vjp11_g=lambda a, w, lam: np.zeros(1),
            vjp12_g=lambda a, w, lam: np.zeros(1),
        )
        spec = bl.InnerSolveSpec(K=30, t=0.1, s=0.1)
        lam = np.array([0.4])
        fd = bl.hypergradient_fd_oracle(p, lam, spec, "basic")
        tape = bl.solve_inner(p, lam, spec, "basic")
        rev = bl.reverse_hypergradient(p, tape)
        assert fd == pytest.approx(rev, abs=1e-9)

    def test_batched_path_matches_serial(self):
        inst = bl.zoo_problem("hyperclean_synthetic", seed=2)
        p = inst.problem
        serial = dataclasses.replace(p, grad1_h_many=None, grad1_g_many=None,
                                     vjp_flavor=dict(p.vjp_flavor))
        spec = bl.InnerSolveSpec(K=12, t=0.01, s=0.001)
        lam = np.random.default_rng(9).normal(0, 0.3, p.outer_dim)
        for mode in ("improved", "basic"):
            batched = bl.hypergradient_fd_oracle(p, lam, spec, mode)
            looped = bl.hypergradient_fd_oracle(serial, lam, spec, mode)
            np.testing.assert_allclose(batched, looped, rtol=1e-10, atol=1e-12)


class TestTapeMismatch:
    def test_dimension_mismatch_rejected(self):
        p = bl.make_closedform_quadratic()
        other = bl.make_degenerate_quadratic()
        tape = bl.solve_inner(other, np.array([1.0]),
                              bl.InnerSolveSpec(K=3, t=0.1, s=0.1), "basic")
        with pytest.raises(ValueError, match="tape-mismatch"):
            bl.reverse_hypergradient(p, tape)
