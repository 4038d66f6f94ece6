import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flixlab.compression import CompressorSpec
from flixlab.data_io import gen_synthetic, load_libsvm, logistic_clients
from flixlab.errors import ConvergenceFailure, Diverged, InvalidArgument, InvalidState
from flixlab.flix_core import aggregate_constants, one_shot_average
from flixlab.objectives import QuadraticObjective
from flixlab.parallel import ordered_mean
from flixlab.solvers import (
    THEORETICAL,
    dcgd_step,
    dcgd_stepsize,
    dgd_stepsize,
    diana_stepsize,
    prepare_problem,
    run_dcgd,
    run_dgd,
    run_diana,
    solve_local,
)
from flixlab.verification import (
    check_dgd_rate,
    dcgd_floor,
    high_precision_optimum,
    synthetic_logistic_problem,
    synthetic_quadratic_problem,
    two_quadratic_problem,
)


@pytest.fixture(scope="module")
def logi():
    return synthetic_logistic_problem(0.5, n=6, d=10, per_client=40, seed=3)


class TestLocal:
    def test_identity_quadratic(self):
        np.testing.assert_array_equal(solve_local(QuadraticObjective(np.eye(2), np.ones(2))), [1.0, 1.0])

    def test_one_dim(self):
        assert abs(solve_local(QuadraticObjective([[1.0]], [1.0]))[0] - 1.0) <= 1e-6

    def test_logistic_certificate(self):
        obj = gen_synthetic("logistic", 1, 8, 30, seed=4)[0]
        x = solve_local(obj, tol=1e-6)
        assert np.linalg.norm(obj.grad(x)) <= 1e-6

    def test_iteration_cap(self):
        obj = gen_synthetic("logistic", 1, 8, 30, seed=4, lam=0.001)[0]
        with pytest.raises(ConvergenceFailure) as info:
            solve_local(obj, tol=1e-12, max_iter=5)
        assert info.value.iterations == 5 and info.value.grad_norm > 1e-12

    def test_mushrooms_client(self, mushrooms):
        obj = logistic_clients(load_libsvm(mushrooms, max_rows=162), 1, 0.1)[0]
        assert np.linalg.norm(obj.grad(solve_local(obj))) <= 1e-6


class TestDGD:
    def test_two_quadratics_one_round(self):
        t = run_dgd(two_quadratic_problem(0.5), THEORETICAL, 1, init=np.array([3.0]), keep_iterates=True)
        assert t.meta["gamma"] == 4.0
        assert t.iterates[1, 0] == 0.0

    def test_zero_rounds(self):
        p = two_quadratic_problem(0.5)
        t = run_dgd(p, K=0, keep_iterates=True)
        assert len(t) == 1
        np.testing.assert_array_equal(t.iterates[0], one_shot_average(p).x_avg)

    def test_all_zero_alpha_rejected(self):
        with pytest.raises(InvalidState):
            run_dgd(two_quadratic_problem(0.0), K=3)

    def test_uplink_and_rounds(self, logi):
        t = run_dgd(logi, K=7)
        np.testing.assert_array_equal(t.rounds, np.arange(8))
        np.testing.assert_array_equal(np.diff(t.uplink_floats), logi.n * logi.d)
        assert t.uplink_floats[0] == 0 and t.meta["init_uplink_floats"] == logi.n * logi.d

    def test_monotone_descent(self, logi):
        t = run_dgd(logi, K=50)
        assert np.all(np.diff(t.values) <= 1e-15)

    def test_rate_bounds(self, logi):
        ref = high_precision_optimum(logi)
        for check in check_dgd_rate(logi, run_dgd(logi, K=60), ref):
            assert check.passed, check

    def test_divergence_is_reported(self, logi):
        with pytest.raises(Diverged) as info:
            run_dgd(logi, 1e200, K=50)
        assert info.value.round_index >= 1

    @pytest.mark.parametrize("bad", [0.0, -1.0])
    def test_manual_stepsize_must_be_positive(self, logi, bad):
        with pytest.raises(InvalidArgument):
            run_dgd(logi, bad, K=1)

    def test_reference_columns(self, logi):
        ref = high_precision_optimum(logi)
        t = run_dgd(logi, K=5, reference=ref)
        np.testing.assert_array_equal(t.loss_gap, t.values - ref.f_star)
        assert t.deploy_dist_sq[-1] < t.deploy_dist_sq[0]

    def test_alpha_invariance_on_quadratics(self):
        base = synthetic_quadratic_problem(0.5, n=4, d=3, seed=6)
        runs = [run_dgd(base.with_alpha(b), K=30, keep_iterates=True).iterates for b in (0.1, 0.5, 0.9)]
        for other in runs[1:]:
            np.testing.assert_allclose(other, runs[0], rtol=1e-12, atol=1e-13)


class TestDCGD:
    def test_identity_bit_matches_dgd(self, logi):
        a = run_dgd(logi, K=40, keep_iterates=True)
        b = run_dcgd(logi, CompressorSpec.identity(logi.d), a.meta["gamma"], K=40, keep_iterates=True)
        np.testing.assert_array_equal(a.iterates, b.iterates)
        np.testing.assert_array_equal(a.values, b.values)

    def test_seeded(self, logi):
        spec = CompressorSpec.rand_k(logi.d, 2)
        a, b = run_dcgd(logi, spec, K=20, seed=4), run_dcgd(logi, spec, K=20, seed=4)
        np.testing.assert_array_equal(a.x_final, b.x_final)
        assert not np.array_equal(a.x_final, run_dcgd(logi, spec, K=20, seed=5).x_final)

    def test_uplink(self, logi):
        specs = [CompressorSpec.rand_k(logi.d, k) for k in (1, 2, 3, 4, 5, 10)]
        t = run_dcgd(logi, specs, K=3)
        np.testing.assert_array_equal(np.diff(t.uplink_floats), 25)

    def test_stepsizes(self, logi):
        spec = CompressorSpec.rand_k(logi.d, 1)
        c = aggregate_constants(logi)
        expected = 1 / (c.L_alpha + 2 * np.max(logi.L * logi.alpha**2 * 9) / logi.n)
        assert dcgd_stepsize(logi, spec) == pytest.approx(expected, rel=1e-14)
        assert dcgd_stepsize(logi, CompressorSpec.identity(logi.d)) == pytest.approx(dgd_stepsize(logi))

    def test_convex_stepsize_quartered(self):
        p = prepare_problem(gen_synthetic("logistic", 3, 4, 10, seed=1, lam=0.0, mean_shift=0.1), 0.5, tol=1e-4)
        spec = CompressorSpec.rand_k(4, 2)
        c = aggregate_constants(p)
        assert dcgd_stepsize(p, spec) == pytest.approx(1 / (4 * (c.L_alpha + 2 * np.max(p.L * 0.25) / 3)))

    def test_floor_neighbourhood(self):
        p = synthetic_logistic_problem(0.5, n=8, d=20, per_client=40, seed=2)
        ref = high_precision_optimum(p)
        spec = CompressorSpec.rand_k(20, 2)
        floor = dcgd_floor(p, spec, dcgd_stepsize(p, spec), ref)
        gap = run_dcgd(p, spec, K=200, seed=0).values[-1] - ref.f_star
        assert 1e-14 < gap <= floor

    def test_expected_step_is_dgd_step(self, logi):
        spec = CompressorSpec.rand_k(logi.d, 3)
        x = one_shot_average(logi).x_avg + 0.3
        gamma = dgd_stepsize(logi)
        steps = np.array([dcgd_step(logi, x, spec, gamma, seed=0, round_index=r) for r in range(10_000)])
        target = x - gamma * logi.grad(x)
        se = steps.std(0, ddof=1) / np.sqrt(len(steps))
        assert np.all(np.abs(steps.mean(0) - target) <= 3 * se + 1e-15)


class TestDIANA:
    def test_identity_matches_dgd(self, logi):
        a = run_dgd(logi, K=40, keep_iterates=True)
        b = run_diana(logi, CompressorSpec.identity(logi.d), a.meta["gamma"], K=40, keep_iterates=True)
        np.testing.assert_allclose(b.iterates, a.iterates, rtol=1e-12, atol=1e-14)

    def test_zero_rounds_sets_memories(self, logi):
        spec = CompressorSpec.rand_k(logi.d, 2)
        t = run_diana(logi, spec, K=0)
        x0 = one_shot_average(logi).x_avg
        np.testing.assert_array_equal(t.state.memories, np.stack(logi.client_grads(x0)))
        assert len(t) == 1

    def test_memory_average_tracks(self, logi):
        t = run_diana(logi, CompressorSpec.rand_k(logi.d, 2), K=100, seed=1, debug=True)
        assert t.state.drift() <= 1e-12
        np.testing.assert_allclose(t.state.beta, 1 / 5)

    def test_learning_rate_bounds(self, logi):
        spec = CompressorSpec.rand_k(logi.d, 2)
        with pytest.raises(InvalidArgument):
            run_diana(logi, spec, K=1, beta=np.full(logi.n, 0.5))
        run_diana(logi, spec, K=1, beta=np.full(logi.n, 0.1))

    def test_stepsize_formula(self, logi):
        spec = CompressorSpec.rand_k(logi.d, 2)
        c = aggregate_constants(logi)
        m = np.max(logi.L * logi.alpha**2)
        expected = 1 / (c.L_alpha + 2 * 4 * m / logi.n + 4 * 0.2 * 4 * m / (logi.n * 0.2))
        assert diana_stepsize(logi, spec) == pytest.approx(expected, rel=1e-14)

    def test_reaches_optimum_where_dcgd_stalls(self, logi):
        ref = high_precision_optimum(logi)
        spec = CompressorSpec.rand_k(logi.d, 1)
        diana = run_diana(logi, spec, K=1500, seed=0)
        dcgd = run_dcgd(logi, spec, K=1500, seed=0)
        assert np.min(diana.values - ref.f_star) <= 1e-10
        assert np.min(dcgd.values[-100:] - ref.f_star) > 1e-8


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["dgd", "dcgd", "diana"]))
def test_thread_count_does_not_change_results(seed, algorithm):
    import os

    p = synthetic_logistic_problem(0.7, n=5, d=6, per_client=20, seed=seed)
    spec = CompressorSpec.rand_k(6, 2)

    def go():
        if algorithm == "dgd":
            return run_dgd(p, K=15)
        fn = run_dcgd if algorithm == "dcgd" else run_diana
        return fn(p, spec, K=15, seed=seed)

    old = os.environ.get("FLIX_THREADS")
    try:
        os.environ["FLIX_THREADS"] = "1"
        a = go()
        os.environ["FLIX_THREADS"] = "4"
        b = go()
    finally:
        if old is None:
            os.environ.pop("FLIX_THREADS", None)
        else:
            os.environ["FLIX_THREADS"] = old
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.x_final, b.x_final)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 1.0))
def test_trajectory_invariants(seed, beta):
    p = synthetic_quadratic_problem(beta, n=3, d=3, seed=seed)
    t = run_diana(p, CompressorSpec.rand_k(3, 1), K=10, seed=seed)
    assert np.all(np.diff(t.rounds) == 1) and t.rounds[0] == 0
    assert np.all(np.diff(t.uplink_floats) >= 0)
    assert ordered_mean(t.state.memories) == pytest.approx(t.state.average, abs=1e-12)
