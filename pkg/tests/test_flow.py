"""Flow integration: accuracy, the GD bridge, reversibility, and bound checks."""

import numpy as np
import pytest

from ntkflow.activations import builtin
from ntkflow.datasets import Dataset, gen_synthetic
from ntkflow.flow import (FlowConfig, blowup_bound_check, integrate,
                          integrate_reverse, load_trajectory_csv,
                          load_thetas, loss_monotonicity_check,
                          save_thetas, save_trajectory_csv)
from ntkflow.networks import (build_network, dense_chain, forward,
                              init_params, loss_gradient)

LEAKY = builtin("leaky_relu", [0.01])
IDENT = builtin("identity")


def linear_setup(theta0=1.0):
    """Scalar model theta*x on (x=2, y=6): theta(t) = 3 - 2 e^{-4t}."""
    net = build_network(dense_chain([1, 1], bias=False), IDENT)
    data = Dataset(np.array([[2.0]]), np.array([[6.0]]))
    return net, data, np.array([theta0])


class TestClosedFormFlow:
    def test_rk4_matches_exact_solution(self):
        net, data, theta0 = linear_setup()
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=2.0, log_stride=10)
        log = integrate(net, theta0, data, cfg)
        exact = 3.0 - 2.0 * np.exp(-4.0 * log.times)
        got = np.array([th[0] for th in log.thetas])
        assert np.max(np.abs(got - exact)) < 1e-8

    def test_equilibrium_stays_put(self):
        net, data, _ = linear_setup()
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=0.5, log_stride=50)
        log = integrate(net, np.array([3.0]), data, cfg)
        assert np.all(log.losses == log.losses[0])
        np.testing.assert_array_equal(log.thetas[-1], [3.0])

    def test_final_time_always_logged(self):
        net, data, theta0 = linear_setup()
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=0.1, log_stride=7)
        log = integrate(net, theta0, data, cfg)
        assert log.times[-1] == pytest.approx(0.1, abs=1e-12)

    def test_time_stride_fixed_step(self):
        net, data, theta0 = linear_setup()
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=0.1, log_stride=1e-2)
        log = integrate(net, theta0, data, cfg)
        np.testing.assert_allclose(np.diff(log.times), 1e-2, rtol=1e-9)


class TestSchemeOrders:
    def test_euler_halving_first_order(self):
        net, data, theta0 = linear_setup()
        errs = []
        for h in (2e-3, 1e-3):
            cfg = FlowConfig(scheme="euler", step=h, horizon=1.0,
                             log_stride=int(round(1.0 / h)))
            log = integrate(net, theta0, data, cfg)
            errs.append(abs(log.thetas[-1][0] - (3.0 - 2.0 * np.exp(-4.0))))
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)

    def test_rk4_fourth_order_convergence(self):
        net, data, theta0 = linear_setup()
        target = 3.0 - 2.0 * np.exp(-4.0)
        hs = np.array([4e-3, 2e-3, 1e-3, 5e-4])
        errs = []
        for h in hs:
            cfg = FlowConfig(scheme="rk4", step=h, horizon=1.0,
                             log_stride=int(round(1.0 / h)))
            log = integrate(net, theta0, data, cfg)
            errs.append(abs(log.thetas[-1][0] - target))
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert 3.5 <= slope <= 4.5

    def test_rk4_halving_shrinks_error_sixteenfold(self):
        net, data, theta0 = linear_setup()
        target = 3.0 - 2.0 * np.exp(-4.0)
        errs = []
        for h in (4e-3, 2e-3):
            cfg = FlowConfig(scheme="rk4", step=h, horizon=1.0,
                             log_stride=int(round(1.0 / h)))
            log = integrate(net, theta0, data, cfg)
            errs.append(abs(log.thetas[-1][0] - target))
        assert errs[0] / errs[1] == pytest.approx(16.0, rel=0.3)


class TestGdBridge:
    def test_euler_equals_gradient_descent_bitwise(self):
        net = build_network(dense_chain([3, 5, 2]), LEAKY)
        data = gen_synthetic(6, 3, 2, seed=1)
        theta0 = init_params(net, 2)
        h = 1e-3
        cfg = FlowConfig(scheme="euler", step=h, horizon=100 * h, log_stride=1)
        log = integrate(net, theta0, data, cfg)
        theta = theta0.copy()
        for k in range(100):
            theta = theta - h * loss_gradient(net, theta, data)
            np.testing.assert_array_equal(log.thetas[k + 1], theta)


class TestAdaptiveScheme:
    def test_rk45_tracks_closed_form(self):
        net, data, theta0 = linear_setup()
        cfg = FlowConfig(scheme="rk45", step=1e-2, horizon=2.0, log_stride=0.1,
                         abs_tol=1e-10, rel_tol=1e-10)
        log = integrate(net, theta0, data, cfg)
        exact = 3.0 - 2.0 * np.exp(-4.0 * log.times)
        got = np.array([th[0] for th in log.thetas])
        assert log.times[-1] == pytest.approx(2.0, abs=1e-12)
        assert np.max(np.abs(got - exact)) < 1e-6


class TestReverseFlow:
    def test_round_trip_linear_model(self):
        net, data, theta0 = linear_setup()
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=2.0, log_stride=100)
        log = integrate(net, theta0, data, cfg)
        recovered = integrate_reverse(net, log.thetas[-1], data, cfg)
        assert abs(recovered[0] - theta0[0]) < 1e-6

    def test_zero_horizon_is_identity(self):
        net, data, _ = linear_setup()
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=0.0)
        theta = np.array([1.23])
        np.testing.assert_array_equal(integrate_reverse(net, theta, data, cfg), theta)

    def test_round_trip_deep_net(self):
        net = build_network(dense_chain([4, 10, 10, 2]), LEAKY)
        data = gen_synthetic(4, 4, 2, seed=3)
        theta0 = init_params(net, 4)
        cfg = FlowConfig(scheme="rk4", step=1e-4, horizon=0.05, log_stride=100)
        log = integrate(net, theta0, data, cfg)
        recovered = integrate_reverse(net, log.thetas[-1], data, cfg)
        rel = np.linalg.norm(recovered - theta0) / np.linalg.norm(theta0)
        assert rel < 1e-4

    def test_error_grows_with_horizon_but_stays_small(self):
        # reverse error is amplified by the flow's contraction, so it grows
        # with T; on a gentle instance it stays far below 1e-3 up to T = 0.5
        net = build_network(dense_chain([3, 6, 2]), LEAKY)
        data = gen_synthetic(3, 3, 2, seed=3, label_std=0.3)
        theta0 = init_params(net, 4)
        rels = []
        for horizon in (0.05, 0.2, 0.5):
            cfg = FlowConfig(scheme="rk4", step=1e-4, horizon=horizon,
                             log_stride=1000)
            log = integrate(net, theta0, data, cfg)
            recovered = integrate_reverse(net, log.thetas[-1], data, cfg)
            rels.append(np.linalg.norm(recovered - theta0) / np.linalg.norm(theta0))
        assert rels == sorted(rels)
        assert rels[-1] < 1e-3


class TestDivergenceHandling:
    def test_unstable_euler_aborts_with_prefix(self):
        # euler on the closed-form model with h far beyond 2/lambda explodes
        net, data, theta0 = linear_setup()
        cfg = FlowConfig(scheme="euler", step=2.0, horizon=4000.0, log_stride=1)
        log = integrate(net, theta0, data, cfg)
        assert log.aborted
        assert log.abort_reason
        assert len(log) >= 2
        assert np.all(np.isfinite(log.losses))

    def test_nonfinite_initial_rejected(self):
        net, data, _ = linear_setup()
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=0.01)
        with pytest.raises(ValueError):
            integrate(net, np.array([np.nan]), data, cfg)


class TestBlowupBound:
    def test_equilibrium_trivially_passes(self):
        net, data, _ = linear_setup()
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=0.2, log_stride=20)
        log = integrate(net, np.array([3.0]), data, cfg)
        report = blowup_bound_check(log)
        assert report.passed
        np.testing.assert_allclose(report.lhs, 0.0, atol=1e-24)

    def test_closed_form_sides(self):
        # lhs = (2 - 2e^{-4s})^2, rhs = s * int_0^s 64 e^{-8t} dt
        net, data, theta0 = linear_setup()
        cfg = FlowConfig(scheme="rk4", step=1e-4, horizon=1.0, log_stride=10)
        log = integrate(net, theta0, data, cfg)
        report = blowup_bound_check(log)
        s = log.times
        lhs_exact = (2.0 - 2.0 * np.exp(-4.0 * s)) ** 2
        rhs_exact = s * 8.0 * (1.0 - np.exp(-8.0 * s))
        np.testing.assert_allclose(report.lhs, lhs_exact, atol=1e-8)
        np.testing.assert_allclose(report.rhs, rhs_exact, rtol=1e-4, atol=1e-10)
        assert report.passed
        # strict slack away from s = 0
        assert np.all(report.lhs[1:] < report.rhs[1:])

    def test_desk_scale_run_passes(self):
        net = build_network(dense_chain([4, 12, 2]), LEAKY)
        data = gen_synthetic(5, 4, 2, seed=5)
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=0.2, log_stride=10)
        log = integrate(net, init_params(net, 6), data, cfg)
        assert blowup_bound_check(log).passed


class TestLossMonotonicity:
    def test_equilibrium(self):
        net, data, _ = linear_setup()
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=0.1, log_stride=10)
        log = integrate(net, np.array([3.0]), data, cfg)
        assert loss_monotonicity_check(log).passed

    def test_strictly_decreasing_closed_form(self):
        net, data, theta0 = linear_setup()
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=1.0, log_stride=10)
        log = integrate(net, theta0, data, cfg)
        report = loss_monotonicity_check(log)
        assert report.passed
        assert np.all(np.diff(log.losses) < 0.0)

    def test_desk_run(self):
        net = build_network(dense_chain([4, 12, 2]), LEAKY)
        data = gen_synthetic(5, 4, 2, seed=7)
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=0.2, log_stride=10)
        log = integrate(net, init_params(net, 8), data, cfg)
        assert loss_monotonicity_check(log).passed


class TestPieceCrossings:
    def _run(self, refine):
        net = build_network(dense_chain([2, 6, 1]), LEAKY)
        data = gen_synthetic(4, 2, 1, seed=9, label_std=3.0)
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=0.5, log_stride=50,
                         kink_refine=refine)
        return integrate(net, init_params(net, 10), data, cfg)

    def test_events_detected_and_finite(self):
        log = self._run(refine=False)
        assert 0 < len(log.events) < 10_000
        for ev in log.events:
            assert 0.0 < ev.time <= 0.5
            assert ev.layer == 0

    def test_refined_times_strictly_increase(self):
        log = self._run(refine=True)
        times = [ev.time for ev in log.events]
        assert len(times) > 0
        assert all(b > a for a, b in zip(times, times[1:]))

    def test_refinement_does_not_change_trajectory(self):
        plain = self._run(refine=False)
        refined = self._run(refine=True)
        np.testing.assert_array_equal(plain.thetas[-1], refined.thetas[-1])
        assert len(plain.events) == len(refined.events)

    def test_no_events_for_smooth_activation(self):
        net = build_network(dense_chain([2, 6, 1]), builtin("sigmoid"))
        data = gen_synthetic(4, 2, 1, seed=9)
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=0.1, log_stride=10)
        log = integrate(net, init_params(net, 10), data, cfg)
        assert log.events == []


class TestEq5AlongTrajectory:
    def test_loss_rate_matches_gram_quadratic_form(self):
        # d|y-F|^2/dt = -2 (y-F)^T G (y-F): centered differences of the
        # logged squared residual against the quadratic form at interior
        # logs; a gentle instance keeps the finite-difference truncation
        # (which scales with the square of rate times stride) below 1e-3
        from ntkflow.spectral import ntk_gram, residual as stacked_residual
        net = build_network(dense_chain([2, 4, 1], bias=False), LEAKY)
        data = gen_synthetic(3, 2, 1, seed=13, radius=0.5)
        cfg = FlowConfig(scheme="rk4", step=1e-4, horizon=0.5, log_stride=1e-2)
        log = integrate(net, init_params(net, 14), data, cfg)
        sq = log.residual_norms ** 2
        worst = 0.0
        for i in range(1, len(log) - 1):
            fd = (sq[i + 1] - sq[i - 1]) / (log.times[i + 1] - log.times[i - 1])
            r = stacked_residual(net, log.thetas[i], data)
            rhs = -2.0 * r @ ntk_gram(net, log.thetas[i], data) @ r
            worst = max(worst, abs(fd - rhs) / abs(rhs))
        assert worst < 1e-3


class TestTrajectoryCsv:
    def test_round_trip(self, tmp_path):
        net, data, theta0 = linear_setup()
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=0.1, log_stride=10)
        log = integrate(net, theta0, data, cfg)
        path = tmp_path / "trajectory.csv"
        save_trajectory_csv(log, path)
        loaded = load_trajectory_csv(path)
        np.testing.assert_array_equal(loaded.times, log.times)
        np.testing.assert_array_equal(loaded.losses, log.losses)
        np.testing.assert_array_equal(loaded.residual_norms, log.residual_norms)
        np.testing.assert_array_equal(loaded.lambda_mins, log.lambda_mins)
        np.testing.assert_array_equal(loaded.grad_sq_integrals, log.grad_sq_integrals)
        assert loaded.scheme == "rk4"
        assert loaded.coverage == "theorem2"
        assert not loaded.aborted

    def test_theta_sidecar_round_trip(self, tmp_path):
        net, data, theta0 = linear_setup()
        cfg = FlowConfig(scheme="rk4", step=1e-3, horizon=0.05, log_stride=10)
        log = integrate(net, theta0, data, cfg)
        path = tmp_path / "thetas.txt"
        save_thetas(log, path)
        loaded = load_thetas(path)
        assert len(loaded) == len(log)
        for a, b in zip(loaded, log.thetas):
            np.testing.assert_array_equal(a, b)


class TestFlowConfigValidation:
    def test_bad_scheme(self):
        with pytest.raises(ValueError):
            FlowConfig(scheme="verlet")

    def test_step_exceeding_horizon(self):
        with pytest.raises(ValueError):
            FlowConfig(step=1.0, horizon=0.5)

    def test_nonpositive_tolerances(self):
        with pytest.raises(ValueError):
            FlowConfig(abs_tol=0.0)

    def test_bad_strides(self):
        with pytest.raises(ValueError):
            FlowConfig(log_stride=0)
        with pytest.raises(ValueError):
            FlowConfig(log_stride=-0.5)
