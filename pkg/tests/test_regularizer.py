import math

import numpy as np
import pytest
from scipy.optimize import brentq

from backward_rd.errors import ConfigurationError, DivergenceError, InfeasibleError, OverflowGuardError
from backward_rd.forward import evolve
from backward_rd.nonlinearity import catalog
from backward_rd.regularizer import (
    LogBound,
    RegularizationPlan,
    format_plan,
    make_plan,
    parse_plan,
    predicted_rate,
    select_C_eps,
    select_t_eps,
    solve_backward,
    stability_gap,
)
from backward_rd.spectral import GridSpec, SpectralField, gevrey_norm, project_cutoff, sobolev_norm, transform

ZERO = catalog("von_bertalanffy", {"a": 0.0, "b": 0.0})
LOGISTIC = catalog("von_bertalanffy", {"a": 1.0, "b": 1.0, "N": 1})


def smooth(grid, mean=0.2, amp=0.1):
    (x,) = grid.points()
    k = 2 * np.pi / grid.ell
    return transform(mean + amp * np.cos(k * x) - 0.5 * amp * np.sin(3 * k * x), grid)


class TestSelectC:
    def test_inverse_consistency(self):
        eps, beta, T, t, p, C_target = 1e-6, 0.2, 1.0, 0.5, 2, 3.7
        bound = math.exp(-1) * eps ** (0.5 - beta) * math.exp(C_target * (T + t + p / 2))
        C, info = select_C_eps(eps, T, t, p, bound, beta=beta)
        assert info["branch"] == "clamped"
        # recover eps from the returned level
        recovered = (math.exp(p / 2) * bound / math.exp(C * (T + t + p / 2))) ** (1 / (0.5 - beta))
        assert recovered == pytest.approx(eps, rel=1e-10)

    def test_floor(self):
        C, info = select_C_eps(1 - 1e-12, 1.0, 0.5, 1, math.exp(-0.5) * 1.0001)
        assert C == 1.0 and info["floored"]

    @pytest.mark.parametrize("beta", [None, 0.3])
    def test_halving_eps(self, beta):
        T, t, p, B = 1.0, 0.4, 1, 3.0
        a, _ = select_C_eps(1e-5, T, t, p, B, beta=beta)
        b, _ = select_C_eps(0.5e-5, T, t, p, B, beta=beta)
        k = 0.5 if beta is None else 0.5 - beta
        assert b - a == pytest.approx(k * math.log(2) / (T + t + p / 2), rel=1e-10)

    def test_global_branch_lipschitz_factor(self):
        a, _ = select_C_eps(1e-4, 1.0, 0.5, 1, 2.0, lipschitz=0.0)
        b, _ = select_C_eps(1e-4, 1.0, 0.5, 1, 2.0, lipschitz=1.0)
        assert a - b == pytest.approx(0.5 / 2.0, rel=1e-12)

    def test_infeasible_and_cap(self):
        with pytest.raises(InfeasibleError):
            select_C_eps(0.5, 1.0, 0.5, 1, 1e-3)
        C, info = select_C_eps(1e-300, 1.0, 0.01, 1, 1e300, C=50.0)
        assert info["capped"] and C == 700.0

    def test_bad_inputs(self):
        for kw in ({"eps": 0.0}, {"t": 1.0}, {"gevrey_bound": 0.0}):
            args = {"eps": 1e-3, "T": 1.0, "t": 0.5, "p": 1, "gevrey_bound": 1.0, **kw}
            with pytest.raises(ConfigurationError):
                select_C_eps(**args)


class TestPlan:
    def test_mask_and_guards(self):
        g = GridSpec(n_per_axis=32)
        plan = make_plan(g, ZERO, 1e-4, 1.0, 0.5, 1, 1.0)
        assert np.array_equal(plan.mode_mask, g.eigenvalues <= plan.C_eps)
        with pytest.raises(ConfigurationError):
            RegularizationPlan(g, 1e-4, 1, 1.0, 0.5, 0.5, 1.0)
        with pytest.raises(OverflowGuardError):
            RegularizationPlan(g, 1e-4, 1, 2.0, 0.5, 400.0, 1.0)

    def test_needs_beta_for_local_lipschitz(self):
        g = GridSpec(n_per_axis=32)
        with pytest.raises(ConfigurationError):
            make_plan(g, LOGISTIC, 1e-4, 1.0, 0.5, 1, 1.0)
        plan = make_plan(g, LOGISTIC, 1e-8, 1.0, 0.5, 1, 1.0, beta=0.3)
        assert plan.M_eps == pytest.approx((math.sqrt(0.3 * math.log(1e8)) - 1) / 2)

    def test_round_trip_bit_exact(self):
        g = GridSpec(d=2, n_per_axis=16, ell=3.3)
        plan = make_plan(g, LOGISTIC, 1.234e-7, 0.9, 0.31, 2, 1.7, beta=0.2, C=2.5)
        back = parse_plan(format_plan(plan))
        for name in ("eps", "T", "t_star", "C_eps", "gevrey_bound", "beta", "M_eps", "lipschitz", "cutoff_constant"):
            assert getattr(back, name) == getattr(plan, name)
        assert back.grid == plan.grid and back.branch == "clamped" and back.law == plan.law
        assert format_plan(back) == format_plan(plan)

    def test_round_trip_infinite_clamp(self):
        plan = make_plan(GridSpec(n_per_axis=16), ZERO, 1e-3, 1.0, 0.5, 1, 1.0)
        assert parse_plan(format_plan(plan)).M_eps == math.inf


class TestSolveBackward:
    def test_linear_is_semigroup(self, rng):
        g = GridSpec(n_per_axis=64)
        gT = transform(rng.standard_normal(64), g)
        plan = make_plan(g, ZERO, 1e-4, 1.0, 0.5, 1, 1.0)
        sol = solve_backward(gT, ZERO, plan, quad_nodes=8)
        ref = np.where(plan.mode_mask, np.exp(0.5 * g.eigenvalues) * gT.coeffs, 0)
        np.testing.assert_allclose(sol.state_at(0.5).coeffs, ref, rtol=1e-14, atol=0)
        assert sol.iterations.max() == 1

    def test_linear_round_trip_is_projection(self, rng):
        g = GridSpec(d=2, n_per_axis=16, ell=4.0)
        g0 = transform(rng.standard_normal(g.shape), g)
        gT = evolve(g0, ZERO, 1.0, 10).final
        plan = make_plan(g, ZERO, 1e-5, 1.0, 0.5, 2, 1.0)
        sol = solve_backward(gT, ZERO, plan, quad_nodes=6, t_min=0.0)
        diff = sol.state_at(0.0) - project_cutoff(g0, plan.C_eps)
        assert sobolev_norm(diff, 0) <= 1e-12 * sobolev_norm(g0, 0)

    def test_off_mask_exactly_zero(self, rng):
        g = GridSpec(n_per_axis=64, ell=2 * np.pi * 4)
        gT = evolve(smooth(g), LOGISTIC, 1.0, 100).final
        plan = make_plan(g, LOGISTIC, 1e-6, 1.0, 0.5, 1, 1.0, beta=0.3)
        sol = solve_backward(gT, LOGISTIC, plan, quad_nodes=16)
        for s in sol.states:
            assert np.all(s.coeffs[~plan.mode_mask] == 0)

    def test_linear_reaction_round_trip(self):
        # F(u) = a u with data inside the mask: recover u(t) to integrator accuracy
        F = catalog("von_bertalanffy", {"a": 0.5, "b": 0.0})
        g = GridSpec(n_per_axis=32)
        g0 = SpectralField.from_modes(g, {0: 0.3, 1: 0.2 - 0.1j})
        traj = evolve(g0, F, 1.0, 400, record_every=200)
        plan = make_plan(g, F, 1e-6, 1.0, 0.5, 1, gevrey_norm(traj.state_at(0.5), 0.5, 1))
        assert plan.C_eps >= 2.0
        sol = solve_backward(traj.final, F, plan, quad_nodes=257)
        assert sobolev_norm(sol.state_at(0.5) - traj.state_at(0.5), 1) <= 1e-6

    def test_logistic_picard_contracts(self):
        g = GridSpec(n_per_axis=64, ell=2 * np.pi * 4)
        gT = evolve(smooth(g), LOGISTIC, 0.25, 100).final
        plan = make_plan(g, LOGISTIC, 1e-6, 0.25, 0.1, 1, 1.0, beta=0.3)
        sol = solve_backward(gT, LOGISTIC, plan, quad_nodes=64, tol=1e-10)
        for hist in sol.picard_residuals[:-1]:
            assert hist[-1] <= 1e-10
            assert np.all(np.diff(hist) < 0)
            if len(hist) >= 3:
                ratio = hist[1:] / hist[:-1]
                assert ratio.max() < 0.1

    def test_divergence_detected(self):
        # a huge linear growth rate makes the implicit end weight non-contractive
        F = catalog("von_bertalanffy", {"a": 200.0, "b": 0.0})
        g = GridSpec(n_per_axis=16)
        plan = make_plan(g, F, 1e-3, 1.0, 0.5, 1, 1.0, lipschitz=0.0)
        with pytest.raises(DivergenceError):
            solve_backward(SpectralField.from_modes(g, {0: 1.0}), F, plan, quad_nodes=4)

    def test_guards(self, rng):
        g = GridSpec(n_per_axis=16)
        plan = make_plan(g, ZERO, 1e-3, 1.0, 0.5, 1, 1.0)
        with pytest.raises(ValueError):
            solve_backward(SpectralField.zeros(g), ZERO, plan, quad_nodes=3)
        with pytest.raises(ConfigurationError):
            solve_backward(SpectralField.zeros(GridSpec(n_per_axis=8)), ZERO, plan)


class TestTEps:
    @pytest.mark.parametrize("eps", [1e-2, 1e-6, 1e-12])
    @pytest.mark.parametrize("beta", [None, 0.2])
    def test_residual_and_interval(self, eps, beta):
        r = select_t_eps(eps, 1.0, 2, beta)
        assert r.residual <= 1e-12
        k = 1 - 2 * (beta or 0)
        ref = brentq(lambda t: eps ** (k * t / (1 + t + 1)) - t, 1e-300, 1.0, xtol=1e-15)
        assert r.t_eps == pytest.approx(ref, abs=1e-13)
        lo, hi = r.interval
        assert lo < 0 < r.t_eps < hi

    def test_beta_quarter_halves_log(self):
        for eps in (1e-3, 1e-8):
            a = select_t_eps(eps, 1.0, 1, 0.25).t_eps
            b = select_t_eps(math.sqrt(eps), 1.0, 1, None).t_eps
            assert a == pytest.approx(b, abs=1e-14)

    def test_interval_shrinks(self):
        his, los = [], []
        for k in (4, 6, 8, 10, 12):
            lo, hi = select_t_eps(10.0**-k, 1.0, 1).interval
            los.append(abs(lo))
            his.append(hi)
        assert his == sorted(his, reverse=True) and los == sorted(los, reverse=True)

    def test_printed_endpoints_mirror_interval(self):
        # the printed closed form has the sign of b flipped: it returns (-hi, -lo)
        r = select_t_eps(1e-6, 1.0, 1)
        assert sorted(r.printed_endpoints) == pytest.approx(sorted([-r.interval[1], -r.interval[0]]), rel=1e-12)

    def test_infeasible(self):
        with pytest.raises(InfeasibleError):
            select_t_eps(0.9, 0.05, 1)


class TestRates:
    def test_exponents(self):
        assert predicted_rate(0.5, 1.0, 1) == 0.25
        assert predicted_rate(0.8, 1.0, 1, 0.1) == pytest.approx(0.8 * 0.8 / 2.3)
        assert predicted_rate(1 - 1e-12, 1.0, 2) == pytest.approx(1 / 3, rel=1e-9)

    def test_log_bound(self):
        b = predicted_rate(0.0, 1.0, 1)
        assert isinstance(b, LogBound)
        a = 1.5
        eps = 1e-8
        ref = a / (math.sqrt((a + 1) ** 2 + 4 * a * math.log(1 / eps)) + a - 1)
        assert b(eps) == pytest.approx(ref, rel=1e-15)
        # quadrupling (1 - 2 beta) log(1/eps) halves the bound asymptotically
        assert b(1e-300) / b(1e-75) == pytest.approx(0.5, rel=0.02)

    def test_log_bound_matches_interval_endpoint(self):
        for eps in (1e-3, 1e-9):
            assert LogBound(1.0, 1)(eps) == pytest.approx(select_t_eps(eps, 1.0, 1).interval[1] / 2, rel=1e-12)


class TestStabilityGap:
    def test_single_mode_closed_form(self):
        g = GridSpec(n_per_axis=16)
        plan = make_plan(g, ZERO, 1e-4, 1.0, 0.5, 1, 1.0)
        g1 = SpectralField.from_modes(g, {1: 0.3})
        g2 = SpectralField.from_modes(g, {1: 0.3 + 1e-3})
        s1 = solve_backward(g1, ZERO, plan, quad_nodes=4)
        s2 = solve_backward(g2, ZERO, plan, quad_nodes=4)
        rep = stability_gap(s1, s2, g1, g2)
        gap = math.sqrt(2) * 1e-3
        ref = math.exp(0.5 * 2) * math.sqrt(2.0) * gap ** (1 - 0.25)
        assert rep["ratio"] == pytest.approx(ref, rel=1e-12)

    def test_identical_data(self):
        g = GridSpec(n_per_axis=16)
        plan = make_plan(g, ZERO, 1e-4, 1.0, 0.5, 1, 1.0)
        s = solve_backward(SpectralField.from_modes(g, {1: 0.3}), ZERO, plan, quad_nodes=4)
        with pytest.raises(ValueError):
            stability_gap(s, s, s.states[0], s.states[0])

    def test_logistic_ratio_bounded(self, rng):
        g = GridSpec(n_per_axis=64, ell=2 * np.pi * 4)
        gT = evolve(smooth(g), LOGISTIC, 1.0, 200).final
        plan = make_plan(g, LOGISTIC, 1e-6, 1.0, 0.5, 1, 1.0, beta=0.3)
        base = solve_backward(gT, LOGISTIC, plan, quad_nodes=32)
        direction = transform(rng.standard_normal(64), g)
        direction = direction * (1 / sobolev_norm(direction, 0))
        ratios = []
        for gap in (1e-3, 1e-4, 1e-5):
            pert = gT + direction * gap
            ratios.append(stability_gap(base, solve_backward(pert, LOGISTIC, plan, quad_nodes=32), gT, pert)["ratio"])
        # conditional stability: the ratio never grows beyond 3x its value at the largest gap
        assert max(ratios) <= 3 * ratios[0]
