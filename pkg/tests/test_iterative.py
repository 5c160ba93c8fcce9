import dataclasses
import math

import numpy as np
import pytest
from scipy.integrate import quad

from backward_rd.errors import ConfigurationError, DivergenceError, OverflowGuardError
from backward_rd.forward import apply_nonlinearity, evolve
from backward_rd.iterative import (
    cesaro_mean,
    choose_K,
    convergence_report,
    format_report,
    gamma,
    gamma_bar,
    iterate,
)
from backward_rd.nonlinearity import catalog
from backward_rd.regularizer import RegularizationPlan, make_plan, solve_backward
from backward_rd.spectral import GridSpec, SpectralField, sobolev_norm, transform

MM = catalog("michaelis_menten", {"a": 1.0, "b": 1.0})


def zero_law():
    # F = 0 with dummy non-degeneracy constants, for testing the affine recursion
    base = catalog("von_bertalanffy", {"a": 0.0, "b": 0.0})
    return dataclasses.replace(base, nondegeneracy=lambda M: (0.0, 0.0))


def identity_law():
    base = catalog("von_bertalanffy", {"a": 1.0, "b": 0.0})
    return dataclasses.replace(base, nondegeneracy=lambda M: (1.0, 1.0))


def mm_testbed(T=0.25, eps=1e-6, N=4):
    g = GridSpec(n_per_axis=64, ell=2 * np.pi * 4)
    (x,) = g.points()
    k = 2 * np.pi / g.ell
    g0 = transform(0.5 + 0.1 * np.cos(k * x) + 0.05 * np.sin(2 * k * x), g)
    gT = evolve(g0, MM, T, 100).final
    plan = make_plan(g, MM, eps, T, T / 2, 1, 1.0)
    return g, gT, plan


class TestGamma:
    def test_endpoint(self):
        np.testing.assert_array_equal(gamma(1.0, np.array([1.0, 5.0, 40.0]), 1.0), 0.0)

    def test_unit(self):
        assert gamma(0.0, 1.0, 1.0) == pytest.approx(math.e - 1, rel=1e-15)

    def test_quadrature(self, rng):
        for _ in range(20):
            T = rng.uniform(0.1, 2)
            t = rng.uniform(0, T)
            lam = rng.uniform(1, 20)
            ref = quad(lambda s: math.exp((s - t) * lam), t, T, epsabs=0, epsrel=1e-13)[0]
            assert gamma(t, lam, T) == pytest.approx(ref, rel=1e-12)

    def test_bar_dominates(self):
        lam = np.linspace(1, 7, 13)
        assert np.all(gamma(0.2, lam, 1.0) <= gamma_bar(0.2, 7.0, 1.0) + 1e-15)

    def test_guards(self):
        with pytest.raises(ConfigurationError):
            gamma(2.0, 1.0, 1.0)
        with pytest.raises(ConfigurationError):
            gamma(0.0, 0.5, 1.0)
        with pytest.raises(OverflowGuardError):
            gamma(0.0, 800.0, 1.0)


class TestChooseK:
    def plan(self, C, T=1.0):
        return RegularizationPlan(GridSpec(n_per_axis=16), 1e-6, 1, T, 0.5, C, 1.0)

    def test_exponential_term_dominates(self):
        F = catalog("michaelis_menten", {"a": 0.01, "b": 1.0})
        assert choose_K(0.3, self.plan(10.0), F) == math.exp(10.0)

    def test_endpoint(self):
        assert choose_K(1.0, self.plan(3.0), MM) == math.exp(3.0)

    def test_michaelis_menten_hand_value(self):
        # L1 = a/b = 1; gamma_bar(0) = (e^{C T} - 1)/C
        F = catalog("michaelis_menten", {"a": 4.0, "b": 1.0})
        C, T = 2.0, 1.0
        expected = max((math.exp(C * T) - 1) / C * 4.0, math.exp(C * T))
        assert choose_K(0.0, self.plan(C, T), F) == pytest.approx(expected, rel=1e-15)
        assert expected == pytest.approx((math.exp(2) - 1) * 2)

    def test_monotone(self):
        Ks = [choose_K(0.0, self.plan(C), MM) for C in (1.0, 2.0, 4.0)]
        assert Ks == sorted(Ks)
        L1s = [choose_K(0.0, self.plan(4.0), catalog("michaelis_menten", {"a": a, "b": 1.0})) for a in (1, 10, 100)]
        assert L1s == sorted(L1s)

    def test_missing_constants(self):
        with pytest.raises(ConfigurationError):
            choose_K(0.0, self.plan(2.0), catalog("budworm"))


class TestIterate:
    def test_affine_recursion_fixed_point(self):
        g = GridSpec(n_per_axis=16)
        gT = SpectralField.from_modes(g, {0: 0.2, 1: 0.1j})
        plan = RegularizationPlan(g, 1e-6, 1, 0.5, 0.25, 3.0, 1.0)
        st = iterate(gT, zero_law(), plan, N=2, R_max=40)
        for n, t_n in enumerate(st.nodes, start=1):
            target = np.where(plan.mode_mask, np.exp((0.5 - t_n) * g.eigenvalues) * gT.coeffs, 0)
            mu = st.mu_bar[n - 1]
            err = [np.max(np.abs(u.coeffs - target)) for u in st.iterates[n - 1]]
            np.testing.assert_allclose(err, np.max(np.abs(target)) * mu ** np.arange(41), rtol=1e-10)
            np.testing.assert_allclose(st.ratios[n - 1], mu, rtol=1e-9)

    def test_single_mode_hand_recursion(self):
        g = GridSpec(n_per_axis=8)
        plan = RegularizationPlan(g, 1e-6, 1, 1.0, 0.5, 1.0, 1.0)
        st = iterate(SpectralField.from_modes(g, {0: 0.7}), identity_law(), plan, N=2, R_max=3)
        for n, t in enumerate(st.nodes, start=1):
            K = max((math.exp((1.0 - t)) - 1) * 1.0, math.e)
            gam = math.exp(1.0 - t) - 1
            x = 0.0
            for r in range(1, 4):
                x = (K * x + math.exp(1.0 - t) * 0.7 - gam * x) / (K + 1)
                assert st.iterates[n - 1][r].coeffs[0].real == pytest.approx(x, abs=1e-14)

    def test_michaelis_menten_contraction(self):
        _, gT, plan = mm_testbed()
        st = iterate(gT, MM, plan, N=4, R_max=64)
        assert np.all(st.ratios <= st.mu_bar[:, None])
        assert np.all(st.K >= st.gamma_bar_L1)
        for it in st.iterates:
            assert all(np.all(u.coeffs[~plan.mode_mask] == 0) for u in it)

    def test_cauchy_tail_and_envelope(self):
        _, gT, plan = mm_testbed()
        st = iterate(gT, MM, plan, N=2, R_max=48)
        p = plan.p
        for k in range(2):
            mu = st.mu_bar[k]
            its = st.iterates[k]
            u1 = sobolev_norm(its[1], p)
            for r in (3, 10, 30):
                for l in (1, 2, 4):
                    lhs = sobolev_norm(its[r + l] - its[r], p)
                    assert lhs <= mu**r * (1 - mu**l) / (1 - mu) * u1 * (1 + 1e-9)
            norms = np.array([sobolev_norm(u, p) for u in its[1:]])
            envelope = u1 * np.cumsum(mu ** np.arange(len(norms)))
            assert np.all(norms <= envelope * (1 + 1e-9))

    def test_fixed_point_residual(self):
        g, gT, plan = mm_testbed()
        st = iterate(gT, MM, plan, N=1, R_max=2000)
        u = st.final(1)
        t = st.nodes[0]
        lam = np.where(plan.mode_mask, g.eigenvalues, 1.0)
        rhs = np.exp((plan.T - t) * lam) * gT.coeffs - gamma(t, lam, plan.T) * apply_nonlinearity(u, MM).coeffs
        res = np.where(plan.mode_mask, rhs - u.coeffs, 0)
        assert np.max(np.abs(res)) <= 1e-10

    def test_node_order_independent(self):
        _, gT, plan = mm_testbed()
        a = iterate(gT, MM, plan, N=4, R_max=10)
        b = iterate(gT, MM, plan, N=2, R_max=10)
        # node t = T/2 is node 2 of 4 and node 1 of 2
        np.testing.assert_array_equal(a.final(2).coeffs, b.final(1).coeffs)

    def test_divergence(self):
        g = GridSpec(n_per_axis=8)
        plan = RegularizationPlan(g, 1e-6, 1, 1.0, 0.5, 1.0, 1.0)
        with pytest.raises(DivergenceError, match="gamma_bar"):
            iterate(SpectralField.from_modes(g, {0: 0.7}), identity_law(), plan, N=1, R_max=20, K_override=0.1)

    def test_bad_arguments(self):
        g = GridSpec(n_per_axis=8)
        plan = RegularizationPlan(g, 1e-6, 1, 1.0, 0.5, 1.0, 1.0)
        gT = SpectralField.zeros(g)
        with pytest.raises(ConfigurationError):
            iterate(gT, MM, plan, N=0)
        with pytest.raises(ConfigurationError):
            iterate(gT, MM, plan, N=1, R_max=1)


class TestCesaro:
    def state(self, R=8):
        g = GridSpec(n_per_axis=8)
        plan = RegularizationPlan(g, 1e-6, 1, 1.0, 0.5, 1.0, 1.0)
        return iterate(SpectralField.from_modes(g, {0: 0.7}), identity_law(), plan, N=1, R_max=R)

    def test_running_mean_consistency(self):
        st = self.state(12)
        for R in range(1, 13):
            direct = sum(u.coeffs for u in st.iterates[0][: R + 1]) / R
            np.testing.assert_allclose(cesaro_mean(st, R, 1).coeffs, direct, atol=1e-14, rtol=0)

    def test_two_terms_at_one(self):
        st = self.state()
        its = st.iterates[0]
        np.testing.assert_allclose(cesaro_mean(st, 1, 1).coeffs, its[0].coeffs + its[1].coeffs, atol=1e-15)

    def test_undefined(self):
        st = self.state()
        with pytest.raises(ConfigurationError):
            cesaro_mean(st, 0, 1)
        with pytest.raises(ConfigurationError):
            cesaro_mean(st, 9, 1)
        with pytest.raises(ConfigurationError):
            cesaro_mean(st, 3, 2)

    def test_oscillating_regime_mean_wins(self):
        # K below gamma*L gives a negative per-sweep factor; averaging then helps
        g = GridSpec(n_per_axis=8)
        plan = RegularizationPlan(g, 1e-6, 1, 1.0, 0.5, 1.0, 1.0)
        st = iterate(SpectralField.from_modes(g, {0: 0.7}), identity_law(), plan, N=1, R_max=60, K_override=0.5)
        fixed = st.final(1).coeffs[0].real
        plain = abs(st.iterates[0][8].coeffs[0].real - fixed)
        mean = abs(cesaro_mean(st, 8, 1).coeffs[0].real - fixed)
        assert mean < plain


class TestReport:
    def test_report_against_picard(self):
        _, gT, plan = mm_testbed()
        st = iterate(gT, MM, plan, N=4, R_max=200)
        ref = solve_backward(gT, MM, plan, quad_nodes=4 * 16 + 1, t_min=0.0)
        rep = convergence_report(st, ref)
        for k, t in enumerate(st.nodes):
            assert rep.errors[k, 0] == pytest.approx(sobolev_norm(ref.state_at(t), 1), rel=1e-14)
        assert rep.within_bound(0.05)
        assert np.all(rep.floor < 0.05 * rep.errors[:, 0])

    def test_node_mismatch(self):
        _, gT, plan = mm_testbed()
        st = iterate(gT, MM, plan, N=4, R_max=4)
        ref = solve_backward(gT, MM, plan, quad_nodes=6, t_min=0.0)
        with pytest.raises(ConfigurationError):
            convergence_report(st, ref)

    def test_table(self):
        _, gT, plan = mm_testbed()
        st = iterate(gT, MM, plan, N=2, R_max=5)
        ref = solve_backward(gT, MM, plan, quad_nodes=9, t_min=0.0)
        text = format_report(convergence_report(st, ref))
        lines = text.splitlines()
        assert lines[0] == "r\tn\terror\tratio\tcesaro_error"
        assert len(lines) == 1 + 2 * 6
        r0 = lines[1].split("\t")
        assert r0[:2] == ["0", "1"] and r0[3] == "" and r0[4] == ""
        r2 = lines[3].split("\t")
        assert float(r2[3]) == st.ratios[0, 0]
