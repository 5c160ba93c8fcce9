"""Stabilized fixed-point iteration for the regularized backward problem.

At each time node ``t_n = T - n omega`` the memory integral is frozen at
``t_n`` and the resulting equation

    u_j = e^{(T - t_n) lambda_j} (g_T^eps)_j - gamma(t_n, lambda_j) F(u)^_j

is solved on the retained modes by the damped sweep

    (K + 1) u^{r+1} = K u^r + e^{(T - t_n) lambda} g_T^eps - gamma F(u^r)^,

started from ``u^0 = 0``. With ``K >= gamma_bar L1`` the sweep contracts
with factor ``mu_bar = K / (K + 1)``. Nodes are independent of each other.

The running (Cesaro) mean is taken literally as ``(1/R) sum_{r=0}^{R} u^r``:
``R + 1`` terms over ``R``. For iterates that approach a nonzero limit this
mean is biased by a factor ``(R + 1)/R``; see :func:`cesaro_mean`.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DivergenceError, OverflowGuardError
from .forward import apply_nonlinearity
from .spectral import EXP_GUARD, SpectralField, sobolev_norm

__all__ = [
    "gamma",
    "gamma_bar",
    "choose_K",
    "SchemeState",
    "iterate",
    "cesaro_mean",
    "IterationReport",
    "convergence_report",
    "format_report",
]


def _check_exponent(x):
    if np.max(x) > EXP_GUARD:
        raise OverflowGuardError(f"exponent {float(np.max(x)):.4g} exceeds {EXP_GUARD}")


def gamma(t, lam, T):
    """``int_t^T e^{(s - t) lam} ds = (e^{(T - t) lam} - 1) / lam``, elementwise in ``lam``."""
    if not 0 <= t <= T:
        raise ConfigurationError(f"need 0 <= t <= T, got t={t}, T={T}")
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 1):
        raise ConfigurationError("eigenvalues must be >= 1")
    x = (T - t) * lam
    _check_exponent(x)
    out = np.expm1(x) / lam
    return out if out.ndim else float(out)


def gamma_bar(t, C_eps, T):
    """Upper bound ``(e^{(T - t) C_eps} - 1) / C_eps`` of ``gamma`` on the retained modes."""
    return gamma(t, C_eps, T)


def _nondegeneracy(F, M):
    nd = getattr(F, "nondegeneracy", None)
    if nd is None:
        raise ConfigurationError(f"{getattr(F, 'name', F)} has no non-degeneracy constants (L0, L1)")
    return nd(M)


def choose_K(t_n, plan, F):
    """Stabilization constant ``max(gamma_bar(t_n) L1, e^{T C_eps})``."""
    _, L1 = _nondegeneracy(F, plan.M_eps)
    _check_exponent(plan.T * plan.C_eps)
    return max(gamma_bar(t_n, plan.C_eps, plan.T) * L1, math.exp(plan.T * plan.C_eps))


@dataclass(frozen=True, eq=False)
class SchemeState:
    """Everything produced by :func:`iterate`.

    ``iterates[n][r]`` is ``u^{r, n+1}`` for ``r = 0..R_max`` (index 0 is the
    first node ``t_1``); ``cesaro[n][R - 1]`` is the mean for ``R = 1..R_max``;
    ``diffs[n][r]`` is ``|u^{r+1} - u^r|_{H^p}`` and ``ratios[n][r]`` is
    ``diffs[n][r+1] / diffs[n][r]``.
    """

    plan: object
    N: int
    omega: float
    nodes: np.ndarray
    K: np.ndarray
    iterates: tuple
    cesaro: tuple
    diffs: np.ndarray
    ratios: np.ndarray
    gamma_bar_L1: np.ndarray

    @property
    def mu_bar(self):
        return self.K / (self.K + 1.0)

    @property
    def R_max(self):
        return len(self.iterates[0]) - 1

    def final(self, n):
        """Last iterate at node ``t_n`` (``n`` counted from 1)."""
        return self.iterates[n - 1][-1]


def _roundoff_floor(norm_scale):
    return 1e-13 * max(norm_scale, 1e-300)


def iterate(gT_eps, F, plan, N, R_max=64, K_override=None, pad=2.0):
    """Run ``R_max`` sweeps at each of the nodes ``t_n = T - n T/N``, ``n = 1..N``.

    ``F`` is clamped according to the plan. ``K_override`` (a number) replaces
    the default stabilization constant at every node.
    """
    if N < 1:
        raise ConfigurationError("need at least one time node")
    if R_max < 2:
        raise ConfigurationError("R_max must be at least 2")
    if gT_eps.grid != plan.grid:
        raise ConfigurationError("data and plan live on different grids")
    grid = plan.grid
    T, p = plan.T, plan.p
    Fs = plan.scheme_nonlinearity(F)
    mask = plan.mode_mask
    lam = np.where(mask, grid.eigenvalues, 1.0)
    w = grid.eigenvalues**p
    g = np.where(mask, gT_eps.coeffs, 0.0)
    omega = T / N
    nodes = np.array([T - n * omega for n in range(1, N + 1)])
    nodes[-1] = 0.0 if abs(nodes[-1]) < 1e-14 * T else nodes[-1]
    _, L1 = _nondegeneracy(F, plan.M_eps)

    def hp(c):
        return math.sqrt(float(np.sum(np.abs(c) ** 2 * w)))

    Ks, gl1 = [], []
    all_iterates, all_cesaro, all_diffs, all_ratios = [], [], [], []
    for t_n in nodes:
        gb = gamma_bar(t_n, plan.C_eps, T)
        K = float(K_override) if K_override is not None else choose_K(t_n, plan, F)
        if not K > 0:
            raise ConfigurationError("K must be positive")
        Ks.append(K)
        gl1.append(gb * L1)
        _check_exponent((T - t_n) * np.where(mask, lam, 0.0))
        linear = np.where(mask, np.exp((T - t_n) * lam) * g, 0.0)
        gam = np.where(mask, gamma(t_n, lam, T), 0.0)
        u = np.zeros_like(g)
        total = u.copy()
        its, means, diffs, ratios = [SpectralField(grid, u)], [], [], []
        scale = hp(linear)
        growth = 0
        for r in range(R_max):
            Fu = apply_nonlinearity(SpectralField(grid, u), Fs, pad).coeffs
            new = np.where(mask, (K * u + linear - gam * Fu) / (K + 1.0), 0.0)
            d = hp(new - u)
            if diffs:
                ratio = d / diffs[-1] if diffs[-1] > 0 else (0.0 if d == 0 else math.inf)
                ratios.append(ratio)
                if ratio > 1 and d > _roundoff_floor(scale):
                    growth += 1
                else:
                    growth = 0
                if growth >= 3:
                    raise DivergenceError(
                        f"sweep at t_n={t_n:.6g} stopped contracting (ratio {ratio:.4g} > 1 three times); "
                        f"K={K:.6g}, gamma_bar*L1={gb * L1:.6g}"
                    )
            diffs.append(d)
            u = new
            total = total + u
            its.append(SpectralField(grid, u))
            means.append(SpectralField(grid, total / (r + 1)))
        all_iterates.append(tuple(its))
        all_cesaro.append(tuple(means))
        all_diffs.append(diffs)
        all_ratios.append(ratios)
    return SchemeState(
        plan=plan,
        N=N,
        omega=omega,
        nodes=nodes,
        K=np.array(Ks),
        iterates=tuple(all_iterates),
        cesaro=tuple(all_cesaro),
        diffs=np.array(all_diffs),
        ratios=np.array(all_ratios),
        gamma_bar_L1=np.array(gl1),
    )


def cesaro_mean(state, R, n):
    """``(1/R) sum_{r=0}^{R} u^{r, n}`` exactly as the running mean is defined.

    Note the ``R + 1`` summands: iterates that all equal ``v`` average to
    ``(R + 1)/R v``. ``R = 0`` is undefined.
    """
    if R < 1:
        raise ConfigurationError("the running mean is undefined for R = 0")
    if R > state.R_max:
        raise ConfigurationError(f"only {state.R_max} sweeps stored, asked for R={R}")
    if not 1 <= n <= state.N:
        raise ConfigurationError(f"node index must lie in 1..{state.N}, got {n}")
    return state.cesaro[n - 1][R - 1]


@dataclass(frozen=True, eq=False)
class IterationReport:
    """Errors against a reference solution, per node (rows) and sweep (columns).

    ``errors[n, r] = |u^{r, n+1} - u_ref(t_{n+1})|_{H^p}`` for ``r = 0..R_max``;
    ``cesaro_errors[n, R - 1]`` likewise for the running mean. ``floor`` is the
    error of the last iterate (the consistency gap between the frozen-memory
    scheme and the reference). ``fitted_ratio`` is the least-squares slope of
    ``log error`` against ``r`` over the sweeps whose error exceeds
    ``floor_factor * floor`` (the geometric phase).
    """

    nodes: np.ndarray
    errors: np.ndarray
    cesaro_errors: np.ndarray
    ratios: np.ndarray
    mu_bar: np.ndarray
    fitted_ratio: np.ndarray
    fit_window: tuple
    floor: np.ndarray

    def within_bound(self, slack=0.05):
        return bool(np.all(self.fitted_ratio <= self.mu_bar * (1 + slack)))


def _fit_ratio(err, floor_factor):
    # geometric phase: the leading run of sweeps whose error is well above the floor
    floor = err[-1]
    stop = len(err)
    for k in range(len(err)):
        if err[k] <= floor_factor * floor:
            stop = k
            break
    r = np.arange(stop if stop >= 3 else len(err))
    y = np.log(np.maximum(err[r], 1e-300))
    slope = np.polyfit(r.astype(float), y, 1)[0]
    return math.exp(slope), (int(r[0]), int(r[-1]))


def convergence_report(state, reference, floor_factor=10.0, atol=1e-12):
    """Compare every iterate with a reference solution sharing the plan's nodes."""
    p = state.plan.p
    errors, cerrs, fits, windows, floors = [], [], [], [], []
    for k, t_n in enumerate(state.nodes):
        try:
            ref = reference.state_at(t_n, atol=atol)
        except KeyError as exc:
            raise ConfigurationError(f"reference has no node at t={t_n:.12g}") from exc
        e = np.array([sobolev_norm(u - ref, p) for u in state.iterates[k]])
        c = np.array([sobolev_norm(m - ref, p) for m in state.cesaro[k]])
        ratio, window = _fit_ratio(e, floor_factor)
        errors.append(e)
        cerrs.append(c)
        fits.append(ratio)
        windows.append(window)
        floors.append(e[-1])
    return IterationReport(
        nodes=state.nodes.copy(),
        errors=np.array(errors),
        cesaro_errors=np.array(cerrs),
        ratios=state.ratios.copy(),
        mu_bar=state.mu_bar,
        fitted_ratio=np.array(fits),
        fit_window=tuple(windows),
        floor=np.array(floors),
    )


def format_report(report):
    """Tab-separated table with header ``r n error ratio cesaro_error``.

    ``n`` counts nodes from 1; ``ratio`` is empty where undefined (``r < 2``)
    and ``cesaro_error`` is empty at ``r = 0``. Floats use 17 significant digits.
    """
    rows = ["r\tn\terror\tratio\tcesaro_error"]
    R = report.errors.shape[1] - 1
    for k in range(len(report.nodes)):
        for r in range(R + 1):
            ratio = f"{report.ratios[k, r - 2]:.17g}" if r >= 2 else ""
            ce = f"{report.cesaro_errors[k, r - 1]:.17g}" if r >= 1 else ""
            rows.append(f"{r}\t{k + 1}\t{report.errors[k, r]:.17g}\t{ratio}\t{ce}")
    return "\n".join(rows) + "\n"
