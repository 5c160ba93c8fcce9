"""Spectral cut-off regularization of the backward problem.

Given noisy final data ``g_T^eps`` the regularized state at time ``t`` solves,
mode by mode on the retained set ``{j : lambda_j <= C_eps}``,

    u(t)_j = e^{(T-t) lambda_j} (g_T^eps)_j
             - int_t^T e^{(s-t) lambda_j} F(u(s))^_j ds,

and every other mode is zero. In the clamped variant ``F`` is replaced by
its cut-off ``F_{M_eps}``. Parameter choice follows the Holder-rate rules:
``C_eps`` from the Gevrey size of the solution and the noise level,
``M_eps`` from the Lipschitz growth of ``F`` and ``t_eps`` from the
balance between the rate at ``t > 0`` and the time shift to ``t = 0``.
"""

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.optimize import brentq

from .errors import (
    ConfigurationError,
    DivergenceError,
    InfeasibleError,
    OverflowGuardError,
)
from .forward import apply_nonlinearity
from .nonlinearity import choose_M_eps, clamp_for_scheme
from .spectral import EXP_GUARD, GridSpec, SpectralField, cutoff_mask, sobolev_norm

__all__ = [
    "RegularizationPlan",
    "make_plan",
    "select_C_eps",
    "BackwardSolution",
    "solve_backward",
    "TEpsResult",
    "select_t_eps",
    "predicted_rate",
    "LogBound",
    "stability_gap",
    "format_plan",
    "parse_plan",
]


def select_C_eps(eps, T, t, p, gevrey_bound, beta=None, lipschitz=0.0, C=1.0):
    """Cut-off level for noise ``eps`` at evaluation time ``t``.

    Without ``beta`` (globally Lipschitz F with constant ``lipschitz``)::

        C_eps = C / (T + t + p/2) * log(e^{p/2 + (t-T) L^2} B / eps^{1/2})

    With ``beta`` (clamped F)::

        C_eps = C / (T + t + p/2) * log(e^{p/2} B / eps^{1/2 - beta})

    where ``B = |u(t)|_{G_t^{p/2}}``. The value is floored at 1 and capped
    so that ``T * C_eps`` stays below the exponent guard.

    Returns ``(C_eps, info)`` with ``info`` recording the branch and whether
    the floor or cap was applied.
    """
    if not 0 < eps < 1:
        raise ConfigurationError(f"eps must lie in (0, 1), got {eps}")
    if not 0 < t < T:
        raise ConfigurationError(f"need 0 < t < T, got t={t}, T={T}")
    if not gevrey_bound > 0:
        raise ConfigurationError("gevrey bound must be positive")
    if not C > 0:
        raise ConfigurationError("cut-off constant C must be positive")
    scale = C / (T + t + p / 2)
    if beta is None:
        branch = "global"
        log_arg = p / 2 + (t - T) * lipschitz**2 + math.log(gevrey_bound) - 0.5 * math.log(eps)
    else:
        if not 0 < beta < 0.5:
            raise ConfigurationError(f"beta must lie in (0, 1/2), got {beta}")
        branch = "clamped"
        log_arg = p / 2 + math.log(gevrey_bound) - (0.5 - beta) * math.log(eps)
    value = scale * log_arg
    if value <= 0:
        raise InfeasibleError(f"cut-off formula gives {value:.4g} <= 0: eps={eps:g} too large for bound {gevrey_bound:.4g}")
    info = {"branch": branch, "raw": value, "floored": value < 1.0, "capped": False}
    value = max(value, 1.0)
    if T * value > EXP_GUARD:
        value = EXP_GUARD / T
        info["capped"] = True
    return value, info


@dataclass(frozen=True, eq=False)
class RegularizationPlan:
    grid: GridSpec
    eps: float
    p: int
    T: float
    t_star: float
    C_eps: float
    gevrey_bound: float
    beta: float = None
    M_eps: float = math.inf
    lipschitz: float = 0.0
    cutoff_constant: float = 1.0
    branch: str = "global"
    floored: bool = False
    capped: bool = False
    law: str = ""
    mode_mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.C_eps < 1:
            raise ConfigurationError("C_eps must be >= 1")
        if self.T * self.C_eps > EXP_GUARD * (1 + 1e-12):
            raise OverflowGuardError(f"T*C_eps = {self.T * self.C_eps:.4g} exceeds {EXP_GUARD}")
        if self.beta is not None and not 0 < self.beta < 0.5:
            raise ConfigurationError("beta must lie in (0, 1/2)")
        mask = cutoff_mask(self.grid, self.C_eps)
        mask.setflags(write=False)
        object.__setattr__(self, "mode_mask", mask)

    @property
    def n_retained(self):
        return int(self.mode_mask.sum())

    def scheme_nonlinearity(self, F):
        """``F`` as used by the solvers: clamped at ``M_eps`` in the clamped branch."""
        if self.beta is None:
            return F
        return clamp_for_scheme(F, self.M_eps)


def make_plan(grid, F, eps, T, t_star, p, gevrey_bound, beta=None, C=1.0, lipschitz=None):
    """Assemble every eps-dependent choice for one evaluation time."""
    if beta is None:
        if lipschitz is None:
            if not F.constant_bound:
                raise ConfigurationError(
                    f"{F.name} has an M-dependent Lipschitz bound; give beta (clamped mode) or an explicit lipschitz"
                )
            lipschitz = F.lipschitz_bound(1.0)
        M_eps = math.inf
    else:
        M_eps = choose_M_eps(F, eps, beta, t_star, T)
        lipschitz = F.lipschitz_bound(M_eps) if math.isfinite(M_eps) else F.lipschitz_bound(1.0)
    C_eps, info = select_C_eps(eps, T, t_star, p, gevrey_bound, beta=beta, lipschitz=lipschitz, C=C)
    return RegularizationPlan(
        grid=grid,
        eps=float(eps),
        p=int(p),
        T=float(T),
        t_star=float(t_star),
        C_eps=float(C_eps),
        gevrey_bound=float(gevrey_bound),
        beta=None if beta is None else float(beta),
        M_eps=float(M_eps),
        lipschitz=float(lipschitz),
        cutoff_constant=float(C),
        branch=info["branch"],
        floored=info["floored"],
        capped=info["capped"],
        law=F.name,
    )


# -- plan serialization -----------------------------------------------------

_PLAN_KEYS = [f.name for f in fields(RegularizationPlan) if f.name not in ("grid", "mode_mask")]


def _enc(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return v.hex()
    return str(v)


def format_plan(plan):
    """Flat ``key = value`` block; floats are written in hex so a reload is bit-exact."""
    g = plan.grid
    lines = [f"grid.d = {g.d}", f"grid.n_per_axis = {g.n_per_axis}", f"grid.ell = {g.ell.hex()}"]
    for k in _PLAN_KEYS:
        lines.append(f"{k} = {_enc(getattr(plan, k))}")
    lines.append(f"n_retained = {plan.n_retained}")
    return "\n".join(lines) + "\n"


def parse_plan(text):
    kv = {}
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        k, v = (s.strip() for s in ln.split("=", 1))
        kv[k] = v
    grid = GridSpec(d=int(kv["grid.d"]), n_per_axis=int(kv["grid.n_per_axis"]), ell=float.fromhex(kv["grid.ell"]))
    ints = {"p"}
    strs = {"branch", "law"}
    bools = {"floored", "capped"}
    args = {}
    for k in _PLAN_KEYS:
        v = kv[k]
        if k in strs:
            args[k] = v
        elif k in ints:
            args[k] = int(v)
        elif k in bools:
            args[k] = v == "true"
        elif v == "none":
            args[k] = None
        else:
            args[k] = float.fromhex(v)
    return RegularizationPlan(grid=grid, **args)


# -- the regularized backward solve ---------------------------------------------


@dataclass(frozen=True, eq=False)
class BackwardSolution:
    plan: RegularizationPlan
    times: np.ndarray
    states: tuple
    picard_residuals: tuple
    status: str = "converged"

    def state_at(self, t, atol=1e-12):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > atol:
            raise KeyError(f"time {t} is not a node of this solution")
        return self.states[k]

    @property
    def iterations(self):
        return np.array([len(r) for r in self.picard_residuals])


def solve_backward(gT_eps, F, plan, quad_nodes=64, tol=1e-10, max_iter=100, t_min=None, pad=2.0):
    """Solve the truncated integral equation on ``quad_nodes`` uniform nodes.

    The time integral uses the composite trapezoid rule on the node grid
    ``linspace(t_min, T, quad_nodes)`` (``t_min`` defaults to the plan's
    evaluation time). The discrete equations are lower triangular in time, so
    they are solved node by node from ``T`` downwards; at each node the only
    implicit term is the trapezoid end weight, handled by Picard iteration
    started from the pure linear term.
    """
    if quad_nodes < 4:
        raise ValueError("need at least 4 quadrature nodes")
    if gT_eps.grid != plan.grid:
        raise ConfigurationError("data and plan live on different grids")
    T = plan.T
    t0 = plan.t_star if t_min is None else float(t_min)
    if not 0 <= t0 < T:
        raise ConfigurationError(f"t_min must lie in [0, T), got {t0}")
    if (T - t0) * plan.C_eps > EXP_GUARD:
        raise OverflowGuardError(f"(T - t_min) * C_eps = {(T - t0) * plan.C_eps:.4g} exceeds {EXP_GUARD}")
    Fs = plan.scheme_nonlinearity(F)
    mask = plan.mode_mask
    lam = np.where(mask, plan.grid.eigenvalues, 0.0)
    p = plan.p
    s = np.linspace(t0, T, quad_nodes)
    h = s[1] - s[0]
    g = np.where(mask, gT_eps.coeffs, 0.0)
    grid = plan.grid

    def Fhat(c):
        return np.where(mask, apply_nonlinearity(SpectralField(grid, c), Fs, pad).coeffs, 0.0)

    def hp(c):
        return math.sqrt(float(np.sum(np.abs(c) ** 2 * grid.eigenvalues**p)))

    Q = quad_nodes
    step = np.exp(h * lam)
    explicit = np.zeros_like(g)
    states = [None] * Q
    Nk = [None] * Q
    residuals = [None] * Q
    for i in range(Q - 1, -1, -1):
        linear = np.exp((T - s[i]) * lam) * g
        linear = np.where(mask, linear, 0.0)
        if i == Q - 1:
            u = linear
            hist = [0.0]
        else:
            # memory term sum_{k>i} w_k e^{(s_k - s_i) lam} N_k, accumulated from the top node
            w_next = h / 2 if i + 1 == Q - 1 else h
            explicit = step * (explicit + w_next * Nk[i + 1])
            base = linear - explicit
            u = linear
            hist = []
            growth = 0
            for _ in range(max_iter):
                new = base - (h / 2) * Fhat(u)
                r = hp(new - u)
                if hist and r > hist[-1]:
                    growth += 1
                else:
                    growth = 0
                hist.append(r)
                u = new
                if r <= tol:
                    break
                if growth >= 3:
                    L = Fs.lipschitz_bound(plan.M_eps if math.isfinite(plan.M_eps) else 1.0)
                    raise DivergenceError(
                        f"Picard iteration at t={s[i]:.6g} stopped contracting; Lipschitz*weight = {L * h / 2:.4g}"
                    )
            if hist[-1] > tol:
                raise DivergenceError(f"Picard iteration at t={s[i]:.6g} did not reach tol={tol:g} in {max_iter} steps")
        states[i] = SpectralField(grid, u)
        Nk[i] = Fhat(u)
        residuals[i] = np.array(hist)
    return BackwardSolution(plan, s, tuple(states), tuple(residuals))


# -- t_eps and the predicted rates ------------------------------------------------


@dataclass(frozen=True)
class TEpsResult:
    t_eps: float
    residual: float
    interval: tuple
    printed_endpoints: tuple


def _t_eps_exponent(eps, T, p, beta):
    k = 1.0 - 2.0 * (beta or 0.0)
    return lambda t: math.exp(k * math.log(eps) * t / (T + t + p / 2))


def select_t_eps(eps, T, p, beta=None):
    """Root of ``eps^{t (1 - 2 beta)/(T + t + p/2)} = t`` in ``(0, T)``.

    ``interval`` holds the roots ``r1 < 0 < r2`` of the quadratic
    ``t^2 ((1-2beta) log eps - 1) - (T + p/2 - 1) t + T + p/2``; the root
    always lies in ``(r1, r2)``. ``printed_endpoints`` evaluates the
    closed-form endpoints exactly as they are usually quoted,
    ``(-b -/+ sqrt(b^2 + 4 (b+1)(1 - log eps))) / (2 ((1-2beta) log eps - 1))``
    with ``b = T + p/2 - 1``; those carry the opposite sign convention for
    ``b`` and are kept for comparison only.
    """
    if not 0 < eps < 1:
        raise ConfigurationError(f"eps must lie in (0, 1), got {eps}")
    if beta is not None and not 0 < beta < 0.5:
        raise ConfigurationError("beta must lie in (0, 1/2)")
    g = _t_eps_exponent(eps, T, p, beta)

    def phi(t):
        return g(t) - t

    if phi(T) >= 0:
        raise InfeasibleError(f"no sign change of eps^(...) - t on (0, {T}) for eps={eps:g}")
    root = brentq(phi, 0.0, T, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    k = 1.0 - 2.0 * (beta or 0.0)
    b = T + p / 2 - 1
    a = k * math.log(eps) - 1.0
    disc = math.sqrt(b * b + 4 * (b + 1) * (1 - k * math.log(eps)))
    r_pos = 2 * (b + 1) / (disc + b)
    r_neg = -2 * (b + 1) / (disc - b)
    printed_disc = math.sqrt(b * b + 4 * (b + 1) * (1 - math.log(eps)))
    printed = ((-b - printed_disc) / (2 * a), (-b + printed_disc) / (2 * a))
    if not 0 < root < T:
        raise InfeasibleError(f"t_eps = {root} outside (0, {T})")
    return TEpsResult(root, abs(phi(root)), (r_neg, r_pos), printed)


@dataclass(frozen=True)
class LogBound:
    """``eps -> C (T+p/2) / (sqrt((T+p/2+1)^2 + 4 (T+p/2)(1-2beta) log(1/eps)) + T+p/2-1)``."""

    T: float
    p: int
    beta: float = None

    def __call__(self, eps, C=1.0):
        a = self.T + self.p / 2
        k = 1.0 - 2.0 * (self.beta or 0.0)
        eps = np.asarray(eps, dtype=float)
        out = C * a / (np.sqrt((a + 1) ** 2 + 4 * a * k * np.log(1.0 / eps)) + a - 1)
        return out if out.ndim else float(out)


def predicted_rate(t, T, p, beta=None):
    """Holder exponent ``t (1 - 2 beta) / (T + t + p/2)`` for ``t > 0``.

    At ``t = 0`` the rate is logarithmic and a :class:`LogBound` is returned.
    """
    if not 0 <= t < T:
        raise ConfigurationError(f"need 0 <= t < T, got t={t}")
    if t == 0:
        return LogBound(T, p, beta)
    return t * (1.0 - 2.0 * (beta or 0.0)) / (T + t + p / 2)


def stability_gap(u1, u2, g1T, g2T, t=None, exponent=None):
    """Measured ``|u1(t) - u2(t)|_{H^p} / |g1T - g2T|_{L^2}^exponent``.

    ``exponent`` defaults to the predicted Holder exponent of the plan.
    """
    plan = u1.plan
    if u2.plan.C_eps != plan.C_eps or u2.plan.grid != plan.grid:
        raise ConfigurationError("both solutions must come from the same plan")
    t = plan.t_star if t is None else t
    gap = sobolev_norm(g1T - g2T, 0)
    if gap == 0:
        raise ValueError("identical data: the stability ratio is undefined")
    if exponent is None:
        exponent = predicted_rate(t, plan.T, plan.p, plan.beta)
    diff = sobolev_norm(u1.state_at(t) - u2.state_at(t), plan.p)
    return {"t": t, "gap": gap, "exponent": exponent, "difference": diff, "ratio": diff / gap**exponent}
