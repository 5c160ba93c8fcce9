"""Reaction terms F(u): catalog laws, Lipschitz bounds, clamping, networks.

Each catalog entry carries F, F', the local Lipschitz bound ``L(M)`` with
``sup_{|w|<=M} |F'(w)| <= L(M)`` and, where it exists, the non-degeneracy
pair ``(L0, L1)`` with ``L0 <= F' <= L1``.

Two ranges are tracked per law:

``domain``
    where F is defined at all; evaluating outside raises :class:`DomainError`.
``bound_range``
    where the printed ``L(M)`` actually dominates ``|F'|`` on ``[-M, M]``.
    For most laws this is the whole line; for laws such as Gompertz or
    Arrhenius with ``a < 0`` the printed bound only holds for ``u >= lo``.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DomainError, InfeasibleError

__all__ = [
    "Nonlinearity",
    "catalog",
    "CATALOG_NAMES",
    "clamp",
    "clamp_for_scheme",
    "choose_M_eps",
    "ReactionNetwork",
    "mass_action_field",
    "parse_network",
    "format_network",
]

CATALOG_NAMES = (
    "von_bertalanffy",
    "gompertz",
    "de_pillis_radunskaya",
    "arrhenius",
    "budworm",
    "michaelis_menten",
)


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    name: str
    params: dict
    eval: Callable
    deriv: Callable
    lipschitz_bound: Callable
    nondegeneracy: Optional[Callable] = None
    domain: tuple = (-math.inf, math.inf)
    domain_open: bool = False
    bound_range: tuple = (-math.inf, math.inf)
    constant_bound: bool = False
    clamp_range: Optional[tuple] = None

    def __call__(self, w):
        return self.eval(w)

    def check_domain(self, w):
        w = np.asarray(w)
        lo, hi = self.domain
        bad = (w <= lo) if self.domain_open else (w < lo)
        bad = bad | (w > hi)
        if np.any(bad):
            worst = float(w[bad].flat[0]) if w.ndim else float(w)
            raise DomainError(f"{self.name} evaluated at {worst!r}, outside its domain {self.domain}")

    def bounds_interval(self, M):
        """``[-M, M]`` intersected with the range where ``L(M)`` is valid."""
        return max(-M, self.bound_range[0]), min(M, self.bound_range[1])


def _law(name, params, f, df, L, **kw):
    def checked(fn):
        def wrapped(w):
            w = np.asarray(w, dtype=float)
            law.check_domain(w)
            with np.errstate(over="ignore"):
                out = fn(w)
            return out if out.ndim else float(out)

        return wrapped

    law = Nonlinearity(name, dict(params), None, None, L, **kw)
    object.__setattr__(law, "eval", checked(f))
    object.__setattr__(law, "deriv", checked(df))
    return law


def _require(params, *names, defaults=None):
    defaults = defaults or {}
    out = []
    for n in names:
        if n in params:
            out.append(float(params[n]))
        elif n in defaults:
            out.append(float(defaults[n]))
        else:
            raise ConfigurationError(f"missing parameter {n!r}")
    return out


def catalog(name, params=None):
    """Return the catalog law ``name`` with parameters ``params``."""
    params = dict(params or {})
    known = {
        "von_bertalanffy": {"a", "b", "N"},
        "gompertz": {"a", "b", "u_min"},
        "de_pillis_radunskaya": {"a", "b", "N"},
        "arrhenius": {"a"},
        "budworm": set(),
        "michaelis_menten": {"a", "b"},
    }
    if name not in known:
        raise ConfigurationError(f"unknown nonlinearity {name!r}; choose from {CATALOG_NAMES}")
    extra = set(params) - known[name]
    if extra:
        raise ConfigurationError(f"unexpected parameters for {name}: {sorted(extra)}")
    return globals()["_" + name](params)


def _von_bertalanffy(params):
    a, b, N = _require(params, "a", "b", "N", defaults={"N": 1.0})
    if N < 0:
        raise ConfigurationError("von Bertalanffy needs N >= 0")
    rng = (-math.inf, math.inf) if float(N).is_integer() else (0.0, math.inf)
    p = N + 1

    def f(w):
        return a * w - b * w**p

    def df(w):
        return a - b * p * w**N

    def L(M):
        return abs(a) + abs(b) * p * M**N

    return _law(
        "von_bertalanffy",
        {"a": a, "b": b, "N": N},
        f,
        df,
        L,
        domain=rng,
        bound_range=rng,
        constant_bound=(b == 0 or N == 0),
    )


def _gompertz(params):
    a, b, u_min = _require(params, "a", "b", "u_min", defaults={"u_min": math.exp(-1.0)})
    if u_min <= 0:
        raise ConfigurationError("Gompertz u_min must be positive")

    def f(w):
        return a * w - b * w * np.log(w)

    def df(w):
        return a - b * (1 + np.log(w))

    def L(M):
        return abs(a) + abs(b) * M

    # |1 + log u| <= M holds for u in [exp(-1-M), M]; u_min = 1/e is safe for all M.
    return _law(
        "gompertz",
        {"a": a, "b": b, "u_min": u_min},
        f,
        df,
        L,
        domain=(0.0, math.inf),
        domain_open=True,
        bound_range=(u_min, math.inf),
        constant_bound=(b == 0),
    )


def _de_pillis_radunskaya(params):
    a, b, N = _require(params, "a", "b", "N", defaults={"N": 1.0})
    if b == 0:
        raise ConfigurationError("de Pillis-Radunskaya needs b != 0")
    if b < 0:
        raise ConfigurationError("de Pillis-Radunskaya needs b > 0 (the denominator vanishes otherwise)")
    if N < 1:
        raise ConfigurationError("de Pillis-Radunskaya needs N >= 1")
    even = float(N).is_integer() and int(N) % 2 == 0
    if even:
        dom = rng = (-math.inf, math.inf)
        open_ = False
    elif float(N).is_integer():
        dom, rng, open_ = (-(b ** (1.0 / N)), math.inf), (0.0, math.inf), True
    else:
        dom = rng = (0.0, math.inf)
        open_ = False

    def f(w):
        wn = w**N
        return a * wn / (b + wn)

    def df(w):
        wn = w**N
        return a * b * N * w ** (N - 1) / (b + wn) ** 2

    def L(M):
        return abs(a / b) * N * M ** (N - 1)

    return _law(
        "de_pillis_radunskaya",
        {"a": a, "b": b, "N": N},
        f,
        df,
        L,
        domain=dom,
        domain_open=open_,
        bound_range=rng,
        constant_bound=(N == 1 or a == 0),
    )


def _arrhenius(params):
    (a,) = _require(params, "a")

    def f(w):
        return np.exp(a * w)

    def df(w):
        return a * np.exp(a * w)

    if a < 0:

        def L(M):
            return abs(a)

        # |F'| = |a| e^{a u} <= |a| only for u >= 0
        rng = (0.0, math.inf)
    else:

        def L(M):
            return a * math.exp(a * M)

        rng = (-math.inf, math.inf)
    return _law("arrhenius", {"a": a}, f, df, L, bound_range=rng, constant_bound=(a <= 0))


def _budworm(params):
    def f(w):
        return w * (1 - w) - w**2 / (1 + w**2)

    def df(w):
        return 1 - 2 * w - 2 * w / (1 + w**2) ** 2

    def L(M):
        return 1 + 4 * M

    return _law("budworm", {}, f, df, L)


def _michaelis_menten(params):
    a, b = _require(params, "a", "b")
    if a <= 0 or b <= 0:
        raise ConfigurationError("Michaelis-Menten needs a > 0 and b > 0")

    def f(w):
        return a * w / (b + w)

    def df(w):
        return a * b / (b + w) ** 2

    def L(M):
        return a / b

    def nondeg(M):
        return a * b / (b + M) ** 2, a / b

    return _law(
        "michaelis_menten",
        {"a": a, "b": b},
        f,
        df,
        L,
        nondegeneracy=nondeg,
        domain=(-b, math.inf),
        domain_open=True,
        bound_range=(0.0, math.inf),
        constant_bound=True,
    )


def clamp(F, M, lower=None):
    """Cut-off version of ``F``: frozen at its edge values outside ``[lower, M]``.

    ``lower`` defaults to ``-M``, which gives the symmetric clamp
    ``F_M(w) = F(M)`` for ``w >= M``, ``F(w)`` for ``|w| <= M`` and
    ``F(-M)`` for ``w <= -M``. The result is Lipschitz on the whole line
    with constant ``L(M)`` whenever ``[lower, M]`` lies in ``F.bound_range``.
    """
    if not M > 0:
        raise ValueError(f"clamp level must be positive, got {M}")
    if math.isinf(M):
        return F
    lo = -M if lower is None else float(lower)
    if lo > M:
        raise ValueError("clamp lower edge above upper edge")
    F.check_domain(np.array([lo, M]))
    f_lo, f_hi = F.eval(lo), F.eval(M)
    LM = F.lipschitz_bound(M)

    def f(w):
        w = np.asarray(w, dtype=float)
        inner = np.clip(w, lo, M)
        out = np.where(w >= M, f_hi, np.where(w <= lo, f_lo, F.eval(inner)))
        return out if out.ndim else float(out)

    def df(w):
        w = np.asarray(w, dtype=float)
        inside = (w > lo) & (w < M)
        out = np.where(inside, F.deriv(np.clip(w, lo, M)), 0.0)
        return out if out.ndim else float(out)

    nondeg = None
    if F.nondegeneracy is not None:
        nondeg = lambda _M: F.nondegeneracy(M)  # noqa: E731

    return Nonlinearity(
        name=f"{F.name}|clamp",
        params={**F.params, "clamp_upper": M, "clamp_lower": lo},
        eval=f,
        deriv=df,
        lipschitz_bound=lambda _M: LM,
        nondegeneracy=nondeg,
        constant_bound=True,
        clamp_range=(lo, M),
    )


def clamp_for_scheme(F, M):
    """Clamp used by the regularized solvers: ``[-M, M]`` cut to the bound range."""
    if math.isinf(M):
        return F
    lo, hi = F.bounds_interval(M)
    return clamp(F, hi, lower=lo)


def choose_M_eps(F, eps, beta, t, T, tol=1e-12, max_iter=200):
    """Largest clamp level ``M`` with ``L(M)^2 <= beta log(1/eps) / (2 (T - t))``.

    Returns ``math.inf`` when ``L`` does not depend on ``M`` (no clamp needed).
    """
    if not 0 < t < T:
        raise ConfigurationError(f"need 0 < t < T, got t={t}, T={T}")
    if not 0 < beta < 0.5:
        raise ConfigurationError(f"beta must lie in (0, 1/2), got {beta}")
    if not 0 < eps < 1:
        raise ConfigurationError(f"eps must lie in (0, 1), got {eps}")
    bound = beta * math.log(1.0 / eps) / (2.0 * (T - t))
    L = F.lipschitz_bound
    if F.constant_bound:
        return math.inf
    if F.name == "budworm":
        M = 0.25 * (math.sqrt(bound) - 1.0)
        if M <= 0:
            raise InfeasibleError(f"budworm clamp infeasible: bound {bound:.4g} < L(0+)^2 = 1")
        return M
    if L(0.0) ** 2 >= bound:
        raise InfeasibleError(f"L(0+)^2 = {L(0.0) ** 2:.4g} exceeds the clamp bound {bound:.4g}; eps too large for t={t}")
    lo, hi = 0.0, 1.0
    while L(hi) ** 2 <= bound:
        lo, hi = hi, 2 * hi
        if hi > 1e300:
            return math.inf
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if L(mid) ** 2 <= bound:
            lo = mid
        else:
            hi = mid
    return lo


# -- reaction networks --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReactionNetwork:
    """Mass-action network ``sum_l alpha[l, r] X_l -> sum_l eta[l, r] X_l``."""

    alpha: np.ndarray
    eta: np.ndarray
    names: tuple = field(default=())

    def __post_init__(self):
        alpha = np.asarray(self.alpha)
        eta = np.asarray(self.eta)
        if alpha.ndim != 2 or alpha.shape != eta.shape:
            raise ConfigurationError("alpha and eta must be L x R matrices of the same shape")
        for m in (alpha, eta):
            if not np.all(np.equal(np.mod(m, 1), 0)) or np.any(m < 0):
                raise ConfigurationError("stoichiometric coefficients must be nonnegative integers")
        alpha = alpha.astype(np.int64)
        eta = eta.astype(np.int64)
        alpha.setflags(write=False)
        eta.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "eta", eta)

    @property
    def L_species(self):
        return self.alpha.shape[0]

    @property
    def R_reactions(self):
        return self.alpha.shape[1]


def mass_action_field(net, clamp_level=None):
    """Vector field ``u -> (eta - alpha) diag(u^alpha)`` of the network.

    ``u`` has the species on its leading axis. With ``clamp_level`` the state
    is clamped componentwise to ``[-M, M]`` before evaluation; this vector
    extension of the scalar cut-off is our own.
    """
    stoich = (net.eta - net.alpha).astype(float)

    def field_(u):
        u = np.asarray(u, dtype=float)
        if u.shape[0] != net.L_species:
            raise ConfigurationError(f"state has {u.shape[0]} species, network has {net.L_species}")
        if clamp_level is not None:
            u = np.clip(u, -clamp_level, clamp_level)
        rates = []
        for r in range(net.R_reactions):
            term = np.ones(u.shape[1:])
            for m in range(net.L_species):
                k = int(net.alpha[m, r])
                if k:
                    term = term * u[m] ** k
            rates.append(term)
        rates = np.stack(rates)
        return np.tensordot(stoich, rates, axes=(1, 0))

    return field_


def parse_network(text):
    """Read the matrix text format: ``L R`` then L rows of alpha then L rows of eta."""
    rows = []
    for ln in text.splitlines():
        ln = ln.split("#", 1)[0].strip()
        if ln:
            rows.append([int(tok) for tok in ln.split()])
    if not rows or len(rows[0]) != 2:
        raise ConfigurationError("network header must be 'L R'")
    L, R = rows[0]
    body = rows[1:]
    if len(body) != 2 * L or any(len(r) != R for r in body):
        raise ConfigurationError(f"expected {2 * L} rows of {R} integers after the header")
    return ReactionNetwork(np.array(body[:L]), np.array(body[L:]))


def format_network(net):
    lines = [f"{net.L_species} {net.R_reactions}"]
    for m in (net.alpha, net.eta):
        for row in m:
            lines.append(" ".join(str(int(x)) for x in row))
    return "\n".join(lines) + "\n"
