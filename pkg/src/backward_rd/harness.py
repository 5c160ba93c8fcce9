"""Experiment orchestration: configs, noise, eps sweeps, rate fits, artifacts.

A study fixes an initial profile ``g0``, integrates it forward to ``T`` to
get the exact final state, perturbs that state at each noise level ``eps``
and reconstructs the solution at every evaluation time. Errors are measured
in ``H^p`` against the forward trajectory itself, so evaluation times must
fall on forward steps.

Config files are INI text read with :mod:`configparser`; every value is a
Python literal (numbers, strings in quotes or bare words, lists, dicts,
``None``). Sections are only for readability: keys are looked up by name
in any section. See ``ExperimentConfig`` for the keys and defaults.
"""

import ast
import configparser
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy import stats

from .errors import BackwardRDError, ConfigurationError
from .forward import evolve
from .iterative import convergence_report, format_report, iterate
from .nonlinearity import catalog
from .regularizer import (
    LogBound,
    make_plan,
    predicted_rate,
    select_t_eps,
    solve_backward,
)
from .spectral import GridSpec, SpectralField, gevrey_norm, load_field, sobolev_norm, transform

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "inject_noise",
    "noise_seed",
    "initial_profile",
    "RateFit",
    "run_rate_study",
    "emit",
]

MODES = ("picard", "iterative", "both")
PROFILES = ("saturating", "file")
NORMALIZATIONS = ("max", "hp", "linear_gevrey")


@dataclass(frozen=True)
class ExperimentConfig:
    """One rate study. ``ell = None`` means ``2 pi ell_periods``."""

    # grid and forward solve
    d: int = 1
    n_per_axis: int = 256
    ell: float = None
    ell_periods: float = 32.0
    forward_steps: int = 2000
    pad: float = 2.0
    # reaction term
    law: str = "von_bertalanffy"
    law_params: dict = field(default_factory=lambda: {"a": 0.0, "b": 0.0})
    # initial profile
    profile: str = "saturating"
    profile_file: str = None
    profile_cutoff: float = 4.0
    amplitude: float = 1.0
    normalize: str = "linear_gevrey"
    mean: float = 0.0
    # study
    T: float = 1.0
    p: int = 1
    eps_sweep: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    beta: float = None
    eval_times: tuple = (0.5,)
    cutoff_constant: float = 2.0
    quad_nodes: int = 32
    picard_tol: float = 1e-10
    mode: str = "picard"
    iter_nodes: int = 4
    R_max: int = 64
    K_override: float = None
    t0_study: bool = False
    t0_eps_sweep: tuple = None
    t0_quad_nodes: int = 64
    seed: int = 0
    output_dir: str = "results"

    def __post_init__(self):
        for name in ("eps_sweep", "eval_times", "t0_eps_sweep"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(float(x) for x in v))
        object.__setattr__(self, "law_params", dict(self.law_params or {}))
        self.validate()

    @property
    def grid(self):
        ell = self.ell if self.ell is not None else 2 * math.pi * self.ell_periods
        return GridSpec(d=self.d, n_per_axis=self.n_per_axis, ell=ell)

    @property
    def t0_sweep(self):
        return self.eps_sweep if self.t0_eps_sweep is None else self.t0_eps_sweep

    def validate(self):
        self.grid
        if not self.T > 0:
            raise ConfigurationError("T must be positive")
        if not self.p > self.d / 2:
            raise ConfigurationError(f"need p > d/2, got p={self.p}, d={self.d}")
        for name in ("eps_sweep", "t0_eps_sweep"):
            sweep = getattr(self, name)
            if sweep is None:
                continue
            if any(not 0 < e < 1 for e in sweep):
                raise ConfigurationError(f"{name}: every eps must lie in (0, 1)")
            if any(b >= a for a, b in zip(sweep, sweep[1:])):
                raise ConfigurationError(f"{name} must be strictly decreasing")
            if 0 < len(sweep) < 4:
                raise ConfigurationError(f"{name} needs at least 4 points for a rate fit (or none)")
        if any(not 0 < t < self.T for t in self.eval_times):
            raise ConfigurationError("eval_times must lie in (0, T)")
        if self.beta is not None and not 0 < self.beta < 0.5:
            raise ConfigurationError("beta must lie in (0, 1/2)")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if self.profile not in PROFILES:
            raise ConfigurationError(f"profile must be one of {PROFILES}")
        if self.profile == "file" and not self.profile_file:
            raise ConfigurationError("profile = file needs profile_file")
        if self.normalize not in NORMALIZATIONS:
            raise ConfigurationError(f"normalize must be one of {NORMALIZATIONS}")
        for t in self.eval_times:
            k = self.forward_steps * t / self.T
            if abs(k - round(k)) > 1e-9:
                raise ConfigurationError(f"eval time {t} does not fall on a forward step (steps={self.forward_steps})")
        if self.mode != "picard":
            for t in self.eval_times:
                k = self.iter_nodes * (self.T - t) / self.T
                if abs(k - round(k)) > 1e-9:
                    raise ConfigurationError(f"eval time {t} is not an iteration node for iter_nodes={self.iter_nodes}")
        catalog(self.law, self.law_params)

    def override(self, **changes):
        return replace(self, **changes)

    def echo(self):
        """Plain-data view of the config (JSON friendly)."""
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out


_FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}


def _literal(text):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config(text, overrides=None):
    """Build a config from INI text plus ``key=value`` override strings."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"bad config file: {exc}") from exc
    values = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            values[key] = _literal(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        values[key.strip()] = _literal(raw)
    unknown = set(values) - _FIELD_NAMES
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path, overrides=None):
    with open(path) as fh:
        return parse_config(fh.read(), overrides)


# -- data generation ------------------------------------------------------------


def inject_noise(gT, eps, seed, p=1):
    """``gT + eta`` with ``|eta|_{L^2} = eps`` exactly.

    ``eta`` is white Gaussian noise on the grid, damped by ``(1 + lambda)^{-p/2}``
    so that it lies in ``H^p`` with a bounded norm, then rescaled.
    """
    if eps < 0:
        raise ConfigurationError("eps must be nonnegative")
    if eps == 0:
        return gT
    grid = gT.grid
    rng = np.random.default_rng(seed)
    eta = transform(rng.standard_normal(grid.shape), grid).coeffs
    eta = eta * (1.0 + grid.eigenvalues) ** (-p / 2)
    eta = SpectralField(grid, eta)
    return gT + eta * (eps / sobolev_norm(eta, 0))


def _saturating(grid, cutoff, p, rng):
    # random phases, spectral density flat in lambda up to a smooth cut at |k| ~ cutoff
    lam = grid.eigenvalues
    kappa = np.sqrt(lam - 1.0)
    z = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    shape = np.sqrt(kappa) * lam ** (-p / 2) * np.exp(-((kappa / cutoff) ** 4))
    x = np.fft.ifftn(z / np.abs(z) * shape * grid.size).real
    c = transform(x, grid).coeffs
    keep = np.ones(grid.shape, dtype=bool)
    for j in grid.modes:
        keep &= np.broadcast_to(j != -grid.n_per_axis // 2, grid.shape)
    c = np.where(keep, c, 0.0)
    c.flat[0] = 0.0
    return SpectralField(grid, c)


def initial_profile(cfg, rng=None):
    """The study's ``g0``: mean plus a normalized fluctuation."""
    grid = cfg.grid
    if cfg.profile == "file":
        g0 = load_field(cfg.profile_file)
        if g0.grid != grid:
            raise ConfigurationError("profile file grid does not match the config grid")
        return g0
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    fluct = _saturating(grid, cfg.profile_cutoff, cfg.p, rng)
    if cfg.normalize == "max":
        size = float(np.max(np.abs(fluct.to_physical())))
    elif cfg.normalize == "hp":
        size = sobolev_norm(fluct, cfg.p)
    else:
        t = min(cfg.eval_times) if cfg.eval_times else cfg.T / 2
        free = SpectralField(grid, np.exp(-t * grid.eigenvalues) * fluct.coeffs)
        size = gevrey_norm(free, t, cfg.p)
    fluct = fluct * (cfg.amplitude / size)
    mean = np.zeros(grid.shape, dtype=complex)
    mean.flat[0] = cfg.mean
    return fluct + SpectralField(grid, mean)


def noise_seed(cfg):
    """Seed of the noise stream, derived from (and independent of) the profile stream."""
    return int(np.random.SeedSequence(cfg.seed).spawn(2)[1].generate_state(1)[0])


# -- the study ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RateFit:
    """Measured errors and fitted slopes.

    ``cells`` holds one dict per ``(mode, t, eps)``; ``fits`` one dict per
    ``(mode, t)`` with ``slope``, ``stderr``, ``predicted`` and ``n_points``;
    ``t0`` one dict per eps of the ``t = 0`` sweep plus the fitted constant
    in ``t0_fit``; ``iteration_tables`` maps ``(t, eps)`` to report text and ``plans`` lists
    every parameter choice made. In mode ``both``, ``cross_mode`` records per
    cell the distance between the two reconstructions together with its two
    expected sources: the iteration tail ``mu_bar^R |u^1 - u^0| / (1 - mu_bar)``
    and the consistency floor of the frozen-memory scheme against the
    trapezoid solution on the iteration nodes.
    """

    config: ExperimentConfig
    cells: tuple
    fits: tuple
    t0: tuple
    t0_fit: dict
    iteration_tables: dict
    plans: tuple = ()
    cross_mode: tuple = ()


def _tagged(exc, **where):
    tag = ", ".join(f"{k}={v:.6g}" for k, v in where.items())
    new = type(exc).__new__(type(exc))
    new.args = (f"[{tag}] {exc}",)
    if hasattr(exc, "time"):
        new.time = exc.time
    return new


def _fit_slope(eps, errors):
    x, y = np.log(eps), np.log(errors)
    res = stats.linregress(x, y)
    return float(res.slope), float(res.stderr), float(res.intercept)


def _plan_record(plan):
    return {
        "eps": plan.eps,
        "t": plan.t_star,
        "C_eps": plan.C_eps,
        "M_eps": plan.M_eps if math.isfinite(plan.M_eps) else "inf",
        "n_retained": plan.n_retained,
        "gevrey_bound": plan.gevrey_bound,
        "lipschitz": plan.lipschitz,
        "branch": plan.branch,
        "floored": plan.floored,
        "capped": plan.capped,
    }


def run_rate_study(cfg, g0=None):
    """Run the full eps sweep at every evaluation time (and at ``t_eps`` if asked)."""
    grid = cfg.grid
    F = catalog(cfg.law, cfg.law_params)
    if g0 is None:
        g0 = initial_profile(cfg)
    T, p = cfg.T, cfg.p
    steps = cfg.forward_steps
    idx = [int(round(steps * t / T)) for t in cfg.eval_times]
    every = math.gcd(steps, *idx) if idx else steps
    traj = evolve(g0, F, T, steps, p=p, pad=cfg.pad, record_every=every)
    gT = traj.final
    truth = {t: traj.states[k // every] for t, k in zip(cfg.eval_times, idx)}
    seed = noise_seed(cfg)
    modes = ("picard", "iterative") if cfg.mode == "both" else (cfg.mode,)
    cells, plans, tables, cross = [], [], {}, []
    for t in cfg.eval_times:
        ut = truth[t]
        B = gevrey_norm(ut, t, p)
        for eps in cfg.eps_sweep:
            try:
                gTe = inject_noise(gT, eps, seed, p)
                plan = make_plan(grid, F, eps, T, t, p, B, beta=cfg.beta, C=cfg.cutoff_constant)
                plans.append(_plan_record(plan))
                sols = {}
                if "picard" in modes:
                    sol = solve_backward(gTe, F, plan, quad_nodes=cfg.quad_nodes, tol=cfg.picard_tol, pad=cfg.pad)
                    sols["picard"] = sol.state_at(t)
                if "iterative" in modes:
                    st = iterate(gTe, F, plan, cfg.iter_nodes, R_max=cfg.R_max, K_override=cfg.K_override, pad=cfg.pad)
                    n = int(round(cfg.iter_nodes * (T - t) / T))
                    sols["iterative"] = st.final(n)
                    if cfg.mode == "both":
                        m = cfg.quad_nodes - 1
                        q = cfg.iter_nodes * max(1, math.ceil(m / cfg.iter_nodes)) + 1
                        ref = solve_backward(gTe, F, plan, quad_nodes=q, tol=cfg.picard_tol, t_min=0.0, pad=cfg.pad)
                        rep = convergence_report(st, ref)
                        tables[(t, eps)] = format_report(rep)
                        mu = st.mu_bar[n - 1]
                        cross.append({
                            "t": t,
                            "eps": eps,
                            "gap": sobolev_norm(sols["iterative"] - sols["picard"], p),
                            "tail": mu**cfg.R_max * st.diffs[n - 1][0] / (1 - mu),
                            "floor": rep.floor[n - 1],
                        })
            except BackwardRDError as exc:
                raise _tagged(exc, eps=eps, t=t) from exc
            for mode in modes:
                cells.append({
                    "mode": mode,
                    "t": t,
                    "eps": eps,
                    "C_eps": plan.C_eps,
                    "M_eps": plan.M_eps,
                    "n_retained": plan.n_retained,
                    "error": sobolev_norm(sols[mode] - ut, p),
                })
    fits = []
    for mode in modes:
        for t in cfg.eval_times:
            rows = [c for c in cells if c["mode"] == mode and c["t"] == t]
            if len(rows) < 4:
                continue
            slope, se, icpt = _fit_slope([c["eps"] for c in rows], [c["error"] for c in rows])
            fits.append({
                "mode": mode,
                "t": t,
                "slope": slope,
                "stderr": se,
                "intercept": icpt,
                "predicted": predicted_rate(t, T, p, cfg.beta),
                "n_points": len(rows),
            })
    t0_rows, t0_fit = [], {}
    if cfg.t0_study and cfg.t0_sweep:
        t0_rows, t0_fit = _t0_study(cfg, F, g0, gT, seed, plans)
    return RateFit(cfg, tuple(cells), tuple(fits), tuple(t0_rows), t0_fit, tables, tuple(plans), tuple(cross))


def _t0_study(cfg, F, g0, gT, seed, plans):
    grid, T, p = cfg.grid, cfg.T, cfg.p
    bound = LogBound(T, p, cfg.beta)
    rows = []
    for eps in cfg.t0_sweep:
        try:
            te = select_t_eps(eps, T, p, cfg.beta)
            steps = max(8, math.ceil(cfg.forward_steps * te.t_eps / T))
            ute = evolve(g0, F, te.t_eps, steps, p=p, pad=cfg.pad, record_every=steps).final
            B = gevrey_norm(ute, te.t_eps, p)
            plan = make_plan(grid, F, eps, T, te.t_eps, p, B, beta=cfg.beta, C=cfg.cutoff_constant)
            plans.append(_plan_record(plan))
            sol = solve_backward(inject_noise(gT, eps, seed, p), F, plan, quad_nodes=cfg.t0_quad_nodes,
                                 tol=cfg.picard_tol, pad=cfg.pad)
        except BackwardRDError as exc:
            raise _tagged(exc, eps=eps, t=0.0) from exc
        err = sobolev_norm(sol.state_at(te.t_eps) - g0, p)
        rows.append({
            "eps": eps,
            "t_eps": te.t_eps,
            "residual": te.residual,
            "interval_lo": te.interval[0],
            "interval_hi": te.interval[1],
            "error": err,
            "bound": bound(eps),
        })
    ratios = np.array([r["error"] / r["bound"] for r in rows])
    c = float(np.exp(np.mean(np.log(ratios))))
    resid = np.abs(ratios / c - 1.0)
    errs = [r["error"] for r in rows]
    fit = {
        "c": c,
        "max_relative_residual": float(resid.max()),
        "monotone": bool(all(b < a for a, b in zip(errs, errs[1:]))),
    }
    return rows, fit


# -- artifacts -------------------------------------------------------------------------

_HEADER = "# backward_rd"


def _g(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    return "inf" if math.isinf(x) else format(x, ".17g")


def _csv(title, columns, rows):
    lines = [f"{_HEADER} {title}", ",".join(columns)]
    lines += [",".join(_g(r[c]) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def emit(fit, directory, overwrite=False):
    """Write the study's artifacts into ``directory`` and return their paths.

    Files: ``manifest.json`` (config echo and every plan), ``errors.csv``,
    ``rate_summary.csv``, ``loglog.csv``, ``t0.csv`` (when the ``t = 0``
    sweep ran) and ``iterations_*.tsv`` (mode ``both``). An empty sweep
    produces the manifest only. Existing output is never replaced unless
    ``overwrite`` is set.
    """
    manifest = os.path.join(directory, "manifest.json")
    if os.path.exists(manifest) and not overwrite:
        raise FileExistsError(f"{manifest} exists; pass overwrite to replace it")
    os.makedirs(directory, exist_ok=True)
    payload = {
        "format": "backward_rd-study 1",
        "config": fit.config.echo(),
        "plans": list(fit.plans),
        "rate_fits": list(fit.fits),
        "t0_fit": fit.t0_fit,
    }
    files = {"manifest.json": json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n"}
    if fit.cells:
        files["errors.csv"] = _csv(
            "error table", ["mode", "t", "eps", "C_eps", "M_eps", "n_retained", "error"], fit.cells
        )
        files["loglog.csv"] = _csv(
            "log-log data",
            ["mode", "t", "log_eps", "log_error"],
            [{"mode": c["mode"], "t": c["t"], "log_eps": math.log(c["eps"]), "log_error": math.log(c["error"])}
             for c in fit.cells],
        )
    if fit.fits:
        files["rate_summary.csv"] = _csv(
            "rate fits", ["mode", "t", "slope", "stderr", "predicted", "n_points"], fit.fits
        )
    if fit.t0:
        files["t0.csv"] = _csv(
            "t=0 study", ["eps", "t_eps", "residual", "interval_lo", "interval_hi", "error", "bound"], fit.t0
        )
    for k, ((t, eps), text) in enumerate(sorted(fit.iteration_tables.items())):
        files[f"iterations_{k:03d}.tsv"] = f"# t={_g(t)} eps={_g(eps)}\n" + text
    written = []
    for name in sorted(files):
        path = os.path.join(directory, name)
        try:
            with open(path, "w", newline="\n") as fh:
                fh.write(files[name])
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written
