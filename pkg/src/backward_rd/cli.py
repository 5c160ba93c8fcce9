"""Command line entry point: ``backward-rd <subcommand> ...``.

Exit codes: 0 success, 1 bad configuration or usage, 2 infeasible parameter
choice, 3 divergence or blow-up, 4 file errors.
"""

import argparse
import math
import os
import sys

from .errors import (
    BackwardRDError,
    BlowUpError,
    ConfigurationError,
    DivergenceError,
    InfeasibleError,
    OverflowGuardError,
)
from .forward import evolve, export_trajectory
from .harness import emit, initial_profile, inject_noise, load_config, noise_seed, parse_config, run_rate_study
from .iterative import convergence_report, format_report, iterate
from .nonlinearity import catalog
from .regularizer import format_plan, make_plan, select_t_eps, solve_backward
from .spectral import gevrey_norm, load_field, save_field, sobolev_norm

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4


def _config(args):
    overrides = args.set or []
    if args.config:
        return load_config(args.config, overrides)
    return parse_config("", overrides)


def _prepare_out(directory, names, overwrite):
    os.makedirs(directory, exist_ok=True)
    for n in names:
        path = os.path.join(directory, n)
        if os.path.exists(path) and not overwrite:
            raise FileExistsError(f"{path} exists; use --overwrite to replace it")


def _data(cfg, args, t):
    """Noisy final data, the truth at ``t`` (or None) and the Gevrey bound to plan with."""
    F = catalog(cfg.law, cfg.law_params)
    if args.data:
        gT = load_field(args.data)
        if args.gevrey_bound is None:
            raise ConfigurationError("--gevrey-bound is required with --data")
        return F, gT, None, args.gevrey_bound
    g0 = initial_profile(cfg)
    steps = cfg.forward_steps
    k = steps * t / cfg.T
    if abs(k - round(k)) > 1e-9:
        raise ConfigurationError(f"t={t} does not fall on a forward step")
    k = int(round(k))
    every = math.gcd(steps, k)
    traj = evolve(g0, F, cfg.T, steps, p=cfg.p, pad=cfg.pad, record_every=every)
    ut = traj.states[k // every]
    bound = args.gevrey_bound if args.gevrey_bound is not None else gevrey_norm(ut, t, cfg.p)
    return F, inject_noise(traj.final, args.eps, noise_seed(cfg), cfg.p), ut, bound


def cmd_forward(args):
    cfg = _config(args)
    F = catalog(cfg.law, cfg.law_params)
    g0 = load_field(args.initial) if args.initial else initial_profile(cfg)
    traj = evolve(g0, F, cfg.T, cfg.forward_steps, p=cfg.p, pad=cfg.pad, record_every=args.record_every)
    path = export_trajectory(traj, args.out, overwrite=args.overwrite)
    print(f"wrote {len(traj.states)} states; manifest {path}")


def cmd_invert(args):
    cfg = _config(args)
    _prepare_out(args.out, ["reconstruction.field", "plan.txt"], args.overwrite)
    F, gT, ut, B = _data(cfg, args, args.t)
    plan = make_plan(cfg.grid, F, args.eps, cfg.T, args.t, cfg.p, B, beta=cfg.beta, C=cfg.cutoff_constant)
    sol = solve_backward(gT, F, plan, quad_nodes=cfg.quad_nodes, tol=cfg.picard_tol, pad=cfg.pad)
    u = sol.state_at(args.t)
    save_field(u, os.path.join(args.out, "reconstruction.field"))
    with open(os.path.join(args.out, "plan.txt"), "w") as fh:
        fh.write(format_plan(plan))
    print(f"C_eps={plan.C_eps:.6g} M_eps={plan.M_eps:.6g} retained={plan.n_retained}")
    if ut is not None:
        print(f"H^{cfg.p} error at t={args.t:g}: {sobolev_norm(u - ut, cfg.p):.6e}")


def cmd_iterate(args):
    cfg = _config(args)
    _prepare_out(args.out, ["iterations.tsv", "plan.txt"], args.overwrite)
    F, gT, _, B = _data(cfg, args, args.t)
    plan = make_plan(cfg.grid, F, args.eps, cfg.T, args.t, cfg.p, B, beta=cfg.beta, C=cfg.cutoff_constant)
    st = iterate(gT, F, plan, cfg.iter_nodes, R_max=cfg.R_max, K_override=cfg.K_override, pad=cfg.pad)
    q = cfg.iter_nodes * max(1, math.ceil((cfg.quad_nodes - 1) / cfg.iter_nodes)) + 1
    ref = solve_backward(gT, F, plan, quad_nodes=q, tol=cfg.picard_tol, t_min=0.0, pad=cfg.pad)
    report = convergence_report(st, ref)
    with open(os.path.join(args.out, "iterations.tsv"), "w") as fh:
        fh.write(format_report(report))
    with open(os.path.join(args.out, "plan.txt"), "w") as fh:
        fh.write(format_plan(plan))
    for n, t_n in enumerate(st.nodes, start=1):
        save_field(st.final(n), os.path.join(args.out, f"node_{n:03d}.field"))
        print(f"t_{n}={t_n:.6g} K={st.K[n - 1]:.6g} mu_bar={st.mu_bar[n - 1]:.6g} "
              f"fitted={report.fitted_ratio[n - 1]:.6g} floor={report.floor[n - 1]:.3e}")


def cmd_rate_study(args):
    cfg = _config(args)
    out = args.out or cfg.output_dir
    if os.path.exists(os.path.join(out, "manifest.json")) and not args.overwrite:
        raise FileExistsError(f"{out}/manifest.json exists; use --overwrite to replace it")
    fit = run_rate_study(cfg)
    for path in emit(fit, out, overwrite=args.overwrite):
        print(path)
    for row in fit.fits:
        print(f"{row['mode']} t={row['t']:g}: slope {row['slope']:.4f} +- {row['stderr']:.4f} "
              f"(predicted {row['predicted']:.4f})")
    if fit.t0_fit:
        print(f"t=0: c={fit.t0_fit['c']:.4g} max residual {fit.t0_fit['max_relative_residual']:.3f} "
              f"monotone={fit.t0_fit['monotone']}")


def cmd_t_eps(args):
    print("eps\tt_eps\tresidual\tinterval_lo\tinterval_hi")
    for eps in args.eps:
        r = select_t_eps(eps, args.T, args.p, args.beta)
        print(f"{eps:.6g}\t{r.t_eps:.17g}\t{r.residual:.3e}\t{r.interval[0]:.17g}\t{r.interval[1]:.17g}")


def build_parser():
    ap = argparse.ArgumentParser(prog="backward-rd", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--overwrite", action="store_true", help="replace existing output")

    p = sub.add_parser("forward", help="integrate the initial profile forward and export the trajectory")
    common(p)
    p.add_argument("--initial", help="initial field file (default: profile from the config)")
    p.add_argument("--record-every", type=int, default=1)
    p.set_defaults(func=cmd_forward)

    for name, func, helptext in (
        ("invert", cmd_invert, "regularized reconstruction at one time"),
        ("iterate", cmd_iterate, "stabilized iteration at the nodes T - nT/N"),
    ):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--eps", type=float, required=True, help="noise level")
        p.add_argument("--t", type=float, required=True, help="evaluation time of the plan")
        p.add_argument("--data", help="noisy final data field file (default: synthesize from the config)")
        p.add_argument("--gevrey-bound", type=float, help="Gevrey size of u(t); required with --data")
        p.set_defaults(func=func)

    p = sub.add_parser("rate-study", help="eps sweep, rate fits and artifacts")
    common(p, out_required=False)
    p.set_defaults(func=cmd_rate_study)

    p = sub.add_parser("t-eps", help="evaluation time t_eps for the t = 0 reconstruction")
    p.add_argument("--eps", type=float, nargs="+", required=True)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_t_eps)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DivergenceError, BlowUpError, OverflowGuardError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, BackwardRDError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
