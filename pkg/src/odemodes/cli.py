"""Command-line front end.

Subcommands cover the workflow end to end: ``simulate`` writes a
survey, ``roots`` solves the defect equation, ``fit`` runs one chain,
``audit`` runs a whole experiment from a config file, ``reproject``
re-integrates given parameters against a high-accuracy reference, and
``emit-plots`` regenerates plot data from a finished experiment
directory.

Exit codes: ``audit`` exits ``MULTIMODAL_EXIT`` (3) when the
experiment's verdict is multimodal and 0 when it is not, so scripts
can branch on the flag; every other subcommand exits 0 on success.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace

from .audit import (
    _health_to_dict,
    dataset_for_chain,
    emit_plot_data,
    estimate_matrix,
    priors_from_dict,
    read_config,
    reproject_cluster,
    run_experiment,
    step_from_dict,
    usable_results,
    verdict_to_dict,
)
from .defects import (
    DefectSpec,
    defect,
    defect_curve,
    find_roots,
    multiplicity4_root,
    predicted_modes,
    truncation_residual,
)
from .inference import (
    LBFGS,
    MCMC,
    FitConfig,
    Posterior,
    read_chains,
    run_lbfgs,
    run_mcmc,
    write_chains,
)
from .integrators import (
    ANALYTIC_AFFINE,
    RK4_FIXED,
    RK45_ADAPTIVE,
    StepConfig,
    analytic_config,
    rk4_config,
    rk45_config,
)
from .mixture import fit_em
from .models import (
    AFFINE,
    CANHAM,
    AffineParams,
    CanhamParams,
    read_params,
)
from .simulate import (
    NoiseSpec,
    SurveyDesign,
    read_series,
    simulate_affine,
    simulate_canham,
    write_series,
)

# Exit status for a completed audit whose verdict is multimodal.  Kept
# clear of argparse's usage-error status (2) and generic crashes (1) so
# shell pipelines can branch on the verdict alone.
MULTIMODAL_EXIT = 3


def _add_step_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--step", choices=(RK4_FIXED, RK45_ADAPTIVE, ANALYTIC_AFFINE),
        default=RK4_FIXED, help="integration backend",
    )
    parser.add_argument("--h", type=float, help="fixed step size (rk4)")
    parser.add_argument("--rel-tol", type=float, default=1e-6)
    parser.add_argument("--abs-tol", type=float, default=1e-6)
    parser.add_argument("--max-steps", type=int, default=10_000)


def _step_from_args(args) -> StepConfig:
    if args.step == RK4_FIXED:
        if args.h is None:
            raise SystemExit("--h is required with the fixed-step backend")
        return rk4_config(args.h)
    if args.step == RK45_ADAPTIVE:
        return rk45_config(args.rel_tol, args.abs_tol, args.max_steps)
    return analytic_config()


def _add_param_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--params", help="parameter file (structured text)")
    parser.add_argument("--beta0", type=float)
    parser.add_argument("--beta1", type=float)
    parser.add_argument("--g-max", type=float)
    parser.add_argument("--y-max", type=float)
    parser.add_argument("--k", type=float)


def _params_from_args(args, kind: str):
    if args.params:
        return read_params(args.params)
    if kind == AFFINE:
        if args.beta0 is None or args.beta1 is None:
            raise SystemExit("affine law needs --beta0 and --beta1 (or --params)")
        return AffineParams(args.beta0, args.beta1)
    if args.g_max is None or args.y_max is None or args.k is None:
        raise SystemExit("hump-shaped law needs --g-max, --y-max and --k (or --params)")
    return CanhamParams(args.g_max, args.y_max, args.k)


def _cmd_simulate(args) -> int:
    design = SurveyDesign(args.n_obs, args.t0, args.dt, args.y0)
    noise = NoiseSpec(args.sd, args.precision, args.seed)
    params = _params_from_args(args, args.kind)
    if args.kind == AFFINE:
        series = simulate_affine(params, design, noise, args.chain)
    else:
        series = simulate_canham(params, design, noise, args.chain)
    write_series(args.out, series)
    print(args.out)
    return 0


def _cmd_roots(args) -> int:
    spec = DefectSpec(h=args.h, beta1_true=args.beta1, alpha=args.alpha)
    roots = find_roots(spec, grid_points=args.grid_points)
    print(f"h={args.h}  beta1={args.beta1}  alpha={args.alpha}")
    print(f"{'root':>16}  {'residual':>12}  {'beta0_mode':>12}  {'beta1_mode':>12}")
    for (b0, b1), root, res in zip(
        predicted_modes(spec, roots), roots.roots, roots.residuals
    ):
        print(f"{root:16.10f}  {res:12.3e}  {b0:12.6f}  {b1:12.6f}")
    if not roots.roots:
        print("(no real roots found in the scan window)")
    if roots.warning:
        print(f"warning: {roots.warning}")
    print(f"truncation_residual={truncation_residual(args.h, args.beta1):.10e}")
    print(f"defect_at_true_rate={defect(spec, args.beta1):.10e}")
    print(f"multiplicity4_root={multiplicity4_root(args.h):.10f}")
    if args.curve:
        grid, values = defect_curve(spec)
        with open(args.curve, "w", newline="") as fh:
            fh.write("beta1,defect\n")
            for b, v in zip(grid, values):
                fh.write(f"{float(b)!r},{float(v)!r}\n")
        print(f"curve written to {args.curve}")
    return 0


def _fit_config_from_args(args) -> FitConfig:
    cfg = FitConfig()
    overrides = {}
    for name in ("warmup", "samples", "max_iter"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.init:
        overrides["init"] = tuple(float(v) for v in args.init.split(","))
    return replace(cfg, **overrides) if overrides else cfg


def _cmd_fit(args) -> int:
    series = read_series(args.series)
    step = _step_from_args(args)
    priors = None
    if args.priors:
        with open(args.priors) as fh:
            priors = priors_from_dict(json.load(fh))
    fit = _fit_config_from_args(args)
    post = Posterior(args.kind, series, step, priors, fit.error_sd)
    runner = run_mcmc if args.method == MCMC else run_lbfgs
    result = runner(post, fit, args.seed, args.chain)
    print(json.dumps(asdict(result), sort_keys=True))
    if args.out:
        write_chains(args.out, args.kind, [result])
    return 0


def _cmd_audit(args) -> int:
    cfg = read_config(args.config)
    if args.out_dir:
        cfg = replace(cfg, out_dir=args.out_dir)
    result = run_experiment(cfg, write=not args.no_write)
    print(json.dumps(verdict_to_dict(result.verdict), indent=2, sort_keys=True))
    return MULTIMODAL_EXIT if result.verdict.multimodal else 0


def _cmd_reproject(args) -> int:
    series = read_series(args.series)
    params = read_params(args.params)
    fit_step = _step_from_args(args)
    fine_step = None
    if args.fine_step:
        fine_step = step_from_dict(
            {
                "method": args.fine_step,
                "rel_tol": args.fine_rel_tol,
                "abs_tol": args.fine_abs_tol,
                "max_steps": args.max_steps,
            }
        )
    health = reproject_cluster(args.kind, params, series, fit_step, fine_step)
    print(json.dumps(_health_to_dict(health), indent=2, sort_keys=True))
    return 0


def _cmd_emit_plots(args) -> int:
    cfg = read_config(os.path.join(args.dir, "config.json"))
    results = read_chains(os.path.join(args.dir, "chains.csv"), cfg.kind)
    series_path = os.path.join(args.dir, "series.csv")
    if os.path.exists(series_path):
        series = read_series(series_path)
    else:
        series = dataset_for_chain(cfg, 0)
    usable = usable_results(cfg, results)
    fit = fit_em(estimate_matrix(cfg.kind, usable)) if usable else None
    out = args.out_dir or os.path.join(args.dir, "plots")
    for path in emit_plot_data(cfg, series, results, fit, out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odemodes",
        description=(
            "Simulate longitudinal growth surveys, fit them under "
            "different integrators, and audit the fits for "
            "integration-error-driven posterior multimodality."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic survey series")
    p.add_argument("--kind", choices=(AFFINE, CANHAM), default=AFFINE)
    _add_param_flags(p)
    p.add_argument("--n-obs", type=int, default=10)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--y0", type=float, default=1.0)
    p.add_argument("--sd", type=float, default=0.1)
    p.add_argument("--precision", type=float, default=0.1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--chain", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("roots", help="solve the step-defect equation")
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--beta1", type=float, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--grid-points", type=int, default=2001)
    p.add_argument("--curve", help="also write defect-curve samples here")
    p.set_defaults(func=_cmd_roots)

    p = sub.add_parser("fit", help="run one chain on a series file")
    p.add_argument("--series", required=True)
    p.add_argument("--kind", choices=(AFFINE, CANHAM), default=AFFINE)
    p.add_argument("--method", choices=(MCMC, LBFGS), default=MCMC)
    _add_step_flags(p)
    p.add_argument("--priors", help="prior file (structured text)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--chain", type=int, default=0)
    p.add_argument("--warmup", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--init", help="comma-separated sampling-scale start")
    p.add_argument("--out", help="also write a one-row chain table here")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("audit", help="run a full experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", help="override the config's output directory")
    p.add_argument("--no-write", action="store_true",
                   help="skip artifact files; print the verdict only")
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("reproject", help="numerical-health check at given parameters")
    p.add_argument("--kind", choices=(AFFINE, CANHAM), default=AFFINE)
    p.add_argument("--series", required=True)
    p.add_argument("--params", required=True)
    _add_step_flags(p)
    p.add_argument("--fine-step", choices=(ANALYTIC_AFFINE, RK45_ADAPTIVE))
    p.add_argument("--fine-rel-tol", type=float, default=1e-9)
    p.add_argument("--fine-abs-tol", type=float, default=1e-9)
    p.set_defaults(func=_cmd_reproject)

    p = sub.add_parser("emit-plots", help="regenerate plot data for an experiment")
    p.add_argument("--dir", required=True, help="experiment output directory")
    p.add_argument("--out-dir", help="write plot files here instead of <dir>/plots")
    p.set_defaults(func=_cmd_emit_plots)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
