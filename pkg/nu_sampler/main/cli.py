#!/usr/bin/env python
"""Command line entry point: ``nu-sampler <command> [options]``.

Exit status is 0 on success, 1 when a validation test fails, 2 on usage,
configuration or data errors and 3 when a numerical routine fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from nu_sampler import FORMAT_VERSION, __version__, fisher, simstudy, validation
from nu_sampler.chain import ChainRunner
from nu_sampler.diagnostics import efficiency, split_rhat, summary_record
from nu_sampler.model import ChainSpec, GridPlane, NuPrior, joint_grid, simulate_observations
from nu_sampler.trendcycle.application import fit_all, summarize_application
from nu_sampler.trendcycle.np_series import load_np_csv
from nu_sampler.utils import io
from nu_sampler.utils.errors import NumericFailure, NuSamplerError
from nu_sampler.utils.numerics import RandomStream, derive_stream_id
from nu_sampler.utils.parameters import ApplicationParameters, FitParameters, load_config
from nu_sampler.utils.path_finder import get_config_path

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
EXIT_OK, EXIT_VALIDATION_FAILED, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULT_FISHER_Y = [0.0, 2.0, 4.0]
DEFAULT_FISHER_NU = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 6.0, 8.0, 10.0, 20.0, 50.0]
# tau window of the joint-density grid per observation, (0, 20] otherwise
SA_TAU_WINDOWS = {0.0: 20.0, 4.0: 4.0}


def configure_logging(level: int):
    """Install the single handler of the package loggers."""
    package_logger = logging.getLogger("nu_sampler")
    for handler in list(package_logger.handlers):
        package_logger.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    package_logger.addHandler(handler)
    package_logger.setLevel(level)
    package_logger.propagate = False


def _overrides(args, names) -> dict:
    """Flags that were given, keyed by their config name."""
    return {key: getattr(args, attr) for attr, key in names.items() if getattr(args, attr) is not None}


def _resolved(config_path, overrides) -> dict:
    params = load_config(config_path) if config_path else {}
    params.update(overrides)
    return params


def cmd_simulate(args) -> int:
    stream = RandomStream.derived(args.seed, "simulate", float(args.nu), int(args.n))
    data = simulate_observations(stream, args.nu, args.n)
    io.write_observations_csv(data, args.out)
    print(f"stream_id {stream.stream_id}")
    return EXIT_OK


def cmd_fit(args) -> int:
    params = FitParameters(
        _resolved(
            args.config,
            _overrides(
                args,
                {
                    "alg": "algorithm",
                    "nu_rate": "lambda",
                    "iters": "iterations",
                    "burnin": "burn_in",
                    "k_aa": "k_aa",
                    "init_nu": "inits",
                    "chains": "chains",
                    "seed": "seed",
                },
            ),
        )
    )
    data = io.read_observations_csv(args.data)
    out_dir = Path(args.out_dir)
    chains, draws = [], []
    for index in range(params.chains):
        spec = ChainSpec(
            params.algorithm,
            params.iterations,
            params.burn_in,
            params.inits[index % len(params.inits)],
            NuPrior(params.nu_rate),
            params.seed,
            derive_stream_id("fit", params.algorithm.value, index),
            params.k_aa,
        )
        result = ChainRunner(spec, data, progress=args.progress).run()
        io.write_csv(
            pd.DataFrame({"iteration": np.arange(len(result)), "nu": result.nu_draws}),
            out_dir / f"chain_{index}.csv",
        )
        record = summary_record(result.nu_draws)
        record.update(
            {
                "chain": index,
                "init": spec.init_nu,
                "stream_id": spec.stream_id,
                "acceptance_rate": result.acceptance_rate,
                "boundary_u_count": result.boundary_u_count,
                "stuck": efficiency(result.nu_draws).degenerate,
            }
        )
        chains.append(record)
        draws.append(result.nu_draws)

    rhat = split_rhat(draws) if len(draws) >= 2 else float("nan")
    passed = bool(rhat < simstudy.RHAT_THRESHOLD)
    if not passed:
        logger.warning("R-hat %.4g does not pass the %.1f screen", rhat, simstudy.RHAT_THRESHOLD)
    payload = {
        "config": params.as_dict(),
        "seed": params.seed,
        "data": str(args.data),
        "n": data.n,
        "rhat": rhat,
        "rhat_passed": passed,
        "pooled": summary_record(np.concatenate(draws), rhat),
        "chains": chains,
    }
    io.write_json(payload, out_dir / "summary.json")
    pooled = payload["pooled"]
    print(
        f"median nu {pooled['median']:.4g} (q10 {pooled['q10']:.4g}, q90 {pooled['q90']:.4g}), "
        f"R-hat {rhat:.4g}"
    )
    return EXIT_OK


def _study_config(args) -> simstudy.StudyConfig:
    overrides = _overrides(args, {"seed": "seed"})
    if args.config:
        return simstudy.StudyConfig.from_file(args.config, overrides)
    return simstudy.StudyConfig.preset(args.preset, overrides)


def cmd_study(args) -> int:
    config = _study_config(args)
    out_dir = Path(args.out_dir)
    logger.info("study of %d chains in %s", config.n_chains, out_dir)
    for _ in simstudy.run_grid(config, out_dir, resume=args.resume, jobs=args.jobs, progress=args.progress):
        pass
    rows = simstudy.results_frame(out_dir / simstudy.RESULTS_FILE)
    aggregated = simstudy.aggregate_mean_rne(rows)
    io.write_csv(aggregated, out_dir / "mean_rne.csv")
    simstudy.rne_table(aggregated).to_csv(out_dir / "mean_rne_table.csv")
    io.write_csv(simstudy.interval_table(rows), out_dir / "intervals.csv")
    print(f"{len(rows)} chains in {out_dir / simstudy.RESULTS_FILE}")
    return EXIT_OK


def cmd_fisher(args) -> int:
    grid = fisher.bep_grid(
        args.y_grid, args.nu_grid, args.L, args.seed, progress=args.progress, reading=args.reading
    )
    out = Path(args.out)
    io.write_csv(grid, out)
    curve = fisher.bep_curve(grid)
    io.write_csv(curve, out.with_name(out.stem + "_bep.csv"))
    io.write_json(
        {
            "config": {"y_grid": args.y_grid, "nu_grid": args.nu_grid, "L": args.L, "reading": args.reading},
            "seed": args.seed,
            "note": "only |y| enters the model, the grid is symmetric in y",
            "break_even": curve.to_dict(orient="records"),
        },
        out.with_suffix(".json"),
    )
    for y, nu_bep in zip(curve["y"], curve["nu_bep"]):
        print(f"y={y:g}: break-even nu {nu_bep:.3g}")
    return EXIT_OK


def cmd_validate(args) -> int:
    stream = RandomStream.derived(args.seed, "validate", args.alg)
    if args.trend_cycle is not None:
        reports = validation.geweke_trendcycle_test(
            args.alg,
            args.trend_cycle,
            args.iters,
            stream,
            k_aa=args.k_aa,
            thin=args.thin,
            progress=args.progress,
        )
    else:
        reports = {
            "nu": validation.geweke_joint_test(
                args.alg,
                args.n,
                NuPrior(args.nu_rate),
                args.iters,
                stream,
                k_aa=args.k_aa,
                thin=args.thin,
                jacobian=not args.broken_jacobian,
                progress=args.progress,
            )
        }
    passed = all(report.passed for report in reports.values())
    if args.out:
        config = {key: value for key, value in vars(args).items() if key not in ("handler", "out")}
        io.write_json(
            {
                "config": config,
                "seed": args.seed,
                "pass": passed,
                "reports": {
                    name: dict(report.to_record(), qq=report.qq_points) for name, report in reports.items()
                },
            },
            args.out,
        )
    for report in reports.values():
        print(f"{report.label}: p={report.ks_pvalue:.4g} {'pass' if report.passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_VALIDATION_FAILED


def cmd_app(args) -> int:
    overrides = _overrides(
        args,
        {
            "alg": "algorithms",
            "series": "series",
            "iters": "iterations",
            "burnin": "burn_in",
            "k_aa": "k_aa",
            "nu_rate": "lambda",
            "seed": "seed",
        },
    )
    if args.no_log_transform:
        overrides["log_transform"] = False
    params = ApplicationParameters(_resolved(args.config or get_config_path("application.yaml"), overrides))
    series = load_np_csv(args.data, params.log_transform, params.raw_series)
    fits = fit_all(series, params, jobs=args.jobs)
    out_dir = Path(args.out_dir)
    for fit in fits:
        io.write_csv(fit.draws, out_dir / "draws" / f"{fit.name}_{fit.algorithm.value}.csv")
    io.write_csv(pd.DataFrame([fit.record() for fit in fits]), out_dir / "fits.csv")
    summary = summarize_application(fits)
    io.write_csv(summary, out_dir / "summary.csv")
    io.write_json({"config": params.as_dict(), "seed": params.seed, "data": str(args.data)}, out_dir / "run.json")
    print(summary.to_string(index=False))
    return EXIT_OK


def cmd_grid(args) -> int:
    out_dir = Path(args.out_dir)
    for y0 in args.y0:
        for plane in args.plane:
            plane = GridPlane(plane)
            aux_range = None
            if plane is GridPlane.SA:
                aux_range = (0.0, SA_TAU_WINDOWS.get(abs(y0), 20.0))
            grid = joint_grid(y0, plane, (args.nu_min, args.nu_max), aux_range, args.resolution)
            io.write_csv(grid, out_dir / f"joint_y{y0:g}_{plane.value}.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nu-sampler",
        description="Data augmentation samplers for the Student-t degrees of freedom.",
    )
    parser.add_argument(
        "--version", action="version", version=f"nu-sampler {__version__} (format {FORMAT_VERSION})"
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    parser.add_argument("--no-progress", action="store_true", help="disable progress bars")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="simulate Student-t observations")
    simulate.add_argument("--nu", type=float, required=True)
    simulate.add_argument("--n", type=int, required=True)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--out", required=True, help="CSV with columns index,y")
    simulate.set_defaults(handler=cmd_simulate)

    fit = commands.add_parser("fit", help="run one group of chains on a data file")
    fit.add_argument("--data", required=True, help="CSV with a column y")
    fit.add_argument("--config", help="YAML or JSON file with fit settings")
    fit.add_argument("--alg", choices=["sa", "aa", "asis"])
    fit.add_argument("--lambda", dest="nu_rate", type=float, help="rate of the exponential prior on nu")
    fit.add_argument("--iters", type=int, help="kept draws per chain")
    fit.add_argument("--burnin", type=int)
    fit.add_argument("--k-aa", dest="k_aa", type=int)
    fit.add_argument("--init-nu", dest="init_nu", type=float, nargs="+", help="starting values, cycled over chains")
    fit.add_argument("--chains", type=int)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--out-dir", required=True)
    fit.set_defaults(handler=cmd_fit)

    study = commands.add_parser("study", help="run the simulation study grid")
    source = study.add_mutually_exclusive_group()
    source.add_argument("--config", help="YAML or JSON study file")
    source.add_argument("--preset", choices=sorted(simstudy.PRESETS), default="full")
    study.add_argument("--seed", type=int)
    study.add_argument("--out-dir", required=True)
    study.add_argument("--resume", action="store_true", help="continue from the manifest in --out-dir")
    study.add_argument("--jobs", type=int, default=1)
    study.set_defaults(handler=cmd_study)

    fisher_parser = commands.add_parser("fisher", help="augmented Fisher information and break-even points")
    fisher_parser.add_argument("--y-grid", type=float, nargs="+", default=DEFAULT_FISHER_Y)
    fisher_parser.add_argument("--nu-grid", type=float, nargs="+", default=DEFAULT_FISHER_NU)
    fisher_parser.add_argument("--L", type=int, default=10_000, help="Monte Carlo draws per cell")
    fisher_parser.add_argument(
        "--reading",
        choices=[reading.value for reading in fisher.SufficientReading],
        default=fisher.DEFAULT_READING.value,
        help="I_tau expression: printed uses the digamma, derived the trigamma",
    )
    fisher_parser.add_argument("--seed", type=int, default=0)
    fisher_parser.add_argument("--out", required=True)
    fisher_parser.set_defaults(handler=cmd_fisher)

    validate = commands.add_parser("validate", help="joint-distribution test of a sampler")
    validate.add_argument("--alg", choices=["sa", "aa", "asis"], required=True)
    validate.add_argument("--n", type=int, default=10)
    validate.add_argument("--lambda", dest="nu_rate", type=float, default=0.2)
    validate.add_argument("--iters", type=int, default=50_000)
    validate.add_argument("--seed", type=int, default=0)
    validate.add_argument("--k-aa", dest="k_aa", type=int, default=20)
    validate.add_argument("--thin", type=int, default=validation.DEFAULT_THIN)
    validate.add_argument(
        "--broken-jacobian", action="store_true", help="drop the log-scale Jacobian, the test must fail"
    )
    validate.add_argument(
        "--trend-cycle", type=int, metavar="T", help="test the trend-cycle sampler on series of length T"
    )
    validate.add_argument("--out", help="JSON report")
    validate.set_defaults(handler=cmd_validate)

    app = commands.add_parser("app", help="fit the trend-cycle model to annual series")
    app.add_argument("--data", required=True, help="CSV with header year,<series...>")
    app.add_argument("--config", help="YAML or JSON file, config/application.yaml by default")
    app.add_argument("--series", nargs="+")
    app.add_argument("--alg", nargs="+", choices=["sa", "aa", "asis"])
    app.add_argument("--lambda", dest="nu_rate", type=float)
    app.add_argument("--iters", type=int)
    app.add_argument("--burnin", type=int)
    app.add_argument("--k-aa", dest="k_aa", type=int)
    app.add_argument("--seed", type=int)
    app.add_argument("--no-log-transform", action="store_true")
    app.add_argument("--out-dir", required=True)
    app.add_argument("--jobs", type=int, default=1)
    app.set_defaults(handler=cmd_app)

    grid = commands.add_parser("grid", help="joint posterior density of nu and the latent variable")
    grid.add_argument("--y0", type=float, nargs="+", default=[0.0, 4.0])
    grid.add_argument("--plane", nargs="+", choices=[plane.value for plane in GridPlane], default=["sa", "aa"])
    grid.add_argument("--nu-min", type=float, default=1.0)
    grid.add_argument("--nu-max", type=float, default=30.0)
    grid.add_argument("--resolution", type=int, default=200)
    grid.add_argument("--out-dir", required=True)
    grid.set_defaults(handler=cmd_grid)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO)
    args.progress = not args.no_progress and sys.stderr.isatty()
    try:
        return args.handler(args)
    except NumericFailure as error:
        logger.error("%s in %s: %s", type(error).__name__, args.command, error)
        return EXIT_NUMERIC
    except NuSamplerError as error:
        logger.error("%s: %s", type(error).__name__, error)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
