"""Staged batch pipeline: fit-marginals, fit-copula, simulate, diagnose.

Each stage reads the config plus upstream artifacts and writes its own
artifact directory, so stages can be re-run independently.  Exit codes:
0 ok, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import copula, diagnostics, simulate, windows
from .config import PipelineConfig, load_config
from .errors import DataError, NumericalError
from .grid import SpaceTimeCube, load_cube

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

ENSEMBLE_DIR = "ensemble"
COPULA_FILE = "copula.json"
SCENARIO_DIR = "scenarios"
DIAGNOSTIC_DIR = "diagnostics"
FIGURE_DIR = "figures"


class _Parser(argparse.ArgumentParser):
    """argparse with the pipeline's usage exit code (1, not 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="pipeline YAML config")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    sub.add_argument("--out", default=None,
                     help="override the config output directory")
    sub.add_argument("--workers", type=int, default=None,
                     help="worker processes (default: available cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="weathergen",
                     description="moving-window GAM + Gaussian copula "
                                 "weather field emulator")
    commands = parser.add_subparsers(dest="command", required=True)

    fit_m = commands.add_parser("fit-marginals",
                                help="fit all moving windows and store the "
                                     "posterior-predictive ensemble")
    _add_common(fit_m)
    fit_m.set_defaults(func=cmd_fit_marginals)

    fit_c = commands.add_parser("fit-copula",
                                help="fit the separable correlation by "
                                     "maximum likelihood")
    _add_common(fit_c)
    fit_c.add_argument("--ensemble", default=None,
                       help="ensemble artifact directory "
                            "(default: <out>/ensemble)")
    fit_c.add_argument("--init", default=None,
                       help="override the initial point as "
                            "v_space,v_time,rho12,rho13,... ")
    fit_c.set_defaults(func=cmd_fit_copula)

    sim = commands.add_parser("simulate",
                              help="draw joint field realizations")
    _add_common(sim)
    sim.add_argument("--ensemble", default=None)
    sim.add_argument("--copula", default=None,
                     help="copula artifact (default: <out>/copula.json)")
    sim.add_argument("-k", "--realizations", type=int, default=None,
                     help="number of realizations (default from config)")
    sim.set_defaults(func=cmd_simulate)

    diag = commands.add_parser("diagnose",
                               help="emit diagnostic CSVs and figures")
    _add_common(diag)
    diag.add_argument("--scenarios", default=None,
                      help="scenario artifact directory "
                           "(default: <out>/scenarios)")
    diag.add_argument("--no-figures", action="store_true",
                      help="skip figure rendering")
    diag.set_defaults(func=cmd_diagnose)
    return parser


def _config(args) -> PipelineConfig:
    return load_config(args.config, seed_override=args.seed,
                       out_override=args.out)


def _cube(cfg: PipelineConfig) -> SpaceTimeCube:
    return load_cube(cfg.data_path, cfg.schema)


def _workers(args) -> int:
    if args.workers is not None:
        if args.workers < 1:
            raise DataError("--workers must be at least 1")
        return args.workers
    return os.cpu_count() or 1


def cmd_fit_marginals(args) -> int:
    cfg = _config(args)
    cube = _cube(cfg)
    P, T, N = cube.shape
    print(f"loaded cube: P={P} variables, T={T} times, N={N} locations, "
          f"{int(cube.mask.sum())} masked cells")
    ensemble = windows.fit_all_windows(cube, cfg.window,
                                       parallelism=_workers(args))
    ensemble.provenance.update(cfg.artifact_meta())
    outdir = windows.save_ensemble(ensemble, cfg.output_dir / ENSEMBLE_DIR)
    n_fail = len(ensemble.failures)
    print(f"fitted {ensemble.provenance['n_cells']} windows "
          f"({n_fail} failures); ensemble written to {outdir}")
    if n_fail:
        for p, t, n, msg in ensemble.failures[:5]:
            print(f"  failed cell ({p},{t},{n}): {msg}")
    return EXIT_OK


def cmd_fit_copula(args) -> int:
    cfg = _config(args)
    cube = _cube(cfg)
    ens_dir = Path(args.ensemble) if args.ensemble \
        else cfg.output_dir / ENSEMBLE_DIR
    ensemble = windows.load_ensemble(ens_dir)
    if ensemble.shape != cube.shape:
        raise DataError("ensemble artifact does not match the configured cube")

    scores, n_imputed = copula.normal_scores(cube, ensemble)
    print(f"normal scores: {scores.size} cells, {n_imputed} masked cells "
          "imputed with z=0")
    init = None
    if args.init is not None:
        init = _parse_init(args.init, len(cube.variables))
        print(f"using --init override: {args.init}")
    corr = copula.fit_mle(scores, cube.coords, len(cube.variables),
                          init=init, settings=cfg.optimizer)
    path = copula.save_correlation(corr, cfg.output_dir / COPULA_FILE,
                                   extra_meta=cfg.artifact_meta())
    pairs = ", ".join(f"{v:+.4f}" for v in corr.pairwise_correlations)
    print(f"fitted copula: v_space={corr.v_space:.4f} km, "
          f"v_time={corr.v_time:.4f} h, correlations=[{pairs}]")
    print(f"-2 log likelihood = {corr.neg2_loglik:.6f}, "
          f"converged={corr.converged} in {corr.n_iter} iterations")
    if not corr.converged:
        print("warning: optimizer did not meet the gradient tolerance; "
              "best iterate returned")
    print(f"copula written to {path}")
    return EXIT_OK


def _parse_init(text: str, n_variables: int) -> np.ndarray:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise DataError(f"cannot parse --init {text!r}") from None
    n_corr = copula.n_angles(n_variables)
    if len(values) != 2 + n_corr:
        raise DataError(
            f"--init needs v_space, v_time and {n_corr} correlations "
            f"for P={n_variables}")
    v_space, v_time = values[0], values[1]
    if v_space <= 0 or v_time <= 0:
        raise DataError("--init ranges must be positive")
    sigma = np.eye(n_variables)
    idx = 2
    for i in range(n_variables):
        for j in range(i + 1, n_variables):
            sigma[i, j] = sigma[j, i] = values[idx]
            idx += 1
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise DataError("--init correlations are not positive definite") from None
    angles = copula.cholesky_to_angles(chol)
    return np.concatenate([[np.log(v_space), np.log(v_time)], angles])


def cmd_simulate(args) -> int:
    cfg = _config(args)
    cube = _cube(cfg)
    ens_dir = Path(args.ensemble) if args.ensemble \
        else cfg.output_dir / ENSEMBLE_DIR
    cop_path = Path(args.copula) if args.copula \
        else cfg.output_dir / COPULA_FILE
    ensemble = windows.load_ensemble(ens_dir)
    corr = copula.load_correlation(cop_path, cube.coords)
    k = cfg.realizations if args.realizations is None else args.realizations
    scenarios = simulate.simulate_scenarios(corr, ensemble, k, cfg.seed)
    outdir = simulate.save_scenarios(
        scenarios, cube.coords, [v.name for v in cube.variables],
        cfg.output_dir / SCENARIO_DIR)
    print(f"wrote {k} realizations to {outdir}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _config(args)
    cube = _cube(cfg)
    scen_dir = Path(args.scenarios) if args.scenarios \
        else cfg.output_dir / SCENARIO_DIR
    scenarios = simulate.load_scenarios(scen_dir)
    bundle = diagnostics.summarize_scenarios(
        scenarios, cube,
        probes=cfg.probe_locations,
        max_lag=cfg.max_lag,
        variogram_times=cfg.variogram_times,
        n_bins=cfg.variogram_bins)
    outdir = cfg.output_dir / DIAGNOSTIC_DIR
    written = bundle.write(outdir)
    print(f"wrote {len(written)} diagnostic tables to {outdir}")
    if not args.no_figures:
        from . import report  # deferred: pulls in matplotlib

        figures = report.render_all(bundle, outdir / FIGURE_DIR)
        print(f"rendered {len(figures)} figures to {outdir / FIGURE_DIR}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
