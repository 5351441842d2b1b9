"""Command-line entry point.

Commands: ``emulate``, ``calibrate``, ``study``, ``cv``, ``project``. Every
command validates its full configuration up front (exit code 2 on a bad
config, before any output is written) and logs per-stage wall-clock timings.
Numerical failures exit with code 3. Outputs are plot-ready CSVs plus JSON
reports; no figures are rendered.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .calibrate import posterior_density, reduce_observation, run_mcmc
from .config import RunConfig
from .emulator import EnsembleDesign, PcEmulator
from .errors import ConfigError, EmucalError, FitError, NumericalError
from .experiments import (PseudoObsConfig, ProjectionTable, aggregation_study,
                          cross_validate, density_interval, density_mode,
                          make_pseudo_obs, project_response, subsample_study)
from .grid import load_ensemble, read_field_csv, vectorize

log = logging.getLogger("emucal")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


@contextlib.contextmanager
def _stage(name):
    start = time.perf_counter()
    yield
    log.info("stage=%s elapsed=%.3fs", name, time.perf_counter() - start)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config)
    if args.out is not None:
        cfg.output_dir = Path(args.out)
    return cfg


def _emulator_out(cfg: RunConfig) -> Path:
    return cfg.emulator_path or (cfg.output_dir / "emulator")


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_emulate(args) -> int:
    cfg = _load_config(args)
    cfg.require_paths(("ensemble_path", "ensemble"))
    if args.seed is not None:
        cfg.emulator_seed = args.seed
    settings = cfg.level_settings()
    if args.dry_run:
        print(f"plan: emulate ensemble={cfg.ensemble_path}")
        print(f"  truncation: n_components={settings.n_components} "
              f"variance_fraction={settings.variance_fraction or 0.9}")
        print(f"  restarts={settings.n_restarts} seed={cfg.emulator_seed} "
              f"threads={args.threads}")
        print(f"  cross-validation: rounds={cfg.cv_rounds} "
              f"holdout={cfg.cv_holdout_fraction}")
        print(f"  output: {_emulator_out(cfg)}")
        return EXIT_OK
    with _stage("emulate.load"):
        ensemble = load_ensemble(cfg.ensemble_path)
        design = EnsembleDesign.from_fields(ensemble)
    with _stage("emulate.fit"):
        emulator = PcEmulator(
            n_components=cfg.emulator_n_components,
            variance_fraction=cfg.emulator_variance_fraction,
            n_restarts=cfg.emulator_n_restarts,
            seed=cfg.emulator_seed,
            n_jobs=args.threads,
        ).fit(design)
    out = _emulator_out(cfg)
    with _stage("emulate.save"):
        emulator.save(out)
    with _stage("emulate.cv"):
        result = cross_validate(design, cfg.cv_holdout_fraction, cfg.cv_rounds,
                                settings=settings, seed=cfg.cv_seed)
        _write_json(out / "cv_report.json", result.report())
    log.info("emulator: %d components, explained fraction %.4f",
             emulator.basis_.n_components_, emulator.basis_.explained_fraction_)
    print(f"emulator written to {out}")
    return EXIT_OK


def _build_calibration_inputs(cfg: RunConfig, seed=None):
    emulator = PcEmulator.load(_emulator_out(cfg))
    obs = read_field_csv(cfg.observation_path)
    obs_vec = vectorize(obs)
    if obs_vec.values.size != emulator.basis_.components_.shape[0]:
        raise ConfigError(
            "observation: field support does not match the emulator "
            f"({obs_vec.values.size} vs {emulator.basis_.components_.shape[0]} locations)")
    settings = cfg.level_settings()
    disc = None
    if settings.disc_components is not None or settings.disc_fraction is not None:
        from .discrepancy import DiscrepancyBasis
        disc = DiscrepancyBasis.build(
            obs_vec, obs.spec, *settings.knot_steps,
            phi_surface_km=settings.phi_surface_km,
            phi_depth_m=settings.phi_depth_m,
            n_components=settings.disc_components,
            variance_fraction=settings.disc_fraction,
            scale=settings.disc_scale)
    priors = cfg.priors_for(emulator.design_.param_names)
    mcmc = cfg.mcmc_config(seed=seed)
    return emulator, obs_vec, disc, priors, mcmc


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    cfg.require_paths(("observation_path", "observation"))
    emu_dir = _emulator_out(cfg)
    if not (Path(emu_dir) / "emulator.json").exists():
        raise ConfigError(f"emulator.path: no emulator found at {emu_dir}")
    if args.dry_run:
        print(f"plan: calibrate observation={cfg.observation_path} emulator={emu_dir}")
        print(f"  chain: n_iter={cfg.mcmc_n_iter} burn_in={cfg.mcmc_burn_in} "
              f"seed={args.seed if args.seed is not None else cfg.mcmc_seed}")
        print(f"  discrepancy: components={cfg.disc_components} "
              f"fraction={cfg.disc_fraction} knot_steps={cfg.knot_steps}")
        print(f"  output: {cfg.output_dir}")
        return EXIT_OK
    with _stage("calibrate.setup"):
        emulator, obs_vec, disc, priors, mcmc = _build_calibration_inputs(cfg, seed=args.seed)
        zr = reduce_observation(obs_vec.values, emulator.basis_, disc)
    with _stage("calibrate.mcmc"):
        posterior = run_mcmc(zr, emulator, priors.with_emulator_scales(emulator), mcmc)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    with _stage("calibrate.write"):
        posterior.to_csv(out / "chain.csv")
        report = {
            "acceptance_rates": posterior.acceptance_rates,
            "n_iter": posterior.n_iter,
            "n_burn": posterior.n_burn,
            "seed": posterior.seed,
            "condition_number": zr.condition_number,
            "split_half": posterior.split_half,
        }
        free = np.nonzero(priors.free_mask)[0]
        for i in free:
            name = emulator.design_.param_names[i]
            grid, density = posterior_density(
                posterior.thetas[posterior.n_burn:, i],
                bounds=tuple(priors.theta_bounds[i]))
            with open(out / f"density_theta.{name}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["grid", "density"])
                for g, d in zip(grid, density):
                    writer.writerow([f"{g:.17g}", f"{d:.17g}"])
            report[f"theta.{name}"] = {
                "mode": density_mode(grid, density),
                "interval95": list(density_interval(grid, density)),
            }
        _write_json(out / "report.json", report)
    print(f"calibration outputs written to {out}")
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = _load_config(args)
    if cfg.study_kind is None:
        raise ConfigError("study.kind: required for the study command "
                          "(valid selectors: aggregation, subsample)")
    cfg.require_paths(("ensemble_path", "ensemble"), ("observation_path", "observation"))
    if args.seed is not None:
        cfg.mcmc_seed = args.seed
    if args.dry_run:
        print(f"plan: study kind={cfg.study_kind}")
        if cfg.study_kind == "aggregation":
            n_runs = len(cfg.study_levels) * len(cfg.study_prior_scales)
            print(f"  levels={list(cfg.study_levels)} priors={len(cfg.study_prior_scales)} "
                  f"-> {n_runs} calibrations of {cfg.mcmc_n_iter} iterations")
        else:
            print(f"  k={cfg.subsample_k} repeats={cfg.subsample_repeats} "
                  f"-> {cfg.subsample_repeats} calibrations of {cfg.mcmc_n_iter} iterations")
        print(f"  output: {cfg.output_dir}")
        return EXIT_OK
    with _stage("study.load"):
        ensemble = load_ensemble(cfg.ensemble_path)
        observation = read_field_csv(cfg.observation_path)
        if cfg.pseudo_truth is not None:
            pseudo_cfg = PseudoObsConfig(cfg.pseudo_truth,
                                         cfg.pseudo_residual_sources or (cfg.pseudo_truth,))
            target = make_pseudo_obs(ensemble, observation, pseudo_cfg)
        else:
            target = observation
    priors_list = [cfg.priors_for(ensemble.param_names, kappa_d_scale=b_nu, sigma2_scale=b_z)
                   for (b_nu, b_z) in cfg.study_prior_scales]
    labels = [f"bnu{b_nu:g}_bz{b_z:g}" for (b_nu, b_z) in cfg.study_prior_scales]
    out = cfg.output_dir
    if cfg.study_kind == "aggregation":
        settings = {lv: cfg.level_settings(lv) for lv in cfg.study_levels}
        with _stage("study.aggregation"):
            result = aggregation_study(target, ensemble, priors_list,
                                       levels=cfg.study_levels, settings=settings,
                                       prior_labels=labels, n_jobs=args.threads)
        result.write(out)
    else:
        if cfg.subsample_k is None:
            raise ConfigError("study.subsample.k: required for the subsample study")
        with _stage("study.subsample"):
            result = subsample_study(
                target, ensemble, cfg.subsample_k, cfg.subsample_repeats,
                seeds=cfg.subsample_seeds, settings=cfg.level_settings("3d"),
                priors=priors_list[0])
        result.write(out)
    print(f"study outputs written to {out}")
    return EXIT_OK


def cmd_cv(args) -> int:
    cfg = _load_config(args)
    cfg.require_paths(("ensemble_path", "ensemble"))
    if args.seed is not None:
        cfg.cv_seed = args.seed
    if args.dry_run:
        print(f"plan: cv ensemble={cfg.ensemble_path} rounds={cfg.cv_rounds} "
              f"holdout={cfg.cv_holdout_fraction}")
        return EXIT_OK
    with _stage("cv.run"):
        design = EnsembleDesign.from_fields(load_ensemble(cfg.ensemble_path))
        result = cross_validate(design, cfg.cv_holdout_fraction, cfg.cv_rounds,
                                settings=cfg.level_settings(), seed=cfg.cv_seed)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    _write_json(cfg.output_dir / "cv_report.json", result.report())
    print(f"cv report written to {cfg.output_dir / 'cv_report.json'}")
    return EXIT_OK


def _read_chain_theta(path, parameter=None) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        theta_cols = [i for i, h in enumerate(header) if h.startswith("theta.")]
        if parameter is not None:
            wanted = f"theta.{parameter}"
            if wanted not in header:
                raise ConfigError(f"project.parameter: column {wanted} not in chain")
            col = header.index(wanted)
        elif len(theta_cols) == 1:
            col = theta_cols[0]
        else:
            raise ConfigError("project.parameter: required when the chain has "
                              "multiple theta columns")
        values = [float(row[col]) for row in reader if row]
    if not values:
        raise ConfigError(f"project.chain: chain file {path} has no rows")
    return np.asarray(values)


def cmd_project(args) -> int:
    cfg = _load_config(args)
    cfg.require_paths(("project_chain", "project.chain"),
                      ("project_table", "project.table"))
    if args.dry_run:
        print(f"plan: project chain={cfg.project_chain} table={cfg.project_table}")
        return EXIT_OK
    with _stage("project.run"):
        table = ProjectionTable.from_csv(cfg.project_table)
        samples = _read_chain_theta(cfg.project_chain, cfg.project_parameter)
        n_burn = int(cfg.project_burn_in * samples.size)
        result = project_response(samples[n_burn:], table)
    result.write(cfg.output_dir)
    print(f"projection interval95 = [{result.interval[0]:.6g}, {result.interval[1]:.6g}]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emucal",
        description="Emulate, calibrate, and run aggregation studies on "
                    "gridded simulator output.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler, help_text in (
            ("emulate", cmd_emulate, "fit and persist the PC-GP emulator (+ CV report)"),
            ("calibrate", cmd_calibrate, "run MCMC calibration against an observation"),
            ("study", cmd_study, "run the aggregation or subsample study"),
            ("cv", cmd_cv, "cross-validate the emulator"),
            ("project", cmd_project, "map a posterior chain through a projection table")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="key-value config file")
        cmd.add_argument("--out", default=None, help="output directory (overrides config)")
        cmd.add_argument("--seed", type=int, default=None, help="seed override")
        cmd.add_argument("--threads", type=int, default=None, help="worker thread cap")
        cmd.add_argument("--dry-run", action="store_true",
                         help="print the resolved plan without computing")
        cmd.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EmucalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
