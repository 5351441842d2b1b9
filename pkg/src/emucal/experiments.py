"""Study harness: pseudo-observation construction, aggregation comparison,
prior-sensitivity summaries, random-subsampling replication, emulator
cross-validation, and posterior-to-projection mapping.

Each study runs the full pipeline (aggregate -> basis -> emulate ->
calibrate) per case and reports plot-ready density tables plus a
machine-readable report manifest.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .calibrate import (CalibrationPosterior, McmcConfig, PriorSpec,
                        posterior_density, reduce_observation, run_mcmc)
from .discrepancy import (DEFAULT_PHI_DEPTH_M, DEFAULT_PHI_SURFACE_KM,
                          DiscrepancyBasis)
from .emulator import EnsembleDesign, PcEmulator
from .grid import FieldEnsemble, GridField, vectorize, vertical_mean, zonal_mean

__all__ = [
    "PseudoObsConfig",
    "make_pseudo_obs",
    "aggregate_level",
    "LevelSettings",
    "aggregation_study",
    "subsample_study",
    "cross_validate",
    "ProjectionTable",
    "project_response",
    "prior_sensitivity_report",
    "density_mode",
    "density_interval",
    "l1_distance",
]

log = logging.getLogger(__name__)

LEVELS = ("3d", "2d", "1d")


# ---------------------------------------------------------------------------
# Pseudo observations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PseudoObsConfig:
    """Synthetic-truth recipe: which run is truth, which runs source the
    residual average, and the seed a harness may use for observation noise."""

    truth_theta: np.ndarray
    residual_source_thetas: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "truth_theta",
                           np.atleast_1d(np.asarray(self.truth_theta, dtype=float)))
        object.__setattr__(self, "residual_source_thetas",
                           tuple(np.atleast_1d(np.asarray(t, dtype=float))
                                 for t in self.residual_source_thetas))


def make_pseudo_obs(ensemble: FieldEnsemble, observation: GridField,
                    cfg: PseudoObsConfig) -> GridField:
    """Synthetic truth plus the averaged observation-minus-model residual.

    The residual is averaged per location over the source runs, then
    superimposed on the truth run's field. Truth and sources must be ensemble
    design points; the observation must be co-located with the ensemble.
    """
    truth = ensemble.run_at(cfg.truth_theta)
    if not np.array_equal(observation.mask, truth.mask):
        raise ValueError("observation is not co-located with the ensemble")
    residual = np.zeros_like(truth.values)
    for theta in cfg.residual_source_thetas:
        run = ensemble.run_at(theta)
        residual += observation.values - run.values
    residual /= len(cfg.residual_source_thetas)
    values = np.where(truth.mask, truth.values + residual, np.nan)
    return GridField(truth.spec, values, truth.mask)


def aggregate_level(fld: GridField, level: str) -> GridField:
    """Identity (3d), zonal mean (2d, lat x depth), or vertical mean (1d)."""
    if level == "3d":
        return fld
    if level == "2d":
        return zonal_mean(fld)
    if level == "1d":
        return vertical_mean(fld)
    raise ValueError(f"unknown aggregation level {level!r}; use one of {LEVELS}")


# ---------------------------------------------------------------------------
# Pipeline settings and single calibration runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevelSettings:
    """Emulator, discrepancy, and chain settings for one pipeline run."""

    n_components: int | None = None
    variance_fraction: float | None = None
    n_restarts: int = 8
    emulator_seed: int = 0
    knot_steps: tuple[float, float, float] = (90.0, 45.0, 500.0)
    phi_surface_km: float = DEFAULT_PHI_SURFACE_KM
    phi_depth_m: float = DEFAULT_PHI_DEPTH_M
    disc_components: int | None = None
    disc_fraction: float | None = None
    disc_scale: str = "singular"
    mcmc: McmcConfig = field(default_factory=McmcConfig)


def _fit_emulator(design: EnsembleDesign, settings: LevelSettings, n_jobs=None) -> PcEmulator:
    emulator = PcEmulator(
        n_components=settings.n_components,
        variance_fraction=settings.variance_fraction,
        n_restarts=settings.n_restarts,
        seed=settings.emulator_seed,
        n_jobs=n_jobs,
    )
    return emulator.fit(design)


def _build_discrepancy(vec, spec, settings: LevelSettings) -> DiscrepancyBasis | None:
    if settings.disc_components is None and settings.disc_fraction is None:
        return None
    return DiscrepancyBasis.build(
        vec, spec, *settings.knot_steps,
        phi_surface_km=settings.phi_surface_km,
        phi_depth_m=settings.phi_depth_m,
        n_components=settings.disc_components,
        variance_fraction=settings.disc_fraction,
        scale=settings.disc_scale,
    )


def _calibrate_once(z_values, emulator, discrepancy, priors, mcmc) -> CalibrationPosterior:
    zr = reduce_observation(z_values, emulator.basis_, discrepancy)
    return run_mcmc(zr, emulator, priors, mcmc)


# ---------------------------------------------------------------------------
# Density summaries shared by the reports
# ---------------------------------------------------------------------------

def density_mode(grid, density) -> float:
    return float(grid[int(np.argmax(density))])


def density_interval(grid, density, level=0.95) -> tuple[float, float]:
    """Equal-tailed interval from the density's trapezoid CDF."""
    widths = np.diff(grid)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * widths)])
    cdf /= cdf[-1]
    alpha = 0.5 * (1.0 - level)
    lo = float(np.interp(alpha, cdf, grid))
    hi = float(np.interp(1.0 - alpha, cdf, grid))
    return lo, hi


def l1_distance(grid, d1, d2) -> float:
    return float(np.trapezoid(np.abs(np.asarray(d1) - np.asarray(d2)), grid))


def mean_pairwise_l1(grid, densities) -> float:
    m = len(densities)
    if m < 2:
        return 0.0
    dists = [l1_distance(grid, densities[i], densities[j])
             for i in range(m) for j in range(i + 1, m)]
    return float(np.mean(dists))


def prior_sensitivity_report(grid, densities, labels=None) -> dict:
    """Pairwise L1 distances, per-prior modes/intervals, and the equal-weight
    mixture density over the shared grid."""
    densities = [np.asarray(d, dtype=float) for d in densities]
    if len(densities) < 2:
        raise ValueError("need at least two densities to compare")
    if any(d.shape != (np.asarray(grid).size,) for d in densities):
        raise ValueError("densities must share the common grid")
    labels = list(labels) if labels else [f"prior{i+1}" for i in range(len(densities))]
    pairwise = [[l1_distance(grid, a, b) for b in densities] for a in densities]
    mixture = np.mean(densities, axis=0)
    return {
        "labels": labels,
        "pairwise_l1": pairwise,
        "mean_pairwise_l1": mean_pairwise_l1(grid, densities),
        "modes": [density_mode(grid, d) for d in densities],
        "intervals": [density_interval(grid, d) for d in densities],
        "mixture_density": mixture,
        "mixture_mode": density_mode(grid, mixture),
        "mixture_interval": density_interval(grid, mixture),
    }


# ---------------------------------------------------------------------------
# Aggregation study
# ---------------------------------------------------------------------------

@dataclass
class LevelResult:
    level: str
    grid: np.ndarray
    densities: list
    prior_labels: list
    report: dict
    posteriors: list = field(repr=False, default_factory=list)

    @property
    def divergence(self) -> float:
        return self.report["mean_pairwise_l1"]


@dataclass
class AggregationStudyResult:
    levels: dict

    def divergences(self) -> dict:
        return {name: res.divergence for name, res in self.levels.items()}

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        (out_dir / "densities").mkdir(parents=True, exist_ok=True)
        (out_dir / "chains").mkdir(parents=True, exist_ok=True)
        report = {}
        for name, res in self.levels.items():
            for label, density in zip(res.prior_labels, res.densities):
                _write_density_csv(out_dir / "densities" / f"{name}_{label}.csv",
                                   res.grid, density)
            _write_density_csv(out_dir / "densities" / f"{name}_mixture.csv",
                               res.grid, res.report["mixture_density"])
            for label, post in zip(res.prior_labels, res.posteriors):
                post.to_csv(out_dir / "chains" / f"{name}_{label}.csv")
            report[name] = {
                "prior_labels": res.prior_labels,
                "divergence": res.divergence,
                "pairwise_l1": res.report["pairwise_l1"],
                "modes": res.report["modes"],
                "intervals": res.report["intervals"],
                "mixture_mode": res.report["mixture_mode"],
                "mixture_interval": res.report["mixture_interval"],
            }
        _write_json(out_dir / "report.json", {"study": "aggregation", "levels": report})


def aggregation_study(pseudo_obs: GridField, ensemble: FieldEnsemble, priors_list,
                      levels=LEVELS, settings=None, prior_labels=None,
                      n_grid=256, n_jobs=None) -> AggregationStudyResult:
    """Full pipeline per aggregation level and prior.

    ``settings`` maps level name to :class:`LevelSettings`. Each level fits
    its emulator once (emulation does not depend on the prior) and then runs
    one calibration per prior; the per-level report includes the
    prior-sensitivity divergence (mean pairwise L1 between the normalized
    theta densities).
    """
    if settings is None or any(lv not in settings for lv in levels):
        missing = [lv for lv in levels if settings is None or lv not in settings]
        raise ValueError(f"settings required for level(s): {missing}")
    priors_list = list(priors_list)
    if len(priors_list) < 1:
        raise ValueError("need at least one prior")
    prior_labels = (list(prior_labels) if prior_labels
                    else [f"prior{i+1}" for i in range(len(priors_list))])

    results = {}
    for level in levels:
        cfg = settings[level]
        obs_level = aggregate_level(pseudo_obs, level)
        ens_level = ensemble.map_fields(lambda f: aggregate_level(f, level))
        design = EnsembleDesign.from_fields(ens_level)
        emulator = _fit_emulator(design, cfg, n_jobs=n_jobs)
        obs_vec = vectorize(obs_level)
        disc = _build_discrepancy(obs_vec, obs_level.spec, cfg)

        def one_prior(item):
            index, priors = item
            mcmc = replace(cfg.mcmc, seed=cfg.mcmc.seed + index)
            return _calibrate_once(obs_vec.values, emulator, disc, priors, mcmc)

        items = list(enumerate(priors_list))
        if n_jobs and n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                posteriors = list(pool.map(one_prior, items))
        else:
            posteriors = [one_prior(it) for it in items]

        bounds = _single_free_bounds(priors_list[0])
        grid = np.linspace(bounds[0], bounds[1], n_grid)
        densities = [posterior_density(p, bounds=bounds, n_grid=n_grid)[1]
                     for p in posteriors]
        if len(densities) >= 2:
            report = prior_sensitivity_report(grid, densities, prior_labels)
        else:  # single prior: one calibration, nothing to compare
            report = {
                "labels": prior_labels,
                "pairwise_l1": [[0.0]],
                "mean_pairwise_l1": 0.0,
                "modes": [density_mode(grid, densities[0])],
                "intervals": [density_interval(grid, densities[0])],
                "mixture_density": densities[0],
                "mixture_mode": density_mode(grid, densities[0]),
                "mixture_interval": density_interval(grid, densities[0]),
            }
        results[level] = LevelResult(level, grid, densities, prior_labels,
                                     report, posteriors)
        log.info("aggregation level %s: divergence=%.4f", level, report["mean_pairwise_l1"])
    return AggregationStudyResult(results)


def _single_free_bounds(priors: PriorSpec) -> tuple[float, float]:
    free = np.nonzero(priors.free_mask)[0]
    if free.size != 1:
        raise ValueError("study densities need exactly one free theta")
    return tuple(priors.theta_bounds[free[0]])


# ---------------------------------------------------------------------------
# Subsampling study
# ---------------------------------------------------------------------------

@dataclass
class SubsampleStudyResult:
    k: int
    grid: np.ndarray
    densities: list
    modes: list
    across_repeat_std: float
    within_chain_se: float
    seeds: list

    @property
    def spread_ratio(self) -> float:
        return self.across_repeat_std / self.within_chain_se

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        (out_dir / "densities").mkdir(parents=True, exist_ok=True)
        for seed, density in zip(self.seeds, self.densities):
            _write_density_csv(out_dir / "densities" / f"subsample_seed{seed}.csv",
                               self.grid, density)
        _write_json(out_dir / "report.json", {
            "study": "subsample", "k": self.k, "seeds": self.seeds,
            "modes": self.modes,
            "across_repeat_std": self.across_repeat_std,
            "within_chain_se": self.within_chain_se,
            "spread_ratio": self.spread_ratio,
        })


def _mode_mc_error(samples, bounds, n_grid=256) -> float:
    """MC standard error of the KDE mode: std over four disjoint quarter-chain
    modes, scaled down by 2 for the four-fold larger full chain."""
    quarters = np.array_split(np.asarray(samples), 4)
    modes = [density_mode(*posterior_density(qt, bounds=bounds, n_grid=n_grid))
             for qt in quarters]
    return float(np.std(modes) / 2.0)


def subsample_study(pseudo_obs: GridField, ensemble: FieldEnsemble, k: int,
                    n_repeats: int, seeds=None, settings: LevelSettings = None,
                    priors: PriorSpec = None, n_grid=256) -> SubsampleStudyResult:
    """Repeat calibration on independent random location subsets.

    Each repeat draws k of the n unmasked locations (simple random sampling,
    one seed per repeat), rebuilds basis + emulator + discrepancy on that
    support, and calibrates. Reports the spread of posterior modes across
    repeats against the within-chain Monte-Carlo error of a single mode.
    """
    if settings is None or priors is None:
        raise ValueError("settings and priors are required")
    obs_vec = vectorize(pseudo_obs)
    n = len(obs_vec)
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    seeds = list(seeds) if seeds is not None else list(range(n_repeats))
    if len(seeds) != n_repeats:
        raise ValueError("one seed per repeat required")

    design_full = EnsembleDesign.from_fields(ensemble)
    raw_rows = design_full.M + design_full.column_means
    bounds = _single_free_bounds(priors)
    grid = np.linspace(bounds[0], bounds[1], n_grid)

    densities, modes = [], []
    theta_samples_first = None
    for r, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        index = np.sort(rng.choice(n, size=k, replace=False))
        design = EnsembleDesign.from_matrix(design_full.thetas, raw_rows[:, index],
                                            design_full.param_names)
        emulator = _fit_emulator(design, settings)
        sub_vec = obs_vec.take(index)
        disc = _build_discrepancy(sub_vec, pseudo_obs.spec, settings)
        mcmc = replace(settings.mcmc, seed=settings.mcmc.seed + r)
        posterior = _calibrate_once(sub_vec.values, emulator, disc, priors, mcmc)
        samples = posterior.theta_samples()
        if theta_samples_first is None:
            theta_samples_first = samples
        density = posterior_density(samples, bounds=bounds, n_grid=n_grid)[1]
        densities.append(density)
        modes.append(density_mode(grid, density))
        log.info("subsample repeat %d (seed %d): mode=%.4f", r, seed, modes[-1])

    across = float(np.std(modes))
    within = _mode_mc_error(theta_samples_first, bounds, n_grid)
    return SubsampleStudyResult(k, grid, densities, modes, across, within, seeds)


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

@dataclass
class CrossValidationResult:
    rmse: list
    standardized_errors: np.ndarray
    holdout_fraction: float
    n_rounds: int

    @property
    def fraction_outside_2(self) -> float:
        return float(np.mean(np.abs(self.standardized_errors) > 2.0))

    def report(self) -> dict:
        return {
            "n_rounds": self.n_rounds,
            "holdout_fraction": self.holdout_fraction,
            "rmse": self.rmse,
            "n_standardized_errors": int(self.standardized_errors.size),
            "fraction_outside_2": self.fraction_outside_2,
        }


def cross_validate(design: EnsembleDesign, holdout_fraction=0.1, n_rounds=5,
                   settings: LevelSettings = None, seed=0) -> CrossValidationResult:
    """Leave-fraction-out emulator validation.

    Each round refits basis + GPs on the retained runs, projects the held-out
    runs onto the refit basis, and compares predicted scores against the
    held-out scores: field-space RMSE per round plus the whitened score
    errors (error / predictive sd), which are approximately standard normal
    when the emulator is adequate.
    """
    settings = settings or LevelSettings()
    p = design.n_runs
    n_hold = max(1, int(round(holdout_fraction * p)))
    if p - n_hold < 3:
        raise ValueError("holdout leaves too few runs to fit")
    raw = design.M + design.column_means
    rng = np.random.default_rng(seed)
    rmse, whitened = [], []
    for _ in range(n_rounds):
        held = np.sort(rng.choice(p, size=n_hold, replace=False))
        keep = np.setdiff1d(np.arange(p), held)
        sub = EnsembleDesign.from_matrix(design.thetas[keep], raw[keep],
                                         design.param_names)
        emulator = _fit_emulator(sub, settings)
        basis = emulator.basis_
        sq_err = 0.0
        for i in held:
            true_scores = basis.transform(raw[i])
            mu, var = emulator.predict_scores(design.thetas[i])
            sd = np.sqrt(np.maximum(var, 1e-300))
            whitened.extend(((true_scores - mu) / sd).tolist())
            predicted = basis.reconstruct(mu)
            sq_err += np.mean((predicted - raw[i]) ** 2)
        rmse.append(float(np.sqrt(sq_err / n_hold)))
    return CrossValidationResult(rmse, np.asarray(whitened), holdout_fraction, n_rounds)


# ---------------------------------------------------------------------------
# Posterior-to-projection mapping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionTable:
    """Lookup table mapping the calibrated parameter to a downstream response
    (interpolated piecewise linearly; interpolation uncertainty is ignored)."""

    thetas: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        thetas = np.asarray(self.thetas, dtype=float)
        responses = np.asarray(self.responses, dtype=float)
        if thetas.size < 2 or thetas.shape != responses.shape:
            raise ValueError("table needs >= 2 matching (theta, response) rows")
        if not np.all(np.diff(thetas) > 0):
            raise ValueError("table theta values must be strictly increasing")
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "responses", responses)

    @property
    def monotone(self) -> bool:
        d = np.diff(self.responses)
        return bool(np.all(d > 0) or np.all(d < 0))

    @classmethod
    def from_csv(cls, path) -> "ProjectionTable":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
        if len(header) < 2:
            raise ValueError(f"{path}: projection table needs two columns")
        thetas = np.array([float(r[0]) for r in rows])
        responses = np.array([float(r[1]) for r in rows])
        order = np.argsort(thetas)
        return cls(thetas[order], responses[order])


@dataclass
class ProjectionResult:
    grid: np.ndarray
    density: np.ndarray
    interval: tuple
    mapped: np.ndarray = field(repr=False, default=None)

    def write(self, out_dir, name="projection") -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_density_csv(out_dir / f"{name}_density.csv", self.grid, self.density)
        _write_json(out_dir / f"{name}_report.json",
                    {"interval95": list(self.interval)})


def project_response(theta_samples, table: ProjectionTable, n_grid=256,
                     level=0.95) -> ProjectionResult:
    """Map posterior draws through the table; KDE density plus equal-tailed
    interval of the mapped draws. Draws outside the table range are clamped
    with a warning."""
    if isinstance(theta_samples, CalibrationPosterior):
        theta_samples = theta_samples.theta_samples()
    theta_samples = np.asarray(theta_samples, dtype=float)
    if theta_samples.size == 0:
        raise ValueError("empty chain")
    outside = (theta_samples < table.thetas[0]) | (theta_samples > table.thetas[-1])
    if outside.any():
        warnings.warn(f"{int(outside.sum())} of {theta_samples.size} draws outside "
                      "the projection table range were clamped", stacklevel=2)
    clamped = np.clip(theta_samples, table.thetas[0], table.thetas[-1])
    mapped = np.interp(clamped, table.thetas, table.responses)
    lo, hi = np.quantile(mapped, [0.5 * (1 - level), 1 - 0.5 * (1 - level)])
    span = table.responses.max() - table.responses.min()
    pad = 0.05 * span if span > 0 else 1.0
    grid, density = posterior_density(
        mapped, bounds=(table.responses.min() - pad, table.responses.max() + pad),
        n_grid=n_grid)
    return ProjectionResult(grid, density, (float(lo), float(hi)), mapped)


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _write_density_csv(path, grid, density) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["grid", "density"])
        for g, d in zip(grid, density):
            writer.writerow([f"{g:.17g}", f"{d:.17g}"])


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
