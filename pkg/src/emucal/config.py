"""Run configuration: a plain-text key-value file.

Format: one ``key = value`` per line, ``#`` starts a comment, blank lines
ignored. Keys are dotted paths (``mcmc.n_iter``); values are scalars, comma
lists, or ``|``-separated groups of comma lists (for lists of parameter
vectors). The full schema is documented in the README; every command
validates the whole file before any compute so a bad key never leaves
partial outputs behind.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibrate import McmcConfig, PriorSpec
from .discrepancy import DEFAULT_PHI_DEPTH_M, DEFAULT_PHI_SURFACE_KM
from .errors import ConfigError
from .experiments import LevelSettings

__all__ = ["parse_kv_file", "RunConfig"]


def parse_kv_file(path) -> dict[str, str]:
    """Flat dict of raw string values; later duplicates override earlier."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def _to_float(key, value):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def _to_int(key, value):
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _to_bool(key, value):
    lowered = value.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _to_floats(key, value):
    return [_to_float(key, part) for part in value.split(",") if part.strip()]


@dataclass
class RunConfig:
    """Validated settings for one run; built from a parsed key-value file."""

    config_dir: Path
    ensemble_path: Path | None = None
    observation_path: Path | None = None
    output_dir: Path = Path("out")
    emulator_path: Path | None = None

    emulator_n_components: int | None = None
    emulator_variance_fraction: float | None = None
    emulator_n_restarts: int = 8
    emulator_seed: int = 0

    knot_steps: tuple = (90.0, 45.0, 500.0)
    phi_surface_km: float = DEFAULT_PHI_SURFACE_KM
    phi_depth_m: float = DEFAULT_PHI_DEPTH_M
    disc_components: int | None = None
    disc_fraction: float | None = None
    disc_scale: str = "singular"

    theta_priors: dict = field(default_factory=dict)  # name -> (lo, hi)
    kappa_d_shape: float = 2.0
    kappa_d_scale: float = 2.0
    sigma2_shape: float = 2.0
    sigma2_scale: float = 2.0
    kappa_y_shape: float = 5.0

    mcmc_n_iter: int = 25000
    mcmc_seed: int = 0
    mcmc_burn_in: float = 0.2
    mcmc_adapt: bool = True
    step_theta: float = 0.05
    step_log_sigma2: float = 0.4
    step_log_kappa_d: float = 0.4
    step_log_kappa_y: float = 0.08

    study_kind: str | None = None
    study_levels: tuple = ("3d", "2d", "1d")
    study_prior_scales: tuple = ((2.0, 2.0), (2.0, 100.0), (100.0, 2.0), (100.0, 100.0))
    study_overrides: dict = field(default_factory=dict)  # level -> {key: value}
    pseudo_truth: np.ndarray | None = None
    pseudo_residual_sources: tuple = ()
    subsample_k: int | None = None
    subsample_repeats: int = 10
    subsample_seeds: tuple | None = None

    cv_holdout_fraction: float = 0.1
    cv_rounds: int = 5
    cv_seed: int = 0

    project_chain: Path | None = None
    project_table: Path | None = None
    project_parameter: str | None = None
    project_burn_in: float = 0.2

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        raw = parse_kv_file(path)
        cfg = cls(config_dir=Path(path).parent.resolve())
        consumed = set()

        def take(key, default=None):
            consumed.add(key)
            return raw.get(key, default)

        def take_path(key):
            value = take(key)
            if value is None:
                return None
            p = Path(value)
            return p if p.is_absolute() else cfg.config_dir / p

        cfg.ensemble_path = take_path("ensemble")
        cfg.observation_path = take_path("observation")
        out = take_path("output")
        if out is not None:
            cfg.output_dir = out
        cfg.emulator_path = take_path("emulator.path")

        if (v := take("emulator.n_components")) is not None:
            cfg.emulator_n_components = _to_int("emulator.n_components", v)
        if (v := take("emulator.variance_fraction")) is not None:
            cfg.emulator_variance_fraction = _to_float("emulator.variance_fraction", v)
        if (v := take("emulator.n_restarts")) is not None:
            cfg.emulator_n_restarts = _to_int("emulator.n_restarts", v)
        if (v := take("emulator.seed")) is not None:
            cfg.emulator_seed = _to_int("emulator.seed", v)

        steps = list(cfg.knot_steps)
        for i, name in enumerate(("lon_step", "lat_step", "depth_step")):
            if (v := take(f"discrepancy.{name}")) is not None:
                steps[i] = _to_float(f"discrepancy.{name}", v)
        cfg.knot_steps = tuple(steps)
        if (v := take("discrepancy.phi_surface_km")) is not None:
            cfg.phi_surface_km = _to_float("discrepancy.phi_surface_km", v)
        if (v := take("discrepancy.phi_depth_m")) is not None:
            cfg.phi_depth_m = _to_float("discrepancy.phi_depth_m", v)
        if (v := take("discrepancy.n_components")) is not None:
            cfg.disc_components = _to_int("discrepancy.n_components", v)
        if (v := take("discrepancy.variance_fraction")) is not None:
            cfg.disc_fraction = _to_float("discrepancy.variance_fraction", v)
        if (v := take("discrepancy.scale")) is not None:
            if v not in ("singular", "unit"):
                raise ConfigError("discrepancy.scale: must be 'singular' or 'unit'")
            cfg.disc_scale = v

        for key, value in raw.items():
            if key.startswith("prior.theta."):
                consumed.add(key)
                name = key[len("prior.theta."):]
                parts = _to_floats(key, value)
                if len(parts) == 1:
                    cfg.theta_priors[name] = (parts[0], parts[0])
                elif len(parts) == 2:
                    cfg.theta_priors[name] = (parts[0], parts[1])
                else:
                    raise ConfigError(f"{key}: expected one value (fixed) or 'lo, hi'")
        for attr, key in (("kappa_d_shape", "prior.kappa_d.shape"),
                          ("kappa_d_scale", "prior.kappa_d.scale"),
                          ("sigma2_shape", "prior.sigma2.shape"),
                          ("sigma2_scale", "prior.sigma2.scale"),
                          ("kappa_y_shape", "prior.kappa_y.shape")):
            if (v := take(key)) is not None:
                setattr(cfg, attr, _to_float(key, v))

        if (v := take("mcmc.n_iter")) is not None:
            cfg.mcmc_n_iter = _to_int("mcmc.n_iter", v)
        if (v := take("mcmc.seed")) is not None:
            cfg.mcmc_seed = _to_int("mcmc.seed", v)
        if (v := take("mcmc.burn_in")) is not None:
            cfg.mcmc_burn_in = _to_float("mcmc.burn_in", v)
        if (v := take("mcmc.adapt")) is not None:
            cfg.mcmc_adapt = _to_bool("mcmc.adapt", v)
        for attr, key in (("step_theta", "mcmc.step.theta"),
                          ("step_log_sigma2", "mcmc.step.log_sigma2"),
                          ("step_log_kappa_d", "mcmc.step.log_kappa_d"),
                          ("step_log_kappa_y", "mcmc.step.log_kappa_y")):
            if (v := take(key)) is not None:
                setattr(cfg, attr, _to_float(key, v))

        if (v := take("study.kind")) is not None:
            cfg.study_kind = v
        if (v := take("study.levels")) is not None:
            cfg.study_levels = tuple(part.strip() for part in v.split(",") if part.strip())
        if (v := take("study.prior_scales")) is not None:
            pairs = []
            for part in v.split(","):
                part = part.strip()
                if not part:
                    continue
                bits = part.split(":")
                if len(bits) != 2:
                    raise ConfigError("study.prior_scales: expected 'b_nu:b_z' pairs")
                pairs.append((_to_float("study.prior_scales", bits[0]),
                              _to_float("study.prior_scales", bits[1])))
            cfg.study_prior_scales = tuple(pairs)
        if (v := take("study.pseudo.truth")) is not None:
            cfg.pseudo_truth = np.asarray(_to_floats("study.pseudo.truth", v))
        if (v := take("study.pseudo.residual_sources")) is not None:
            groups = [g for g in (s.strip() for s in v.split("|")) if g]
            cfg.pseudo_residual_sources = tuple(
                np.asarray(_to_floats("study.pseudo.residual_sources", g)) for g in groups)
        if (v := take("study.subsample.k")) is not None:
            cfg.subsample_k = _to_int("study.subsample.k", v)
        if (v := take("study.subsample.repeats")) is not None:
            cfg.subsample_repeats = _to_int("study.subsample.repeats", v)
        if (v := take("study.subsample.seeds")) is not None:
            cfg.subsample_seeds = tuple(
                _to_int("study.subsample.seeds", s) for s in v.split(",") if s.strip())
        # Per-level overrides: study.<level>.<setting>
        for key, value in raw.items():
            parts = key.split(".")
            if len(parts) == 3 and parts[0] == "study" and parts[1] in ("3d", "2d", "1d"):
                consumed.add(key)
                cfg.study_overrides.setdefault(parts[1], {})[parts[2]] = value

        if (v := take("cv.holdout_fraction")) is not None:
            cfg.cv_holdout_fraction = _to_float("cv.holdout_fraction", v)
        if (v := take("cv.rounds")) is not None:
            cfg.cv_rounds = _to_int("cv.rounds", v)
        if (v := take("cv.seed")) is not None:
            cfg.cv_seed = _to_int("cv.seed", v)

        cfg.project_chain = take_path("project.chain")
        cfg.project_table = take_path("project.table")
        if (v := take("project.parameter")) is not None:
            cfg.project_parameter = v
        if (v := take("project.burn_in")) is not None:
            cfg.project_burn_in = _to_float("project.burn_in", v)

        unknown = sorted(set(raw) - consumed)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        cfg._validate_ranges()
        return cfg

    def _validate_ranges(self):
        if self.emulator_n_components is not None and self.emulator_n_components < 1:
            raise ConfigError("emulator.n_components: must be >= 1")
        if self.emulator_variance_fraction is not None and not (
                0 < self.emulator_variance_fraction <= 1):
            raise ConfigError("emulator.variance_fraction: must be in (0, 1]")
        if self.emulator_n_restarts < 1:
            raise ConfigError("emulator.n_restarts: must be >= 1")
        if any(s <= 0 for s in self.knot_steps):
            raise ConfigError("discrepancy.*_step: steps must be positive")
        if self.phi_surface_km <= 0 or self.phi_depth_m <= 0:
            raise ConfigError("discrepancy.phi_*: ranges must be positive")
        if self.mcmc_n_iter < 1:
            raise ConfigError("mcmc.n_iter: must be >= 1")
        if not 0 <= self.mcmc_burn_in < 1:
            raise ConfigError("mcmc.burn_in: must be in [0, 1)")
        for name, value in (("prior.kappa_d.shape", self.kappa_d_shape),
                            ("prior.kappa_d.scale", self.kappa_d_scale),
                            ("prior.sigma2.shape", self.sigma2_shape),
                            ("prior.sigma2.scale", self.sigma2_scale),
                            ("prior.kappa_y.shape", self.kappa_y_shape)):
            if value <= 0:
                raise ConfigError(f"{name}: must be positive")
        for name, (lo, hi) in self.theta_priors.items():
            if lo > hi:
                raise ConfigError(f"prior.theta.{name}: lo must be <= hi")
        if not 0 < self.cv_holdout_fraction < 1:
            raise ConfigError("cv.holdout_fraction: must be in (0, 1)")
        if self.cv_rounds < 1:
            raise ConfigError("cv.rounds: must be >= 1")
        if self.study_kind is not None and self.study_kind not in ("aggregation", "subsample"):
            raise ConfigError(
                f"study.kind: unknown selector {self.study_kind!r}; "
                "valid selectors: aggregation, subsample")

    # -- builders ----------------------------------------------------------

    def require(self, *names):
        for name in names:
            if getattr(self, f"{name}_path", None) is None and getattr(self, name, None) is None:
                raise ConfigError(f"missing required config key: {name}")

    def require_paths(self, *attrs):
        for attr, key in attrs:
            value = getattr(self, attr)
            if value is None:
                raise ConfigError(f"missing required config key: {key}")
            if not Path(value).exists():
                raise ConfigError(f"{key}: path does not exist: {value}")

    def priors_for(self, param_names, kappa_d_scale=None, sigma2_scale=None) -> PriorSpec:
        """PriorSpec for the named parameters; unnamed parameters are an error."""
        bounds = []
        for name in param_names:
            if name not in self.theta_priors:
                raise ConfigError(f"prior.theta.{name}: no prior configured")
            bounds.append(self.theta_priors[name])
        return PriorSpec(
            theta_bounds=np.asarray(bounds, dtype=float),
            kappa_d_shape=self.kappa_d_shape,
            kappa_d_scale=self.kappa_d_scale if kappa_d_scale is None else kappa_d_scale,
            sigma2_shape=self.sigma2_shape,
            sigma2_scale=self.sigma2_scale if sigma2_scale is None else sigma2_scale,
            kappa_y_shape=self.kappa_y_shape,
        )

    def mcmc_config(self, seed=None) -> McmcConfig:
        return McmcConfig(
            n_iter=self.mcmc_n_iter,
            seed=self.mcmc_seed if seed is None else seed,
            burn_in_fraction=self.mcmc_burn_in,
            adapt=self.mcmc_adapt,
            step_theta=self.step_theta,
            step_log_sigma2=self.step_log_sigma2,
            step_log_kappa_d=self.step_log_kappa_d,
            step_log_kappa_y=self.step_log_kappa_y,
        )

    def level_settings(self, level=None) -> LevelSettings:
        """Base pipeline settings, with study.<level>.* overrides applied."""
        base = LevelSettings(
            n_components=self.emulator_n_components,
            variance_fraction=self.emulator_variance_fraction,
            n_restarts=self.emulator_n_restarts,
            emulator_seed=self.emulator_seed,
            knot_steps=self.knot_steps,
            phi_surface_km=self.phi_surface_km,
            phi_depth_m=self.phi_depth_m,
            disc_components=self.disc_components,
            disc_fraction=self.disc_fraction,
            disc_scale=self.disc_scale,
            mcmc=self.mcmc_config(),
        )
        overrides = self.study_overrides.get(level, {}) if level else {}
        updates = {}
        for key, value in overrides.items():
            full = f"study.{level}.{key}"
            if key == "n_components":
                updates["n_components"] = _to_int(full, value)
                updates["variance_fraction"] = None
            elif key == "variance_fraction":
                updates["variance_fraction"] = _to_float(full, value)
                updates["n_components"] = None
            elif key == "disc_components":
                updates["disc_components"] = _to_int(full, value)
            elif key == "disc_fraction":
                updates["disc_fraction"] = _to_float(full, value)
            elif key == "knot_steps":
                parts = _to_floats(full, value)
                if len(parts) != 3:
                    raise ConfigError(f"{full}: expected 'lon, lat, depth' steps")
                updates["knot_steps"] = tuple(parts)
            else:
                raise ConfigError(f"{full}: unknown per-level override")
        if updates:
            from dataclasses import replace
            base = replace(base, **updates)
        return base
