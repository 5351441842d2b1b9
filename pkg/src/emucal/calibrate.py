"""Reduced-dimensional Bayesian calibration.

The observation (centered by the ensemble column means) is projected onto the
concatenated emulator + discrepancy basis ``K = [K_y, K_dpc]`` via least
squares, ``z_reduced = (K.T K)^{-1} K.T z``. Its probability model is a small
Gaussian,

    z_reduced ~ N((mu_eta(theta), 0),
                  blockdiag(Sigma_eta(theta, kappa_y), kappa_d * I) + sigma2 * (K.T K)^{-1}),

so every likelihood evaluation costs O((J_y + J_dpc)^3) regardless of the
number of spatial locations. The noise term inflates the variance of
components with small eigenvalues, which automatically down-weights them.
Sampling is component-wise random-walk Metropolis-Hastings over theta and the
logs of sigma2, kappa_d and the emulator sills.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .discrepancy import DiscrepancyBasis
from .emulator import PcEmulator
from .errors import NumericalError
from .grid import FieldVector
from .mcmc import metropolis_accept
from .pca import PrincipalComponentBasis

__all__ = [
    "ReducedObservation",
    "reduce_observation",
    "PriorSpec",
    "log_prior",
    "invgamma_logpdf",
    "reduced_loglik",
    "McmcConfig",
    "CalibrationPosterior",
    "run_mcmc",
    "posterior_density",
    "Calibrator",
]

log = logging.getLogger(__name__)

_LOG2PI = float(np.log(2.0 * np.pi))

MAX_CONDITION = 1e8


@dataclass(frozen=True)
class ReducedObservation:
    """Projected observation plus the sigma2-free noise factor (K.T K)^{-1}."""

    z_reduced: np.ndarray
    ktk_inv: np.ndarray
    n_emulator: int
    n_discrepancy: int
    condition_number: float

    def __post_init__(self):
        j = self.n_emulator + self.n_discrepancy
        if self.z_reduced.shape != (j,) or self.ktk_inv.shape != (j, j):
            raise ValueError("block sizes inconsistent with vector/matrix shapes")


def reduce_observation(z, basis: PrincipalComponentBasis,
                       discrepancy: DiscrepancyBasis | None = None) -> ReducedObservation:
    """Project an observation onto the joint emulator + discrepancy basis.

    ``z`` (a FieldVector or raw vector on the ensemble support, canonical
    ordering) is centered by the basis column means first. The projection and
    ``(K.T K)^{-1}`` come from one SVD of ``K``; a rank-deficient ``K`` is an
    error that names the most collinear columns rather than a silent
    regularization.
    """
    if isinstance(z, FieldVector):
        z = z.values
    z = np.asarray(z, dtype=float)
    z_centered = z - basis.column_means_
    k_y = basis.components_
    if discrepancy is not None and discrepancy.n_components > 0:
        k_full = np.hstack([k_y, discrepancy.components])
        n_disc = discrepancy.n_components
    else:
        k_full = k_y
        n_disc = 0
    if z_centered.shape != (k_full.shape[0],):
        raise ValueError(
            f"observation length {z_centered.size} != basis rows {k_full.shape[0]}")
    u_mat, svals, vt = np.linalg.svd(k_full, full_matrices=False)
    condition = float(svals[0] / svals[-1]) if svals[-1] > 0 else np.inf
    if condition > MAX_CONDITION:
        # The null direction's largest entries identify the offending columns.
        null_dir = np.abs(vt[-1])
        worst = np.argsort(null_dir)[::-1][:3]
        names = [(f"emulator[{i}]" if i < k_y.shape[1] else
                  f"discrepancy[{i - k_y.shape[1]}]") for i in worst]
        raise NumericalError(
            f"joint basis is rank deficient (condition {condition:.3g}); "
            f"most collinear columns: {', '.join(names)}")
    z_reduced = vt.T @ ((u_mat.T @ z_centered) / svals)
    ktk_inv = (vt.T / svals**2) @ vt
    return ReducedObservation(z_reduced, ktk_inv, k_y.shape[1], n_disc, condition)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

def invgamma_logpdf(x, shape, scale):
    """log density of the inverse gamma: x^{-(shape+1)} exp(-scale/x), mode
    scale/(shape+1)."""
    if x <= 0:
        return -np.inf
    return shape * math.log(scale) - gammaln(shape) - (shape + 1.0) * math.log(x) - scale / x


@dataclass(frozen=True)
class PriorSpec:
    """Uniform bounds on theta plus inverse-gamma priors on the variances.

    A theta row with equal bounds fixes that parameter (it is not sampled).
    ``kappa_y_scales`` defaults to ``(kappa_y_shape + 1) * MLE`` per component
    so each prior mode sits at the emulation-stage estimate; pass explicit
    scales to override.
    """

    theta_bounds: np.ndarray          # (q, 2)
    kappa_d_shape: float = 2.0
    kappa_d_scale: float = 2.0
    sigma2_shape: float = 2.0
    sigma2_scale: float = 2.0
    kappa_y_shape: float = 5.0
    kappa_y_scales: np.ndarray | None = None

    def __post_init__(self):
        bounds = np.atleast_2d(np.asarray(self.theta_bounds, dtype=float))
        if bounds.shape[1] != 2 or np.any(bounds[:, 0] > bounds[:, 1]):
            raise ValueError("theta_bounds must be (q, 2) with lo <= hi")
        if not np.all(np.isfinite(bounds)):
            raise ValueError("theta bounds must be finite")
        object.__setattr__(self, "theta_bounds", bounds)
        for name in ("kappa_d_shape", "kappa_d_scale", "sigma2_shape",
                     "sigma2_scale", "kappa_y_shape"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.kappa_y_scales is not None:
            scales = np.atleast_1d(np.asarray(self.kappa_y_scales, dtype=float))
            if np.any(scales <= 0):
                raise ValueError("kappa_y_scales must be positive")
            object.__setattr__(self, "kappa_y_scales", scales)

    @property
    def free_mask(self) -> np.ndarray:
        return self.theta_bounds[:, 0] < self.theta_bounds[:, 1]

    def with_emulator_scales(self, emulator: PcEmulator) -> "PriorSpec":
        """Anchor each sill prior's mode at the emulation-stage MLE."""
        if self.kappa_y_scales is not None:
            return self
        mles = np.array([h.kappa for h in emulator.hyperparams_])
        return replace(self, kappa_y_scales=(self.kappa_y_shape + 1.0) * mles)


def log_prior(theta, sigma2, kappa_d, kappa_y, priors: PriorSpec) -> float:
    """Sum of the flat-theta, variance, and sill log priors (-inf allowed)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    bounds = priors.theta_bounds
    if np.any(theta < bounds[:, 0]) or np.any(theta > bounds[:, 1]):
        return -np.inf
    total = 0.0
    widths = bounds[:, 1] - bounds[:, 0]
    total -= float(np.sum(np.log(widths[widths > 0])))
    total += invgamma_logpdf(kappa_d, priors.kappa_d_shape, priors.kappa_d_scale)
    total += invgamma_logpdf(sigma2, priors.sigma2_shape, priors.sigma2_scale)
    kappa_y = np.atleast_1d(np.asarray(kappa_y, dtype=float))
    if priors.kappa_y_scales is None:
        if kappa_y.size:
            raise ValueError("kappa_y_scales unset; call with_emulator_scales first")
    else:
        if kappa_y.size != priors.kappa_y_scales.size:
            raise ValueError("kappa_y length != kappa_y_scales length")
        for value, scale in zip(kappa_y, priors.kappa_y_scales):
            total += invgamma_logpdf(value, priors.kappa_y_shape, scale)
    return total


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------

def _gaussian_logpdf(resid, cov):
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("reduced covariance is not positive definite") from exc
    white = np.linalg.solve(chol, resid)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (white @ white) - 0.5 * logdet - 0.5 * resid.size * _LOG2PI)


def _loglik_from_moments(zr: ReducedObservation, mu_eta, var_eta,
                         sigma2, kappa_d) -> float:
    j_y, j_d = zr.n_emulator, zr.n_discrepancy
    mean = np.concatenate([mu_eta, np.zeros(j_d)])
    cov = sigma2 * zr.ktk_inv.copy()
    idx = np.arange(j_y + j_d)
    cov[idx[:j_y], idx[:j_y]] += var_eta
    cov[idx[j_y:], idx[j_y:]] += kappa_d
    return _gaussian_logpdf(zr.z_reduced - mean, cov)


def reduced_loglik(zr: ReducedObservation, emulator: PcEmulator, theta,
                   sigma2: float, kappa_d: float, kappa_y=None) -> float:
    """Gaussian log density of the reduced observation at one state.

    ``kappa_y`` (per-component sills) defaults to the emulation-stage MLEs;
    ``kappa_d`` is ignored when the reduction carries no discrepancy block.
    """
    if sigma2 <= 0 or (zr.n_discrepancy > 0 and kappa_d <= 0):
        raise ValueError("sigma2 and kappa_d must be positive")
    if kappa_y is not None and np.any(np.asarray(kappa_y) <= 0):
        raise ValueError("kappa_y must be positive")
    mu_eta, var_eta = emulator.predict_scores(theta, sill_overrides=kappa_y)
    if mu_eta.size != zr.n_emulator:
        raise ValueError("emulator component count != reduction block size")
    return _loglik_from_moments(zr, mu_eta, var_eta, sigma2, kappa_d)


# ---------------------------------------------------------------------------
# Sampler
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McmcConfig:
    """Chain length, seed, proposal scales, and adaptation switches."""

    n_iter: int = 25000
    seed: int = 0
    burn_in_fraction: float = 0.2
    adapt: bool = True
    step_theta: float | np.ndarray = 0.05   # fraction of each prior range
    step_log_sigma2: float = 0.4
    step_log_kappa_d: float = 0.4
    step_log_kappa_y: float = 0.08
    prior_only: bool = False
    init_theta: np.ndarray | None = None
    init_sigma2: float | None = None
    init_kappa_d: float | None = None

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be positive")
        if not 0 <= self.burn_in_fraction < 1:
            raise ValueError("burn_in_fraction must be in [0, 1)")


@dataclass
class CalibrationPosterior:
    """MCMC output: full chain, log posterior, per-block acceptance."""

    param_names: tuple[str, ...]
    thetas: np.ndarray            # (N, q)
    sigma2: np.ndarray            # (N,)
    kappa_d: np.ndarray           # (N,)
    kappa_y: np.ndarray           # (N, J_y)
    log_post: np.ndarray          # (N,)
    accepted: dict[str, np.ndarray]
    seed: int
    n_burn: int
    theta_bounds: np.ndarray
    split_half: dict = field(default_factory=dict)

    @property
    def n_iter(self) -> int:
        return self.log_post.size

    @property
    def acceptance_rates(self) -> dict[str, float]:
        return {name: float(acc.mean()) for name, acc in self.accepted.items()}

    def theta_samples(self, name=None, burned=True) -> np.ndarray:
        """Post-burn-in draws of one named (or the only free) parameter."""
        if name is None:
            free = [i for i, n in enumerate(self.param_names)
                    if self.theta_bounds[i, 0] < self.theta_bounds[i, 1]]
            if len(free) != 1:
                raise ValueError("name required when != 1 free parameter")
            idx = free[0]
        else:
            idx = self.param_names.index(name)
        start = self.n_burn if burned else 0
        return self.thetas[start:, idx]

    def summarize(self, start=0, stop=None) -> dict:
        stop = self.n_iter if stop is None else stop
        out = {}
        for i, name in enumerate(self.param_names):
            part = self.thetas[start:stop, i]
            out[f"theta.{name}"] = {"mean": float(part.mean()), "sd": float(part.std())}
        for name, arr in (("sigma2", self.sigma2), ("kappa_d", self.kappa_d)):
            part = arr[start:stop]
            out[name] = {"mean": float(part.mean()), "sd": float(part.std())}
        return out

    def to_csv(self, path) -> None:
        """One row per iteration; floats written at full precision."""
        block_names = list(self.accepted)
        header = ([f"theta.{n}" for n in self.param_names]
                  + ["sigma2", "kappa_d"]
                  + [f"kappa_y.{j + 1}" for j in range(self.kappa_y.shape[1])]
                  + ["log_post"]
                  + [f"accepted.{b}" for b in block_names])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self.n_iter):
                row = ([f"{v:.17g}" for v in self.thetas[i]]
                       + [f"{self.sigma2[i]:.17g}", f"{self.kappa_d[i]:.17g}"]
                       + [f"{v:.17g}" for v in self.kappa_y[i]]
                       + [f"{self.log_post[i]:.17g}"]
                       + [str(int(self.accepted[b][i])) for b in block_names])
                writer.writerow(row)


class _BlockState:
    """Mutable chain state with the emulator prediction cache."""

    __slots__ = ("theta", "sigma2", "kappa_d", "kappa_y", "transform",
                 "mu_eta", "var_eta", "loglik", "logprior")

    def __init__(self, **kw):
        for name in self.__slots__:
            setattr(self, name, kw[name])

    def log_post(self):
        return self.loglik + self.logprior


def run_mcmc(zr: ReducedObservation | None, emulator: PcEmulator | None,
             priors: PriorSpec, config: McmcConfig) -> CalibrationPosterior:
    """Metropolis-Hastings over (theta, sigma2, kappa_d, kappa_y).

    Blocks: one Gaussian random-walk per free theta coordinate, one
    log-scale walk each for sigma2 and kappa_d, and one joint log-scale walk
    for all sills (log-scale moves carry the Jacobian correction). With
    ``config.adapt``, proposal scales adapt with diminishing steps during
    burn-in only, so the kept chain targets the exact posterior. Reproducible
    per seed; raises if a block is never accepted during warm-up.
    """
    if config.prior_only:
        if priors.kappa_y_scales is None and emulator is None:
            priors = replace(priors, kappa_y_scales=np.empty(0))
    else:
        if zr is None or emulator is None:
            raise ValueError("zr and emulator are required unless prior_only")
    if emulator is not None:
        priors = priors.with_emulator_scales(emulator)
        param_names = emulator.design_.param_names
    else:
        param_names = tuple(f"theta{i+1}" for i in range(priors.theta_bounds.shape[0]))
    n_kappa_y = 0 if priors.kappa_y_scales is None else priors.kappa_y_scales.size

    bounds = priors.theta_bounds
    q = bounds.shape[0]
    free = np.nonzero(priors.free_mask)[0]
    rng = np.random.default_rng(config.seed)

    theta0 = (np.asarray(config.init_theta, dtype=float) if config.init_theta is not None
              else bounds.mean(axis=1))
    sigma2_0 = (config.init_sigma2 if config.init_sigma2 is not None
                else priors.sigma2_scale / (priors.sigma2_shape + 1.0))
    kappa_d0 = (config.init_kappa_d if config.init_kappa_d is not None
                else priors.kappa_d_scale / (priors.kappa_d_shape + 1.0))
    kappa_y0 = (np.array([h.kappa for h in emulator.hyperparams_])
                if emulator is not None and n_kappa_y
                else priors.kappa_y_scales / (priors.kappa_y_shape + 1.0))

    # Initial state
    sigma2_init, kappa_d_init = float(sigma2_0), float(kappa_d0)
    kappa_y_init = np.asarray(kappa_y0, dtype=float).copy()
    if config.prior_only:
        t0, mu0, var0, ll0 = None, None, None, 0.0
    else:
        t0 = emulator.score_transform(theta0)
        mu0, var0 = emulator.mean_var_from_transform(t0, kappa_y_init)
        ll0 = _loglik_from_moments(zr, mu0, var0, sigma2_init, kappa_d_init)
    lp0 = log_prior(theta0, sigma2_init, kappa_d_init, kappa_y_init, priors)
    state = _BlockState(theta=theta0.copy(), sigma2=sigma2_init, kappa_d=kappa_d_init,
                        kappa_y=kappa_y_init, transform=t0,
                        mu_eta=mu0, var_eta=var0, loglik=ll0, logprior=lp0)
    if not np.isfinite(state.log_post()):
        raise ValueError("initial state has non-finite log posterior")

    blocks = [f"theta.{param_names[i]}" for i in free] + ["sigma2", "kappa_d"]
    if n_kappa_y:
        blocks.append("kappa_y")
    steps = {}
    step_theta = np.broadcast_to(np.asarray(config.step_theta, dtype=float), (q,)).copy()
    for i in free:
        steps[f"theta.{param_names[i]}"] = step_theta[i] * (bounds[i, 1] - bounds[i, 0])
    steps["sigma2"] = config.step_log_sigma2
    steps["kappa_d"] = config.step_log_kappa_d
    steps["kappa_y"] = config.step_log_kappa_y

    n_iter = config.n_iter
    n_burn = int(config.burn_in_fraction * n_iter)
    out_thetas = np.empty((n_iter, q))
    out_sigma2 = np.empty(n_iter)
    out_kappa_d = np.empty(n_iter)
    out_kappa_y = np.empty((n_iter, n_kappa_y))
    out_logpost = np.empty(n_iter)
    accepted = {b: np.zeros(n_iter, dtype=bool) for b in blocks}

    adapt_window = 50
    window_acc = {b: 0 for b in blocks}
    adapt_batch = 0

    def try_update(block):
        nonlocal state
        if block.startswith("theta."):
            i = param_names.index(block[len("theta."):])
            theta_new = state.theta.copy()
            theta_new[i] += steps[block] * rng.normal()
            lp_new = log_prior(theta_new, state.sigma2, state.kappa_d, state.kappa_y, priors)
            if not np.isfinite(lp_new):
                rng.uniform()  # keep draw count fixed for reproducibility
                return False
            if config.prior_only:
                t_new, mu_new, var_new, ll_new = None, None, None, 0.0
            else:
                t_new = emulator.score_transform(theta_new)
                mu_new, var_new = emulator.mean_var_from_transform(t_new, state.kappa_y)
                ll_new = _loglik_from_moments(zr, mu_new, var_new, state.sigma2, state.kappa_d)
            if metropolis_accept(rng, (ll_new + lp_new) - state.log_post()):
                state.theta, state.transform = theta_new, t_new
                state.mu_eta, state.var_eta = mu_new, var_new
                state.loglik, state.logprior = ll_new, lp_new
                return True
            return False
        if block in ("sigma2", "kappa_d"):
            old = getattr(state, block)
            new = old * np.exp(steps[block] * rng.normal())
            sigma2_new = new if block == "sigma2" else state.sigma2
            kappa_d_new = new if block == "kappa_d" else state.kappa_d
            lp_new = log_prior(state.theta, sigma2_new, kappa_d_new, state.kappa_y, priors)
            ll_new = (0.0 if config.prior_only else
                      _loglik_from_moments(zr, state.mu_eta, state.var_eta,
                                           sigma2_new, kappa_d_new))
            log_ratio = (ll_new + lp_new) - state.log_post() + np.log(new) - np.log(old)
            if metropolis_accept(rng, log_ratio):
                setattr(state, block, new)
                state.loglik, state.logprior = ll_new, lp_new
                return True
            return False
        # kappa_y: joint log-scale walk over all sills
        kappa_new = state.kappa_y * np.exp(steps[block] * rng.normal(size=n_kappa_y))
        lp_new = log_prior(state.theta, state.sigma2, state.kappa_d, kappa_new, priors)
        if config.prior_only:
            mu_new, var_new, ll_new = state.mu_eta, state.var_eta, 0.0
        else:
            mu_new, var_new = emulator.mean_var_from_transform(state.transform, kappa_new)
            ll_new = _loglik_from_moments(zr, mu_new, var_new, state.sigma2, state.kappa_d)
        jac = float(np.sum(np.log(kappa_new)) - np.sum(np.log(state.kappa_y)))
        if metropolis_accept(rng, (ll_new + lp_new) - state.log_post() + jac):
            state.kappa_y = kappa_new
            state.mu_eta, state.var_eta = mu_new, var_new
            state.loglik, state.logprior = ll_new, lp_new
            return True
        return False

    warmup_checked = False
    for it in range(n_iter):
        for block in blocks:
            ok = try_update(block)
            accepted[block][it] = ok
            window_acc[block] += ok
        out_thetas[it] = state.theta
        out_sigma2[it] = state.sigma2
        out_kappa_d[it] = state.kappa_d
        out_kappa_y[it] = state.kappa_y
        out_logpost[it] = state.log_post()

        if config.adapt and it < n_burn and (it + 1) % adapt_window == 0:
            adapt_batch += 1
            gamma = adapt_batch ** -0.6
            for block in blocks:
                rate = window_acc[block] / adapt_window
                steps[block] *= np.exp(gamma * (rate - 0.3))
                window_acc[block] = 0
        warmup_end = n_burn if n_burn >= 50 else min(n_iter, 200)
        if not warmup_checked and it + 1 == warmup_end and warmup_end >= 50:
            warmup_checked = True
            dead = [b for b in blocks if not accepted[b][:warmup_end].any()]
            if dead:
                raise NumericalError(
                    f"no accepted proposals for block(s) {dead} in the first "
                    f"{warmup_end} iterations; reduce the proposal scale(s)")

    posterior = CalibrationPosterior(
        param_names=param_names, thetas=out_thetas, sigma2=out_sigma2,
        kappa_d=out_kappa_d, kappa_y=out_kappa_y, log_post=out_logpost,
        accepted=accepted, seed=config.seed, n_burn=n_burn, theta_bounds=bounds)
    # Split-half agreement: summaries from the first 60% vs the whole chain.
    head = posterior.summarize(n_burn, n_burn + int(0.6 * (n_iter - n_burn)))
    full = posterior.summarize(n_burn, n_iter)
    posterior.split_half = {"first_part": head, "full": full}
    return posterior


# ---------------------------------------------------------------------------
# Density summaries
# ---------------------------------------------------------------------------

def silverman_bandwidth(samples: np.ndarray) -> float:
    """0.9 * min(sd, IQR/1.34) * m^(-1/5); zero for a constant sample."""
    m = samples.size
    sd = samples.std(ddof=1) if m > 1 else 0.0
    q75, q25 = np.percentile(samples, [75, 25])
    iqr = q75 - q25
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * m ** (-0.2) if spread > 0 else 0.0


def posterior_density(samples, bounds=None, n_grid=256, bandwidth=None):
    """Gaussian-kernel density on a fixed grid, normalized by trapezoid rule.

    ``samples`` may be a raw array or a :class:`CalibrationPosterior` (then
    the single free theta is used and the grid spans its prior range).
    Constant chains produce a unit spike at the nearest grid point.
    """
    if isinstance(samples, CalibrationPosterior):
        post = samples
        free = np.nonzero(post.theta_bounds[:, 0] < post.theta_bounds[:, 1])[0]
        if free.size != 1:
            raise ValueError("pass explicit samples when != 1 free parameter")
        if bounds is None:
            bounds = tuple(post.theta_bounds[free[0]])
        samples = post.theta_samples()
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty chain")
    if bounds is None:
        pad = 3.0 * (silverman_bandwidth(samples) or 1.0)
        bounds = (samples.min() - pad, samples.max() + pad)
    grid = np.linspace(bounds[0], bounds[1], n_grid)
    bw = silverman_bandwidth(samples) if bandwidth is None else float(bandwidth)
    # a bandwidth at float-noise level means a constant chain: place a spike
    if bw <= 1e-12 * max(1.0, float(np.abs(samples).max())):
        density = np.zeros(n_grid)
        density[np.argmin(np.abs(grid - samples[0]))] = 1.0
    else:
        z = (grid[:, None] - samples[None, :]) / bw
        density = np.exp(-0.5 * z**2).mean(axis=1) / (bw * np.sqrt(2.0 * np.pi))
    total = np.trapezoid(density, grid)
    if total <= 0:
        raise NumericalError("density normalization failed")
    return grid, density / total


class Calibrator(BaseEstimator):
    """Estimator-style front end: ``fit(z)`` projects the observation and runs
    the sampler; the chain lands in ``posterior_``.

    Parameters mirror :class:`McmcConfig`; ``priors`` defaults to flat theta
    over the emulator's design box with the standard inverse-gamma settings.
    """

    def __init__(self, emulator=None, discrepancy=None, priors=None,
                 n_iter=25000, seed=0, burn_in_fraction=0.2, adapt=True,
                 step_theta=0.05, step_log_sigma2=0.4, step_log_kappa_d=0.4,
                 step_log_kappa_y=0.08):
        self.emulator = emulator
        self.discrepancy = discrepancy
        self.priors = priors
        self.n_iter = n_iter
        self.seed = seed
        self.burn_in_fraction = burn_in_fraction
        self.adapt = adapt
        self.step_theta = step_theta
        self.step_log_sigma2 = step_log_sigma2
        self.step_log_kappa_d = step_log_kappa_d
        self.step_log_kappa_y = step_log_kappa_y

    def _priors(self) -> PriorSpec:
        if self.priors is not None:
            return self.priors
        bounds = np.column_stack([self.emulator.theta_lo_, self.emulator.theta_hi_])
        return PriorSpec(theta_bounds=bounds)

    def fit(self, z, y=None):
        if self.emulator is None:
            raise ValueError("an emulator is required")
        self.reduced_ = reduce_observation(z, self.emulator.basis_, self.discrepancy)
        config = McmcConfig(
            n_iter=self.n_iter, seed=self.seed,
            burn_in_fraction=self.burn_in_fraction, adapt=self.adapt,
            step_theta=self.step_theta, step_log_sigma2=self.step_log_sigma2,
            step_log_kappa_d=self.step_log_kappa_d,
            step_log_kappa_y=self.step_log_kappa_y)
        self.posterior_ = run_mcmc(self.reduced_, self.emulator, self._priors(), config)
        return self

    def posterior_density(self, n_grid=256, bandwidth=None):
        if not hasattr(self, "posterior_"):
            raise NotFittedError("calibrator is not fitted; call fit first")
        return posterior_density(self.posterior_, n_grid=n_grid, bandwidth=bandwidth)
