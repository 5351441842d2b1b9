"""Zero-mean Gaussian processes over parameter space, one per component.

Covariance between two parameter settings is squared-exponential with one
range per parameter dimension,

    cov = kappa * exp(-sum_i (theta_ik - theta_il)^2 / phi_i^2) + zeta * [k == l],

with partial sill ``kappa`` and nugget ``zeta`` on the diagonal. Fitting is
maximum likelihood over log-parameters with a space-filling multi-start;
prediction is the standard Gaussian conditional. Each fitted component caches
an eigendecomposition of its correlation matrix so the sill can be swapped at
O(p^2) cost per prediction (the calibration sampler re-draws sills every
iteration).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import FitError, NumericalError

__all__ = ["GpHyperparams", "sq_exp_cov", "fit_component", "ComponentGp",
           "log_likelihood_logparams"]

log = logging.getLogger(__name__)

_LOG2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GpHyperparams:
    """Partial sill, nugget, and per-dimension ranges of one component GP."""

    kappa: float
    zeta: float
    phis: np.ndarray

    def __post_init__(self):
        phis = np.atleast_1d(np.asarray(self.phis, dtype=float))
        object.__setattr__(self, "phis", phis)
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "zeta", float(self.zeta))
        if self.kappa < 0 or self.zeta < 0 or self.kappa + self.zeta <= 0:
            raise ValueError("need kappa >= 0, zeta >= 0, kappa + zeta > 0")
        if np.any(phis <= 0):
            raise ValueError("range parameters must be strictly positive")


def sq_exp_cov(theta_k, theta_l, hyper: GpHyperparams) -> float:
    """Scalar squared-exponential covariance between two parameter settings.

    The nugget enters only when the two settings are exactly equal.
    """
    theta_k = np.atleast_1d(np.asarray(theta_k, dtype=float))
    theta_l = np.atleast_1d(np.asarray(theta_l, dtype=float))
    if theta_k.shape != theta_l.shape or theta_k.size != hyper.phis.size:
        raise ValueError("theta dimensions must match each other and phis")
    d2 = np.sum((theta_k - theta_l) ** 2 / hyper.phis**2)
    value = hyper.kappa * np.exp(-d2)
    if np.array_equal(theta_k, theta_l):
        value += hyper.zeta
    return float(value)


def _scaled_sq_dists(thetas: np.ndarray) -> np.ndarray:
    """Per-dimension squared distance matrices, shape (q, p, p)."""
    diff = thetas[:, None, :] - thetas[None, :, :]
    return np.moveaxis(diff**2, 2, 0)


def correlation_matrix(thetas: np.ndarray, phis: np.ndarray) -> np.ndarray:
    """exp(-sum_i d_i^2 / phi_i^2) between all design pairs (unit diagonal)."""
    d2 = _scaled_sq_dists(np.atleast_2d(thetas))
    return np.exp(-np.tensordot(1.0 / phis**2, d2, axes=1))


def cross_correlation(thetas: np.ndarray, theta_star: np.ndarray, phis: np.ndarray) -> np.ndarray:
    """Correlation vector between one new setting and the design, shape (p,)."""
    d2 = (np.atleast_2d(thetas) - np.asarray(theta_star, dtype=float)) ** 2
    return np.exp(-(d2 / phis**2).sum(axis=1))


def log_likelihood_logparams(log_params, thetas, y, sq_dists=None):
    """Zero-mean Gaussian log-likelihood and its gradient in log-parameters.

    ``log_params`` is ``(log kappa, log zeta, log phi_1..log phi_q)``; the
    covariance is ``kappa * R(phis) + zeta * I``. Returns ``(loglik, grad)``.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    y = np.asarray(y, dtype=float)
    p, q = thetas.shape
    log_params = np.asarray(log_params, dtype=float)
    if log_params.size != 2 + q:
        raise ValueError(f"expected {2 + q} log-parameters, got {log_params.size}")
    kappa, zeta = np.exp(log_params[0]), np.exp(log_params[1])
    phis = np.exp(log_params[2:])
    if sq_dists is None:
        sq_dists = _scaled_sq_dists(thetas)
    r_matrix = np.exp(-np.tensordot(1.0 / phis**2, sq_dists, axes=1))
    cov = kappa * r_matrix
    cov[np.diag_indices(p)] += zeta
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return -np.inf, np.zeros(2 + q)
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y))
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    loglik = -0.5 * (y @ alpha) - 0.5 * logdet - 0.5 * p * _LOG2PI

    # d loglik / d psi = 0.5 * tr((alpha alpha^T - C^{-1}) dC/dpsi)
    cov_inv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(p)))
    weight = np.outer(alpha, alpha) - cov_inv
    grad = np.empty(2 + q)
    grad[0] = 0.5 * np.sum(weight * (kappa * r_matrix))  # dC/dlog kappa
    grad[1] = 0.5 * zeta * np.trace(weight)               # dC/dlog zeta
    kr_weighted = weight * (kappa * r_matrix)
    for i in range(q):
        # dC/dlog phi_i = kappa * R .* (2 d_i^2 / phi_i^2)
        grad[2 + i] = 0.5 * np.sum(kr_weighted * (2.0 * sq_dists[i] / phis[i] ** 2))
    return loglik, grad


def _rescale_design(thetas):
    """Map each dimension onto [0, 1]; constant dimensions collapse to 0."""
    lo = thetas.min(axis=0)
    span = thetas.max(axis=0) - lo
    safe_span = np.where(span > 0, span, 1.0)
    return (thetas - lo) / safe_span, safe_span


def fit_component(thetas, y, n_restarts=8, seed=0, maxiter=200) -> GpHyperparams:
    """Maximum-likelihood hyperparameters for one component's scores.

    Coordinates are rescaled to the unit box internally (range estimates in
    raw parameter units are returned). Multi-start L-BFGS-B from a seeded
    Latin hypercube over plausible log-ranges keeps the fit deterministic.

    Raises
    ------
    FitError
        If no restart converges; carries the best value found.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    y = np.asarray(y, dtype=float)
    p, q = thetas.shape
    if p < 3:
        raise ValueError("need at least three design points to fit")
    var_y = float(np.var(y, ddof=1))
    if var_y <= 0:
        raise ValueError("scores column has zero variance")

    scaled, span = _rescale_design(thetas)
    sq_dists = _scaled_sq_dists(scaled)

    def objective(lp):
        ll, grad = log_likelihood_logparams(lp, scaled, y, sq_dists)
        if not np.isfinite(ll):
            return 1e12, np.zeros_like(lp)
        return -ll, -grad

    # Ranges below the design's resolution are unidentifiable and only reward
    # interpolating near-coincident points, so floor them at half the median
    # nearest-neighbor spacing (scaled coordinates).
    pair_d = np.sqrt(sq_dists.sum(axis=0))
    np.fill_diagonal(pair_d, np.inf)
    nn = np.min(pair_d, axis=1)
    phi_floor = max(0.5 * float(np.median(nn[np.isfinite(nn)])), 1e-3)

    # Plausible start ranges (log space): sill near the sample variance,
    # nugget well below it, ranges spanning sub-cell to multi-domain.
    lows = np.concatenate([[np.log(0.05 * var_y), np.log(1e-6 * var_y)],
                           np.full(q, np.log(max(0.05, phi_floor)))])
    highs = np.concatenate([[np.log(4.0 * var_y), np.log(0.5 * var_y)],
                            np.full(q, np.log(4.0))])
    starts = lows + qmc.LatinHypercube(d=2 + q, seed=seed).random(n_restarts) * (highs - lows)
    bounds = [(np.log(var_y) - 20.0, np.log(var_y) + 10.0),
              (np.log(var_y) - 25.0, np.log(var_y) + 10.0)]
    bounds += [(np.log(phi_floor), np.log(1e3))] * q

    successes = []
    attempts = []
    for start in starts:
        res = minimize(objective, start, jac=True, method="L-BFGS-B",
                       bounds=bounds, options={"maxiter": maxiter})
        attempts.append((int(res.status), float(res.fun)))
        # L-BFGS-B returns its best iterate even on an "abnormal" line-search
        # exit (routine on the flat sill/range ridge of very smooth scores);
        # a restart only fails if the likelihood never became evaluable.
        if np.isfinite(res.fun) and res.fun < 1e11:
            successes.append(res)
    if not successes:
        fallback = min(attempts, key=lambda t: t[1])
        raise FitError(
            f"no restart converged in {n_restarts} attempts "
            f"(best objective {fallback[1]:.6g}); widen start ranges or raise maxiter",
            best_value=-fallback[1],
            diagnostics={"attempts": attempts},
        )
    # A vanishing range makes kappa*R numerically diagonal, so the sill/nugget
    # split sits on a flat likelihood ridge. Among restarts that tie at the
    # optimum, prefer the largest nugget: same likelihood, no spurious
    # correlation structure.
    best_fun = min(res.fun for res in successes)
    tied = [res for res in successes
            if res.fun <= best_fun + 1e-6 * max(1.0, abs(best_fun))]
    best = max(tied, key=lambda res: res.x[1])
    kappa, zeta = np.exp(best.x[0]), np.exp(best.x[1])
    phis = np.exp(best.x[2:]) * span  # back to raw parameter units
    return GpHyperparams(kappa, zeta, phis)


@dataclass
class ComponentGp:
    """One fitted component: design, scores, hyperparameters, and the
    correlation-matrix eigendecomposition used for cheap sill swaps."""

    thetas: np.ndarray
    y: np.ndarray
    hyper: GpHyperparams
    _eig: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        if self.y.shape != (self.thetas.shape[0],):
            raise ValueError("scores length must match design size")
        r_matrix = correlation_matrix(self.thetas, self.hyper.phis)
        lam, q_mat = np.linalg.eigh(r_matrix)
        lam = np.clip(lam, 0.0, None)  # round-off guard; R is PSD
        self._eig = (lam, q_mat, q_mat.T @ self.y)

    def score_transform(self, theta_star) -> np.ndarray:
        """Correlation vector to the design, rotated into the eigenbasis."""
        lam, q_mat, _ = self._eig
        r_star = cross_correlation(self.thetas, theta_star, self.hyper.phis)
        return q_mat.T @ r_star

    def mean_var_from_transform(self, t, sill=None) -> tuple[float, float]:
        """Predictive mean/variance from a cached :meth:`score_transform`."""
        lam, _, u = self._eig
        kappa = self.hyper.kappa if sill is None else float(sill)
        denom = kappa * lam + self.hyper.zeta
        if np.any(denom <= 0):
            raise NumericalError("singular covariance; increase the nugget")
        mu = kappa * np.sum(t * u / denom)
        var = (kappa + self.hyper.zeta) - kappa**2 * np.sum(t**2 / denom)
        if var < 0:
            log.debug("clamping negative predictive variance %.3e to 0", var)
            var = 0.0
        return float(mu), float(var)

    def predict(self, theta_star, sill=None) -> tuple[float, float]:
        """Predictive mean and variance at one parameter setting.

        With ``sill`` given, the partial sill is replaced (nugget held at its
        fitted value) using the cached eigendecomposition.
        """
        return self.mean_var_from_transform(self.score_transform(theta_star), sill)
