"""Principal-component Gaussian-process emulator.

Fit: build the scaled PC basis from the ensemble matrix, then fit one
zero-mean GP per retained component over parameter space (components are
uncorrelated by construction, so fits are independent and may run in
parallel). Predict: per-component Gaussian conditionals give a score-space
mean and a diagonal covariance at any untried parameter setting; the basis
maps scores back to a full field.
"""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .gp import ComponentGp, GpHyperparams, fit_component
from .grid import FieldEnsemble, vectorize
from .pca import PrincipalComponentBasis, center_columns

__all__ = ["EnsembleDesign", "PcEmulator"]

log = logging.getLogger(__name__)

SAVE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EnsembleDesign:
    """Design points plus the centered p x n output matrix and column means."""

    thetas: np.ndarray
    M: np.ndarray
    column_means: np.ndarray
    param_names: tuple[str, ...] = ()

    def __post_init__(self):
        thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "M", np.atleast_2d(np.asarray(self.M, dtype=float)))
        object.__setattr__(self, "column_means", np.asarray(self.column_means, dtype=float))
        if thetas.shape[0] < 2:
            raise ValueError("need at least two runs")
        if len(np.unique(thetas, axis=0)) != thetas.shape[0]:
            raise ValueError("design points must be distinct")
        if self.M.shape[0] != thetas.shape[0]:
            raise ValueError("one output row per design point required")
        scale = np.max(np.abs(self.M)) or 1.0
        if np.max(np.abs(self.M.sum(axis=0))) > 1e-10 * self.M.shape[0] * scale:
            raise ValueError("output matrix is not column-centered")
        if not self.param_names:
            object.__setattr__(
                self, "param_names",
                tuple(f"theta{i+1}" for i in range(thetas.shape[1])))

    @property
    def n_runs(self) -> int:
        return self.thetas.shape[0]

    @classmethod
    def from_matrix(cls, thetas, m_raw, param_names=()) -> "EnsembleDesign":
        """Center a raw p x n output matrix and record its column means."""
        m_centered, means = center_columns(m_raw)
        return cls(np.asarray(thetas, dtype=float), m_centered, means, tuple(param_names))

    @classmethod
    def from_fields(cls, ensemble: FieldEnsemble) -> "EnsembleDesign":
        """Vectorize a co-located field ensemble into the design matrix."""
        rows = np.stack([vectorize(f).values for f in ensemble.fields])
        return cls.from_matrix(ensemble.thetas, rows, ensemble.param_names)


class PcEmulator(BaseEstimator):
    """Per-component GP emulator on a scaled principal-component basis.

    Parameters
    ----------
    n_components, variance_fraction
        Basis truncation, passed to :class:`PrincipalComponentBasis`
        (default: 90% explained variance).
    n_restarts, seed
        Multi-start budget and seed for each component's likelihood
        optimization (component j uses ``seed + j`` so fits stay reproducible
        regardless of execution order).
    n_jobs : int, optional
        Thread count for fitting components in parallel. Results are
        independent of this value.
    """

    def __init__(self, n_components=None, variance_fraction=None,
                 n_restarts=8, seed=0, n_jobs=None):
        self.n_components = n_components
        self.variance_fraction = variance_fraction
        self.n_restarts = n_restarts
        self.seed = seed
        self.n_jobs = n_jobs

    # -- fitting -----------------------------------------------------------

    def fit(self, thetas, M_raw=None, param_names=()):
        """Fit basis and component GPs.

        Accepts either ``fit(EnsembleDesign)`` / ``fit(FieldEnsemble)`` or the
        estimator-style ``fit(thetas, M_raw)`` with raw (uncentered) outputs.
        """
        if isinstance(thetas, FieldEnsemble):
            design = EnsembleDesign.from_fields(thetas)
        elif isinstance(thetas, EnsembleDesign):
            design = thetas
        else:
            design = EnsembleDesign.from_matrix(thetas, M_raw, param_names)
        basis = PrincipalComponentBasis(self.n_components, self.variance_fraction)
        basis.fit(design.M + design.column_means)
        scores = basis.scores_

        def fit_one(j):
            return fit_component(design.thetas, scores[:, j],
                                 n_restarts=self.n_restarts, seed=self.seed + j)

        indices = range(basis.n_components_)
        if self.n_jobs and self.n_jobs > 1:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                hypers = list(pool.map(fit_one, indices))
        else:
            hypers = [fit_one(j) for j in indices]

        self._finalize(design, basis, hypers)
        return self

    @classmethod
    def from_parts(cls, design: EnsembleDesign, basis: PrincipalComponentBasis,
                   hypers: list[GpHyperparams], **params) -> "PcEmulator":
        """Assemble an emulator from prefitted pieces (loading, testing)."""
        est = cls(**params)
        est._finalize(design, basis, list(hypers))
        return est

    def _finalize(self, design, basis, hypers):
        if len(hypers) != basis.n_components_:
            raise ValueError("one hyperparameter set per component required")
        self.design_ = design
        self.basis_ = basis
        self.hyperparams_ = list(hypers)
        self.components_ = [
            ComponentGp(design.thetas, basis.scores_[:, j], hypers[j])
            for j in range(basis.n_components_)
        ]
        self.theta_lo_ = design.thetas.min(axis=0)
        self.theta_hi_ = design.thetas.max(axis=0)
        # Stacked per-component caches for vectorized prediction.
        self._eig_lam = np.stack([c._eig[0] for c in self.components_])
        self._eig_qt = np.stack([c._eig[1].T for c in self.components_])
        self._eig_u = np.stack([c._eig[2] for c in self.components_])
        self._kappa = np.array([h.kappa for h in hypers])
        self._zeta = np.array([h.zeta for h in hypers])
        self._inv_phi2 = np.stack([1.0 / h.phis**2 for h in hypers])

    def _check_fitted(self):
        if not hasattr(self, "components_"):
            raise NotFittedError("emulator is not fitted; call fit first")

    # -- prediction --------------------------------------------------------

    @property
    def n_components_(self) -> int:
        self._check_fitted()
        return self.basis_.n_components_

    def score_transform(self, theta) -> np.ndarray:
        """Eigenbasis-rotated correlation vectors, shape (J, p).

        This is the only theta-dependent part of prediction; the calibration
        sampler caches it so sill updates cost O(p^2) per component.
        """
        self._check_fitted()
        theta = np.asarray(theta, dtype=float)
        if np.any(theta < self.theta_lo_) or np.any(theta > self.theta_hi_):
            # fixed message: the warnings registry then de-duplicates repeats
            warnings.warn("theta outside the design bounding box; "
                          "prediction extrapolates", stacklevel=2)
        d2 = (self.design_.thetas - theta) ** 2  # (p, q)
        r_all = np.exp(-(d2[None, :, :] * self._inv_phi2[:, None, :]).sum(axis=2))
        return np.einsum("jab,jb->ja", self._eig_qt, r_all)

    def mean_var_from_transform(self, t, sill_overrides=None):
        """Per-component predictive means/variances from cached transforms."""
        self._check_fitted()
        kappa = self._kappa if sill_overrides is None else np.asarray(sill_overrides, dtype=float)
        denom = kappa[:, None] * self._eig_lam + self._zeta[:, None]
        mu = kappa * np.sum(t * self._eig_u / denom, axis=1)
        var = (kappa + self._zeta) - kappa**2 * np.sum(t**2 / denom, axis=1)
        neg = var < 0
        if np.any(neg):
            log.debug("clamping %d negative predictive variances to 0", int(neg.sum()))
            var = np.where(neg, 0.0, var)
        return mu, var

    def predict_scores(self, theta, sill_overrides=None):
        """Predictive score mean (J,) and diagonal variance (J,) at theta.

        ``sill_overrides`` replaces each component's partial sill (nuggets
        stay at their fitted values).
        """
        return self.mean_var_from_transform(self.score_transform(theta), sill_overrides)

    def predict(self, thetas) -> np.ndarray:
        """Reconstructed field-space predictions, one row per setting."""
        self._check_fitted()
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        means = np.stack([self.predict_scores(t)[0] for t in thetas])
        return self.basis_.reconstruct(means)

    # -- persistence -------------------------------------------------------

    def save(self, out_dir) -> None:
        """Write ``emulator.json`` plus ``arrays.npz`` into a directory."""
        self._check_fitted()
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format_version": SAVE_FORMAT_VERSION,
            "n_components": self.basis_.n_components_,
            "explained_fraction": self.basis_.explained_fraction_,
            "eigenvalues": self.basis_.eigenvalues_.tolist(),
            "param_names": list(self.design_.param_names),
            "hyperparams": [
                {"kappa": h.kappa, "zeta": h.zeta, "phis": h.phis.tolist()}
                for h in self.hyperparams_
            ],
            "settings": {
                "n_restarts": self.n_restarts,
                "seed": self.seed,
                "variance_fraction": self.variance_fraction,
                "n_components": self.n_components,
            },
        }
        with open(out_dir / "emulator.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        np.savez(
            out_dir / "arrays.npz",
            components=self.basis_.components_,
            column_means=self.basis_.column_means_,
            thetas=self.design_.thetas,
            M=self.design_.M,
        )

    @classmethod
    def load(cls, out_dir) -> "PcEmulator":
        out_dir = Path(out_dir)
        with open(out_dir / "emulator.json") as fh:
            manifest = json.load(fh)
        version = manifest.get("format_version")
        if version != SAVE_FORMAT_VERSION:
            raise ValueError(f"unsupported emulator format version: {version}")
        arrays = np.load(out_dir / "arrays.npz")
        design = EnsembleDesign(arrays["thetas"], arrays["M"], arrays["column_means"],
                                tuple(manifest["param_names"]))
        basis = PrincipalComponentBasis(n_components=manifest["n_components"])
        basis.fit(design.M + design.column_means)
        if not np.allclose(basis.components_, arrays["components"], atol=1e-8):
            raise ValueError("stored basis does not match stored ensemble matrix")
        hypers = [GpHyperparams(h["kappa"], h["zeta"], np.asarray(h["phis"]))
                  for h in manifest["hyperparams"]]
        settings = manifest.get("settings", {})
        return cls.from_parts(design, basis, hypers,
                              n_components=settings.get("n_components"),
                              variance_fraction=settings.get("variance_fraction"),
                              n_restarts=settings.get("n_restarts", 8),
                              seed=settings.get("seed", 0))
