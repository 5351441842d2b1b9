"""Shared synthetic data builders and fixtures.

The desk-scale benchmark mimics the application's shape: a masked 20 x 20 x 5
lon/lat/depth grid (~40% of cells masked), a 50-run ensemble over a scalar
parameter in [0.05, 0.55], a synthetic simulator whose output varies smoothly
with the parameter through a handful of spatial patterns with decaying
amplitudes, and an observation equal to the truth run plus a smooth
systematic mismatch plus iid noise.
"""

import numpy as np
import pytest

from emucal.emulator import EnsembleDesign
from emucal.grid import FieldEnsemble, GridField, GridSpec

BENCH_TRUTH = 0.2
BENCH_BOUNDS = (0.05, 0.55)
BENCH_NOISE_SD = 0.15


def benchmark_spec(n_lon=20, n_lat=20, n_depth=5):
    lons = np.linspace(0.0, 342.0, n_lon)
    lats = np.linspace(-57.0, 57.0, n_lat)
    depths = np.array([50.0, 150.0, 300.0, 600.0, 1000.0])[:n_depth]
    thickness = np.gradient(depths)
    vol = (np.cos(np.radians(lats))[None, :, None]
           * thickness[:, None, None]
           * np.ones((1, 1, n_lon)))
    return GridSpec(lons, lats, depths, vol)


def benchmark_mask(spec, missing=0.4, seed=1234):
    rng = np.random.default_rng(seed)
    mask = rng.uniform(size=spec.shape) > missing
    mask[0, 0, 0] = True  # keep the domain nonempty for any seed
    return mask


def _patterns(spec):
    lon = np.radians(spec.lons)[None, None, :]
    lat = np.radians(spec.lats)[None, :, None]
    dep = spec.depths[:, None, None] / spec.depths[-1]
    ones = np.ones(spec.shape)
    pats = [
        np.cos(lat) * np.exp(-2.0 * dep) * ones,
        np.sin(lon) * np.cos(2.0 * lat) * ones,
        # lon-independent mid-depth bump: survives both aggregations with a
        # vertical shape the monotone depth kernels cannot span
        (0.6 + 0.4 * np.cos(lat)) * np.sin(np.pi * dep) * ones,
        np.sin(2.0 * lat) * np.exp(-dep) * ones,
        np.cos(lon + 2.0 * lat) * (1.0 - dep) * ones,
        np.sin(3.0 * lon) * np.sin(lat) * dep * ones,
    ]
    return [p / np.sqrt(np.mean(p**2)) for p in pats]


def _coefficients(theta):
    # Chebyshev-style shapes on u in [-1, 1]: near-orthogonal over the design,
    # so the ensemble spectrum decays gradually instead of collapsing to rank 1.
    u = (np.asarray(theta, dtype=float) - 0.3) / 0.25
    return 3.0 * np.stack([
        1.6 * u,
        1.3 * (2.0 * u**2 - 1.0),
        1.0 * (4.0 * u**3 - 3.0 * u),
        0.75 * np.sin(4.0 * u),
        0.55 * np.cos(6.0 * u),
        0.4 * (8.0 * u**4 - 8.0 * u**2 + 1.0),
    ])


def simulator_field(spec, mask, theta):
    """Synthetic simulator output at one parameter value."""
    background = 15.0 * np.cos(np.radians(spec.lats))[None, :, None] \
        * np.exp(-spec.depths[:, None, None] / 800.0) * np.ones(spec.shape)
    values = background.copy()
    for coeff, pattern in zip(_coefficients(theta), _patterns(spec)):
        values = values + float(coeff) * pattern
    return GridField(spec, np.where(mask, values, np.nan), mask)


def discrepancy_pattern(spec):
    lat = np.radians(spec.lats)[None, :, None]
    dep = spec.depths[:, None, None]
    return 0.4 * np.cos(lat) * np.exp(-dep / 900.0) * np.ones(spec.shape)


def benchmark_ensemble(spec=None, mask=None, p=50):
    """p-run ensemble over theta in [0.06, 0.55] (0.01 spacing by default)."""
    spec = spec if spec is not None else benchmark_spec()
    mask = mask if mask is not None else benchmark_mask(spec)
    thetas = np.round(np.linspace(0.06, 0.55, p), 10)
    fields = tuple(simulator_field(spec, mask, t) for t in thetas)
    return FieldEnsemble(("kbg",), thetas[:, None], fields)


def benchmark_observation(ensemble, noise_seed=0, noise_sd=BENCH_NOISE_SD,
                          truth=BENCH_TRUTH):
    """Truth run + smooth systematic mismatch + iid noise."""
    truth_field = ensemble.run_at([truth])
    spec, mask = truth_field.spec, truth_field.mask
    rng = np.random.default_rng(noise_seed)
    noise = rng.normal(scale=noise_sd, size=spec.shape)
    values = truth_field.values + discrepancy_pattern(spec) + noise
    return GridField(spec, np.where(mask, values, np.nan), mask)


def make_gp_scores(thetas, kappa, zeta, phi, seed):
    """Draw one scores column from the squared-exponential GP."""
    thetas = np.atleast_2d(thetas)
    d2 = ((thetas[:, None, :] - thetas[None, :, :]) ** 2).sum(axis=2)
    cov = kappa * np.exp(-d2 / phi**2) + zeta * np.eye(thetas.shape[0])
    rng = np.random.default_rng(seed)
    return rng.multivariate_normal(np.zeros(thetas.shape[0]), cov)


def synthetic_pc_ensemble(p=60, n=300, n_modes=8, kappa=1.0, zeta=0.01,
                          phi=0.25, seed=0, param_names=("kbg",)):
    """Ensemble whose rows are exactly a sum of orthogonal spatial modes with
    GP-distributed coefficients (a well-specified case for the emulator)."""
    rng = np.random.default_rng(seed)
    thetas = np.sort(rng.uniform(0.0, 1.0, size=p))[:, None]
    modes = np.linalg.qr(rng.normal(size=(n, n_modes)))[0]
    amplitudes = 3.0 * 0.7 ** np.arange(n_modes)
    weights = np.stack([
        make_gp_scores(thetas, kappa, zeta, phi, seed=seed + 1 + j)
        for j in range(n_modes)
    ])  # (n_modes, p)
    m_raw = (amplitudes[:, None] * weights).T @ modes.T + 10.0
    design = EnsembleDesign.from_matrix(thetas, m_raw, param_names)
    return design


@pytest.fixture(scope="session")
def bench_spec():
    return benchmark_spec()


@pytest.fixture(scope="session")
def bench_mask(bench_spec):
    return benchmark_mask(bench_spec)


@pytest.fixture(scope="session")
def bench_ensemble(bench_spec, bench_mask):
    return benchmark_ensemble(bench_spec, bench_mask)


@pytest.fixture(scope="session")
def bench_observation(bench_ensemble):
    return benchmark_observation(bench_ensemble)
