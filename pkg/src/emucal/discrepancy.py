"""Kernel-convolution basis for the data-model discrepancy field.

The discrepancy is a weighted sum of kernels anchored at knot points on a
regular lon/lat/depth grid. Each kernel decays exponentially in great-circle
surface distance and, separably, in depth separation:

    K[i, j] = exp(-g(surface_i, knot_j) / phi_surface - |depth_i - depth_j| / phi_depth)

Both ranges are fixed inputs (never sampled). For calibration, the kernel
matrix is usually replaced by its leading singular-vector basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FieldVector, GridSpec

__all__ = [
    "EARTH_RADIUS_KM",
    "DEFAULT_PHI_SURFACE_KM",
    "DEFAULT_PHI_DEPTH_M",
    "geodesic_km",
    "KnotSet",
    "make_knot_grid",
    "build_kernel",
    "truncate_basis",
    "DiscrepancyBasis",
]

EARTH_RADIUS_KM = 6378.0

# Expert-judgment kernel bandwidths; fixed, never sampled.
DEFAULT_PHI_SURFACE_KM = 4800.0
DEFAULT_PHI_DEPTH_M = 3000.0


def geodesic_km(lon1, lat1, lon2, lat2) -> np.ndarray:
    """Great-circle distance in km between (lon, lat) points in degrees.

    Spherical law of cosines with the arccos argument clamped to [-1, 1] to
    absorb round-off at coincident or antipodal points. Broadcasts.
    """
    lat1r, lat2r = np.radians(lat1), np.radians(lat2)
    if np.any(np.abs(np.asarray(lat1)) > 90) or np.any(np.abs(np.asarray(lat2)) > 90):
        raise ValueError("latitudes must lie in [-90, 90]")
    dlon = np.radians(np.abs(np.asarray(lon1, dtype=float) - np.asarray(lon2, dtype=float)))
    cos_angle = np.sin(lat1r) * np.sin(lat2r) + np.cos(lat1r) * np.cos(lat2r) * np.cos(dlon)
    return EARTH_RADIUS_KM * np.arccos(np.clip(cos_angle, -1.0, 1.0))


@dataclass(frozen=True)
class KnotSet:
    """Knot coordinates (lon, lat, depth) plus the grid spacings that made them."""

    knots: np.ndarray  # (J_d, 3)
    lon_step: float
    lat_step: float
    depth_step: float

    def __post_init__(self):
        knots = np.atleast_2d(np.asarray(self.knots, dtype=float))
        if knots.shape[1] != 3:
            raise ValueError("knots must be (J_d, 3): lon, lat, depth")
        if knots.shape[0] < 1:
            raise ValueError("need at least one knot")
        object.__setattr__(self, "knots", knots)

    def __len__(self) -> int:
        return self.knots.shape[0]


def _axis_knots(lo: float, hi: float, step: float) -> np.ndarray:
    if step <= 0:
        raise ValueError("knot steps must be positive")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def make_knot_grid(spec: GridSpec, lon_step: float, lat_step: float,
                   depth_step: float) -> KnotSet:
    """Regular knot grid anchored at the domain's minimum corner.

    Each axis gets ``floor(extent / step) + 1`` knots, so a step larger than
    the extent leaves a single knot on that axis. Knot placement does not
    matter much as long as it is not too sparse, so only spacing is exposed.
    """
    lons = _axis_knots(spec.lons[0], spec.lons[-1], lon_step)
    lats = _axis_knots(spec.lats[0], spec.lats[-1], lat_step)
    depths = _axis_knots(spec.depths[0], spec.depths[-1], depth_step)
    dd, ll, oo = np.meshgrid(depths, lats, lons, indexing="ij")
    knots = np.column_stack([oo.ravel(), ll.ravel(), dd.ravel()])
    return KnotSet(knots, lon_step, lat_step, depth_step)


def build_kernel(locations, knots: KnotSet, phi_surface_km: float = DEFAULT_PHI_SURFACE_KM,
                 phi_depth_m: float = DEFAULT_PHI_DEPTH_M) -> np.ndarray:
    """Kernel matrix between locations and knots, shape (n, J_d).

    ``locations`` is an (n, 3) array of (lon, lat, depth) coordinates or a
    :class:`FieldVector`. Entries lie in (0, 1], with 1 exactly where a
    location coincides with a knot.
    """
    if phi_surface_km <= 0 or phi_depth_m <= 0:
        raise ValueError("kernel ranges must be positive")
    if isinstance(locations, FieldVector):
        locations = locations.coords()
    locations = np.atleast_2d(np.asarray(locations, dtype=float))
    knot_arr = knots.knots
    surf = geodesic_km(locations[:, 0:1], locations[:, 1:2],
                       knot_arr[None, :, 0], knot_arr[None, :, 1])
    depth = np.abs(locations[:, 2:3] - knot_arr[None, :, 2])
    return np.exp(-surf / phi_surface_km - depth / phi_depth_m)


def truncate_basis(kernel: np.ndarray, n_components=None, variance_fraction=None,
                   scale: str = "singular") -> np.ndarray:
    """Leading left-singular-vector basis of the kernel matrix.

    ``scale="singular"`` (default) multiplies each vector by its singular
    value, mirroring the sqrt-eigenvalue scaling of the emulator basis;
    ``scale="unit"`` keeps unit-norm columns. Truncate either to an explicit
    count or to the smallest count reaching ``variance_fraction`` of the
    total squared singular value mass.
    """
    if scale not in ("singular", "unit"):
        raise ValueError("scale must be 'singular' or 'unit'")
    kernel = np.atleast_2d(np.asarray(kernel, dtype=float))
    u_mat, svals, _ = np.linalg.svd(kernel, full_matrices=False)
    tol = max(kernel.shape) * np.finfo(float).eps * svals[0]
    rank = int(np.sum(svals > tol))
    if n_components is not None and variance_fraction is not None:
        raise ValueError("give n_components or variance_fraction, not both")
    if n_components is None:
        fraction = 0.95 if variance_fraction is None else float(variance_fraction)
        if not 0 < fraction <= 1:
            raise ValueError("variance_fraction must be in (0, 1]")
        cum = np.cumsum(svals[:rank] ** 2) / np.sum(svals[:rank] ** 2)
        n_components = int(np.searchsorted(cum, fraction - 1e-12) + 1)
    n_components = int(n_components)
    if not 1 <= n_components <= rank:
        raise ValueError(f"n_components={n_components} outside 1..rank={rank}")
    basis = u_mat[:, :n_components]
    if scale == "singular":
        basis = basis * svals[:n_components]
    return basis


@dataclass(frozen=True)
class DiscrepancyBasis:
    """Knots, fixed ranges, full kernel matrix, and its truncation."""

    knots: KnotSet
    phi_surface_km: float
    phi_depth_m: float
    kernel: np.ndarray        # (n, J_d)
    components: np.ndarray    # (n, J_d_pc)

    def __post_init__(self):
        if self.components.shape[0] != self.kernel.shape[0]:
            raise ValueError("components and kernel row counts differ")

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    @classmethod
    def build(cls, locations, spec: GridSpec, lon_step, lat_step, depth_step,
              phi_surface_km: float = DEFAULT_PHI_SURFACE_KM,
              phi_depth_m: float = DEFAULT_PHI_DEPTH_M,
              n_components=None, variance_fraction=None,
              scale: str = "singular") -> "DiscrepancyBasis":
        """Knot grid + kernel + truncation in one step."""
        knots = make_knot_grid(spec, lon_step, lat_step, depth_step)
        kernel = build_kernel(locations, knots, phi_surface_km, phi_depth_m)
        components = truncate_basis(kernel, n_components, variance_fraction, scale)
        return cls(knots, phi_surface_km, phi_depth_m, kernel, components)
