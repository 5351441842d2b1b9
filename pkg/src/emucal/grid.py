"""Masked 3-D fields on a rectilinear lon/lat/depth grid.

A :class:`GridField` is the unit of both simulator output and observation:
a scalar per grid cell plus a boolean mask (True = valid, e.g. ocean).
Arrays are laid out ``(depth, lat, lon)`` so that C-order raveling of the
masked cells yields the canonical location ordering used by every matrix in
the pipeline: depth-major, then latitude, then longitude.

Aggregation to 2-D (zonal mean, longitude collapsed) and 1-D (vertical mean,
depth profile) is volume-weighted; aggregated fields carry aggregated volume
weights so further aggregation composes exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDomainError

__all__ = [
    "GridSpec",
    "GridField",
    "FieldVector",
    "FieldEnsemble",
    "vectorize",
    "devectorize",
    "zonal_mean",
    "vertical_mean",
    "global_mean",
    "random_subsample",
    "read_field_csv",
    "write_field_csv",
    "load_ensemble",
]


@dataclass(frozen=True)
class GridSpec:
    """Coordinates and per-cell volume weights of a rectilinear grid.

    Parameters
    ----------
    lons, lats, depths : 1-D arrays, strictly increasing
        Degrees east, degrees north, meters below surface.
    volumes : array, shape (n_depth, n_lat, n_lon)
        Per-cell water volume weights (any consistent units). Cells that are
        masked in every field may carry volume 0.
    """

    lons: np.ndarray
    lats: np.ndarray
    depths: np.ndarray
    volumes: np.ndarray

    def __post_init__(self):
        for name in ("lons", "lats", "depths"):
            axis = np.asarray(getattr(self, name), dtype=float)
            if axis.ndim != 1 or axis.size < 1:
                raise ValueError(f"{name} must be a 1-D array with at least one entry")
            if axis.size > 1 and not np.all(np.diff(axis) > 0):
                raise ValueError(f"{name} must be strictly increasing")
            object.__setattr__(self, name, axis)
        vol = np.asarray(self.volumes, dtype=float)
        if vol.shape != self.shape:
            raise ValueError(f"volumes shape {vol.shape} != grid shape {self.shape}")
        if not np.all(np.isfinite(vol)) or np.any(vol < 0):
            raise ValueError("volumes must be finite and non-negative")
        object.__setattr__(self, "volumes", vol)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.depths.size, self.lats.size, self.lons.size)

    @classmethod
    def uniform(cls, lons, lats, depths) -> "GridSpec":
        """Grid with unit volume weights (used when a file carries none)."""
        lons = np.asarray(lons, dtype=float)
        lats = np.asarray(lats, dtype=float)
        depths = np.asarray(depths, dtype=float)
        vol = np.ones((depths.size, lats.size, lons.size))
        return cls(lons, lats, depths, vol)


@dataclass(frozen=True)
class GridField:
    """Scalar field plus validity mask on a :class:`GridSpec`."""

    spec: GridSpec
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape != self.spec.shape or mask.shape != self.spec.shape:
            raise ValueError("values/mask shape must match the grid shape")
        if not np.all(np.isfinite(values[mask])):
            raise ValueError("values must be finite wherever mask is true")
        if np.any(self.spec.volumes[mask] <= 0):
            raise ValueError("volumes must be strictly positive where mask is true")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    def with_values(self, values) -> "GridField":
        """Same grid and mask, new values (handy for field arithmetic)."""
        return GridField(self.spec, values, self.mask)


@dataclass(frozen=True)
class FieldVector:
    """Unmasked field values in canonical (depth-major, lat, lon) order.

    ``locations`` holds one ``(lon_idx, lat_idx, depth_idx)`` row per entry.
    """

    values: np.ndarray
    locations: np.ndarray
    spec: GridSpec

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        locations = np.asarray(self.locations, dtype=int)
        if locations.ndim != 2 or locations.shape[1] != 3:
            raise ValueError("locations must have shape (n, 3)")
        if values.shape != (locations.shape[0],):
            raise ValueError("values and locations length mismatch")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "locations", locations)

    def __len__(self) -> int:
        return self.values.size

    def coords(self) -> np.ndarray:
        """Physical (lon, lat, depth) coordinates, shape (n, 3)."""
        lon_i, lat_i, dep_i = self.locations.T
        return np.column_stack(
            [self.spec.lons[lon_i], self.spec.lats[lat_i], self.spec.depths[dep_i]]
        )

    def take(self, index) -> "FieldVector":
        """Sub-vector at the given positions (used by subsampling studies)."""
        index = np.asarray(index, dtype=int)
        return FieldVector(self.values[index], self.locations[index], self.spec)


def vectorize(field: GridField) -> FieldVector:
    """Extract unmasked values in the canonical ordering.

    Raises
    ------
    EmptyDomainError
        If every cell is masked.
    """
    if not field.mask.any():
        raise EmptyDomainError("field has no unmasked cells")
    dep_i, lat_i, lon_i = np.nonzero(field.mask)  # C order == canonical order
    locations = np.column_stack([lon_i, lat_i, dep_i])
    return FieldVector(field.values[field.mask], locations, field.spec)


def devectorize(vec: FieldVector) -> GridField:
    """Inverse of :func:`vectorize`: scatter values back onto the grid.

    Cells absent from ``vec`` come back masked (values NaN).
    """
    values = np.full(vec.spec.shape, np.nan)
    mask = np.zeros(vec.spec.shape, dtype=bool)
    lon_i, lat_i, dep_i = vec.locations.T
    values[dep_i, lat_i, lon_i] = vec.values
    mask[dep_i, lat_i, lon_i] = True
    return GridField(vec.spec, values, mask)


def _collapsed_axis(axis: np.ndarray) -> np.ndarray:
    # Single representative coordinate for a collapsed axis: the domain midpoint.
    return np.array([0.5 * (axis[0] + axis[-1])])


def _weighted_collapse(field: GridField, axes: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    vol = np.where(field.mask, field.spec.volumes, 0.0)
    wsum = vol.sum(axis=axes)
    vsum = (vol * np.where(field.mask, field.values, 0.0)).sum(axis=axes)
    out_mask = wsum > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(out_mask, vsum / np.where(wsum > 0, wsum, 1.0), np.nan)
    return means, wsum, out_mask


def zonal_mean(field: GridField) -> GridField:
    """Volume-weighted mean over longitude; output is lat x depth (lon collapsed).

    Output cells with no unmasked contributor are masked. The collapsed
    longitude axis keeps a single midpoint coordinate, and output volumes are
    the summed contributing volumes, so downstream aggregation and projection
    see a consistent 3-D field with a degenerate axis.
    """
    means, wsum, out_mask = _weighted_collapse(field, axes=(2,))
    spec = GridSpec(
        _collapsed_axis(field.spec.lons),
        field.spec.lats,
        field.spec.depths,
        wsum[:, :, None],
    )
    return GridField(spec, means[:, :, None], out_mask[:, :, None])


def vertical_mean(field: GridField) -> GridField:
    """Volume-weighted mean over lon and lat per depth level (1-D profile)."""
    means, wsum, out_mask = _weighted_collapse(field, axes=(1, 2))
    spec = GridSpec(
        _collapsed_axis(field.spec.lons),
        _collapsed_axis(field.spec.lats),
        field.spec.depths,
        wsum[:, None, None],
    )
    return GridField(spec, means[:, None, None], out_mask[:, None, None])


def global_mean(field: GridField) -> float:
    """Volume-weighted mean over all unmasked cells."""
    if not field.mask.any():
        raise EmptyDomainError("field has no unmasked cells")
    vol = field.spec.volumes[field.mask]
    return float(np.sum(vol * field.values[field.mask]) / np.sum(vol))


def random_subsample(field: GridField, k: int, seed: int) -> FieldVector:
    """Simple random sample (without replacement) of k unmasked locations.

    Reproducible per seed; sample order is the draw order, so ``k == n``
    returns a permutation of the full vector's support.
    """
    vec = vectorize(field)
    n = len(vec)
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} unmasked locations")
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = np.random.default_rng(seed)
    index = rng.choice(n, size=k, replace=False)
    return vec.take(index)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

_FIELD_HEADER = ["lon", "lat", "depth", "volume", "value"]


def write_field_csv(field: GridField, path) -> None:
    """Write one row per unmasked cell: ``lon,lat,depth,volume,value``."""
    vec = vectorize(field)
    coords = vec.coords()
    lon_i, lat_i, dep_i = vec.locations.T
    vols = field.spec.volumes[dep_i, lat_i, lon_i]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_FIELD_HEADER)
        for (lon, lat, dep), vol, val in zip(coords, vols, vec.values):
            writer.writerow([f"{lon:.10g}", f"{lat:.10g}", f"{dep:.10g}",
                             f"{vol:.17g}", f"{val:.17g}"])


def read_field_csv(path) -> GridField:
    """Read a field file; the grid is inferred from the unique coordinates.

    Coordinate combinations absent from the file are masked. A file without a
    ``volume`` column gets uniform unit weights.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty field file")
        header = [h.strip().lower() for h in header]
        required = {"lon", "lat", "depth", "value"}
        if not required.issubset(header):
            raise ValueError(f"{path}: field file must have columns {sorted(required)}")
        col = {name: header.index(name) for name in header}
        has_volume = "volume" in col
        rows = [r for r in reader if r]
    if not rows:
        raise EmptyDomainError(f"{path}: field file has no data rows")
    lon = np.array([float(r[col["lon"]]) for r in rows])
    lat = np.array([float(r[col["lat"]]) for r in rows])
    dep = np.array([float(r[col["depth"]]) for r in rows])
    val = np.array([float(r[col["value"]]) for r in rows])
    vol = (np.array([float(r[col["volume"]]) for r in rows])
           if has_volume else np.ones(len(rows)))

    lons, lon_i = np.unique(lon, return_inverse=True)
    lats, lat_i = np.unique(lat, return_inverse=True)
    deps, dep_i = np.unique(dep, return_inverse=True)
    if len({(a, b, c) for a, b, c in zip(dep_i, lat_i, lon_i)}) != len(rows):
        raise ValueError(f"{path}: duplicate (lon, lat, depth) rows")
    shape = (deps.size, lats.size, lons.size)
    values = np.full(shape, np.nan)
    volumes = np.zeros(shape)
    mask = np.zeros(shape, dtype=bool)
    values[dep_i, lat_i, lon_i] = val
    volumes[dep_i, lat_i, lon_i] = vol
    mask[dep_i, lat_i, lon_i] = True
    spec = GridSpec(lons, lats, deps, volumes)
    return GridField(spec, values, mask)


@dataclass(frozen=True)
class FieldEnsemble:
    """A designed set of simulator runs: one field per parameter setting.

    All fields must share the grid and mask (model and observations are
    co-located by contract).
    """

    param_names: tuple[str, ...]
    thetas: np.ndarray  # (p, q)
    fields: tuple[GridField, ...] = field(repr=False, default=())

    def __post_init__(self):
        thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "param_names", tuple(self.param_names))
        object.__setattr__(self, "fields", tuple(self.fields))
        if thetas.shape[0] != len(self.fields):
            raise ValueError("one field per parameter setting required")
        if thetas.shape[1] != len(self.param_names):
            raise ValueError("theta width must match param_names")
        if len(self.fields) >= 2:
            ref = self.fields[0].mask
            for i, f in enumerate(self.fields[1:], start=1):
                if f.spec.shape != self.fields[0].spec.shape or not np.array_equal(f.mask, ref):
                    raise ValueError(f"run {i} is not co-located with run 0 (grid/mask differ)")

    @property
    def n_runs(self) -> int:
        return len(self.fields)

    def run_at(self, theta, atol=1e-12) -> GridField:
        """Field of the run whose parameters equal ``theta``."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        hits = np.nonzero(np.all(np.abs(self.thetas - theta) <= atol, axis=1))[0]
        if hits.size == 0:
            raise KeyError(f"no ensemble run at theta={theta.tolist()}")
        return self.fields[int(hits[0])]

    def map_fields(self, fn) -> "FieldEnsemble":
        """Apply a field transform (e.g. an aggregation) to every run."""
        return FieldEnsemble(self.param_names, self.thetas, tuple(fn(f) for f in self.fields))


def load_ensemble(manifest_path) -> FieldEnsemble:
    """Load an ensemble manifest.

    The manifest is JSON with ``parameters`` (list of names) and ``runs``
    (list of ``{"theta": [...], "field": "relative/path.csv"}``). Field paths
    are resolved relative to the manifest location.
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    for key in ("parameters", "runs"):
        if key not in manifest:
            raise ValueError(f"{manifest_path}: manifest missing '{key}'")
    names = list(manifest["parameters"])
    thetas = []
    fields = []
    for i, run in enumerate(manifest["runs"]):
        if "theta" not in run or "field" not in run:
            raise ValueError(f"{manifest_path}: run {i} missing 'theta' or 'field'")
        theta = np.asarray(run["theta"], dtype=float)
        if theta.shape != (len(names),):
            raise ValueError(f"{manifest_path}: run {i} theta length != parameters")
        thetas.append(theta)
        fields.append(read_field_csv(manifest_path.parent / run["field"]))
    return FieldEnsemble(tuple(names), np.array(thetas), tuple(fields))
