"""Datasets: point clouds, structured grids, interpolation and synthetic fields."""

import csv
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError, DecodeError, ParameterError, ShapeError
from .tensor import MAX_DIM


@dataclass
class PointCloud:
    """Scattered samples ``values[q] = u(points[q])``."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.points.shape[0] != self.values.size:
            raise ShapeError("points and values disagree in length")
        if self.values.size < 1:
            raise ShapeError("a point cloud needs at least one sample")
        if not 1 <= self.points.shape[1] <= MAX_DIM:
            raise ShapeError(f"dimension must be in [1, {MAX_DIM}]")
        if not np.all(np.isfinite(self.points)):
            raise DataError("non-finite coordinates")

    @property
    def d(self):
        return self.points.shape[1]

    def __len__(self):
        return self.values.size

    @property
    def bounds(self):
        return list(zip(self.points.min(axis=0).tolist(), self.points.max(axis=0).tolist()))

    def take(self, idx):
        return PointCloud(self.points[idx], self.values[idx])


@dataclass(frozen=True)
class StructuredGrid:
    """Equispaced tensor grid: ``sizes[k]`` nodes spanning ``intervals[k]``."""

    sizes: tuple
    intervals: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        intervals = tuple((float(a), float(b)) for a, b in self.intervals)
        if len(sizes) != len(intervals):
            raise ShapeError("one interval per mode is required")
        if any(s < 2 for s in sizes):
            raise ParameterError("grids need at least two nodes per mode")
        if any(not a < b for a, b in intervals):
            raise ParameterError("grid intervals must be nondegenerate")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "intervals", intervals)

    @classmethod
    def covering(cls, pc, sizes):
        """Grid over the bounding box of a point cloud."""
        if np.isscalar(sizes):
            sizes = (int(sizes),) * pc.d
        return cls(tuple(sizes), tuple(pc.bounds))

    @property
    def d(self):
        return len(self.sizes)

    def axis(self, k):
        a, b = self.intervals[k]
        return np.linspace(a, b, self.sizes[k])

    def axes(self):
        return [self.axis(k) for k in range(self.d)]

    def nodes(self):
        """All nodes as a ``(prod(sizes), d)`` array, first mode fastest."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel(order="F") for m in mesh], axis=1)

    def normalize(self, points):
        lo = np.array([a for a, _ in self.intervals])
        hi = np.array([b for _, b in self.intervals])
        return (np.asarray(points, dtype=np.float64) - lo) / (hi - lo)


def subsample(pc, fraction, seed=0):
    """Seeded uniform subsample without replacement of ``round(fraction * Q)`` points."""
    if not 0.0 < fraction <= 1.0:
        raise ParameterError("fraction must lie in (0, 1]")
    n = int(round(fraction * len(pc)))
    if n < 1:
        raise ParameterError("subsample would be empty")
    if n == len(pc):
        return pc
    idx = np.sort(np.random.default_rng(seed).choice(len(pc), n, replace=False))
    return pc.take(idx)


def interpolate_to_grid(pc, grid, k=None, power=2.0, degree=1, return_stats=False):
    """Inverse-distance weighted k-nearest-neighbour interpolation onto ``grid``.

    Distances are measured after scaling every mode by its grid interval.  A
    node closer than ``1e-12`` cells to a sample takes that sample's value.
    By default (``degree=1``) the weights enter a local linear least-squares
    fit rather than a weighted mean, so linear data is reproduced exactly and
    nodes on the boundary do not inherit the bias of one-sided neighbourhoods.
    Nodes outside the sample hull are extrapolated from their nearest
    neighbours; ``return_stats`` reports how many nodes lie farther than one
    cell diagonal from every sample.

    Parameters
    ----------
    k : int, optional
        Number of neighbours, default ``2 d + 2``.
    power : float
        Distance exponent of the weights.
    degree : {0, 1}
        0 for the plain weighted mean, 1 for the weighted local linear fit.
    """
    if pc.d != grid.d:
        raise ShapeError(f"cloud has dimension {pc.d}, grid has {grid.d}")
    if not np.all(np.isfinite(pc.values)):
        raise DataError("point cloud contains non-finite values")
    k = 2 * pc.d + 2 if k is None else int(k)
    if k < 1:
        raise ParameterError("need at least one neighbour")
    if degree not in (0, 1):
        raise ParameterError("interpolation degree must be 0 or 1")
    pts = grid.normalize(pc.points)
    outside = bool(np.any(pts < -1e-12) or np.any(pts > 1 + 1e-12))
    if outside:
        warnings.warn("point cloud extends beyond the grid box", RuntimeWarning, stacklevel=2)
    cell = 1.0 / (max(grid.sizes) - 1)
    vals, nearest = kernels.idw_grid(pts, pc.values, grid.sizes, k, power, hit_tol=1e-12 * cell,
                                     degree=degree)
    tensor = vals.reshape(grid.sizes, order="F")
    if not return_stats:
        return tensor
    diag = float(np.sqrt(sum((1.0 / (s - 1)) ** 2 for s in grid.sizes)))
    far = int(np.sum(nearest > diag))
    stats = {
        "neighbours": k,
        "power": power,
        "degree": degree,
        "max_nearest_distance_cells": float(nearest.max() / cell),
        "nodes_beyond_one_cell": far,
        "coverage": 1.0 - far / nearest.size,
        "cloud_outside_grid": outside,
    }
    return tensor, stats


# ------------------------------------------------------------------ file I/O

FPCL_MAGIC = b"FPCL"
FPCL_VERSION = 1


def write_csv(path, pc):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"y{k + 1}" for k in range(pc.d)] + ["value"])
        for p, v in zip(pc.points, pc.values):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])


def read_csv(path):
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise DecodeError(f"malformed CSV point cloud: {exc}") from None
    if data.shape[1] < 2:
        raise DecodeError("CSV point cloud needs at least one coordinate and a value column")
    return PointCloud(data[:, :-1], data[:, -1])


def write_points(path, pc):
    """Binary point cloud: FPCL header, coordinates (one block per mode), values."""
    head = FPCL_MAGIC + struct.pack("<IIQB", FPCL_VERSION, pc.d, len(pc), 0)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.asarray(pc.points, dtype="<f8").tobytes(order="F"))
        fh.write(np.asarray(pc.values, dtype="<f8").tobytes())


def read_points(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 21 or buf[:4] != FPCL_MAGIC:
        raise DecodeError("not an FPCL file (bad magic)")
    version, d, q, tag = struct.unpack_from("<IIQB", buf, 4)
    if version != FPCL_VERSION:
        raise DecodeError(f"unsupported FPCL version {version}")
    if tag not in (0, 1):
        raise DecodeError(f"unknown dtype tag {tag}")
    dt = np.dtype("<f8") if tag == 0 else np.dtype("<f4")
    need = 21 + q * (d + 1) * dt.itemsize
    if len(buf) != need:
        raise DecodeError(f"FPCL file has {len(buf)} bytes, expected {need}")
    pts = np.frombuffer(buf, dt, q * d, 21).astype(np.float64).reshape((q, d), order="F")
    vals = np.frombuffer(buf, dt, q, 21 + q * d * dt.itemsize).astype(np.float64)
    return PointCloud(pts, vals)


def read_cloud(path):
    """Read a point cloud, choosing the format from the file's magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    return read_points(path) if magic == FPCL_MAGIC else read_csv(path)


# ------------------------------------------------------------------ synthetic data


class SyntheticField:
    """Analytic stand-in for simulation output on ``[0, 1]^d``.

    ``kind`` selects the structure:

    ``smooth``
        ``offset + amplitude * (sum of three separable cosine products plus
        a separable Gaussian bump)``; multilinear rank at most 5.
    ``flame-front``
        ``0.5 (1 + tanh((y_1 - x_f) / thickness))`` with a front position
        ``x_f`` that translates along the last mode (time) and is wrinkled by
        a few seeded sinusoidal modes of the remaining coordinates.
    ``multiscale``
        Cosine products over dyadic frequencies with amplitudes decaying as
        ``2**(-decay * level)`` plus a localized sharp bump.
    """

    def __init__(self, kind, d=3, params=None, seed=0):
        if kind not in ("smooth", "flame-front", "multiscale"):
            raise ParameterError(f"unknown synthetic field kind {kind!r}")
        if not 1 <= d <= MAX_DIM:
            raise ParameterError(f"dimension must be in [1, {MAX_DIM}]")
        self.kind, self.d, self.seed = kind, int(d), int(seed)
        self.params = dict(params or {})
        rng = np.random.default_rng(seed)
        p = self.params
        if kind == "smooth":
            self.offset = float(p.get("offset", 1.0))
            self.amplitude = float(p.get("amplitude", 1.0))
            self.freq = rng.uniform(0.5, 2.5, size=(3, d)) * np.pi
            self.phase = rng.uniform(0, 2 * np.pi, size=(3, d))
            self.weights = rng.uniform(0.5, 1.0, size=3)
            self.center = rng.uniform(0.3, 0.7, size=d)
            self.width = float(p.get("width", 0.25))
        elif kind == "flame-front":
            self.thickness = float(p.get("thickness", 0.04))
            self.speed = float(p.get("speed", 0.3))
            self.start = float(p.get("start", 0.35))
            self.wrinkle = float(p.get("wrinkle", 0.05))
            nm = int(p.get("modes", 3))
            self.wfreq = rng.integers(1, 4, size=(nm, max(d - 1, 1))) * np.pi
            self.wphase = rng.uniform(0, 2 * np.pi, size=(nm, max(d - 1, 1)))
            self.wamp = self.wrinkle * rng.uniform(0.5, 1.0, size=nm) / np.arange(1, nm + 1)
        else:
            self.levels = int(p.get("levels", 4))
            self.decay = float(p.get("decay", 1.0))
            self.phase = rng.uniform(0, 2 * np.pi, size=(self.levels, d))
            self.center = rng.uniform(0.2, 0.8, size=d)
            self.bump = float(p.get("bump_width", 0.05))

    def __call__(self, points):
        y = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if y.shape[1] != self.d:
            raise ShapeError(f"expected {self.d} coordinates per point")
        if self.kind == "smooth":
            terms = np.cos(self.freq[None] * y[:, None, :] + self.phase[None])
            val = (self.weights * terms.prod(axis=2)).sum(axis=1)
            val = val + np.exp(-(((y - self.center) / self.width) ** 2).sum(axis=1))
            return self.offset + self.amplitude * val
        if self.kind == "flame-front":
            front = self.start
            if self.d > 1:
                front = front + self.speed * (y[:, -1] - 0.5)
                others = y[:, 1:] if self.d > 1 else y[:, :0]
                wr = np.cos(self.wfreq[None] * others[:, None, :] + self.wphase[None]).prod(axis=2)
                front = front + (self.wamp * wr).sum(axis=1)
            return 0.5 * (1.0 + np.tanh((y[:, 0] - front) / self.thickness))
        val = np.zeros(y.shape[0])
        for lev in range(self.levels):
            f = 2.0**lev * np.pi
            val += 2.0 ** (-self.decay * lev) * np.cos(f * y + self.phase[lev]).prod(axis=1)
        val += np.exp(-(((y - self.center) / self.bump) ** 2).sum(axis=1))
        return val

    def grid(self, shape):
        """Field sampled on the equispaced grid of ``[0, 1]^d`` with ``shape`` nodes."""
        g = StructuredGrid(tuple(shape), ((0.0, 1.0),) * self.d)
        vals = np.empty(int(np.prod(g.sizes)))
        nodes = g.nodes()
        step = 1 << 20
        for s in range(0, vals.size, step):
            vals[s:s + step] = self(nodes[s:s + step])
        return vals.reshape(g.sizes, order="F"), g

    def scatter(self, n, seed=None):
        """``n`` uniformly random samples in ``[0, 1]^d``."""
        rng = np.random.default_rng(self.seed + 1 if seed is None else seed)
        pts = rng.random((int(n), self.d))
        return PointCloud(pts, self(pts))


def synth_field(kind, shape, params=None, seed=0, scatter=None):
    """Gridded tensor (and optionally a scattered cloud) of a synthetic field.

    Returns ``(tensor, grid, field)``, plus a :class:`PointCloud` of
    ``scatter`` samples as fourth element when ``scatter`` is given.
    """
    fld = SyntheticField(kind, len(shape), params, seed)
    tensor, grid = fld.grid(shape)
    if scatter is None:
        return tensor, grid, fld
    return tensor, grid, fld, fld.scatter(scatter)
