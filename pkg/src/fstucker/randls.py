"""Randomized least-squares re-estimation of the core tensor.

The model's mode functions are held fixed and the core is refitted against
scattered data.  The tall design matrix ``W`` (one row per sample, one
column per core entry) is compressed by a subsampled randomized orthogonal
transform:

1. flip the sign of every row with probability 1/2,
2. mix the rows with a fast orthonormal transform (DCT-II, Walsh-Hadamard or
   complex FFT), zero-padding to the admissible length,
3. keep ``S`` uniformly sampled rows (without replacement) scaled by
   ``sqrt(Q_pad / S)``,

and the small ``S x R`` system is solved by QR.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.linalg

from . import kernels
from .errors import ParameterError, ShapeError

TRANSFORMS = ("dct", "wht", "fft")
DEFAULT_WORKING_SUBSET = 1 << 20
DEFAULT_OVERSAMPLING = 2.5


@dataclass(frozen=True)
class SketchConfig:
    """Parameters of the sketch.

    ``working_subset`` caps the number of data rows fed to the transform
    (``None`` uses every row); ``sample_rows`` is ``S`` (``None`` means
    ``ceil(2.5 R)``).
    """

    seed: int = 0
    working_subset: int = DEFAULT_WORKING_SUBSET
    sample_rows: int = None
    transform: str = "dct"

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise ParameterError(f"unknown transform {self.transform!r}")
        if self.working_subset is not None and self.working_subset < 1:
            raise ParameterError("working subset must be positive")
        if self.sample_rows is not None and self.sample_rows < 1:
            raise ParameterError("sample_rows must be positive")

    def rows_for(self, r):
        return self.sample_rows if self.sample_rows is not None else math.ceil(DEFAULT_OVERSAMPLING * r)


def padded_length(q, transform):
    if transform == "wht":
        return 1 << max(0, (q - 1).bit_length())
    return q


def build_design_rows(model, points):
    """``W[q, j] = prod_k w^(k)_{j_k}(y^q_k)`` with the core index ``j`` in
    Fortran (mode 0 fastest) order."""
    points = model._check_points(points)
    vlist = [model.mode_values(k, points[:, k]) for k in range(model.d)]
    return kernels.khatri_rao_rows(vlist)


def mix(x, signs, transform):
    """Apply ``F D`` to the rows of ``x`` after zero padding.

    Returns a real array; the complex FFT is returned with real and imaginary
    parts stacked along a new leading axis of length 2.
    """
    x = np.asarray(x, dtype=np.float64)
    q = x.shape[0]
    n = padded_length(q, transform)
    y = np.zeros((n,) + x.shape[1:])
    y[:q] = x * signs.reshape((-1,) + (1,) * (x.ndim - 1))
    if transform == "dct":
        return scipy.fft.dct(y, type=2, norm="ortho", axis=0)
    if transform == "wht":
        return kernels.fwht(y)
    f = scipy.fft.fft(y, norm="ortho", axis=0)
    return np.stack([f.real, f.imag])


def _draw(q, transform, seed):
    rng = np.random.default_rng(seed)
    signs = rng.choice(np.array([-1.0, 1.0]), size=q)
    perm = rng.permutation(padded_length(q, transform))
    return signs, perm


def _column_blocks(ncols, nrows, budget=1 << 24):
    step = max(1, budget // max(1, nrows))
    return [np.arange(a, min(ncols, a + step)) for a in range(0, ncols, step)]


def _sketch_columns(columns, ncols, u, cfg):
    q = u.size
    s = cfg.rows_for(ncols)
    n = padded_length(q, cfg.transform)
    if s > n:
        raise ParameterError(f"cannot sample {s} rows from {n} transformed rows")
    signs, perm = _draw(q, cfg.transform, cfg.seed)
    rows = np.sort(perm[:s])
    scale = math.sqrt(n / s)
    nout = 2 * s if cfg.transform == "fft" else s
    ws = np.empty((nout, ncols))
    us = np.empty(nout)

    def take(mixed):
        if cfg.transform == "fft":
            sel = mixed[:, rows]
            return sel.reshape((2 * s,) + sel.shape[2:]) * scale
        return mixed[rows] * scale

    for block in _column_blocks(ncols, n):
        ws[:, block] = take(mix(columns(block), signs, cfg.transform))
    us[:] = take(mix(u, signs, cfg.transform))
    return ws, us


def sketch(w, u, cfg):
    """Sketched system ``(M W, M u)`` with ``S = cfg.rows_for(R)`` rows.

    Rows are taken from a seeded permutation, so for a fixed seed the rows
    kept for a smaller ``S`` are a subset of those kept for a larger one.
    With the complex FFT each sampled row contributes its real and imaginary
    parts, giving ``2 S`` real rows.
    """
    w = np.asarray(w, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64).ravel()
    if w.ndim != 2 or w.shape[0] != u.size:
        raise ShapeError(f"matrix {w.shape} and vector of length {u.size} disagree")
    return _sketch_columns(lambda cols: w[:, cols], w.shape[1], u, cfg)


def _lazy_columns(vlist):
    ranks = tuple(v.shape[1] for v in vlist)

    def columns(cols):
        idx = np.unravel_index(cols, ranks, order="F")
        out = vlist[0][:, idx[0]].copy()
        for v, ik in zip(vlist[1:], idx[1:]):
            out *= v[:, ik]
        return out

    return columns, int(np.prod(ranks))


def solve_ls(a, b, rcond=1e-12):
    """Least squares by column-pivoted QR; minimum-norm fallback if rank deficient."""
    qmat, rmat, piv = scipy.linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rmat))
    if diag.size == 0 or diag.min() <= rcond * diag.max() or a.shape[0] < a.shape[1]:
        warnings.warn("sketched system is rank deficient; using minimum-norm solution", RuntimeWarning)
        return np.linalg.lstsq(a, b, rcond=rcond)[0]
    x = np.empty(a.shape[1])
    x[piv] = scipy.linalg.solve_triangular(rmat, qmat.T @ b)
    return x


def leverage_scores(w, rtol=1e-12):
    """Squared row norms of the left singular vectors spanning ``range(w)``."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError("leverage scores need a matrix")
    umat, sv, _ = np.linalg.svd(w, full_matrices=False)
    rank = int(np.sum(sv > rtol * sv[0])) if sv.size and sv[0] > 0 else 0
    return (umat[:, :rank] ** 2).sum(axis=1)


def _split(q, validation_fraction, working_subset, seed):
    rng = np.random.default_rng([seed, 0x5EED])
    perm = rng.permutation(q)
    nval = int(round(validation_fraction * q)) if validation_fraction > 0 else 0
    val, work = np.sort(perm[:nval]), perm[nval:]
    if working_subset is not None and work.size > working_subset:
        work = work[:working_subset]
    return np.sort(work), val


def _relres(model_vals, values):
    den = np.linalg.norm(values)
    return float(np.linalg.norm(model_vals - values) / den) if den > 0 else 0.0


def sketched_core(model, points, values, cfg):
    """Sketched least-squares core as a flat vector (Fortran order).

    The design matrix is generated and mixed in column blocks, so it is never
    held in memory as a whole.
    """
    vlist = [model.mode_values(k, points[:, k]) for k in range(model.d)]
    columns, ncols = _lazy_columns(vlist)
    return solve_ls(*_sketch_columns(columns, ncols, np.asarray(values, dtype=np.float64), cfg))


def reestimate_core(model, points, values, cfg=SketchConfig(), validation_fraction=0.1):
    """Refit the core of ``model`` to the samples ``(points, values)``.

    A seeded fraction of the samples is held out to report the relative
    residual before and after; the rest (capped at ``cfg.working_subset``)
    is sketched.  The returned model carries a ``"reestimate"`` entry in its
    metadata.
    """
    points = model._check_points(points)
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size != points.shape[0]:
        raise ShapeError("points and values disagree in length")
    r = int(np.prod(model.ranks))
    s = cfg.rows_for(r)
    if s <= r:
        raise ParameterError(f"need more sampled rows than core entries ({s} <= {r})")
    work, val = _split(values.size, validation_fraction, cfg.working_subset, cfg.seed)
    if work.size < s and padded_length(work.size, cfg.transform) < s:
        raise ParameterError(f"dataset has {work.size} usable samples, fewer than S={s}")
    alpha = sketched_core(model, points[work], values[work], cfg)
    new = model.with_core(alpha)
    report = {"sample_rows": s, "core_size": r, "working_rows": int(work.size),
              "transform": cfg.transform, "seed": int(cfg.seed)}
    if val.size:
        report["validation_before"] = _relres(model.evaluate_batch(points[val]), values[val])
        report["validation_after"] = _relres(new.evaluate_batch(points[val]), values[val])
    new.metadata = {**new.metadata, "reestimate": report}
    return new


def self_convergence(model, points, values, s_values, seed=0, transform="dct",
                     working_subset=DEFAULT_WORKING_SUBSET):
    """Relative change of the sketched core between consecutive sample counts.

    Returns a list of ``(S_1, S_2, delta)`` with
    ``delta = ||a(S_2) - a(S_1)|| / ||a(S_2)||``; both solves share the seed,
    so the rows used for ``S_1`` are a subset of those for ``S_2``.
    """
    s_values = [int(s) for s in s_values]
    if len(s_values) < 2:
        raise ParameterError("need at least two sample counts")
    if any(b < a for a, b in zip(s_values, s_values[1:])):
        raise ParameterError("sample counts must be nondecreasing")
    points = model._check_points(points)
    values = np.asarray(values, dtype=np.float64).ravel()
    work, _ = _split(values.size, 0.0, working_subset, seed)
    # Mix once with the largest S; smaller S keep the rows drawn first.
    # The sqrt(n / S) scale is common to all rows, so it does not move the solution.
    smax = s_values[-1]
    cfg = SketchConfig(seed=seed, working_subset=None, sample_rows=smax, transform=transform)
    vlist = [model.mode_values(k, points[work, k]) for k in range(model.d)]
    columns, ncols = _lazy_columns(vlist)
    ws, us = _sketch_columns(columns, ncols, values[work], cfg)
    _, perm = _draw(work.size, transform, seed)
    order = np.argsort(perm)[np.sort(perm[:smax])]  # draw position of each kept row
    if transform == "fft":
        order = np.concatenate([order, order + smax])
    cores = {}
    for s in sorted(set(s_values)):
        keep = np.flatnonzero(order % smax < s)
        cores[s] = solve_ls(ws[keep], us[keep])
    out = []
    for s1, s2 in zip(s_values, s_values[1:]):
        a1, a2 = cores[s1], cores[s2]
        den = np.linalg.norm(a2)
        out.append((s1, s2, float(np.linalg.norm(a2 - a1) / den) if den > 0 else 0.0))
    return out
