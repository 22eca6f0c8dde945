"""Functional sparse Tucker model: core tensor plus sparse singular functions.

A model represents

    u(y) ~= sum_j core[j_1, ..., j_d] * prod_k w^(k)_{j_k}(y_k)

where every ``w^(k)_{j}`` is a :class:`~fstucker.lasso.SparseFit`, i.e. a
sparse expansion on a Legendre or multiwavelet basis over the physical
interval of mode ``k``.
"""

import json
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import kernels
from .basis import BasisSpec, design_matrix, to_reference
from .errors import DecodeError, DomainError, ParameterError, ShapeError
from .lasso import SparseFit, fit_singular_vector

FSTK_MAGIC = b"FSTK"
FSTK_VERSION = 1
VALUE_BYTES = 8
INDEX_BYTES = 4


class StorageCost(NamedTuple):
    """Number of stored coefficients and their size in bytes.

    ``bytes`` counts coefficient values only; ``index_bytes`` is the extra
    cost of the u32 positions of the sparse coefficients.
    """

    coeff_count: int
    bytes: int
    index_bytes: int

    @property
    def bytes_with_index(self):
        return self.bytes + self.index_bytes


@dataclass
class FunctionalSparseTuckerModel:
    core: np.ndarray
    modes: list
    domains: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.core = np.asarray(self.core, dtype=np.float64)
        if self.core.ndim != len(self.modes) or len(self.domains) != len(self.modes):
            raise ShapeError("core order, mode list and domain list disagree")
        for k, funcs in enumerate(self.modes):
            if len(funcs) != self.core.shape[k]:
                raise ShapeError(
                    f"mode {k} holds {len(funcs)} functions, core expects {self.core.shape[k]}"
                )
            for f in funcs:
                if f.indices.size and (f.indices.min() < 0 or f.indices.max() >= f.basis.dim):
                    raise ShapeError(f"coefficient index outside basis of dimension {f.basis.dim}")
        self.domains = [(float(a), float(b)) for a, b in self.domains]

    @property
    def d(self):
        return self.core.ndim

    @property
    def ranks(self):
        return tuple(self.core.shape)

    def with_core(self, core, **meta):
        core = np.asarray(core, dtype=np.float64).reshape(self.ranks, order="F")
        return replace(self, core=core, metadata={**self.metadata, **meta})

    def mode_values(self, k, x):
        """Matrix ``V[q, j] = w^(k)_j(x[q])`` of shape ``(len(x), r_k)``."""
        x = np.asarray(x, dtype=np.float64).ravel()
        out = np.empty((x.size, self.ranks[k]))
        cache = {}
        for j, f in enumerate(self.modes[k]):
            if f.basis not in cache:
                cache[f.basis] = design_matrix(f.basis, x, warn=False)
            out[:, j] = cache[f.basis][:, f.indices] @ f.values
        return out

    def _check_points(self, points):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points.reshape(1, -1) if points.size == self.d else points.reshape(-1, self.d)
        if points.ndim != 2 or points.shape[1] != self.d:
            raise ShapeError(f"points must have shape (Q, {self.d})")
        for k, (a, b) in enumerate(self.domains):
            to_reference(BasisSpec("legendre", 0, 0, (a, b)), points[:, k], warn=False)
        return points

    def evaluate_batch(self, points):
        """Model values at the rows of ``points`` (shape ``(Q, d)``)."""
        points = self._check_points(points)
        if points.shape[0] == 0:
            return np.empty(0)
        vlist = [self.mode_values(k, points[:, k]) for k in range(self.d)]
        return kernels.tucker_eval(self.core, vlist)

    def evaluate(self, y):
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.size != self.d:
            raise ShapeError(f"expected a point with {self.d} coordinates")
        return float(self.evaluate_batch(y.reshape(1, -1))[0])

    def evaluate_grid(self, axes):
        """Values on the tensor grid spanned by per-mode coordinate vectors."""
        t = self.core
        for k, x in enumerate(axes):
            x = np.asarray(x, dtype=np.float64)
            a, b = self.domains[k]
            try:
                to_reference(BasisSpec("legendre", 0, 0, (a, b)), x, warn=False)
            except DomainError as exc:
                raise DomainError(f"mode {k}: {exc}") from None
            t = np.moveaxis(np.tensordot(self.mode_values(k, x), t, axes=(1, k)), 0, k)
        return t

    def storage_cost(self):
        nnz = sum(f.nnz for funcs in self.modes for f in funcs)
        count = int(np.prod(self.ranks)) + nnz
        return StorageCost(count, VALUE_BYTES * count, INDEX_BYTES * nnz)

    def compression_ratio(self, original_point_count, include_index=False):
        return compression_ratio(self, original_point_count, include_index)

    def fit_table(self):
        """Per-function diagnostics as a list of dicts (one row per fit)."""
        rows = []
        for k, funcs in enumerate(self.modes):
            for j, f in enumerate(funcs):
                rows.append(
                    {
                        "mode": k,
                        "index": j,
                        "basis": f.basis.label(),
                        "nnz": f.nnz,
                        "lambda": f.chosen_lambda,
                        "loo_error": f.loo_error,
                        "residual_rel": f.residual_rel,
                        "l1_norm": f.l1_norm,
                    }
                )
        return rows


def compression_ratio(model, original_point_count, include_index=False):
    """Original storage (8 bytes per value) over model storage."""
    if original_point_count <= 0:
        raise ParameterError("original point count must be positive")
    cost = model.storage_cost()
    denom = cost.bytes_with_index if include_index else cost.bytes
    return VALUE_BYTES * original_point_count / denom


def assemble(dec, grids, candidates, residual_ceiling=0.5, threads=1, max_steps=None):
    """Fit every singular vector of a Tucker decomposition as a sparse function.

    Parameters
    ----------
    dec : TuckerDecomposition
    grids : sequence of 1-D arrays
        Physical coordinates of the grid nodes of every mode; the domain of
        mode ``k`` becomes ``[grids[k][0], grids[k][-1]]``.
    candidates : sequence of BasisSpec or sequence of sequences
        Candidate bases, either one list shared by all modes or one list per
        mode.  Their domains are replaced by the mode domain.
    residual_ceiling : float
        Fits with a larger relative residual are listed in
        ``metadata["flagged_fits"]``.
    threads : int
        Worker threads for the independent fits.
    """
    d = len(dec.factors)
    if len(grids) != d:
        raise ShapeError(f"need {d} grids, got {len(grids)}")
    if candidates and isinstance(candidates[0], BasisSpec):
        candidates = [list(candidates)] * d
    if len(candidates) != d:
        raise ShapeError("need one candidate list per mode")
    grids = [np.asarray(g, dtype=np.float64) for g in grids]
    domains = []
    for k, (g, w) in enumerate(zip(grids, dec.factors)):
        if g.size != w.shape[0]:
            raise ShapeError(f"grid {k} has {g.size} nodes, factor has {w.shape[0]} rows")
        domains.append((float(g.min()), float(g.max())))
    cands = [[c.with_domain(domains[k]) for c in candidates[k]] for k in range(d)]

    jobs = [(k, j) for k in range(d) for j in range(dec.factors[k].shape[1])]

    def run(job):
        k, j = job
        return fit_singular_vector(grids[k], dec.factors[k][:, j], cands[k], max_steps=max_steps)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = list(pool.map(run, jobs))
    else:
        fits = [run(job) for job in jobs]

    modes = [[None] * dec.factors[k].shape[1] for k in range(d)]
    flagged = []
    for (k, j), fit in zip(jobs, fits):
        modes[k][j] = fit
        if fit.residual_rel > residual_ceiling:
            flagged.append([k, j, fit.residual_rel])
    meta = {
        "grid_sizes": [int(g.size) for g in grids],
        "tucker_error": float(dec.achieved_error),
        "flagged_fits": flagged,
    }
    return FunctionalSparseTuckerModel(np.array(dec.core, dtype=np.float64), modes, domains, meta)


# ------------------------------------------------------------------ FSTK I/O


def _header(model):
    funcs = [
        [
            {
                "basis": f.basis.to_dict(),
                "nnz": f.nnz,
                "lambda": f.chosen_lambda,
                "loo_error": f.loo_error,
                "residual_rel": f.residual_rel,
            }
            for f in fs
        ]
        for fs in model.modes
    ]
    return {
        "d": model.d,
        "ranks": list(model.ranks),
        "domains": [list(dm) for dm in model.domains],
        "functions": funcs,
        "metadata": model.metadata,
    }


def to_bytes(model):
    meta = json.dumps(_header(model), sort_keys=True, separators=(",", ":")).encode()
    parts = [np.ascontiguousarray(model.core.ravel(order="F"), dtype="<f8").tobytes()]
    for fs in model.modes:
        for f in fs:
            parts.append(struct.pack("<I", f.nnz))
            parts.append(np.asarray(f.indices, dtype="<u4").tobytes())
            parts.append(np.asarray(f.values, dtype="<f8").tobytes())
    payload = b"".join(parts)
    head = FSTK_MAGIC + struct.pack("<IQ", FSTK_VERSION, len(meta))
    return head + meta + payload + struct.pack("<I", zlib.crc32(meta + payload))


def from_bytes(buf):
    if len(buf) < 16 or buf[:4] != FSTK_MAGIC:
        raise DecodeError("not an FSTK file (bad magic)")
    version, mlen = struct.unpack_from("<IQ", buf, 4)
    if version != FSTK_VERSION:
        raise DecodeError(f"unsupported FSTK version {version}")
    if len(buf) < 16 + mlen + 4:
        raise DecodeError("truncated FSTK file")
    body = buf[16:-4]
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise DecodeError("FSTK checksum mismatch")
    try:
        head = json.loads(body[:mlen].decode())
        ranks = tuple(int(r) for r in head["ranks"])
        off = mlen
        ncore = int(np.prod(ranks))
        core = np.frombuffer(body, "<f8", ncore, off).astype(np.float64)
        off += 8 * ncore
        modes = []
        for k, fs in enumerate(head["functions"]):
            mode = []
            for info in fs:
                (nnz,) = struct.unpack_from("<I", body, off)
                off += 4
                if nnz != info["nnz"]:
                    raise DecodeError("coefficient count disagrees with header")
                idx = np.frombuffer(body, "<u4", nnz, off).astype(np.int64)
                off += 4 * nnz
                vals = np.frombuffer(body, "<f8", nnz, off).astype(np.float64)
                off += 8 * nnz
                mode.append(
                    SparseFit(
                        BasisSpec.from_dict(info["basis"]),
                        idx,
                        vals,
                        info["lambda"],
                        info["loo_error"],
                        info["residual_rel"],
                    )
                )
            modes.append(mode)
        if off != len(body):
            raise DecodeError("trailing bytes in FSTK payload")
        return FunctionalSparseTuckerModel(
            core.reshape(ranks, order="F"),
            modes,
            [tuple(dm) for dm in head["domains"]],
            head.get("metadata", {}),
        )
    except DecodeError:
        raise
    except (KeyError, ValueError, TypeError, struct.error, ShapeError) as exc:
        raise DecodeError(f"malformed FSTK file: {exc}") from None


def serialize(model, path):
    with open(path, "wb") as fh:
        fh.write(to_bytes(model))


def deserialize(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
