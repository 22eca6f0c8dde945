"""Hot loops, each with a numba kernel and a pure-numpy twin.

The public functions at the bottom dispatch on :func:`fstucker._accel.use_numba`.
Both paths produce the same numbers up to floating-point summation order
(and, for interpolation, the choice among exactly equidistant neighbours).
"""

import numpy as np
from scipy.spatial import cKDTree

from . import _accel
from ._accel import njit, prange

# local linear fits with a worse-conditioned normal matrix fall back to the mean
LINEAR_RCOND = 1e-10

# ---------------------------------------------------------------- numba side


@njit(parallel=True)
def _tucker_eval_nb(core, ranks, vcat, offsets):
    q = vcat.shape[0]
    d = ranks.shape[0]
    out = np.empty(q)
    r0 = ranks[0]
    first = core.shape[0] // r0
    nchunk = (q + 1023) // 1024
    for c in prange(nchunk):
        buf = np.empty(first)
        for p in range(c * 1024, min(q, (c + 1) * 1024)):
            # mode 0 reads the core, later modes contract in place
            for j in range(first):
                acc = 0.0
                base = j * r0
                for i in range(r0):
                    acc += core[base + i] * vcat[p, i]
                buf[j] = acc
            size = first
            for k in range(1, d):
                r = ranks[k]
                rest = size // r
                off = offsets[k]
                for j in range(rest):
                    acc = 0.0
                    base = j * r
                    for i in range(r):
                        acc += buf[base + i] * vcat[p, off + i]
                    buf[j] = acc
                size = rest
            out[p] = buf[0]
    return out


@njit(parallel=True)
def _khatri_rao_nb(ranks, vcat, offsets):
    q = vcat.shape[0]
    d = ranks.shape[0]
    total = 1
    for k in range(d):
        total *= ranks[k]
    out = np.empty((q, total))
    for p in prange(q):
        out[p, 0] = 1.0
        size = 1
        for k in range(d):
            r = ranks[k]
            off = offsets[k]
            # expand in place from the back so lower modes stay fastest
            for jk in range(r - 1, -1, -1):
                v = vcat[p, off + jk]
                for j in range(size - 1, -1, -1):
                    out[p, jk * size + j] = out[p, j] * v
            size *= r
    return out


@njit
def _fwht_nb(x):
    n, m = x.shape
    h = 1
    while h < n:
        for start in range(0, n, 2 * h):
            for i in range(start, start + h):
                for c in range(m):
                    a = x[i, c]
                    b = x[i + h, c]
                    x[i, c] = a + b
                    x[i + h, c] = a - b
        h *= 2
    scale = 1.0 / np.sqrt(n)
    for i in range(n):
        for c in range(m):
            x[i, c] *= scale
    return x


@njit
def _build_bins(pts, lo, bw, nb):
    q, d = pts.shape
    nbins = 1
    for k in range(d):
        nbins *= nb[k]
    ids = np.empty(q, dtype=np.int64)
    for p in range(q):
        lin = 0
        stride = 1
        for k in range(d):
            b = int(np.floor((pts[p, k] - lo[k]) / bw[k]))
            b = min(max(b, 0), nb[k] - 1)
            lin += b * stride
            stride *= nb[k]
        ids[p] = lin
    start = np.zeros(nbins + 1, dtype=np.int64)
    for p in range(q):
        start[ids[p] + 1] += 1
    for b in range(nbins):
        start[b + 1] += start[b]
    fill = start[:-1].copy()
    order = np.empty(q, dtype=np.int64)
    for p in range(q):
        order[fill[ids[p]]] = p
        fill[ids[p]] += 1
    return start, order


@njit
def _idw_node(node, pts, vals, sizes, lo, bw, nb, start, order, k, power, hit2, maxrho,
              degree, far2):
    d = pts.shape[1]
    c = np.empty(d)
    b0 = np.empty(d, dtype=np.int64)
    rem = node
    for m in range(d):
        i = rem % sizes[m]
        rem = rem // sizes[m]
        c[m] = i / (sizes[m] - 1)
        bm = int(np.floor((c[m] - lo[m]) / bw[m]))
        b0[m] = min(max(bm, 0), nb[m] - 1)
    bd = np.full(k, np.inf)
    bi = np.full(k, -1, dtype=np.int64)
    found = 0
    off = np.empty(d, dtype=np.int64)
    minbw = bw.min()
    for rho in range(maxrho + 1):
        for m in range(d):
            off[m] = -rho
        while True:
            onshell = False
            inside = True
            lin = 0
            stride = 1
            for m in range(d):
                if off[m] == rho or off[m] == -rho:
                    onshell = True
                bb = b0[m] + off[m]
                if bb < 0 or bb >= nb[m]:
                    inside = False
                lin += bb * stride
                stride *= nb[m]
            if onshell and inside:
                for s in range(start[lin], start[lin + 1]):
                    p = order[s]
                    dist = 0.0
                    for m in range(d):
                        t = pts[p, m] - c[m]
                        dist += t * t
                    if found < k or dist < bd[k - 1]:
                        pos = min(found, k - 1)
                        while pos > 0 and bd[pos - 1] > dist:
                            bd[pos] = bd[pos - 1]
                            bi[pos] = bi[pos - 1]
                            pos -= 1
                        bd[pos] = dist
                        bi[pos] = p
                        if found < k:
                            found += 1
            # odometer over the (2 rho + 1)^d block
            m = 0
            while m < d:
                off[m] += 1
                if off[m] <= rho:
                    break
                off[m] = -rho
                m += 1
            if m == d:
                break
        lim = rho * minbw
        if found >= k and bd[k - 1] <= lim * lim:
            break
    if bd[0] < hit2:
        return vals[bi[0]], np.sqrt(bd[0])
    # work with offsets from the nearest value so constant data stays exact
    v0 = vals[bi[0]]
    w = np.empty(found)
    num = 0.0
    den = 0.0
    for j in range(found):
        w[j] = (bd[0] / bd[j]) ** (0.5 * power)
        num += w[j] * (vals[bi[j]] - v0)
        den += w[j]
    if degree == 0 or found <= d or bd[0] > far2:
        return v0 + num / den, np.sqrt(bd[0])
    # weighted local linear fit in coordinates scaled by the neighbourhood radius
    h = np.sqrt(bd[found - 1])
    mat = np.zeros((d + 1, d + 1))
    rhs = np.zeros(d + 1)
    row = np.empty(d + 1)
    for j in range(found):
        row[0] = 1.0
        for m in range(d):
            row[m + 1] = (pts[bi[j], m] - c[m]) / h
        for a in range(d + 1):
            rhs[a] += w[j] * row[a] * (vals[bi[j]] - v0)
            for b in range(d + 1):
                mat[a, b] += w[j] * row[a] * row[b]
    ev = np.linalg.eigvalsh(mat)
    if ev[0] <= LINEAR_RCOND * ev[-1]:
        return v0 + num / den, np.sqrt(bd[0])
    return v0 + np.linalg.solve(mat, rhs)[0], np.sqrt(bd[0])


@njit(parallel=True)
def _idw_grid_nb(pts, vals, sizes, lo, bw, nb, start, order, k, power, hit2, degree, far2):
    nnodes = 1
    maxrho = 0
    for m in range(sizes.shape[0]):
        nnodes *= sizes[m]
        maxrho = max(maxrho, nb[m])
    out = np.empty(nnodes)
    nearest = np.empty(nnodes)
    for node in prange(nnodes):
        v, dn = _idw_node(node, pts, vals, sizes, lo, bw, nb, start, order, k, power, hit2,
                          maxrho, degree, far2)
        out[node] = v
        nearest[node] = dn
    return out, nearest


# ---------------------------------------------------------------- numpy side


def _tucker_eval_np(core, ranks, vlist, chunk_elems=1 << 22):
    q = vlist[0].shape[0]
    total = int(np.prod(ranks))
    out = np.empty(q)
    step = max(1, chunk_elems // max(1, total // ranks[0]))
    cmat = core.reshape(ranks[0], -1, order="F")
    for s in range(0, q, step):
        sl = slice(s, min(q, s + step))
        t = vlist[0][sl] @ cmat
        for k in range(1, len(ranks)):
            t = t.reshape(t.shape[0], ranks[k], -1, order="F")
            t = np.einsum("qj,qjr->qr", vlist[k][sl], t)
        out[sl] = t[:, 0]
    return out


def _khatri_rao_np(vlist):
    w = vlist[0]
    for v in vlist[1:]:
        w = (v[:, :, None] * w[:, None, :]).reshape(w.shape[0], -1)
    return np.ascontiguousarray(w)


def _fwht_np(x):
    n, m = x.shape
    h = 1
    while h < n:
        y = x.reshape(n // (2 * h), 2, h, m)
        a = y[:, 0].copy()
        b = y[:, 1]
        y[:, 0] = a + b
        y[:, 1] = a - b
        h *= 2
    x *= 1.0 / np.sqrt(n)
    return x


def _grid_nodes(sizes, sl):
    idx = np.unravel_index(np.arange(sl.start, sl.stop), sizes, order="F")
    return np.stack([i / (s - 1) for i, s in zip(idx, sizes)], axis=1)


def _local_linear_np(nodes, pts, dv, ind, d2, w):
    """Value at ``nodes`` of the weighted linear fit to the neighbour values ``dv``;
    NaN where the local system is singular."""
    h = np.sqrt(d2[:, -1])[:, None, None]
    x = np.concatenate([np.ones(ind.shape + (1,)), (pts[ind] - nodes[:, None, :]) / h], axis=2)
    mat = np.einsum("nk,nka,nkb->nab", w, x, x)
    rhs = np.einsum("nk,nka,nk->na", w, x, dv)
    ev = np.linalg.eigvalsh(mat)
    ok = ev[:, 0] > LINEAR_RCOND * ev[:, -1]
    out = np.full(nodes.shape[0], np.nan)
    if ok.any():
        out[ok] = np.linalg.solve(mat[ok], rhs[ok][..., None])[:, 0, 0]
    return out


def _idw_grid_np(pts, vals, sizes, k, power, hit2, degree, far2, chunk=1 << 16):
    tree = cKDTree(pts)
    nnodes = int(np.prod(sizes))
    out = np.empty(nnodes)
    nearest = np.empty(nnodes)
    for s in range(0, nnodes, chunk):
        sl = slice(s, min(nnodes, s + chunk))
        nodes = _grid_nodes(sizes, sl)
        dist, ind = tree.query(nodes, k=k)
        dist = dist.reshape(dist.shape[0], -1)
        ind = ind.reshape(ind.shape[0], -1)
        d2 = dist * dist
        nearest[sl] = dist[:, 0]
        hit = d2[:, 0] < hit2
        with np.errstate(divide="ignore", invalid="ignore"):
            w = (np.where(hit, 1.0, d2[:, 0])[:, None] / np.where(hit[:, None], 1.0, d2)) ** (0.5 * power)
        # offsets from the nearest value keep constant data exact
        v0 = vals[ind[:, 0]]
        dv = vals[ind] - v0[:, None]
        est = (w * dv).sum(axis=1) / w.sum(axis=1)
        if degree == 1 and k > pts.shape[1]:
            sel = ~hit & (d2[:, 0] <= far2)
            if sel.any():
                lin = _local_linear_np(nodes[sel], pts, dv[sel], ind[sel], d2[sel], w[sel])
                est[sel] = np.where(np.isnan(lin), est[sel], lin)
        out[sl] = np.where(hit, v0, v0 + est)
    return out, nearest


# ---------------------------------------------------------------- dispatch


def _pack(vlist):
    ranks = np.array([v.shape[1] for v in vlist], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(ranks)[:-1]]).astype(np.int64)
    return ranks, offsets, np.ascontiguousarray(np.hstack(vlist), dtype=np.float64)


def tucker_eval(core, vlist):
    """Evaluate ``sum_j core[j] prod_k vlist[k][q, j_k]`` for every row ``q``.

    ``core`` is the core tensor (any layout), ``vlist[k]`` has shape
    ``(Q, r_k)``.
    """
    core = np.asarray(core, dtype=np.float64)
    ranks, offsets, vcat = _pack(vlist)
    if vcat.shape[0] == 0:
        return np.empty(0)
    if _accel.use_numba():
        return _tucker_eval_nb(core.ravel(order="F").copy(), ranks, vcat, offsets)
    return _tucker_eval_np(core, tuple(int(r) for r in ranks), vlist)


def khatri_rao_rows(vlist):
    """Row-wise Kronecker products; column index has mode 0 fastest."""
    ranks, offsets, vcat = _pack(vlist)
    if _accel.use_numba():
        return _khatri_rao_nb(ranks, vcat, offsets)
    return _khatri_rao_np([np.asarray(v, dtype=np.float64) for v in vlist])


def fwht(x):
    """Orthonormal Walsh-Hadamard transform along axis 0 (length a power of two)."""
    x = np.array(x, dtype=np.float64, order="C", copy=True)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    n = x.shape[0]
    if n & (n - 1):
        raise ValueError("Walsh-Hadamard length must be a power of two")
    x = _fwht_nb(x) if _accel.use_numba() else _fwht_np(x)
    return x[:, 0] if squeeze else x


def idw_grid(pts, vals, sizes, k, power=2.0, hit_tol=None, degree=0):
    """Inverse-distance weighting of scattered samples onto a unit grid.

    ``pts`` are sample coordinates already scaled so the grid spans
    ``[0, 1]`` in every mode, ``sizes`` the node counts.  Returns the node
    values (Fortran order) and the distance to the nearest sample per node.

    With ``degree=0`` a node gets the weighted mean of its ``k`` nearest
    samples.  With ``degree=1`` it gets the value at the node of the linear
    function fitted to them by weighted least squares (same weights), which
    reproduces linear data exactly; nodes whose local system is singular or
    whose nearest sample is farther than one cell diagonal keep the weighted
    mean.
    """
    if degree not in (0, 1):
        raise ValueError("degree must be 0 or 1")
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.int64)
    q, d = pts.shape
    k = int(min(k, q))
    if hit_tol is None:
        hit_tol = 1e-12 / (sizes.max() - 1)
    hit2 = float(hit_tol) ** 2
    far2 = float(np.sum(1.0 / (sizes - 1.0) ** 2))
    if not _accel.use_numba():
        return _idw_grid_np(pts, vals, tuple(int(s) for s in sizes), k, power, hit2, degree, far2)
    lo = np.minimum(pts.min(axis=0), 0.0)
    hi = np.maximum(pts.max(axis=0), 1.0)
    span = hi - lo
    # about two samples per bin
    per = max(1, int(np.floor((q / 2.0) ** (1.0 / d))))
    nb = np.maximum(1, np.minimum(per, np.ceil(span / span.max() * per))).astype(np.int64)
    bw = span / nb * (1.0 + 1e-12)
    start, order = _build_bins(pts, lo, bw, nb)
    return _idw_grid_nb(pts, vals, sizes, lo, bw, nb, start, order, k, float(power), hit2,
                        int(degree), far2)
