"""Sequentially truncated HOSVD to a prescribed relative precision."""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from .errors import DataError, DegenerateInputError, ParameterError, ShapeError
from .tensor import as_tensor, fro_norm, mode_product


@dataclass(frozen=True)
class TuckerDecomposition:
    """Core tensor plus one orthonormal factor matrix per mode.

    ``factors[k]`` has shape ``(I_k, r_k)`` and ``core`` has shape
    ``(r_1, ..., r_d)``.  ``achieved_error`` is the relative Frobenius error of
    the reconstruction with respect to the decomposed tensor.
    """

    core: np.ndarray
    factors: list
    achieved_error: float = 0.0
    eigenvalues: list = field(default_factory=list, compare=False, repr=False)

    @property
    def ranks(self):
        return tuple(f.shape[1] for f in self.factors)

    @property
    def shape(self):
        return tuple(f.shape[0] for f in self.factors)


def _fix_signs(vecs):
    # largest-magnitude entry of every column made positive
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _gram(y, k):
    other = [m for m in range(y.ndim) if m != k]
    return np.tensordot(y, y, axes=(other, other))


def truncation_rank(eigenvalues, budget):
    """Smallest rank whose discarded (descending-sorted) tail sum is <= budget.

    Eigenvalues equal to the one at the cut are kept as well.
    """
    lam = np.clip(np.asarray(eigenvalues, dtype=np.float64), 0.0, None)
    n = lam.size
    # tail[r] = sum of lam[r:]
    tail = np.concatenate([np.cumsum(lam[::-1])[::-1], [0.0]])
    r = int(np.argmax(tail <= budget))
    r = max(r, 1)
    while r < n and lam[r] == lam[r - 1]:
        r += 1
    return r


def sthosvd(u, epsilon, order="increasing"):
    """Decompose ``u`` so that ``||u - reconstruct(dec)||_F <= epsilon ||u||_F``.

    Each mode receives an equal share ``epsilon**2 ||u||^2 / d`` of the squared
    error budget.  Factors are the leading eigenvectors of the Gram matrix of
    the current partially truncated tensor, with the sign of every column
    chosen so that its largest-magnitude entry is positive.

    Parameters
    ----------
    u : array_like
        Dense tensor of order ``d``.
    epsilon : float
        Relative precision in (0, 1).
    order : {"increasing", "decreasing-size"}
        Mode processing order: mode index order, or largest dimension first.
    """
    if not 0.0 < epsilon < 1.0:
        raise ParameterError(f"epsilon must lie in (0, 1), got {epsilon}")
    u = as_tensor(u)
    if not np.all(np.isfinite(u)):
        raise DataError("tensor contains non-finite values")
    norm2 = fro_norm(u) ** 2
    if norm2 == 0.0:
        raise DegenerateInputError("cannot decompose a zero tensor")
    d = u.ndim
    if order == "increasing":
        modes = list(range(d))
    elif order == "decreasing-size":
        modes = sorted(range(d), key=lambda k: (-u.shape[k], k))
    else:
        raise ParameterError(f"unknown mode order {order!r}")

    budget = epsilon**2 * norm2 / d
    factors = [None] * d
    eigs = [None] * d
    discarded = 0.0
    y = u
    for k in modes:
        lam, vecs = eigh(_gram(y, k))
        lam = lam[::-1]
        vecs = vecs[:, ::-1]
        r = truncation_rank(lam, budget)
        w = _fix_signs(vecs[:, :r])
        discarded += float(np.clip(lam[r:], 0.0, None).sum())
        factors[k] = np.ascontiguousarray(w)
        eigs[k] = np.clip(lam, 0.0, None)
        y = mode_product(y, w.T, k)
    achieved = float(np.sqrt(discarded / norm2))
    return TuckerDecomposition(np.ascontiguousarray(y), factors, achieved, eigs)


def reconstruct(dec):
    """``core x_1 W1 x_2 W2 ... x_d Wd``."""
    core = np.asarray(dec.core, dtype=np.float64)
    if core.ndim != len(dec.factors):
        raise ShapeError("core order does not match number of factors")
    t = core
    for k, w in enumerate(dec.factors):
        if w.shape[1] != core.shape[k]:
            raise ShapeError(
                f"factor {k} has {w.shape[1]} columns, core mode has {core.shape[k]}"
            )
        t = mode_product(t, w, k)
    return t


def singular_value_decay(dec):
    """All absolute core entries, sorted in descending order."""
    return np.sort(np.abs(np.asarray(dec.core)).ravel(order="F"))[::-1]
