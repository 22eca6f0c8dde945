"""Dense tensor kernels and the FTEN binary tensor format.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Whenever a
tensor is flattened (files, unfoldings, core vectorisation) the first mode
varies fastest, i.e. Fortran order.  Mode indices are zero-based.
"""

import struct

import numpy as np

from .errors import DecodeError, DegenerateInputError, ModeIndexError, ShapeError

MAX_DIM = 8

FTEN_MAGIC = b"FTEN"
FTEN_VERSION = 1
DTYPE_TAGS = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_TAG_OF = {np.dtype("float64"): 0, np.dtype("float32"): 1}


def as_tensor(data, max_dim=MAX_DIM):
    """Validate and convert ``data`` to a float64 tensor."""
    t = np.asarray(data, dtype=np.float64)
    if t.ndim < 1 or t.ndim > max_dim:
        raise ShapeError(f"tensor order must be in [1, {max_dim}], got {t.ndim}")
    if t.size == 0:
        raise ShapeError("all tensor dimensions must be >= 1")
    return t


def _check_mode(t, k):
    if not 0 <= k < t.ndim:
        raise ModeIndexError(f"mode {k} out of range for order-{t.ndim} tensor")


def unfold(t, k):
    """Mode-``k`` matricization.

    Returns an ``I_k x prod(I_m, m != k)`` matrix whose columns run over the
    remaining modes in increasing order, lowest mode fastest.
    """
    t = np.asarray(t)
    _check_mode(t, k)
    return np.moveaxis(t, k, 0).reshape(t.shape[k], -1, order="F")


def refold(m, k, shape):
    """Inverse of :func:`unfold` for a tensor of the given ``shape``."""
    shape = tuple(int(s) for s in shape)
    if not 0 <= k < len(shape):
        raise ModeIndexError(f"mode {k} out of range for order-{len(shape)} tensor")
    moved = (shape[k],) + shape[:k] + shape[k + 1:]
    m = np.asarray(m)
    if m.size != int(np.prod(shape)) or m.shape[0] != shape[k]:
        raise ShapeError(f"matrix of shape {m.shape} cannot be folded into {shape}")
    return np.moveaxis(m.reshape(moved, order="F"), 0, k)


def mode_product(t, m, k):
    """Mode-``k`` product ``t x_k m``; ``m`` has shape ``(J, I_k)``."""
    t = np.asarray(t, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    _check_mode(t, k)
    if m.ndim != 2 or m.shape[1] != t.shape[k]:
        raise ShapeError(
            f"matrix of shape {m.shape} does not match mode {k} of size {t.shape[k]}"
        )
    return np.moveaxis(np.tensordot(m, t, axes=(1, k)), 0, k)


def multi_mode_product(t, matrices, modes=None):
    """Apply ``t x_{k} matrices[i]`` for each listed mode in turn."""
    if modes is None:
        modes = range(len(matrices))
    for mat, k in zip(matrices, modes):
        t = mode_product(t, mat, k)
    return t


def fro_norm(t):
    t = np.asarray(t, dtype=np.float64)
    return float(np.sqrt(np.sum(t * t)))


def relative_error(u, u_tilde):
    """``||u - u_tilde||_F / ||u||_F``."""
    u = np.asarray(u, dtype=np.float64)
    u_tilde = np.asarray(u_tilde, dtype=np.float64)
    if u.shape != u_tilde.shape:
        raise ShapeError(f"shape mismatch {u.shape} vs {u_tilde.shape}")
    nu = fro_norm(u)
    if nu == 0.0:
        raise DegenerateInputError("reference tensor has zero norm")
    return fro_norm(u - u_tilde) / nu


def write_tensor(path, t, dtype="float64"):
    """Write ``t`` as an FTEN file (see docs/format.md)."""
    t = as_tensor(t)
    dt = np.dtype(dtype)
    if dt not in _TAG_OF:
        raise ValueError(f"unsupported dtype {dtype}")
    header = FTEN_MAGIC + struct.pack("<II", FTEN_VERSION, t.ndim)
    header += struct.pack(f"<{t.ndim}Q", *t.shape) + struct.pack("<B", _TAG_OF[dt])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(t.astype(dt.newbyteorder("<")).tobytes(order="F"))


def read_tensor(path):
    """Read an FTEN file; always returns float64."""
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_tensor(buf)


def decode_tensor(buf):
    if len(buf) < 12 or buf[:4] != FTEN_MAGIC:
        raise DecodeError("not an FTEN file (bad magic)")
    version, d = struct.unpack_from("<II", buf, 4)
    if version != FTEN_VERSION:
        raise DecodeError(f"unsupported FTEN version {version}")
    if not 1 <= d <= MAX_DIM:
        raise DecodeError(f"invalid tensor order {d}")
    off = 12
    if len(buf) < off + 8 * d + 1:
        raise DecodeError("truncated FTEN header")
    shape = struct.unpack_from(f"<{d}Q", buf, off)
    off += 8 * d
    (tag,) = struct.unpack_from("<B", buf, off)
    off += 1
    if tag not in DTYPE_TAGS:
        raise DecodeError(f"unknown dtype tag {tag}")
    dt = DTYPE_TAGS[tag]
    n = int(np.prod(shape))
    if n == 0:
        raise DecodeError("zero-sized dimension in FTEN header")
    if len(buf) != off + n * dt.itemsize:
        raise DecodeError(
            f"FTEN payload has {len(buf) - off} bytes, expected {n * dt.itemsize}"
        )
    data = np.frombuffer(buf, dtype=dt, count=n, offset=off)
    return data.astype(np.float64).reshape(shape, order="F")
