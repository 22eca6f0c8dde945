"""Orthonormal univariate bases: Legendre polynomials and multiwavelets.

All bases are orthonormal with respect to the uniform probability measure
on their physical interval ``[a, b]``, which is mapped affinely onto the
reference interval ``[-1, 1]``.

The multiwavelet space ``W_{s,p}`` stacks the Legendre polynomials of degree
``<= p`` (level 0) with Alpert-type multiwavelets on the dyadic intervals of
levels ``1..s`` (level ``l`` has ``2**(l-1)`` intervals, each carrying
``p + 1`` piecewise polynomials with vanishing moments through degree ``p``).
Its dimension is ``(p + 1) * 2**s``.
"""

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, ParameterError

LEGENDRE = "legendre"
WAVELET = "wavelet"
DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class BasisSpec:
    """Approximation space description.

    ``family`` is ``"legendre"`` (space ``P_p``, dimension ``p + 1``) or
    ``"wavelet"`` (space ``W_{s,p}``, dimension ``(p + 1) 2**s``).
    """

    family: str
    degree: int
    resolution: int = 0
    domain: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.family not in (LEGENDRE, WAVELET):
            raise ParameterError(f"unknown basis family {self.family!r}")
        if self.degree < 0 or self.resolution < 0:
            raise ParameterError("degree and resolution must be nonnegative")
        if self.family == LEGENDRE and self.resolution != 0:
            raise ParameterError("Legendre bases have no resolution level")
        a, b = (float(v) for v in self.domain)
        if not a < b:
            raise ParameterError(f"degenerate domain [{a}, {b}]")
        object.__setattr__(self, "domain", (a, b))

    @classmethod
    def legendre(cls, degree, domain=(-1.0, 1.0)):
        return cls(LEGENDRE, int(degree), 0, domain)

    @classmethod
    def wavelet(cls, resolution, degree, domain=(-1.0, 1.0)):
        return cls(WAVELET, int(degree), int(resolution), domain)

    @property
    def dim(self):
        if self.family == LEGENDRE:
            return self.degree + 1
        return (self.degree + 1) * 2**self.resolution

    def with_domain(self, domain):
        return BasisSpec(self.family, self.degree, self.resolution, domain)

    def label(self):
        if self.family == LEGENDRE:
            return f"P{self.degree}"
        return f"W{self.resolution},{self.degree}"

    def to_dict(self):
        return {
            "family": self.family,
            "degree": self.degree,
            "resolution": self.resolution,
            "domain": list(self.domain),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], int(d["degree"]), int(d["resolution"]), tuple(d["domain"]))


def legendre_matrix(x, p):
    """Orthonormal Legendre values ``sqrt(2n+1) P_n(x)``, shape ``(len(x), p+1)``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((x.size, p + 1))
    out[:, 0] = 1.0
    if p >= 1:
        out[:, 1] = x
    for n in range(1, p):
        out[:, n + 1] = ((2 * n + 1) * x * out[:, n] - n * out[:, n - 1]) / (n + 1)
    out *= np.sqrt(2.0 * np.arange(p + 1) + 1.0)
    return out


@lru_cache(maxsize=None)
def multiwavelet_coefficients(p):
    """Mother multiwavelets of degree ``p`` on ``[-1, 1]``.

    Returns ``C`` of shape ``(p + 1, 2, p + 1)``: ``C[j, h, i]`` is the
    coefficient of ``sqrt(2) L_i(tau)`` on half ``h`` (0 left, 1 right) for
    wavelet ``j``, with ``tau`` the local coordinate of that half.  Wavelet
    ``j`` is additionally orthogonal to the Legendre polynomials of degree
    ``p+1 .. p+j``.  Signs make the last significant right-half coefficient
    positive.
    """
    n = p + 1
    tq, wq = np.polynomial.legendre.leggauss(2 * n + 2)
    wq = wq / 2.0
    local = legendre_matrix(tq, p)  # basis on a half, in local coordinate
    halves = ((tq - 1.0) / 2.0, (tq + 1.0) / 2.0)

    # parent polynomials of degree <= p expressed in the two-half basis
    parent = np.empty((2 * n, n))
    for h, x in enumerate(halves):
        vals = legendre_matrix(x, p)
        # <L_i, sqrt2 L_m(tau)> over half h: (1/2) * sqrt2 * int dx, dx = dtau/2
        parent[h * n:(h + 1) * n, :] = np.sqrt(2.0) / 2.0 * (local * wq[:, None]).T @ vals
    qfull, _ = np.linalg.qr(parent, mode="complete")
    comp = qfull[:, n:]

    if p > 0:
        # moments against L_{p+1} .. L_{2p}
        moments = np.zeros((p, n))
        for h, x in enumerate(halves):
            high = legendre_matrix(x, 2 * p)[:, n:]
            func = np.sqrt(2.0) * local @ comp[h * n:(h + 1) * n, :]
            moments += 0.5 * (high * wq[:, None]).T @ func
        rot, _ = np.linalg.qr(moments.T, mode="complete")
        comp = comp @ rot

    coeffs = comp.T.reshape(n, 2, n)
    for j in range(n):
        right = coeffs[j, 1]
        sig = np.nonzero(np.abs(right) > 1e-12)[0]
        ref = right[sig[-1]] if sig.size else coeffs[j, 0][np.argmax(np.abs(coeffs[j, 0]))]
        if ref < 0:
            coeffs[j] = -coeffs[j]
    coeffs[np.abs(coeffs) < 1e-15] = 0.0
    return coeffs


def to_reference(spec, x, warn=True):
    """Map physical coordinates to ``[-1, 1]``, clamping within the slack."""
    a, b = spec.domain
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite coordinate")
    slack = DOMAIN_SLACK * (b - a)
    if np.any(x < a - slack) or np.any(x > b + slack):
        bad = x[(x < a - slack) | (x > b + slack)]
        raise DomainError(f"coordinate {bad.flat[0]!r} outside domain [{a}, {b}]")
    if warn and (np.any(x < a) or np.any(x > b)):
        warnings.warn("coordinates clamped onto the basis domain", RuntimeWarning, stacklevel=3)
    xr = 2.0 * (x - a) / (b - a) - 1.0
    return np.clip(xr, -1.0, 1.0)


def _wavelet_matrix(xr, p, s):
    n = p + 1
    q = xr.size
    out = np.zeros((q, n * 2**s))
    out[:, :n] = legendre_matrix(xr, p)
    coeffs = multiwavelet_coefficients(p)
    rows = np.arange(q)
    offset = n
    for level in range(1, s + 1):
        nint = 2 ** (level - 1)
        width = 2.0 / nint
        m = np.minimum(np.floor((xr + 1.0) / width).astype(np.int64), nint - 1)
        t = (xr - (-1.0 + m * width)) * (2.0 / width) - 1.0
        right = t >= 0.0
        tau = np.where(right, 2.0 * t - 1.0, 2.0 * t + 1.0)
        loc = legendre_matrix(np.clip(tau, -1.0, 1.0), p)
        vals_left = loc @ coeffs[:, 0, :].T
        vals_right = loc @ coeffs[:, 1, :].T
        vals = np.where(right[:, None], vals_right, vals_left) * np.sqrt(2.0 * nint)
        cols = offset + m[:, None] * n + np.arange(n)[None, :]
        out[rows[:, None], cols] = vals
        offset += nint * n
    return out


def design_matrix(spec, points, warn=True):
    """Matrix of basis values, row ``q`` holding all basis functions at ``points[q]``."""
    xr = to_reference(spec, np.atleast_1d(points), warn=warn).ravel()
    if spec.family == LEGENDRE:
        return legendre_matrix(xr, spec.degree)
    return _wavelet_matrix(xr, spec.degree, spec.resolution)


def eval_basis(spec, x):
    """Values of all ``spec.dim`` basis functions at the scalar ``x``."""
    return design_matrix(spec, np.array([float(x)]))[0]


def grid_to_reference(i, size):
    """Reference coordinate of node ``i`` (zero-based) of an equispaced grid."""
    if size < 2:
        raise ParameterError("a grid needs at least two nodes per mode")
    i = np.asarray(i)
    if np.any(i < 0) or np.any(i >= size):
        raise ParameterError(f"grid index out of range [0, {size})")
    return -1.0 + 2.0 * i / (size - 1)


def quadrature(spec, points_per_cell=None):
    """Composite Gauss-Legendre rule exact for products of two basis functions.

    Returns physical nodes and weights summing to one (probability measure).
    """
    p = spec.degree
    npts = points_per_cell or (p + 1)
    ncell = 1 if spec.family == LEGENDRE else 2**spec.resolution
    t, w = np.polynomial.legendre.leggauss(npts)
    edges = np.linspace(-1.0, 1.0, ncell + 1)
    h = edges[1] - edges[0]
    xr = (edges[:-1, None] + (t[None, :] + 1.0) * h / 2.0).ravel()
    wr = np.tile(w / 2.0 / ncell, ncell)
    a, b = spec.domain
    return a + (xr + 1.0) * (b - a) / 2.0, wr
