"""Lasso regularisation path by least angle regression, with LOO model selection.

The objective along the path is

    ||z - Phi v||_2^2 + lam * ||v||_1

with *no* factor 1/2 in front of the quadratic term, so the optimality
conditions read ``Phi_j^T (z - Phi v) = lam/2 * sign(v_j)`` on the support
and ``|Phi_j^T (z - Phi v)| <= lam/2`` elsewhere.  Libraries such as
scikit-learn scale the objective differently; their ``alpha`` equals
``lam / (2 Q)``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .basis import LEGENDRE, design_matrix
from .errors import ParameterError, ShapeError

LOO_LEVERAGE_CAP = 1.0 - 1e-10


@dataclass
class LassoPath:
    """Breakpoints of the piecewise-linear Lasso path.

    ``lambdas`` is strictly decreasing, ``coefs[i]`` solves the Lasso problem
    at ``lambdas[i]`` and ``actives[i]`` lists the active columns after that
    breakpoint (the support of the following segment).
    """

    lambdas: np.ndarray
    coefs: np.ndarray
    actives: list
    status: str = "complete"
    loo_errors: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.lambdas)

    def coef_at(self, lam):
        """Solution at an arbitrary ``lam`` by linear interpolation in ``lam``."""
        lams = self.lambdas
        if lam >= lams[0]:
            return self.coefs[0].copy()
        if lam < lams[-1]:
            if lam < lams[-1] * (1 - 1e-12) - 1e-300:
                raise ParameterError(
                    f"path stops at lambda={lams[-1]:.3e} ({self.status}); {lam:.3e} not covered"
                )
            return self.coefs[-1].copy()
        i = int(np.searchsorted(-lams, -lam, side="right")) - 1
        i = min(i, len(lams) - 2)
        l0, l1 = lams[i], lams[i + 1]
        t = (l0 - lam) / (l0 - l1)
        return (1 - t) * self.coefs[i] + t * self.coefs[i + 1]


@dataclass
class SparseFit:
    """Sparse expansion of one univariate function on a basis.

    ``indices`` are sorted basis indices and ``values`` the matching
    coefficients.  ``residual_rel`` is ``||z - Phi c|| / ||z||`` on the fitted
    samples.
    """

    basis: object
    indices: np.ndarray
    values: np.ndarray
    chosen_lambda: float = 0.0
    loo_error: float = 0.0
    residual_rel: float = 0.0
    loo_curve: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def nnz(self):
        return int(self.indices.size)

    @property
    def l1_norm(self):
        return float(np.abs(self.values).sum())

    def dense(self, n=None):
        n = self.basis.dim if n is None else n
        out = np.zeros(n)
        out[self.indices] = self.values
        return out

    def __call__(self, x):
        phi = design_matrix(self.basis, x, warn=False)
        return phi[:, self.indices] @ self.values


def _solve_active(gram, signs, cond_limit):
    try:
        cf = cho_factor(gram, lower=True, check_finite=False)
    except LinAlgError:
        return None
    diag = np.abs(np.diag(cf[0]))
    if diag.min() <= diag.max() * np.sqrt(1.0 / cond_limit):
        return None
    return cho_solve(cf, signs, check_finite=False)


def lars_lasso_path(phi, z, max_steps=None, standardize=False, cond_limit=1e12):
    """Trace the Lasso path with the LARS algorithm and the Lasso modification.

    Parameters
    ----------
    phi : ndarray, shape (Q, P)
        Design matrix; columns must not vanish identically.
    z : ndarray, shape (Q,)
        Observations.
    max_steps : int, optional
        Cap on the number of LARS events, default ``4 * min(Q, P)``.
    standardize : bool
        Run the path on unit-norm columns; coefficients are mapped back and
        the lambdas refer to the rescaled problem.
    cond_limit : float
        Largest admissible condition number of the active Gram matrix.  A
        more singular active set truncates the path with status
        ``"rank_deficient"``.

    Returns
    -------
    LassoPath
    """
    phi = np.asarray(phi, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64).ravel()
    if phi.ndim != 2 or phi.shape[0] != z.size:
        raise ShapeError(f"design {phi.shape} incompatible with {z.size} observations")
    q, p = phi.shape
    if q < 1 or p < 1:
        raise ShapeError("empty design matrix")
    norms = np.sqrt((phi * phi).sum(axis=0))
    if np.any(norms == 0):
        raise ParameterError("design matrix has an all-zero column")
    scale = 1.0 / norms if standardize else np.ones(p)
    x = phi * scale
    if max_steps is None:
        max_steps = 4 * min(q, p)
    max_active = p if p <= q - 1 else max(q - 1, 1)

    v = np.zeros(p)
    active = []
    c = x.T @ z
    cmax = float(np.abs(c).max())
    lambdas = [2.0 * cmax]
    coefs = [v.copy()]
    actives = [np.array([], dtype=np.int64)]
    status = "complete"
    if cmax == 0.0:
        return LassoPath(np.array(lambdas), np.array(coefs) * scale, actives, status)

    tiny = 1e-12 * cmax
    blocked = -1
    active.append(int(np.argmax(np.abs(c))))
    actives[0] = np.array(active, dtype=np.int64)
    nsteps = 0
    while True:
        if nsteps >= max_steps:
            status = "max_steps"
            break
        nsteps += 1
        c = x.T @ (z - x @ v)
        a_idx = np.array(active)
        signs = np.sign(c[a_idx])
        # variables just added at a kink can have a vanishing correlation sign
        signs[signs == 0] = np.sign(v[a_idx][signs == 0])
        cur = float(np.abs(c[a_idx]).max())
        xa = x[:, a_idx]
        dirn = _solve_active(xa.T @ xa, signs, cond_limit)
        if dirn is None:
            status = "rank_deficient"
            warnings.warn("active Gram matrix is singular; Lasso path truncated", RuntimeWarning)
            break
        a = x.T @ (xa @ dirn)

        gamma = cur
        event, who = "end", -1
        if len(active) < max_active:
            inactive = np.setdiff1d(np.arange(p), a_idx)
            if inactive.size:
                ci, ai = c[inactive], a[inactive]
                with np.errstate(divide="ignore", invalid="ignore"):
                    g1 = np.where(1.0 - ai > 1e-14, (cur - ci) / (1.0 - ai), np.inf)
                    g2 = np.where(1.0 + ai > 1e-14, (cur + ci) / (1.0 + ai), np.inf)
                # a variable that just left may not re-enter at the same kink
                floor = np.where(inactive == blocked, 1e-8 * cur, tiny)
                g = np.minimum(np.where(g1 > floor, g1, np.inf), np.where(g2 > floor, g2, np.inf))
                j = int(np.argmin(g))
                if g[j] < gamma:
                    gamma, event, who = float(g[j]), "add", int(inactive[j])
        with np.errstate(divide="ignore", invalid="ignore"):
            gd = np.where(dirn != 0, -v[a_idx] / dirn, np.inf)
        gd = np.where(gd > tiny, gd, np.inf)
        if gd.size and gd.min() < gamma:
            i = int(np.argmin(gd))
            gamma, event, who = float(gd[i]), "drop", int(a_idx[i])

        v[a_idx] += gamma * dirn
        blocked = -1
        if event == "drop":
            v[who] = 0.0
            active.remove(who)
            blocked = who
        elif event == "add":
            active.append(who)
        lam = 2.0 * max(cur - gamma, 0.0)
        if event == "end":
            lam = 0.0
        act = np.array(sorted(active), dtype=np.int64)
        if lam >= lambdas[-1] * (1 - 1e-14):
            coefs[-1] = v.copy()
            actives[-1] = act
        else:
            lambdas.append(lam)
            coefs.append(v.copy())
            actives.append(act)
        if event == "end":
            break
        if event == "add" and len(active) >= max_active and max_active < p:
            status = "saturated"
            break
        if not active:
            # every variable dropped out: restart from the most correlated one
            c = x.T @ (z - x @ v)
            if np.abs(c).max() <= tiny:
                break
            active.append(int(np.argmax(np.abs(c))))

    return LassoPath(
        np.array(lambdas), np.array(coefs) * scale[None, :], actives, status
    )


def _ols_loo(phi_a, z):
    """OLS coefficients on the given columns and the closed-form LOO error.

    Returns ``(coef, loo, max_leverage, inflation)``.  ``coef`` is None when
    the columns are numerically dependent.  ``inflation`` is the small-sample
    factor ``Q / (Q - m) * (1 + tr(C^-1) / Q)`` with ``C = Phi_A^T Phi_A / Q``
    and ``m`` active columns; it is inf when ``m >= Q``.
    """
    q, m = phi_a.shape
    qmat, rmat = np.linalg.qr(phi_a)
    rd = np.abs(np.diag(rmat))
    if rd.min() <= 1e-12 * rd.max():
        return None, np.inf, 1.0, np.inf
    coef = np.linalg.solve(rmat, qmat.T @ z)
    h = (qmat * qmat).sum(axis=1)
    resid = z - qmat @ (qmat.T @ z)
    hmax = float(h.max())
    if m >= q:
        inflation = np.inf
    else:
        rinv = np.linalg.solve(rmat, np.eye(m))
        # tr(C^-1) / Q = ||R^-1||_F^2
        inflation = q / (q - m) * (1.0 + float((rinv * rinv).sum()))
    if hmax >= LOO_LEVERAGE_CAP:
        return coef, np.inf, hmax, inflation
    return coef, float(np.mean((resid / (1.0 - h)) ** 2)), hmax, inflation


def loo_select(path, phi, z, basis=None, corrected=True):
    """Pick the path step with the smallest leave-one-out error.

    For every breakpoint the active columns are refitted by ordinary least
    squares and the leave-one-out error is obtained from the hat-matrix
    diagonal ``H_qq`` without refitting.  Steps where some ``H_qq`` reaches
    ``1 - 1e-10`` are skipped as overfitted (LOO error recorded as inf).

    Parameters
    ----------
    corrected : bool
        Rank steps by the LOO error times the small-sample inflation factor
        ``Q / (Q - m) * (1 + tr(C^-1) / Q)``.  The plain minimum over a
        greedily built path favours spurious columns; the factor offsets
        that selection bias.  ``path.loo_errors`` always holds the plain
        LOO errors.

    Returns
    -------
    SparseFit
        ``loo_error`` is the ranking criterion of the chosen step.
    """
    phi = np.asarray(phi, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64).ravel()
    if len(path) == 0:
        raise ParameterError("empty Lasso path")
    loo = np.full(len(path), np.inf)
    score = np.full(len(path), np.inf)
    coefs = {}
    seen = {}
    for i, act in enumerate(path.actives):
        key = act.tobytes()
        if key in seen:
            loo[i], score[i] = loo[seen[key]], score[seen[key]]
            continue
        seen[key] = i
        if act.size == 0:
            loo[i] = score[i] = float(np.mean(z * z))
            coefs[i] = np.zeros(0)
        else:
            coefs[i], loo[i], _, infl = _ols_loo(phi[:, act], z)
            score[i] = loo[i] * infl if corrected else loo[i]
    path.loo_errors = loo
    # the empty model competes as well
    cand = {i: (path.actives[i], score[i]) for i in seen.values() if np.isfinite(score[i])}
    cand[-1] = (np.zeros(0, dtype=np.int64), float(np.mean(z * z)))
    coefs[-1] = np.zeros(0)
    emin = min(e for _, e in cand.values())
    # round-off level ties go to the smallest active set
    tol = emin * 1e-9 + 1e-24 * float(np.mean(z * z))
    best = min(
        (i for i, (_, e) in cand.items() if e <= emin + tol),
        key=lambda i: (cand[i][0].size, cand[i][1], i),
    )
    act, best_coef = cand[best][0], coefs[best]
    best_loo = cand[best][1]
    best_lam = path.lambdas[0] if best < 0 else path.lambdas[best]
    keep = best_coef != 0.0
    idx, vals = act[keep], best_coef[keep]
    znorm = np.linalg.norm(z)
    resid = np.linalg.norm(z - phi[:, idx] @ vals)
    return SparseFit(
        basis=basis,
        indices=idx.astype(np.int64),
        values=vals.astype(np.float64),
        chosen_lambda=float(best_lam),
        loo_error=float(best_loo),
        residual_rel=float(resid / znorm) if znorm > 0 else 0.0,
        loo_curve=score,
    )


def _loo_tie(e1, e2, floor):
    return abs(e1 - e2) <= 1e-9 * max(e1, e2) + floor


def fit_singular_vector(x, values, candidates, max_steps=None):
    """Sparse fit of samples ``(x, values)`` on the best of several bases.

    Each candidate basis gets a full Lasso path and LOO selection; the fit
    with the smallest LOO error wins.  Ties go to the sparser fit and then
    to a Legendre basis.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    values = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0 or x.size != values.size:
        raise ShapeError("need the same nonzero number of coordinates and values")
    if not candidates:
        raise ParameterError("no candidate basis given")
    floor = 1e-24 * float(np.mean(values * values))
    best = None
    for spec in candidates:
        phi = design_matrix(spec, x)
        path = lars_lasso_path(phi, values, max_steps=max_steps)
        fit = loo_select(path, phi, values, basis=spec)
        if best is None:
            best = fit
            continue
        if _loo_tie(fit.loo_error, best.loo_error, floor):
            better = (fit.nnz, fit.basis.family != LEGENDRE) < (
                best.nnz,
                best.basis.family != LEGENDRE,
            )
        else:
            better = fit.loo_error < best.loo_error
        if better:
            best = fit
    return best
