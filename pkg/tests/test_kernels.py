"""Both kernel backends against independent oracles."""

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from fstucker import _accel, kernels


def brute_idw(pts, vals, sizes, k, power, degree=0):
    idx = np.unravel_index(np.arange(int(np.prod(sizes))), sizes, order="F")
    nodes = np.stack([i / (s - 1) for i, s in zip(idx, sizes)], axis=1)
    cell_diag = np.sqrt(sum(1.0 / (s - 1) ** 2 for s in sizes))
    out = []
    for node in nodes:
        d = np.linalg.norm(pts - node, axis=1)
        nn = np.argsort(d, kind="stable")[:k]
        if d[nn[0]] < 1e-12:
            out.append(vals[nn[0]])
            continue
        w = d[nn] ** -power
        if degree == 1 and k > pts.shape[1] and d[nn[0]] <= cell_diag:
            # weighted least squares for value and gradient at the node
            x = np.hstack([np.ones((k, 1)), pts[nn] - node])
            sw = np.sqrt(w)[:, None]
            coef = np.linalg.lstsq(sw * x, sw[:, 0] * vals[nn], rcond=None)[0]
            out.append(coef[0])
            continue
        out.append(w @ vals[nn] / w.sum())
    return np.array(out)


def test_tucker_eval_oracle(backend, rng):
    ranks = (3, 2, 4)
    core = rng.standard_normal(ranks)
    vlist = [rng.standard_normal((50, r)) for r in ranks]
    ref = np.einsum("abc,qa,qb,qc->q", core, *vlist)
    np.testing.assert_allclose(kernels.tucker_eval(core, vlist), ref, rtol=1e-12, atol=1e-12)


def test_tucker_eval_empty_and_scalar(backend):
    assert kernels.tucker_eval(np.ones((1, 1)), [np.ones((0, 1))] * 2).size == 0
    np.testing.assert_allclose(
        kernels.tucker_eval(np.full((1, 1, 1), 2.0), [np.full((4, 1), 3.0)] * 3), np.full(4, 54.0)
    )


def test_khatri_rao_oracle(backend, rng):
    vlist = [rng.standard_normal((7, r)) for r in (2, 3, 2)]
    w = kernels.khatri_rao_rows(vlist)
    for q in range(7):
        # mode 0 fastest: kron(v2, v1, v0)
        np.testing.assert_allclose(w[q], np.kron(vlist[2][q], np.kron(vlist[1][q], vlist[0][q])), rtol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 8, 64])
def test_fwht_matches_hadamard(backend, rng, n):
    x = rng.standard_normal((n, 3))
    h = scipy.linalg.hadamard(n) / np.sqrt(n)
    np.testing.assert_allclose(kernels.fwht(x), h @ x, atol=1e-13)
    np.testing.assert_allclose(kernels.fwht(x[:, 0]), h @ x[:, 0], atol=1e-13)


def test_fwht_rejects_non_power_of_two(backend):
    with pytest.raises(ValueError):
        kernels.fwht(np.ones(6))


def test_fwht_does_not_modify_input(backend, rng):
    x = rng.standard_normal(16)
    keep = x.copy()
    kernels.fwht(x)
    np.testing.assert_array_equal(x, keep)


@pytest.mark.parametrize("d,sizes,k", [(1, (9,), 2), (2, (6, 5), 6), (3, (4, 5, 3), 8)])
def test_idw_oracle(backend, d, sizes, k):
    g = np.random.default_rng(d)
    pts = g.random((60, d))
    vals = g.standard_normal(60)
    got, nearest = kernels.idw_grid(pts, vals, sizes, k, power=2.0)
    np.testing.assert_allclose(got, brute_idw(pts, vals, sizes, k, 2.0), rtol=1e-12)
    assert np.all(nearest >= 0)


@pytest.mark.parametrize("d,sizes,k", [(1, (9,), 3), (2, (6, 5), 6), (3, (4, 5, 3), 8)])
def test_idw_linear_oracle(backend, d, sizes, k):
    g = np.random.default_rng(10 + d)
    pts = g.random((400, d))
    vals = g.standard_normal(400)
    got, _ = kernels.idw_grid(pts, vals, sizes, k, degree=1)
    np.testing.assert_allclose(got, brute_idw(pts, vals, sizes, k, 2.0, degree=1), rtol=1e-9, atol=1e-10)


def test_idw_linear_reproduces_planes(backend):
    g = np.random.default_rng(5)
    pts = g.random((300, 3))
    vals = 2.0 - pts @ np.array([1.0, 3.0, -0.5])
    got, _ = kernels.idw_grid(pts, vals, (7, 6, 5), 8, degree=1)
    idx = np.unravel_index(np.arange(210), (7, 6, 5), order="F")
    nodes = np.stack([i / (s - 1) for i, s in zip(idx, (7, 6, 5))], axis=1)
    np.testing.assert_allclose(got, 2.0 - nodes @ np.array([1.0, 3.0, -0.5]), atol=1e-12)


def test_idw_linear_degenerate_neighbourhood(backend):
    # collinear samples cannot determine a plane; the weighted mean is used
    t = np.linspace(0, 1, 30)
    pts = np.stack([t, t], axis=1)
    got0, _ = kernels.idw_grid(pts, t, (4, 4), 5)
    got1, _ = kernels.idw_grid(pts, t, (4, 4), 5, degree=1)
    assert np.all(np.isfinite(got1))
    far = np.abs(np.subtract.outer(np.arange(4), np.arange(4))).ravel(order="F") > 0
    np.testing.assert_allclose(got1[far], got0[far], rtol=1e-12)


def test_idw_exact_hits(backend):
    sizes = (5, 4)
    nodes = np.array([[i / 4, j / 3] for j in range(4) for i in range(5)])
    vals = np.arange(20.0)
    got, nearest = kernels.idw_grid(nodes, vals, sizes, 6)
    np.testing.assert_array_equal(got, vals)
    assert nearest.max() == 0.0


def test_idw_points_outside_unit_box(backend):
    g = np.random.default_rng(3)
    pts = g.uniform(-0.3, 1.4, (80, 2))
    vals = g.standard_normal(80)
    got, _ = kernels.idw_grid(pts, vals, (5, 5), 4)
    np.testing.assert_allclose(got, brute_idw(pts, vals, (5, 5), 4, 2.0), rtol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 12))
def test_backends_agree(seed, k):
    g = np.random.default_rng(seed)
    pts = g.random((200, 3))
    vals = g.standard_normal(200)
    core = g.standard_normal((2, 3, 2))
    vlist = [g.standard_normal((30, r)) for r in (2, 3, 2)]
    x = g.standard_normal((32, 4))
    res = {}
    for name in ("numpy", "numba") if _accel.HAVE_NUMBA else ("numpy",):
        _accel.set_backend(name)
        res[name] = (
            kernels.idw_grid(pts, vals, (6, 5, 4), k)[0],
            kernels.idw_grid(pts, vals, (6, 5, 4), k, degree=1)[0],
            kernels.tucker_eval(core, vlist),
            kernels.khatri_rao_rows(vlist),
            kernels.fwht(x),
        )
    _accel.set_backend("numba" if _accel.HAVE_NUMBA else "numpy")
    if len(res) == 2:
        for a, b in zip(res["numpy"], res["numba"]):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_backend_switch_validation():
    with pytest.raises(ValueError):
        _accel.set_backend("cuda")


def test_env_flag_selects_numpy():
    import subprocess
    import sys

    code = "from fstucker import _accel; print(_accel.get_backend())"
    out = subprocess.run(
        [sys.executable, "-c", code],
        env={**__import__("os").environ, "FSTUCKER_DISABLE_NUMBA": "1"},
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "numpy"
