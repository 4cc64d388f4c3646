import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from datasoups import _pykernels as py
from datasoups import kernels

ck = pytest.importorskip("datasoups._ckernels")


def random_affine(rng):
    a = rng.uniform(-np.pi, np.pi)
    s = rng.uniform(0.5, 1.5)
    return np.array([[s * np.cos(a), -s * np.sin(a), rng.uniform(-5, 5)],
                     [s * np.sin(a), s * np.cos(a), rng.uniform(-5, 5)]])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([py.MODE_CONSTANT, py.MODE_EDGE, py.MODE_REFLECT]))
def test_affine_sample_matches_fallback(seed, mode):
    rng = np.random.default_rng(seed)
    img = rng.random((int(rng.integers(1, 12)), int(rng.integers(1, 12)), 3))
    m = random_affine(rng)
    a = ck.affine_sample(img, m, 9, 7, mode, 0.25)
    b = py.affine_sample(img, m, 9, 7, mode, 0.25)
    np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


def test_identity_warp_is_exact():
    img = np.random.default_rng(0).random((6, 5, 3))
    eye = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    for impl in (py, ck):
        np.testing.assert_array_equal(impl.affine_sample(img, eye, 6, 5), img)


def test_perplexity_search_matches_fallback():
    X = np.random.default_rng(1).normal(size=(40, 5))
    sq = (X * X).sum(1)
    d2 = np.maximum(sq[:, None] + sq[None] - 2 * X @ X.T, 0)
    a = ck.perplexity_search(d2, 10.0)
    b = py.perplexity_search(d2, 10.0)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, atol=1e-12, rtol=1e-10)
    np.testing.assert_allclose(a[2], np.log(10.0), atol=1e-5)


def test_tsne_grad_matches_fallback_and_finite_differences():
    rng = np.random.default_rng(2)
    n = 12
    P = rng.random((n, n))
    P = P + P.T
    np.fill_diagonal(P, 0)
    P /= P.sum()
    Y = rng.normal(size=(n, 2))
    ga, ka = ck.tsne_grad(P, Y, 1.0)
    gb, kb = py.tsne_grad(P, Y, 1.0)
    np.testing.assert_allclose(ga, gb, atol=1e-12)
    assert ka == pytest.approx(kb, rel=1e-12)
    num = np.zeros_like(Y)
    for i in range(n):
        for j in range(2):
            Yp, Ym = Y.copy(), Y.copy()
            Yp[i, j] += 1e-6
            Ym[i, j] -= 1e-6
            num[i, j] = (py.tsne_grad(P, Yp)[1] - py.tsne_grad(P, Ym)[1]) / 2e-6
    np.testing.assert_allclose(gb, num, atol=1e-6)
    ge, _ = ck.tsne_grad(P, Y, 4.0)
    np.testing.assert_allclose(ge, py.tsne_grad(P, Y, 4.0)[0], atol=1e-12)


def test_backend_selection_and_override():
    assert kernels.BACKEND == "cython"
    env = dict(os.environ, DATASOUPS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from datasoups import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
