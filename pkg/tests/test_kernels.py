import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wshar import kernels

py = kernels.python_backend
cy = kernels.compiled_backend
needs_ext = pytest.mark.skipif(cy is None, reason="compiled extension not built")


def test_active_backend_is_named():
    assert kernels.BACKEND in ("cython", "python")
    assert (kernels.BACKEND == "cython") == (cy is not None)


def test_env_var_forces_fallback():
    code = "from wshar import kernels; print(kernels.BACKEND)"
    env = {**os.environ, "WSHAR_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


matrices = arrays(
    np.float64,
    st.tuples(st.integers(2, 30), st.integers(1, 6)),
    elements=st.floats(-100, 100),
)


@needs_ext
@given(matrices)
@settings(max_examples=150, deadline=None)
def test_window_stats_parity(w):
    np.testing.assert_array_equal(cy.window_stats(w), py.window_stats(w))


@needs_ext
@given(matrices, st.integers(1, 5))
@settings(max_examples=150, deadline=None)
def test_knn_parity(x, n):
    n = min(n, x.shape[0] - 1)
    ci, cd = cy.knn(x, n)
    pi, pd = py.knn(x, n)
    np.testing.assert_array_equal(ci, pi)
    np.testing.assert_array_equal(cd, pd)


@needs_ext
def test_knn_parity_with_duplicates():
    x = np.repeat(np.random.default_rng(0).integers(0, 3, size=(10, 2)).astype(float), 3, axis=0)
    for a, b in zip(cy.knn(x, 6), py.knn(x, 6)):
        np.testing.assert_array_equal(a, b)


@needs_ext
@given(matrices, st.integers(1, 4))
@settings(max_examples=150, deadline=None)
def test_nearest_centroid_parity(x, k):
    c = x[: min(k, x.shape[0])]
    for a, b in zip(cy.nearest_centroid(x, c), py.nearest_centroid(x, c)):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("backend", [py, cy], ids=["python", "cython"])
def test_nearest_centroid_first_wins_ties(backend):
    if backend is None:
        pytest.skip("compiled extension not built")
    label, d2 = backend.nearest_centroid(np.array([[0.0], [1.0]]), np.array([[-1.0], [1.0]]))
    assert list(label) == [0, 1]
    assert list(d2) == [1.0, 0.0]
