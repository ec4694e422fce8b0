"""Compiled and numpy kernels must agree; the fallback must be selectable."""
import os
import subprocess
import sys

import numpy as np
import pytest

from advmp import kernels

L1, L2, LINF = 0, 1, 2
needs_both = pytest.mark.skipif(len(kernels.available_backends()) < 2,
                                reason="compiled extension not built")


def test_python_backend_always_available():
    assert "python" in kernels.available_backends()
    with pytest.raises(ValueError):
        kernels.load_backend("fortran")


def test_env_var_forces_fallback():
    code = "import advmp.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, ADVMP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_both
@pytest.mark.parametrize("kind,radius", [(L1, 2.0), (L2, 1.5), (LINF, 0.3), (L1, 0.0)])
def test_project_rows_agree(kind, radius):
    rng = np.random.default_rng(kind)
    D = rng.standard_normal((300, 7)) * 2
    D[:5] *= 1e-3  # rows already inside the ball
    cy, py = kernels.load_backend("cython"), kernels.load_backend("python")
    np.testing.assert_allclose(cy.project_rows(D, kind, radius), py.project_rows(D, kind, radius),
                               atol=1e-12, rtol=0)


@needs_both
@pytest.mark.parametrize("kind,k", [(L1, 1), (L1, 3), (L2, 1), (LINF, 1)])
def test_ascent_rows_agree(kind, k):
    rng = np.random.default_rng(10 + kind)
    G = rng.standard_normal((200, 6))
    G[0] = 0.0
    cy, py = kernels.load_backend("cython"), kernels.load_backend("python")
    np.testing.assert_allclose(cy.ascent_rows(G, kind, 0.1, k), py.ascent_rows(G, kind, 0.1, k),
                               atol=1e-14, rtol=0)


@needs_both
def test_pgd_linreg_agree():
    rng = np.random.default_rng(7)
    X, y, theta = rng.standard_normal((40, 3)), rng.standard_normal(40), rng.standard_normal(3)
    args = (X, y, theta, np.zeros_like(X), np.array([L1, L2, LINF], dtype=np.int32),
            np.array([1.0, 0.5, 0.2]), np.array([0.1, 0.05, 0.02]), np.array([1, 1, 1], dtype=np.int32), 60)
    cy, py = kernels.load_backend("cython"), kernels.load_backend("python")
    (d1, l1), (d2, l2) = cy.pgd_linreg(*args), py.pgd_linreg(*args)
    np.testing.assert_allclose(d1, d2, atol=1e-12)
    np.testing.assert_allclose(l1, l2, rtol=1e-12)


def test_empty_and_zero_dim_rows(backend):
    assert kernels.project_rows(np.zeros((0, 3)), L2, 1.0).shape == (0, 3)
    assert kernels.project_rows(np.zeros((4, 0)), L1, 1.0).shape == (4, 0)


@pytest.mark.parametrize("row,radius", [([1e-300, 5.0], 1e-300), ([50.0, 50.0, 50.0], 5e-324),
                                        ([1e10, 1.0], 1e-10)])
def test_l1_projection_tiny_radius_terminates_feasible(row, radius, backend):
    w = kernels.project_rows(np.array([row]), L1, radius)[0]
    assert np.abs(w).sum() <= radius + 1e-9


def test_l1_projection_rounding_tie_terminates(backend):
    # The threshold for the active set {2.083, 0.833} rounds onto 0.2083...,
    # which used to toggle that coordinate in and out forever.
    row = np.zeros(42)
    row[[5, 17, 27]] = [-0.2083333333333333, 0.8333333333333331, 2.0833333333333335]
    w = kernels.project_rows(row[None, :], L1, 2.5)[0]
    assert np.abs(w).sum() <= 2.5 + 1e-12
    np.testing.assert_allclose(w[[5, 17, 27]], [0.0, 0.625, 1.875], atol=1e-12)
