import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from citrus import graphs
from citrus.spectral import (
    DegenerateSpectrumError, NumericalError, components_for_variance, eigh, explained_variance,
    filter_tensor, heat_kernel_dense, jacobi_eigh, product_filter, truncate,
)

from conftest import random_laplacian


@settings(max_examples=25)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 8))
def test_lapack_and_jacobi_agree(seed, n):
    m = random_laplacian(np.random.default_rng(seed), n)
    a = eigh(m)
    b = eigh(m, method="jacobi")
    assert np.allclose(a.eigenvalues, b.eigenvalues, atol=1e-10)
    assert np.allclose(a.eigenvectors @ np.diag(a.eigenvalues) @ a.eigenvectors.T, m, atol=1e-10)
    assert np.allclose(a.eigenvectors.T @ a.eigenvectors, np.eye(n), atol=1e-10)
    # projectors agree even when eigenvectors are not unique
    for lam in np.unique(np.round(a.eigenvalues, 6)):
        sa = np.abs(a.eigenvalues - lam) < 1e-6
        sb = np.abs(b.eigenvalues - lam) < 1e-6
        pa = a.eigenvectors[:, sa] @ a.eigenvectors[:, sa].T
        pb = b.eigenvectors[:, sb] @ b.eigenvectors[:, sb].T
        assert np.allclose(pa, pb, atol=1e-8)


def test_jacobi_on_known_matrix():
    vals, vecs = jacobi_eigh(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(np.sort(vals), [1.0, 3.0])
    assert np.allclose(np.abs(vecs), 1 / np.sqrt(2))


def test_eigh_sign_convention_is_deterministic(rng):
    m = random_laplacian(rng, 6)
    b = eigh(m)
    idx = np.argmax(np.abs(b.eigenvectors), axis=0)
    assert np.all(b.eigenvectors[idx, np.arange(6)] > 0)
    assert np.all(np.diff(b.eigenvalues) >= 0)
    assert np.array_equal(eigh(m).eigenvectors, b.eigenvectors)


def test_eigh_rejects_bad_input():
    with pytest.raises(ValueError):
        eigh(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(NumericalError):
        eigh(np.array([[np.inf, 0.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        eigh(np.eye(2), method="qr")


def test_truncate_policies():
    b = eigh(np.diag([-3.0, 0.5, 1.0, 2.0]))
    small = truncate(b, 2, "smallest")
    assert small.eigenvalues.tolist() == [-3.0, 0.5]
    large = truncate(b, 2, "largest")
    assert large.eigenvalues.tolist() == [-3.0, 2.0]
    assert small.source_n == 4 and not small.is_full
    assert truncate(b, 4).is_full
    with pytest.raises(ValueError):
        truncate(b, 5)
    with pytest.raises(ValueError):
        truncate(b, 0)


@pytest.mark.parametrize("t", [0.0, 0.3, 2.0, 7.5])
def test_heat_kernel_matches_scipy_expm(rng, t):
    lap = random_laplacian(rng, 7)
    assert np.allclose(heat_kernel_dense(lap, t), scipy.linalg.expm(-t * lap), atol=1e-12)


def test_heat_kernel_conserves_mass(rng):
    lap = random_laplacian(rng, 6)
    k = heat_kernel_dense(lap, 1.7)
    assert np.allclose(k.sum(axis=0), 1.0)


def test_filter_tensor_against_loops(rng):
    lams = [rng.random(3), rng.random(4)]
    t = rng.random((2, 5))
    f = filter_tensor(lams, t)
    assert f.shape == (3, 4, 5)
    for i in range(3):
        for j in range(4):
            for c in range(5):
                assert np.isclose(f[i, j, c], np.exp(-t[0, c] * lams[0][i] - t[1, c] * lams[1][j]))
    scalar = filter_tensor(lams, 0.7)
    assert scalar.shape == (3, 4, 1)
    assert np.allclose(scalar, filter_tensor(lams, [0.7, 0.7]))
    with pytest.raises(ValueError):
        filter_tensor(lams, [1.0, 2.0, 3.0])


def test_product_filter_is_descending_kron(rng):
    bases = [eigh(random_laplacian(rng, n)) for n in (3, 4)]
    t = [0.4, 1.3]
    col = product_filter(bases, t)[:, 0]
    expected = np.kron(np.exp(-t[1] * bases[1].eigenvalues), np.exp(-t[0] * bases[0].eigenvalues))
    assert np.allclose(col, expected)


def test_explained_variance():
    b = eigh(np.diag([0.0, 1.0, 2.0, 3.0]))
    ev = explained_variance(b)
    assert np.allclose(ev, np.array([9, 4, 1, 0]) / 14)
    assert components_for_variance(b, 0.9) == 2
    assert components_for_variance(b, 1.0) == 3
    with pytest.raises(DegenerateSpectrumError):
        explained_variance(eigh(np.zeros((3, 3))))


def test_normalized_laplacian_spectrum_of_complete_graph():
    g = graphs.build_graph(np.ones((4, 4)) - np.eye(4))
    vals = eigh(g.normalized_laplacian).eigenvalues
    assert np.allclose(vals, [0, 4 / 3, 4 / 3, 4 / 3])
