"""Symmetric eigendecompositions, eigenpair truncation and heat kernels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SYMMETRY_TOL = 1e-10
RESIDUAL_TOL = 1e-8


class NumericalError(ArithmeticError):
    """An eigensolver or gradient computation produced an unusable result."""


class DegenerateSpectrumError(ValueError):
    """The spectrum carries no information (e.g. all eigenvalues are zero)."""


@dataclass(frozen=True)
class SpectralBasis:
    """Eigenpairs of a symmetric matrix, eigenvalues ascending.

    Column ``i`` of `eigenvectors` pairs with ``eigenvalues[i]``. `source_n` is
    the size of the decomposed matrix; ``k <= source_n`` pairs are retained.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    source_n: int

    @property
    def k(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def is_full(self) -> bool:
        return self.k == self.source_n


def _check_symmetric(m):
    m = np.array(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError("matrix has non-finite entries")
    if np.max(np.abs(m - m.T), initial=0.0) > SYMMETRY_TOL:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (m + m.T)


def _fix_signs(vectors):
    # largest-magnitude entry of each column made positive; argmax picks the lowest index on ties
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def jacobi_eigh(m, tol: float = 1e-14, max_sweeps: int = 100):
    """Cyclic Jacobi eigenvalue iteration for a dense symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` unsorted. Intended for small
    matrices; cost is ``O(n^3)`` per sweep.
    """
    a = np.array(m, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.linalg.norm(a), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            return np.diag(a).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    raise NumericalError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


def eigh(m, method: str = "lapack") -> SpectralBasis:
    """Full eigendecomposition of a symmetric matrix.

    `method` is ``"lapack"`` (divide and conquer via numpy) or ``"jacobi"``.
    Eigenvalues are ascending and each eigenvector's largest-magnitude entry is
    positive, so the output is a deterministic function of the input.
    """
    m = _check_symmetric(m)
    n = m.shape[0]
    if method == "lapack":
        try:
            vals, vecs = np.linalg.eigh(m)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(str(exc)) from exc
    elif method == "jacobi":
        vals, vecs = jacobi_eigh(m)
        order = np.argsort(vals, kind="stable")
        vals, vecs = vals[order], vecs[:, order]
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    vecs = _fix_signs(vecs)
    if n:
        scale = max(1.0, float(np.max(np.abs(vals))))
        resid = np.linalg.norm(m @ vecs - vecs * vals, axis=0)
        if np.any(resid > RESIDUAL_TOL * scale):
            raise NumericalError(f"eigenpair residual {resid.max():.3e} too large")
    return SpectralBasis(vals, vecs, n)


def truncate(basis: SpectralBasis, k: int, policy: str = "smallest") -> SpectralBasis:
    """Keep `k` eigenpairs.

    ``policy="smallest"`` keeps the smallest eigenvalues (the low-pass band of
    a heat filter); ``policy="largest"`` keeps the largest magnitudes. The
    result stays sorted ascending.
    """
    if not 1 <= k <= basis.k:
        raise ValueError(f"k={k} outside [1, {basis.k}]")
    if policy == "smallest":
        keep = np.arange(k)
    elif policy == "largest":
        order = np.argsort(-np.abs(basis.eigenvalues), kind="stable")
        keep = np.sort(order[:k])
    else:
        raise ValueError(f"unknown truncation policy {policy!r}")
    return SpectralBasis(
        basis.eigenvalues[keep].copy(), basis.eigenvectors[:, keep].copy(), basis.source_n
    )


def filter_tensor(eigenvalues, t) -> np.ndarray:
    """Spectral heat response as a tensor of shape ``(K_1, ..., K_P, F)``.

    Entry ``(k_1, ..., k_P, c)`` is ``prod_p exp(-t[p, c] * lambda_p[k_p])``.
    `t` is a scalar, a length-P vector, or a ``(P, F)`` array.
    """
    lams = [np.asarray(lam) for lam in eigenvalues]
    n_factors = len(lams)
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.floating):
        t = t.astype(float)
    if t.ndim == 0:
        t = np.full((n_factors, 1), t, dtype=t.dtype)
    elif t.ndim == 1:
        if t.shape[0] != n_factors:
            raise ValueError(f"per-factor t needs {n_factors} entries, got {t.shape[0]}")
        t = t[:, None]
    elif t.ndim != 2 or t.shape[0] != n_factors:
        raise ValueError(f"receptive field of shape {t.shape} does not match {n_factors} factors")
    sizes = [lam.shape[0] for lam in lams]
    exponent = np.zeros(sizes + [t.shape[1]], dtype=np.result_type(t, *lams))
    for p, lam in enumerate(lams):
        shape = [1] * n_factors + [t.shape[1]]
        shape[p] = sizes[p]
        exponent -= np.multiply.outer(lam, t[p]).reshape(shape)
    return np.exp(exponent)


def product_filter(bases, t) -> np.ndarray:
    """Filter matrix with ``prod K_p`` rows and one column per channel.

    Column ``c`` is the descending Kronecker product of the per-factor vectors
    ``exp(-t[p, c] * lambda_p)``, i.e. rows are ordered first factor fastest.
    """
    tensor = filter_tensor([b.eigenvalues for b in bases], t)
    return tensor.reshape(-1, tensor.shape[-1], order="F")


def heat_kernel_dense(laplacian, t: float) -> np.ndarray:
    """Dense ``exp(-t L)`` through a full eigendecomposition."""
    laplacian = _check_symmetric(laplacian)
    if t == 0:
        return np.eye(laplacian.shape[0])
    basis = eigh(laplacian)
    v = basis.eigenvectors
    return (v * np.exp(-t * basis.eigenvalues)) @ v.T


def explained_variance(basis: SpectralBasis) -> np.ndarray:
    """Share of ``||L||_F^2`` carried by each rank-one term ``lambda v v^T``.

    Returned sorted descending; sums to one.
    """
    energy = basis.eigenvalues ** 2
    total = energy.sum()
    if total == 0:
        raise DegenerateSpectrumError("all eigenvalues are zero")
    return np.sort(energy / total)[::-1]


def components_for_variance(basis: SpectralBasis, fraction: float) -> int:
    """Smallest number of leading components whose explained variance reaches `fraction`."""
    cumulative = np.cumsum(explained_variance(basis))
    return int(min(np.searchsorted(cumulative, fraction - 1e-12) + 1, basis.k))
