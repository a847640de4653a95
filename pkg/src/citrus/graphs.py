"""Factor graphs, Laplacians, Cartesian products and adjacency perturbations."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.sparse.csgraph import connected_components

from .fileio import read_csv_matrix

SYMMETRY_TOL = 1e-10
MAX_CONNECT_ATTEMPTS = 1000


class GraphValidationError(ValueError):
    """An adjacency or distance matrix violates a structural invariant."""


class GraphGenerationError(RuntimeError):
    """Random generation could not satisfy the requested constraint."""


@dataclass(frozen=True)
class FactorGraph:
    """An undirected weighted graph and its derived matrices.

    ``normalized_laplacian`` is ``D^{-1/2} (D - A) D^{-1/2}`` with the
    convention ``D^{-1/2} = 0`` on isolated nodes, so isolated rows and columns
    are zero. On graphs without isolated nodes this equals
    ``I - D^{-1/2} A D^{-1/2}``.
    """

    adjacency: np.ndarray
    laplacian: np.ndarray = field(repr=False)
    normalized_laplacian: np.ndarray = field(repr=False)
    degrees: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def normalized_adjacency(self) -> np.ndarray:
        inv_sqrt = _inv_sqrt_degrees(self.degrees)
        return inv_sqrt[:, None] * self.adjacency * inv_sqrt[None, :]

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency, 1)))

    def is_connected(self) -> bool:
        return self.n == 1 or connected_components(self.adjacency, directed=False)[0] == 1


def _inv_sqrt_degrees(degrees):
    out = np.zeros_like(degrees)
    nz = degrees > 0
    out[nz] = 1.0 / np.sqrt(degrees[nz])
    return out


def validate_adjacency(adjacency) -> np.ndarray:
    a = np.array(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphValidationError(f"adjacency must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GraphValidationError("adjacency has non-finite entries")
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL:
        raise GraphValidationError("adjacency is not symmetric")
    if np.any(a < 0):
        raise GraphValidationError("adjacency has negative weights")
    if np.any(np.diag(a) != 0):
        raise GraphValidationError("adjacency has a nonzero diagonal (self-loops)")
    # exact symmetry downstream
    return 0.5 * (a + a.T)


def build_graph(adjacency) -> FactorGraph:
    a = validate_adjacency(adjacency)
    degrees = a.sum(axis=1)
    laplacian = np.diag(degrees) - a
    inv_sqrt = _inv_sqrt_degrees(degrees)
    normalized = inv_sqrt[:, None] * laplacian * inv_sqrt[None, :]
    return FactorGraph(a, laplacian, normalized, degrees)


def load_adjacency_csv(path) -> FactorGraph:
    return build_graph(read_csv_matrix(path))


def kron_chain(matrices, descending: bool = False) -> np.ndarray:
    """``M_1 (x) ... (x) M_P``, or ``M_P (x) ... (x) M_1`` when `descending`."""
    matrices = [np.atleast_2d(np.asarray(m, dtype=float)) for m in matrices]
    if not matrices:
        raise ValueError("kron_chain needs at least one matrix")
    if descending:
        matrices = matrices[::-1]
    return reduce(np.kron, matrices)


def kron_sum(a, b) -> np.ndarray:
    """Kronecker sum ``A (+) B = A (x) I + I (x) B``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.kron(a, np.eye(b.shape[0])) + np.kron(np.eye(a.shape[0]), b)


def cartesian_sum(matrices, descending: bool = False) -> np.ndarray:
    """Chained Kronecker sum of square matrices (Cartesian product Laplacian).

    With ``descending=True`` the chain is ``L_P (+) ... (+) L_1``, which is the
    ordering that matches :func:`citrus.tensor.vectorize`.
    """
    matrices = [np.atleast_2d(np.asarray(m, dtype=float)) for m in matrices]
    if not matrices:
        raise ValueError("cartesian_sum needs at least one matrix")
    for m in matrices:
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"Kronecker sum factors must be square, got {m.shape}")
    if descending:
        matrices = matrices[::-1]
    return reduce(kron_sum, matrices)


def _seed_stream(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def erdos_renyi(n: int, p: float, seed: int, require_connected: bool = False) -> FactorGraph:
    """G(n, p) with unit weights.

    Connected samples are drawn by rejection; attempt ``k`` uses the seed
    sequence ``(seed, k)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability {p} outside [0, 1]")
    iu = np.triu_indices(n, 1)
    attempts = MAX_CONNECT_ATTEMPTS if require_connected else 1
    for attempt in range(attempts):
        rng = _seed_stream(seed, attempt)
        upper = (rng.random(len(iu[0])) < p).astype(float)
        a = np.zeros((n, n))
        a[iu] = upper
        a = a + a.T
        g = build_graph(a)
        if not require_connected or g.is_connected():
            return g
    raise GraphGenerationError(
        f"no connected G({n}, {p}) sample in {MAX_CONNECT_ATTEMPTS} attempts"
    )


def path_graph(n: int) -> FactorGraph:
    if n < 1:
        raise ValueError("n must be >= 1")
    a = np.zeros((n, n))
    idx = np.arange(n - 1)
    a[idx, idx + 1] = 1.0
    a[idx + 1, idx] = 1.0
    return build_graph(a)


def gaussian_kernel_graph(dist, sigma: float, threshold: float) -> FactorGraph:
    """Weights ``exp(-d_ij^2 / sigma^2)``, dropped below `threshold`."""
    d = np.array(dist, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise GraphValidationError(f"distance matrix must be square, got shape {d.shape}")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise GraphValidationError("distances must be finite and nonnegative")
    if np.max(np.abs(d - d.T), initial=0.0) > SYMMETRY_TOL:
        raise GraphValidationError("distance matrix is not symmetric")
    if np.any(np.diag(d) != 0):
        raise GraphValidationError("distance matrix has a nonzero diagonal")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    w = np.exp(-(d ** 2) / sigma ** 2)
    w[w < threshold] = 0.0
    np.fill_diagonal(w, 0.0)
    return build_graph(0.5 * (w + w.T))


@dataclass(frozen=True)
class Perturbation:
    """Additive adjacency error actually applied to a factor graph.

    `error` is the post-clamp matrix (``perturbed.adjacency - clean.adjacency``),
    `raw_error` the Gaussian draw before clamping, and `epsilon` the spectral
    norm of `error`.
    """

    error: np.ndarray = field(repr=False)
    raw_error: np.ndarray = field(repr=False)
    epsilon: float
    snr_db: float


def noise_direction(n: int, seed: int) -> np.ndarray:
    """Symmetric, zero-diagonal standard Gaussian matrix (upper triangle i.i.d.)."""
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, 1)
    e = np.zeros((n, n))
    e[iu] = rng.standard_normal(len(iu[0]))
    return e + e.T


def perturb(g: FactorGraph, snr_db: float, seed: int):
    """Add Gaussian noise to the adjacency at the given SNR (in dB).

    SNR is the Frobenius power ratio ``||A||_F^2 / ||E||_F^2``. Entries that
    become negative are clamped to zero, and the returned perturbation records
    the clamped error.
    """
    snr_db = float(snr_db)
    if np.isnan(snr_db) or snr_db == -np.inf:
        raise ValueError(f"invalid SNR {snr_db}")
    zeros = np.zeros_like(g.adjacency)
    if snr_db == np.inf:
        return g, Perturbation(zeros, zeros.copy(), 0.0, snr_db)
    direction = noise_direction(g.n, seed)
    a_norm = np.linalg.norm(g.adjacency)
    d_norm = np.linalg.norm(direction)
    if a_norm == 0 or d_norm == 0:
        return g, Perturbation(zeros, zeros.copy(), 0.0, snr_db)
    raw = direction * (a_norm / d_norm) * 10.0 ** (-snr_db / 20.0)
    noisy = np.maximum(g.adjacency + raw, 0.0)
    np.fill_diagonal(noisy, 0.0)
    applied = noisy - g.adjacency
    eps = float(np.linalg.norm(applied, 2))
    return build_graph(noisy), Perturbation(applied, raw, eps, snr_db)
