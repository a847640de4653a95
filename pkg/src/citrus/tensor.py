"""Dense tensor algebra: unfoldings, mode-n products and vectorization.

Tensors are plain ``numpy.ndarray`` objects. Modes are 0-based.

Linearization convention
------------------------
Every flattening in this package is *first index fastest* (Fortran /
column-major order). Under this convention

* ``matricize(U, n)`` is the Kolda-Bader mode-n unfolding: element
  ``(i_0, ..., i_{D-1})`` lands in row ``i_n`` and column
  ``sum_{k != n} i_k * prod_{m < k, m != n} I_m``;
* ``vectorize(U @_0 A @_1 B) == kron(B, A) @ vectorize(U)``, i.e. the
  reversed ("descending") Kronecker chain matches ``vec``.
"""

from __future__ import annotations

from functools import reduce
import operator

import numpy as np


def _check_mode(ndim: int, mode: int) -> None:
    if not 0 <= mode < ndim:
        raise ValueError(f"mode {mode} out of range for an order-{ndim} tensor")


def matricize(tensor, mode: int) -> np.ndarray:
    """Mode-`mode` unfolding, shape ``(I_mode, prod of remaining sizes)``."""
    tensor = np.asarray(tensor)
    _check_mode(tensor.ndim, mode)
    return np.moveaxis(tensor, mode, 0).reshape(tensor.shape[mode], -1, order="F")


def dematricize(matrix, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`matricize` for a tensor of the given `shape`."""
    matrix = np.asarray(matrix)
    shape = tuple(int(s) for s in shape)
    _check_mode(len(shape), mode)
    rest = reduce(operator.mul, (s for i, s in enumerate(shape) if i != mode), 1)
    if matrix.shape != (shape[mode], rest):
        raise ValueError(
            f"matrix of shape {matrix.shape} cannot fold into {shape} along mode {mode}"
        )
    moved = (shape[mode],) + tuple(s for i, s in enumerate(shape) if i != mode)
    return np.moveaxis(matrix.reshape(moved, order="F"), 0, mode)


def mode_product(tensor, matrix, mode: int) -> np.ndarray:
    """Mode-n product ``U x_n X``: contracts axis `mode` of U with the columns of X."""
    tensor = np.asarray(tensor)
    matrix = np.asarray(matrix)
    _check_mode(tensor.ndim, mode)
    if matrix.ndim != 2 or matrix.shape[1] != tensor.shape[mode]:
        raise ValueError(
            f"matrix {matrix.shape} is not conformable with mode {mode} "
            f"of size {tensor.shape[mode]}"
        )
    out = np.tensordot(matrix, tensor, axes=(1, mode))
    return np.moveaxis(out, 0, mode)


def multi_mode_product(tensor, matrices, modes=None) -> np.ndarray:
    """Apply ``U x_{m_0} X_0 x_{m_1} X_1 ...``; `modes` defaults to ``0..len-1``."""
    if modes is None:
        modes = range(len(matrices))
    out = np.asarray(tensor)
    for matrix, mode in zip(matrices, modes):
        out = mode_product(out, matrix, mode)
    return out


def vectorize(tensor) -> np.ndarray:
    """Column-major vectorization (first index fastest)."""
    return np.asarray(tensor).reshape(-1, order="F")


def unvectorize(vector, shape) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    vector = np.asarray(vector)
    shape = tuple(int(s) for s in shape)
    if vector.size != int(np.prod(shape)):
        raise ValueError(f"vector of length {vector.size} does not fit shape {shape}")
    return vector.reshape(shape, order="F")
