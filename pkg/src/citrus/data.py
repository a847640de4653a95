"""Forecasting datasets: series loading, windowing, splits, normalization and metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import graphs
from .fileio import read_csv_matrix
from .spectral import eigh

MAPE_FLOOR = 1e-6


def load_series_csv(path) -> np.ndarray:
    """Series matrix with one row per node and one column per timestep."""
    return read_csv_matrix(path)


def window_count(total: int, history: int, horizon: int) -> int:
    return total - history - horizon + 1


def make_windows(series, history: int, horizon: int):
    """All chronological ``(input, target)`` windows of a ``(N, T_total)`` series.

    Window ``s`` uses steps ``s .. s+history-1`` as input, shaped
    ``(N, history, 1)``, and steps ``s+history .. s+history+horizon-1`` as
    target, shaped ``(N, horizon)``. Returns stacked arrays with a leading
    window axis.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 2:
        raise ValueError("series must be a 2-D (nodes x timesteps) matrix")
    if history < 1 or horizon < 1:
        raise ValueError("history and horizon must be positive")
    count = window_count(series.shape[1], history, horizon)
    if count < 1:
        raise ValueError(
            f"series of length {series.shape[1]} is too short for history={history}, horizon={horizon}"
        )
    idx = np.arange(count)[:, None]
    x = series[:, idx + np.arange(history)]            # (N, S, T)
    y = series[:, idx + history + np.arange(horizon)]  # (N, S, H)
    return np.transpose(x, (1, 0, 2))[..., None], np.transpose(y, (1, 0, 2))


def chronological_split(count: int, fractions=(0.7, 0.15, 0.15)) -> dict:
    """Contiguous train/val/test index ranges in time order."""
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must be three nonnegative numbers summing to 1")
    n_train = int(np.floor(fractions[0] * count))
    n_val = int(np.floor(fractions[1] * count))
    n_test = count - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"{count} windows are too few for a train/val/test split")
    return {
        "train": np.arange(n_train),
        "val": np.arange(n_train, n_train + n_val),
        "test": np.arange(n_train + n_val, count),
    }


@dataclass(frozen=True)
class Normalizer:
    """Per-node z-score; nodes with zero spread get unit scale."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, series) -> "Normalizer":
        series = np.asarray(series, dtype=float)
        mean = series.mean(axis=1)
        std = series.std(axis=1)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def transform(self, values):
        """Normalize arrays whose second axis is the node axis."""
        shape = (1, -1) + (1,) * (np.ndim(values) - 2)
        return (values - self.mean.reshape(shape)) / self.std.reshape(shape)

    def inverse(self, values):
        shape = (1, -1) + (1,) * (np.ndim(values) - 2)
        return values * self.std.reshape(shape) + self.mean.reshape(shape)


@dataclass
class ForecastDataset:
    series: np.ndarray
    history: int
    horizon: int
    inputs: np.ndarray = field(repr=False)
    targets: np.ndarray = field(repr=False)
    splits: dict = field(repr=False)
    normalizer: Normalizer = field(repr=False)

    @classmethod
    def build(cls, series, history: int, horizon: int, fractions=(0.7, 0.15, 0.15)) -> "ForecastDataset":
        """Window the series, split chronologically and z-score with train statistics.

        Statistics use every timestep touched by a training window.
        """
        series = np.asarray(series, dtype=float)
        x, y = make_windows(series, history, horizon)
        splits = chronological_split(x.shape[0], fractions)
        last = splits["train"][-1] + history + horizon
        norm = Normalizer.fit(series[:, :last])
        return cls(series, history, horizon, norm.transform(x), norm.transform(y), splits, norm)

    def split(self, name: str):
        idx = self.splits[name]
        return self.inputs[idx], self.targets[idx]

    def raw_targets(self, name: str) -> np.ndarray:
        return self.normalizer.inverse(self.targets[self.splits[name]])


# -- metrics ------------------------------------------------------------------

def mae(y, yhat) -> float:
    return float(np.mean(np.abs(y - yhat)))


def rmse(y, yhat) -> float:
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def mape(y, yhat, floor: float = MAPE_FLOOR):
    """Mean ``|y - yhat| / |y|`` over entries with ``|y| >= floor``.

    Returns ``(value, excluded_count)``; value is NaN when nothing qualifies.
    """
    y = np.asarray(y, dtype=float)
    keep = np.abs(y) >= floor
    excluded = int(y.size - keep.sum())
    if not keep.any():
        return float("nan"), excluded
    return float(np.mean(np.abs(y[keep] - np.asarray(yhat)[keep]) / np.abs(y[keep]))), excluded


def rnmse(y, yhat) -> float:
    """``sqrt(sum (y - yhat)^2 / sum y^2)``."""
    denom = float(np.sum(np.asarray(y, dtype=float) ** 2))
    if denom == 0:
        return float("nan")
    return float(np.sqrt(np.sum((y - yhat) ** 2) / denom))


def forecast_metrics(y, yhat) -> dict:
    """Metrics over all entries and per horizon (last axis)."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {yhat.shape}")

    def block(a, b):
        value, excluded = mape(a, b)
        return {"mae": mae(a, b), "rmse": rmse(a, b), "mape": value,
                "mape_excluded": excluded, "rnmse": rnmse(a, b)}

    out = {"overall": block(y, yhat), "per_horizon": []}
    for h in range(y.shape[-1]):
        out["per_horizon"].append(block(y[..., h], yhat[..., h]))
    return out


# -- synthetic data -----------------------------------------------------------

def planted_series(spatial: graphs.FactorGraph, length: int, t_space: float, t_time: float,
                   seed: int, noise: float = 0.0, offset: float = 0.0) -> np.ndarray:
    """Space-time heat diffusion of white noise on ``spatial x path(length)``.

    Returns ``Z x_1 exp(-t_space L_s) x_2 exp(-t_time L_path) + offset``
    (combinatorial Laplacians) with optional i.i.d. observation noise. Large
    `t_time` gives temporally smooth, forecastable series.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((spatial.n, length))
    ks = _heat(spatial.laplacian, t_space)
    kt = _heat(graphs.path_graph(length).laplacian, t_time)
    u = ks @ z @ kt.T
    u = u / np.sqrt(np.mean(u * u))
    if noise:
        u = u + noise * rng.standard_normal(u.shape)
    return u + offset


def _heat(laplacian, t):
    b = eigh(laplacian)
    return (b.eigenvectors * np.exp(-t * b.eigenvalues)) @ b.eigenvectors.T


def synthetic_distances(n: int, seed: int) -> np.ndarray:
    """Pairwise Euclidean distances of `n` uniform points in the unit square."""
    pts = np.random.default_rng(seed).random((n, 2))
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt(np.sum(diff ** 2, axis=-1))
