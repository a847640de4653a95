"""Continuous product-graph layers and the full forecasting/regression model.

Signals on a product of P factor graphs are arrays of shape
``(N_1, ..., N_P, F)``; batched internals prepend a sample axis, giving
``(B, N_1, ..., N_P, F)``. A block computes

    Z = U x_1 exp(-t_1 L_1) ... x_P exp(-t_P L_P)
    out = act(... act(act(Z W) M_1) ... M_H)  (+ U when residual)

where the heat kernels are applied in each factor's eigenbasis, one mode at a
time, so the product-graph eigenvector matrix is never formed.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .fileio import atomic_write_text
from .graphs import cartesian_sum
from .spectral import SpectralBasis, filter_tensor, heat_kernel_dense
from .tensor import matricize, mode_product, unvectorize

ACTIVATIONS = ("relu", "leaky_relu", "identity")
RF_MODES = ("scalar", "per_factor", "per_factor_channel")


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(t):
    t = np.asarray(t, dtype=float)
    return t + np.log(-np.expm1(-t))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass
class ReceptiveField:
    """Learnable diffusion times, stored unconstrained.

    The effective time is ``softplus(raw)``; `raw` has shape ``()`` for
    ``scalar``, ``(P,)`` for ``per_factor`` and ``(P, F_in)`` for
    ``per_factor_channel``.
    """

    mode: str
    raw: np.ndarray

    def __post_init__(self):
        if self.mode not in RF_MODES:
            raise ValueError(f"unknown receptive-field mode {self.mode!r}")
        self.raw = np.array(self.raw, dtype=float)
        expected_ndim = RF_MODES.index(self.mode)
        if self.raw.ndim != expected_ndim:
            raise ValueError(f"{self.mode} receptive field needs a {expected_ndim}-d raw array")

    @classmethod
    def from_times(cls, mode, t):
        return cls(mode, inverse_softplus(t))

    @classmethod
    def constant(cls, mode, n_factors, channels, t=1.0):
        shape = {"scalar": (), "per_factor": (n_factors,), "per_factor_channel": (n_factors, channels)}
        return cls.from_times(mode, np.full(shape[mode], float(t)))

    @property
    def t(self) -> np.ndarray:
        return softplus(self.raw)

    def times(self, n_factors: int) -> np.ndarray:
        """Effective times as a ``(P, F_t)`` array (``F_t = 1`` unless per channel)."""
        t = self.t
        if self.mode == "scalar":
            return np.full((n_factors, 1), t, dtype=t.dtype)
        if self.mode == "per_factor":
            return t[:, None]
        return t


@dataclass
class CitrusBlock:
    receptive: ReceptiveField
    weight: np.ndarray
    mlp: list = field(default_factory=list)
    activation: str = "relu"
    slope: float = 0.01
    residual: bool = False

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weight = np.array(self.weight, dtype=float)
        self.mlp = [np.array(m, dtype=float) for m in self.mlp]
        dims = [self.weight.shape] + [m.shape for m in self.mlp]
        for (_, a), (b, _) in zip(dims, dims[1:]):
            if a != b:
                raise ValueError(f"block MLP dimensions do not chain: {dims}")
        if self.residual and self.out_channels != self.in_channels:
            raise ValueError("a residual block needs equal input and output channels")
        if self.receptive.mode == "per_factor_channel" and self.receptive.raw.shape[1] != self.in_channels:
            raise ValueError("per-channel receptive field must have one column per input channel")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def out_channels(self) -> int:
        return (self.mlp[-1] if self.mlp else self.weight).shape[1]

    def parameters(self, prefix=""):
        params = {prefix + "t_raw": self.receptive.raw, prefix + "weight": self.weight}
        for i, m in enumerate(self.mlp):
            params[f"{prefix}mlp.{i}"] = m
        return params


def _act(x, kind, slope):
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x > 0, x, slope * x)
    return x


def _act_grad(x, kind, slope):
    if kind == "relu":
        return (x > 0).astype(float)
    if kind == "leaky_relu":
        return np.where(x > 0, 1.0, slope)
    return np.ones_like(x)


def _to_spectral(x, bases, offset=1):
    """Project every graph mode onto its (possibly truncated) eigenbasis."""
    for p, b in enumerate(bases):
        x = mode_product(x, b.eigenvectors.T, p + offset)
    return x


def _from_spectral(x, bases, offset=1):
    for p, b in enumerate(bases):
        x = mode_product(x, b.eigenvectors, p + offset)
    return x


def _channel(x, w):
    return x @ w


def _channel_grad(x, dy):
    """Gradient of ``x @ w`` w.r.t. `w`, summed over every leading axis."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def block_forward(x, bases, block: CitrusBlock, keep_cache=False):
    """Batched block forward; `x` has shape ``(B, N_1, ..., N_P, F_in)``."""
    n_factors = len(bases)
    if x.ndim != n_factors + 2 or x.shape[-1] != block.in_channels:
        raise ValueError(
            f"input of shape {x.shape} does not fit a block over {n_factors} factors "
            f"with {block.in_channels} input channels"
        )
    for p, b in enumerate(bases):
        if x.shape[p + 1] != b.source_n:
            raise ValueError(f"mode {p} has size {x.shape[p + 1]}, basis expects {b.source_n}")
    times = block.receptive.times(n_factors)
    lam = filter_tensor([b.eigenvalues for b in bases], times)
    xhat = _to_spectral(x, bases)
    z = _from_spectral(lam * xhat, bases)
    pre = [_channel(z, block.weight)]
    acts = [_act(pre[0], block.activation, block.slope)]
    for m in block.mlp:
        pre.append(_channel(acts[-1], m))
        acts.append(_act(pre[-1], block.activation, block.slope))
    out = acts[-1] + x if block.residual else acts[-1]
    cache = (x, times, lam, xhat, z, pre, acts) if keep_cache else None
    return out, cache


def block_backward(dout, cache, bases, block: CitrusBlock):
    """Reverse pass of :func:`block_forward`; returns ``(dx, grads)``."""
    x, times, lam, xhat, z, pre, acts = cache
    grads = {}
    da = dout
    for i in range(len(block.mlp) - 1, -1, -1):
        dpre = da * _act_grad(pre[i + 1], block.activation, block.slope)
        grads[f"mlp.{i}"] = _channel_grad(acts[i], dpre)
        da = dpre @ block.mlp[i].T
    dpre = da * _act_grad(pre[0], block.activation, block.slope)
    grads["weight"] = _channel_grad(z, dpre)
    dz = dpre @ block.weight.T
    dg = _to_spectral(dz, bases)
    dxhat = lam * dg
    dlam = dg * xhat
    # reduce over the batch axis and, for a shared filter, over channels
    dlam = dlam.sum(axis=0)
    if lam.shape[-1] == 1:
        dlam = dlam.sum(axis=-1, keepdims=True)
    weighted = dlam * lam
    n_factors = len(bases)
    dtimes = np.empty_like(times)
    for p, b in enumerate(bases):
        other = tuple(a for a in range(n_factors) if a != p)
        per_eig = weighted.sum(axis=other)  # (K_p, F_t)
        dtimes[p] = -(b.eigenvalues @ per_eig)
    mode = block.receptive.mode
    if mode == "scalar":
        dt = dtimes.sum()
    elif mode == "per_factor":
        dt = dtimes[:, 0]
    else:
        dt = dtimes
    grads["t_raw"] = np.asarray(dt * sigmoid(block.receptive.raw))
    dx = _from_spectral(dxhat, bases)
    if block.residual:
        dx = dx + dout
    return dx, grads


def spectral_forward(u, bases, block: CitrusBlock) -> np.ndarray:
    """Block output for a single signal of shape ``(N_1, ..., N_P, F_in)``."""
    out, _ = block_forward(np.asarray(u, dtype=float)[None], bases, block)
    return out[0]


def core_tensor_forward(u, laplacians, t, weight) -> np.ndarray:
    """Reference filter ``U x_1 e^{-tL_1} ... x_P e^{-tL_P} x_{P+1} W^T`` with dense kernels."""
    u = np.asarray(u, dtype=float)
    if u.ndim != len(laplacians) + 1:
        raise ValueError("signal order must be one more than the number of factors")
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(laplacians),))
    out = u
    for p, (lap, tp) in enumerate(zip(laplacians, t)):
        if lap.shape[0] != u.shape[p]:
            raise ValueError(f"mode {p} has size {u.shape[p]}, Laplacian is {lap.shape}")
        out = mode_product(out, heat_kernel_dense(lap, tp), p)
    return mode_product(out, np.asarray(weight, dtype=float).T, len(laplacians))


def product_graph_forward(u, laplacians, t, weight) -> np.ndarray:
    """Same filter through the product-graph Laplacian: ``e^{-t L} [U_(P+1)]^T W``."""
    u = np.asarray(u, dtype=float)
    n_factors = len(laplacians)
    big = cartesian_sum(laplacians, descending=True)
    signal = matricize(u, n_factors).T
    out = heat_kernel_dense(big, t) @ signal @ np.asarray(weight, dtype=float)
    shape = u.shape[:-1] + (out.shape[1],)
    return np.stack([unvectorize(out[:, c], shape[:-1]) for c in range(out.shape[1])], axis=-1)


def tpdeg_rhs(u, laplacians):
    out = np.zeros_like(u)
    for p, lap in enumerate(laplacians):
        out -= mode_product(u, lap, p)
    return out


def tpdeg_integrate(u0, laplacians, t_end: float, dt: float) -> np.ndarray:
    """Classic RK4 on ``dU/dt = -sum_p U x_p L_p``.

    Modes beyond ``len(laplacians)`` are carried along untouched. The last step
    is shortened so the integration ends exactly at `t_end`.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    u = np.array(u0, dtype=float)
    for p, lap in enumerate(laplacians):
        if lap.shape != (u.shape[p], u.shape[p]):
            raise ValueError(f"Laplacian {p} of shape {lap.shape} does not fit mode size {u.shape[p]}")
    n_full = int(np.floor(t_end / dt + 1e-9))
    steps = [dt] * n_full
    rest = t_end - n_full * dt
    if rest > 1e-12 * max(1.0, t_end):
        steps.append(rest)
    for h in steps:
        k1 = tpdeg_rhs(u, laplacians)
        k2 = tpdeg_rhs(u + 0.5 * h * k1, laplacians)
        k3 = tpdeg_rhs(u + 0.5 * h * k2, laplacians)
        k4 = tpdeg_rhs(u + h * k3, laplacians)
        u = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return u


def glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class CitrusModel:
    """Encoder, CITRUS blocks and a linear readout over shared factor bases.

    ``readout="node"``: the decoder maps channels to outputs at every product
    node, giving ``(N_1, ..., N_P, F_out)``.

    ``readout="forecast"`` (two factors: space then time): the decoder maps
    each spatial node's ``(T, F)`` slab, flattened time-major, to `H` horizons,
    giving ``(N_space, H)``.

    With `concat_input` the raw input is placed before the block output along
    the channel axis ahead of the decoder.
    """

    bases: list
    blocks: list
    decoder: np.ndarray
    encoder: np.ndarray | None = None
    decoder_bias: np.ndarray | None = None
    readout: str = "node"
    concat_input: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.readout not in ("node", "forecast"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.readout == "forecast" and len(self.bases) != 2:
            raise ValueError("forecast readout needs exactly two factors (space, time)")
        width = self.in_channels if self.encoder is None else self.encoder.shape[1]
        for i, b in enumerate(self.blocks):
            if b.in_channels != width:
                raise ValueError(f"block {i} expects {b.in_channels} channels, gets {width}")
            width = b.out_channels
        if self.concat_input:
            width += self.in_channels
        rows = width if self.readout == "node" else width * self.bases[1].source_n
        if self.decoder.shape[0] != rows:
            raise ValueError(f"decoder has {self.decoder.shape[0]} rows, expected {rows}")

    @property
    def n_factors(self) -> int:
        return len(self.bases)

    @property
    def in_channels(self) -> int:
        if self.encoder is not None:
            return self.encoder.shape[0]
        return self.blocks[0].in_channels if self.blocks else self.metadata.get("in_channels", 1)

    def parameters(self) -> dict:
        params = {}
        if self.encoder is not None:
            params["encoder"] = self.encoder
        for i, b in enumerate(self.blocks):
            params.update(b.parameters(f"blocks.{i}."))
        params["decoder"] = self.decoder
        if self.decoder_bias is not None:
            params["decoder_bias"] = self.decoder_bias
        return params

    def copy(self) -> "CitrusModel":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "CitrusModel":
        """Copy with every learnable array cast to `dtype` (bases untouched)."""
        clone = self.copy()
        if clone.encoder is not None:
            clone.encoder = clone.encoder.astype(dtype)
        for b in clone.blocks:
            b.receptive.raw = b.receptive.raw.astype(dtype)
            b.weight = b.weight.astype(dtype)
            b.mlp = [m.astype(dtype) for m in b.mlp]
        clone.decoder = clone.decoder.astype(dtype)
        if clone.decoder_bias is not None:
            clone.decoder_bias = clone.decoder_bias.astype(dtype)
        return clone

    def with_bases(self, bases) -> "CitrusModel":
        clone = self.copy()
        clone.bases = list(bases)
        return clone

    def forward(self, x) -> np.ndarray:
        """Forward for a single sample (no batch axis)."""
        return forward_batch(self, np.asarray(x, dtype=float)[None])[0]


def forward_batch(model: CitrusModel, x, keep_cache=False):
    """Batched forward; returns predictions, plus the cache when requested."""
    if x.ndim != model.n_factors + 2:
        raise ValueError(f"batched input must have {model.n_factors + 2} axes, got {x.shape}")
    if x.shape[-1] != model.in_channels:
        raise ValueError(f"input has {x.shape[-1]} channels, model expects {model.in_channels}")
    h = _channel(x, model.encoder) if model.encoder is not None else x
    block_caches = []
    for block in model.blocks:
        h, c = block_forward(h, model.bases, block, keep_cache)
        block_caches.append(c)
    feats = np.concatenate([x, h], axis=-1) if model.concat_input else h
    if model.readout == "node":
        flat = feats
    else:
        flat = feats.reshape(feats.shape[0], feats.shape[1], -1)
    y = _channel(flat, model.decoder)
    if model.decoder_bias is not None:
        y = y + model.decoder_bias
    if keep_cache:
        return y, (x, block_caches, feats, flat)
    return y


def backward_batch(model: CitrusModel, dy, cache) -> dict:
    """Gradients of a scalar loss w.r.t. every parameter, given ``dL/dy``."""
    x, block_caches, feats, flat = cache
    grads = {}
    grads["decoder"] = _channel_grad(flat, dy)
    if model.decoder_bias is not None:
        grads["decoder_bias"] = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dfeats = (dy @ model.decoder.T).reshape(feats.shape)
    dh = dfeats[..., x.shape[-1]:] if model.concat_input else dfeats
    for i in range(len(model.blocks) - 1, -1, -1):
        dh, bg = block_backward(dh, block_caches[i], model.bases, model.blocks[i])
        for k, v in bg.items():
            grads[f"blocks.{i}.{k}"] = v
    if model.encoder is not None:
        grads["encoder"] = _channel_grad(x, dh)
    return {k: grads[k] for k in model.parameters()}


def init_model(
    bases,
    in_channels: int,
    block_channels,
    out_dim: int,
    *,
    rng,
    encoder_channels: int | None = None,
    mlp_layers: int = 0,
    activation: str = "relu",
    slope: float = 0.01,
    residual: bool = False,
    receptive_mode: str = "per_factor",
    t_init: float = 1.0,
    readout: str = "node",
    concat_input: bool = False,
    decoder_bias: bool = False,
) -> CitrusModel:
    """Glorot-initialised model; every receptive field starts at ``t_init``.

    Block ``i`` maps its input width to ``block_channels[i]`` and then runs
    `mlp_layers` square hidden layers of that width.
    """
    n_factors = len(bases)
    width = in_channels
    encoder = None
    if encoder_channels is not None:
        encoder = glorot(rng, in_channels, encoder_channels)
        width = encoder_channels
    blocks = []
    for ch in block_channels:
        rf = ReceptiveField.constant(receptive_mode, n_factors, width, t_init)
        w = glorot(rng, width, ch)
        mlp = [glorot(rng, ch, ch) for _ in range(mlp_layers)]
        blocks.append(
            CitrusBlock(rf, w, mlp, activation, slope, residual and width == ch)
        )
        width = ch
    if concat_input:
        width += in_channels
    rows = width if readout == "node" else width * bases[1].source_n
    decoder = glorot(rng, rows, out_dim)
    bias = np.zeros(out_dim) if decoder_bias else None
    return CitrusModel(
        list(bases), blocks, decoder, encoder, bias, readout, concat_input,
        {"in_channels": in_channels},
    )


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_FORMAT = "citrus-checkpoint/1"


def _arr(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(v) for v in a.reshape(-1)]}


def _unarr(d):
    return np.array(d["data"], dtype=float).reshape(d["shape"])


def checkpoint_dict(model: CitrusModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "readout": model.readout,
        "concat_input": model.concat_input,
        "metadata": model.metadata,
        "bases": [
            {"source_n": b.source_n, "eigenvalues": _arr(b.eigenvalues), "eigenvectors": _arr(b.eigenvectors)}
            for b in model.bases
        ],
        "encoder": None if model.encoder is None else _arr(model.encoder),
        "decoder": _arr(model.decoder),
        "decoder_bias": None if model.decoder_bias is None else _arr(model.decoder_bias),
        "blocks": [
            {
                "receptive_mode": b.receptive.mode,
                "t_raw": _arr(b.receptive.raw),
                "weight": _arr(b.weight),
                "mlp": [_arr(m) for m in b.mlp],
                "activation": b.activation,
                "slope": b.slope,
                "residual": b.residual,
            }
            for b in model.blocks
        ],
    }


def model_from_dict(d) -> CitrusModel:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {d.get('format')!r}")
    bases = [
        SpectralBasis(_unarr(b["eigenvalues"]), _unarr(b["eigenvectors"]), int(b["source_n"]))
        for b in d["bases"]
    ]
    blocks = [
        CitrusBlock(
            ReceptiveField(b["receptive_mode"], _unarr(b["t_raw"])),
            _unarr(b["weight"]),
            [_unarr(m) for m in b["mlp"]],
            b["activation"],
            float(b["slope"]),
            bool(b["residual"]),
        )
        for b in d["blocks"]
    ]
    return CitrusModel(
        bases,
        blocks,
        _unarr(d["decoder"]),
        None if d["encoder"] is None else _unarr(d["encoder"]),
        None if d["decoder_bias"] is None else _unarr(d["decoder_bias"]),
        d["readout"],
        bool(d["concat_input"]),
        d.get("metadata", {}),
    )


def save_checkpoint(model: CitrusModel, path) -> None:
    atomic_write_text(path, json.dumps(checkpoint_dict(model), sort_keys=True) + "\n")


def load_checkpoint(path) -> CitrusModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
