"""Dirichlet energy, over-smoothing bounds, stability experiments and product mismatch bounds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import graphs
from .layer import CitrusBlock, ReceptiveField, block_forward, forward_batch, init_model, glorot
from .spectral import DegenerateSpectrumError, SpectralBasis, eigh
from .tensor import mode_product
from .training import Split, TrainConfig, evaluate, train

ZERO_TOL = 1e-8
MAX_TEACHER_DRAWS = 100


class DegenerateInputError(ValueError):
    """A reference quantity (e.g. the initial energy) is zero."""


# -- energies and Laplacians --------------------------------------------------

def tensor_dirichlet_energy(u, normalized_laplacians) -> float:
    """Tensorial Dirichlet energy of a ``(N_1, ..., N_P, F)`` signal.

    ``(1/P) sum_f sum_p tr(U_f(p)^T Lhat_p U_f(p))``, computed as
    ``(1/P) sum_p <U, U x_p Lhat_p>``.
    """
    u = np.asarray(u, dtype=float)
    n_factors = len(normalized_laplacians)
    if u.ndim != n_factors + 1:
        raise ValueError("signal order must be one more than the number of factors")
    total = 0.0
    for p, lap in enumerate(normalized_laplacians):
        if lap.shape != (u.shape[p], u.shape[p]):
            raise ValueError(f"Laplacian {p} of shape {lap.shape} does not fit mode size {u.shape[p]}")
        total += float(np.sum(u * mode_product(u, lap, p)))
    return total / n_factors


def product_normalized_laplacian(normalized_laplacians) -> np.ndarray:
    """``(1/P) (+)_p Lhat_p`` in the descending order that matches vectorization."""
    n_factors = len(normalized_laplacians)
    if n_factors == 0:
        raise ValueError("need at least one factor")
    return graphs.cartesian_sum([np.asarray(l) / n_factors for l in normalized_laplacians], descending=True)


def spectral_gap(normalized_laplacian, zero_tol: float = ZERO_TOL) -> float:
    """Smallest eigenvalue above `zero_tol`."""
    vals = eigh(normalized_laplacian).eigenvalues
    nonzero = vals[vals > zero_tol]
    if nonzero.size == 0:
        raise DegenerateSpectrumError("no nonzero eigenvalue (graph has no edges)")
    return float(nonzero[0])


def top_singular_sq(weight) -> float:
    """Squared largest singular value, via the eigenvalues of ``W^T W``."""
    w = np.asarray(weight, dtype=float)
    return float(max(eigh(w.T @ w).eigenvalues[-1], 0.0))


# -- over-smoothing -----------------------------------------------------------

@dataclass
class EnergyReport:
    """Per-layer energies of a stack together with the over-smoothing bound.

    Index ``l`` of `energies`, `log_ratio`, `bound` and `bound_layerwise` is
    layer ``l`` (0 = input). `bound` is ``l (ln s - 2 t~ l~ / P)`` with the
    supremum ``s``; `bound_layerwise` uses each layer's own ``s_l`` and ``t~``
    (the curve usually plotted). Logs are natural.
    """

    energies: np.ndarray
    log_ratio: np.ndarray
    bound: np.ndarray
    bound_layerwise: np.ndarray
    s_values: np.ndarray
    s: float
    gaps: np.ndarray
    t_tilde: np.ndarray
    lambda_tilde: np.ndarray
    argmin_factor: np.ndarray
    slope: float
    regime: str

    def rows(self):
        for l in range(len(self.energies)):
            yield [
                l,
                self.energies[l],
                self.log_ratio[l],
                self.bound[l],
                self.bound_layerwise[l],
                self.s_values[l - 1] if l else float("nan"),
            ]

    @property
    def bound_holds(self) -> bool:
        ok = self.log_ratio <= self.bound + np.log1p(1e-8)
        return bool(np.all(ok | np.isneginf(self.log_ratio)))


def oversmoothing_bound(layer_weights, layer_times, gaps, n_layers=None) -> dict:
    """Evaluate the exponential energy bound for a stack of layers.

    Parameters
    ----------
    layer_weights : list of list of ndarray
        All weight matrices of each layer (mixing matrix and MLP weights).
    layer_times : array_like
        Per-factor receptive fields, shape ``(P,)`` shared by all layers or
        ``(L, P)`` per layer.
    gaps : array_like
        Smallest nonzero eigenvalue of each factor's normalized Laplacian.

    Returns
    -------
    dict
        ``s_values`` (per layer), ``s`` (their supremum), per-layer ``m``,
        ``t_tilde``, ``lambda_tilde``, the ``slope``
        ``ln s - (2/P) min_l t~_l l~_l``, the ``bound`` line and the
        per-layer ``bound_layerwise`` line, and the ``regime`` (``"decay"``
        when the slope is negative).
    """
    gaps = np.asarray(gaps, dtype=float)
    n_factors = gaps.shape[0]
    n_layers = len(layer_weights) if n_layers is None else n_layers
    times = np.asarray(layer_times, dtype=float)
    if times.ndim == 1:
        times = np.tile(times, (n_layers, 1))
    s_values = np.array([np.prod([top_singular_sq(w) for w in ws]) for ws in layer_weights[:n_layers]])
    s = float(np.max(s_values))
    rates = times * gaps[None, :]
    m = np.argmin(rates, axis=1)
    t_tilde = times[np.arange(n_layers), m]
    lambda_tilde = gaps[m]
    decay = 2.0 / n_factors * t_tilde * lambda_tilde
    with np.errstate(divide="ignore"):
        slope = float(np.log(s) - decay.min())
        layerwise = np.log(s_values) - decay
    ls = np.arange(n_layers + 1)
    return {
        "s_values": s_values,
        "s": s,
        "argmin_factor": m,
        "t_tilde": t_tilde,
        "lambda_tilde": lambda_tilde,
        "slope": slope,
        "bound": ls * slope,
        "bound_layerwise": np.concatenate([[0.0], ls[1:] * layerwise]),
        "regime": "decay" if slope < 0 else "no-decay",
    }


def energy_trajectory(blocks, normalized_laplacians, x0, zero_tol: float = ZERO_TOL) -> EnergyReport:
    """Run a stack layer by layer and record energies against the bound.

    Each block diffuses with ``exp(-t_p Lhat_p / P)`` per factor (the product
    normalized Laplacian) before its weights and activations. Blocks must not
    use residual connections.
    """
    n_factors = len(normalized_laplacians)
    for i, b in enumerate(blocks):
        if b.residual:
            raise ValueError(f"block {i} is residual; the energy bound does not apply")
    scaled = [eigh(np.asarray(l) / n_factors) for l in normalized_laplacians]
    gaps = np.array([spectral_gap(l, zero_tol) for l in normalized_laplacians])
    x = np.asarray(x0, dtype=float)
    e0 = tensor_dirichlet_energy(x, normalized_laplacians)
    if e0 <= 0:
        raise DegenerateInputError("initial signal has zero Dirichlet energy")
    energies = [e0]
    h = x[None]
    for b in blocks:
        h, _ = block_forward(h, scaled, b)
        energies.append(max(tensor_dirichlet_energy(h[0], normalized_laplacians), 0.0))
    energies = np.array(energies)
    with np.errstate(divide="ignore"):
        log_ratio = np.log(energies / e0)
    times = np.array([b.receptive.times(n_factors).min(axis=1) for b in blocks])
    info = oversmoothing_bound([[b.weight, *b.mlp] for b in blocks], times, gaps)
    return EnergyReport(
        energies=energies,
        log_ratio=log_ratio,
        bound=info["bound"],
        bound_layerwise=info["bound_layerwise"],
        s_values=info["s_values"],
        s=info["s"],
        gaps=gaps,
        t_tilde=info["t_tilde"],
        lambda_tilde=info["lambda_tilde"],
        argmin_factor=info["argmin_factor"],
        slope=info["slope"],
        regime=info["regime"],
    )


def random_stack(rng, channels, n_factors, t, weight_scale=1.0, activation="relu", slope=0.01):
    """Blocks with Gaussian weights ``N(0, 1) * weight_scale`` and fixed per-factor times."""
    t = np.broadcast_to(np.asarray(t, dtype=float), (n_factors,))
    blocks = []
    for f_in, f_out in zip(channels, channels[1:]):
        w = rng.standard_normal((f_in, f_out)) * weight_scale
        blocks.append(
            CitrusBlock(ReceptiveField.from_times("per_factor", t), w, [], activation, slope)
        )
    return blocks


# -- stability ----------------------------------------------------------------

@dataclass(frozen=True)
class StabilityConfig:
    sizes: tuple = (20, 30)
    edge_prob: tuple = (0.1, 0.1)
    teacher_t: tuple = (2.0, 3.0)
    in_channels: int = 6
    teacher_channels: tuple = (5, 4, 2)
    student_channels: tuple = (4, 4)
    student_activation: str = "leaky_relu"
    normalize_teacher: bool = True
    student_restarts: int = 2
    snr_grid: tuple = (np.inf, 20.0, 10.0, 0.0, -10.0)
    realizations: int = 10
    test_frac: float = 0.15
    val_frac: float = 0.15
    learning_rate: float = 0.05
    epochs: int = 600
    patience: int = 100
    seed: int = 0


@dataclass
class StabilityReport:
    snr_grid: tuple
    cells: list = field(default_factory=list)
    per_realization: list = field(default_factory=list)

    def cell(self, snr1, snr2):
        for c in self.cells:
            if c["snr1"] == snr1 and c["snr2"] == snr2:
                return c
        raise KeyError((snr1, snr2))

    def mse_grid(self) -> np.ndarray:
        """Mean test MSE, rows indexed by factor-1 SNR, columns by factor-2 SNR."""
        g = np.empty((len(self.snr_grid), len(self.snr_grid)))
        for i, a in enumerate(self.snr_grid):
            for j, b in enumerate(self.snr_grid):
                g[i, j] = self.cell(a, b)["mse_mean"]
        return g


def _seed(*keys):
    return np.random.SeedSequence([int(k) for k in keys])


def _rng(*keys):
    return np.random.default_rng(_seed(*keys))


def teacher_blocks(rng, n_factors, in_channels, channels, t):
    """Generating stack: ReLU on hidden layers, linear last layer."""
    blocks = []
    width = in_channels
    for i, ch in enumerate(channels):
        act = "identity" if i == len(channels) - 1 else "relu"
        rf = ReceptiveField.from_times("per_factor", np.asarray(t, dtype=float))
        blocks.append(CitrusBlock(rf, glorot(rng, width, ch), [], act))
        width = ch
    return blocks


def run_stack(blocks, bases, x):
    h = np.asarray(x, dtype=float)[None]
    for b in blocks:
        h, _ = block_forward(h, bases, b)
    return h[0]


def node_split_masks(shape, test_frac, val_frac, rng):
    """Random disjoint node masks over the product graph: test, then val from the rest."""
    n = int(np.prod(shape))
    order = rng.permutation(n)
    n_test = int(round(test_frac * n))
    n_val = int(round(val_frac * (n - n_test)))
    masks = {}
    for name, idx in (
        ("test", order[:n_test]),
        ("val", order[n_test:n_test + n_val]),
        ("train", order[n_test + n_val:]),
    ):
        m = np.zeros(n, dtype=bool)
        m[idx] = True
        masks[name] = m.reshape(shape, order="F")[..., None]
    return masks


def stability_realization(cfg: StabilityConfig, r: int) -> dict:
    """Clean graphs, teacher data and splits for realization `r`."""
    n_factors = len(cfg.sizes)
    clean = [
        graphs.erdos_renyi(n, p, _seed(cfg.seed, r, 1, f).generate_state(1)[0], require_connected=True)
        for f, (n, p) in enumerate(zip(cfg.sizes, cfg.edge_prob))
    ]
    bases = [eigh(g.normalized_laplacian) for g in clean]
    x = _rng(cfg.seed, r, 3).standard_normal(tuple(cfg.sizes) + (cfg.in_channels,))
    # a ReLU teacher can die (identically zero output); redraw it from a derived stream
    for attempt in range(MAX_TEACHER_DRAWS):
        rng = _rng(cfg.seed, r, 2) if attempt == 0 else _rng(cfg.seed, r, 2, attempt)
        teacher = teacher_blocks(rng, n_factors, cfg.in_channels, cfg.teacher_channels, cfg.teacher_t)
        y = run_stack(teacher, bases, x)
        if np.any(y != 0):
            break
    else:
        raise DegenerateInputError(f"no live teacher in {MAX_TEACHER_DRAWS} draws")
    if cfg.normalize_teacher:
        # the last layer is linear, so rescaling its weight gives unit-RMS targets
        rms = float(np.sqrt(np.mean(y * y)))
        if rms > 0:
            last = teacher[-1]
            teacher[-1] = CitrusBlock(last.receptive, last.weight / rms, last.mlp, last.activation, last.slope)
            y = run_stack(teacher, bases, x)
    masks = node_split_masks(tuple(cfg.sizes), cfg.test_frac, cfg.val_frac, _rng(cfg.seed, r, 4))
    return {"clean": clean, "bases": bases, "teacher": teacher, "x": x, "y": y, "masks": masks}


def perturbed_graphs(cfg: StabilityConfig, clean, r, snrs):
    """Perturb each factor; the noise direction depends only on (seed, r, factor)."""
    out = []
    for f, (g, snr) in enumerate(zip(clean, snrs)):
        seed = int(_seed(cfg.seed, r, 5, f).generate_state(1)[0])
        out.append(graphs.perturb(g, snr, seed))
    return out


def train_student(cfg: StabilityConfig, data: dict, bases, r: int):
    """Train `cfg.student_restarts` seeded students and keep the best on validation.

    Returns ``(result, test_mse)`` of the selected student.
    """
    x = data["x"][None]
    y = data["y"][None]
    masks = data["masks"]
    dataset = {k: Split(x, y, masks[k]) for k in ("train", "val", "test")}
    tcfg = TrainConfig(
        loss="mse", learning_rate=cfg.learning_rate, batch_size=1,
        max_epochs=cfg.epochs, patience=cfg.patience, seed=int(_seed(cfg.seed, r, 7).generate_state(1)[0]),
    )
    best = None
    for k in range(cfg.student_restarts):
        model = init_model(
            bases,
            cfg.in_channels,
            list(cfg.student_channels),
            data["y"].shape[-1],
            rng=_rng(cfg.seed, r, 6, k),
            activation=cfg.student_activation,
            receptive_mode="per_factor",
        )
        result = train(model, dataset, tcfg)
        val = evaluate(result.model, dataset["val"], "mse")
        if best is None or val < best[0]:
            best = (val, result)
    result = best[1]
    return result, evaluate(result.model, dataset["test"], "mse")


def stability_run(cfg: StabilityConfig, progress=None) -> StabilityReport:
    """Student test MSE over a grid of per-factor SNRs (two factors).

    For every realization the clean graphs, teacher outputs, splits, noise
    directions and student initialization are shared across grid cells, so
    cells differ only in the noise level. Each cell also records the
    output deviation of the teacher itself on perturbed vs clean graphs.
    """
    if len(cfg.sizes) != 2:
        raise ValueError("the SNR grid experiment uses two factor graphs")
    if cfg.realizations < 1:
        raise ValueError("need at least one realization")
    report = StabilityReport(tuple(cfg.snr_grid))
    acc = {}
    for r in range(cfg.realizations):
        data = stability_realization(cfg, r)
        for snr1 in cfg.snr_grid:
            for snr2 in cfg.snr_grid:
                pert = perturbed_graphs(cfg, data["clean"], r, (snr1, snr2))
                bases = [eigh(g.normalized_laplacian) for g, _ in pert]
                deviation = float(np.linalg.norm(run_stack(data["teacher"], bases, data["x"]) - data["y"]))
                _, mse = train_student(cfg, data, bases, r)
                row = {
                    "realization": r, "snr1": snr1, "snr2": snr2, "test_mse": mse,
                    "eps1": pert[0][1].epsilon, "eps2": pert[1][1].epsilon, "deviation": deviation,
                }
                report.per_realization.append(row)
                acc.setdefault((snr1, snr2), []).append(row)
                if progress is not None:
                    progress(row)
    for snr1 in cfg.snr_grid:
        for snr2 in cfg.snr_grid:
            rows = acc[(snr1, snr2)]
            mses = np.array([x["test_mse"] for x in rows])
            report.cells.append({
                "snr1": snr1,
                "snr2": snr2,
                "mse_mean": float(mses.mean()),
                "mse_std": float(mses.std()),
                "eps1_mean": float(np.mean([x["eps1"] for x in rows])),
                "eps2_mean": float(np.mean([x["eps2"] for x in rows])),
                "deviation_mean": float(np.mean([x["deviation"] for x in rows])),
                "realizations": len(rows),
            })
    return report


def count_order_violations(grid) -> dict:
    """Adjacent increases of the MSE grid along rising SNR.

    The grid's axes are ordered by *decreasing* SNR (as in ``inf, 20, ...``), so
    MSE should be non-decreasing along each row and column.
    """
    grid = np.asarray(grid)
    row_viol = [int(np.sum(np.diff(grid[i, :]) < 0)) for i in range(grid.shape[0])]
    col_viol = [int(np.sum(np.diff(grid[:, j]) < 0)) for j in range(grid.shape[1])]
    return {"rows": row_viol, "cols": col_viol}


def deviation_ratios(
    sizes=(20, 30), edge_prob=(0.1, 0.1), t=(2.0, 3.0), in_channels=6, channels=(5, 4, 2),
    snr_db=40.0, realizations=20, seed=0,
):
    """Teacher output deviation when the perturbation norm is doubled.

    For each realization all factors are perturbed along a fixed noise
    direction at `snr_db` and at ``snr_db - 20 log10(2)`` (twice the raw
    error norm). Returns per-realization ratios
    ``||phi - phi~(2 eps)|| / ||phi - phi~(eps)||`` and the relative sizes
    ``eps_p / ||A_p||_2`` at the smaller level.
    """
    cfg = StabilityConfig(sizes=tuple(sizes), edge_prob=tuple(edge_prob), teacher_t=tuple(t),
                          in_channels=in_channels, teacher_channels=tuple(channels), seed=seed)
    ratios = []
    rel_eps = []
    doubled = snr_db - 20.0 * np.log10(2.0)
    for r in range(realizations):
        data = stability_realization(cfg, r)
        devs = []
        for level in (snr_db, doubled):
            pert = perturbed_graphs(cfg, data["clean"], r, [level] * len(sizes))
            bases = [eigh(g.normalized_laplacian) for g, _ in pert]
            devs.append(np.linalg.norm(run_stack(data["teacher"], bases, data["x"]) - data["y"]))
            if level == snr_db:
                rel_eps.append([
                    p.epsilon / np.linalg.norm(g.adjacency, 2) for g, (_, p) in zip(data["clean"], pert)
                ])
        ratios.append(devs[1] / devs[0])
    return np.array(ratios), np.array(rel_eps)


# -- planted recovery ---------------------------------------------------------

@dataclass(frozen=True)
class RecoveryResult:
    test_rnmse: float
    true_t: np.ndarray
    learned_t: np.ndarray
    history: list

    @property
    def t_relative_error(self) -> np.ndarray:
        return np.abs(self.learned_t - self.true_t) / self.true_t


def planted_recovery(
    sizes=(10, 12), t=(0.5, 2.0), channels=3, samples=96, noise=0.05, learning_rate=0.02,
    epochs=500, seed=0,
) -> RecoveryResult:
    """Fit a student to a linear one-block teacher with known per-factor times.

    Targets carry i.i.d. Gaussian noise of relative size `noise` (to the
    teacher's RMS). Samples are split 2/3, 1/6, 1/6 into train, val and test;
    test rNMSE is measured against the noisy targets. The student shares the
    teacher's architecture but starts from ``t = 1`` and fresh weights.
    """
    true_t = np.asarray(t, dtype=float)
    gs = [
        graphs.erdos_renyi(n, 0.3, int(_seed(seed, 1, f).generate_state(1)[0]), require_connected=True)
        for f, n in enumerate(sizes)
    ]
    bases = [eigh(g.normalized_laplacian) for g in gs]
    rng = _rng(seed, 2)
    teacher = init_model(bases, channels, [channels], 1, rng=rng, activation="identity")
    teacher.blocks[0].receptive = ReceptiveField.from_times("per_factor", true_t)
    x = rng.standard_normal((samples,) + tuple(sizes) + (channels,))
    y = forward_batch(teacher, x)
    y = y + noise * np.sqrt(np.mean(y * y)) * rng.standard_normal(y.shape)
    n_train = samples * 2 // 3
    n_val = samples // 6
    splits = {
        "train": Split(x[:n_train], y[:n_train]),
        "val": Split(x[n_train:n_train + n_val], y[n_train:n_train + n_val]),
    }
    student = init_model(bases, channels, [channels], 1, rng=_rng(seed, 3), activation="identity")
    tcfg = TrainConfig(loss="mse", learning_rate=learning_rate, batch_size=16, max_epochs=epochs,
                       patience=epochs, seed=int(_seed(seed, 4).generate_state(1)[0]))
    result = train(student, splits, tcfg)
    pred = forward_batch(result.model, x[n_train + n_val:])
    target = y[n_train + n_val:]
    rn = float(np.sqrt(np.sum((pred - target) ** 2) / np.sum(target ** 2)))
    learned = result.model.blocks[0].receptive.times(len(sizes))[:, 0]
    return RecoveryResult(rn, true_t, learned, result.history)


# -- product mismatch ---------------------------------------------------------

def mismatch_bound(kind: str, lmax1: float, lmax2: float) -> float:
    """Spectral-norm gap between a strong/Kronecker product and the Cartesian product.

    `lmax1`, `lmax2` are the largest adjacency eigenvalues of the two factors.
    The strong-product gap equals ``lmax1 * lmax2``; the Kronecker-product gap
    is at most ``lmax1 + lmax2 + lmax1 * lmax2``.
    """
    if lmax1 < 0 or lmax2 < 0:
        raise ValueError("largest eigenvalues must be nonnegative")
    if kind == "strong":
        return float(lmax1 * lmax2)
    if kind == "kronecker":
        return float(lmax1 + lmax2 + lmax1 * lmax2)
    raise ValueError(f"unknown product kind {kind!r}")


def product_adjacency(kind: str, a1, a2) -> np.ndarray:
    cart = graphs.cartesian_sum([a1, a2])
    if kind == "cartesian":
        return cart
    if kind == "kronecker":
        return np.kron(a1, a2)
    if kind == "strong":
        return cart + np.kron(a1, a2)
    raise ValueError(f"unknown product kind {kind!r}")
