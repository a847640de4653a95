"""Experiment drivers behind the command-line interface.

Each ``run_*`` function takes a resolved config dict and returns an
:class:`Outcome`: a JSON report, CSV tables, extra files and named checks.
Everything except entries marked as timing-dependent is a deterministic
function of the config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, graphs
from .config import ConfigError
from .data import ForecastDataset, forecast_metrics, planted_series, synthetic_distances
from .fileio import read_csv_matrix
from .layer import (
    CitrusBlock, CitrusModel, ReceptiveField, checkpoint_dict, core_tensor_forward,
    forward_batch, glorot, init_model, product_graph_forward, spectral_forward, tpdeg_integrate,
)
from .spectral import eigh, explained_variance, heat_kernel_dense, truncate, components_for_variance
from .training import Split, TrainConfig, evaluate, train


class InputError(ValueError):
    """Input data or config values are inconsistent with each other."""


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    timing: bool = False


@dataclass
class Outcome:
    report: dict
    tables: dict = field(default_factory=dict)  # file name -> (header, rows)
    timing_tables: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)  # file name -> text
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _rng(*keys):
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def _derived_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def _random_laplacian(rng, n, p=0.5):
    a = np.triu((rng.random((n, n)) < p) * rng.uniform(0.5, 1.5, (n, n)), 1)
    return graphs.build_graph(a + a.T).laplacian


def _sizes(rng, n_factors, low, high):
    return tuple(int(s) for s in rng.integers(low, high + 1, n_factors))


def _nonempty_er(n, p, *keys):
    """G(n, p) redrawn until it has at least one edge."""
    for k in range(graphs.MAX_CONNECT_ATTEMPTS):
        g = graphs.erdos_renyi(n, p, _derived_seed(*keys, k))
        if g.num_edges:
            return g
    raise graphs.GraphGenerationError(f"no G({n}, {p}) sample with an edge")


# -- kernel-check -------------------------------------------------------------

def run_kernel_check(cfg: dict) -> Outcome:
    """Kernel separability, the three equivalent forward forms, and RK4 against the closed form."""
    seed = cfg["seed"]
    factors = cfg["factors"]
    if any(p < 1 for p in factors) or cfg["max_nodes"] < 2 or cfg["rk4_max_nodes"] < 2:
        raise ConfigError("factor counts must be >= 1 and node limits >= 2")
    if cfg["rk4_dt"] <= 0 or cfg["rk4_t_end"] < 0:
        raise ConfigError("rk4_dt must be positive and rk4_t_end nonnegative")
    descending = cfg["kron_order"] == "descending"
    rows = []
    checks = []

    sep_max = 0.0
    for i in range(cfg["instances"]):
        rng = _rng(seed, 1, i)
        n_factors = factors[i % len(factors)]
        sizes = _sizes(rng, n_factors, 2, cfg["max_nodes"])
        laps = [_random_laplacian(rng, n) for n in sizes]
        product = graphs.cartesian_sum(laps, descending=True)
        for t in cfg["times"]:
            lhs = heat_kernel_dense(product, t)
            rhs = graphs.kron_chain([heat_kernel_dense(l, t) for l in laps], descending=descending)
            err = float(np.max(np.abs(lhs - rhs)))
            sep_max = max(sep_max, err)
            rows.append(["separability", i, n_factors, "x".join(map(str, sizes)), t, err])
    checks.append(Check(
        "separability", sep_max <= cfg["separability_tol"],
        f"max entrywise error {sep_max:.3e} (tol {cfg['separability_tol']:g}, kron_order={cfg['kron_order']})",
    ))

    eq_max = 0.0
    for i in range(cfg["equivalence_instances"]):
        rng = _rng(seed, 2, i)
        n_factors = factors[i % len(factors)]
        sizes = _sizes(rng, n_factors, 2, cfg["max_nodes"])
        laps = [_random_laplacian(rng, n) for n in sizes]
        t = float(rng.uniform(0.1, 2.0))
        w = rng.standard_normal((cfg["channels"], 2))
        u = rng.standard_normal(sizes + (cfg["channels"],))
        tensor_form = core_tensor_forward(u, laps, t, w)
        scale = np.linalg.norm(tensor_form)
        vec_form = product_graph_forward(u, laps, t, w)
        block = CitrusBlock(ReceptiveField.from_times("scalar", t), w, [], "identity")
        spec_form = spectral_forward(u, [eigh(l) for l in laps], block)
        e1 = float(np.linalg.norm(tensor_form - vec_form) / scale)
        e2 = float(np.linalg.norm(tensor_form - spec_form) / scale)
        eq_max = max(eq_max, e1, e2)
        rows.append(["equivalence_vectorized", i, n_factors, "x".join(map(str, sizes)), t, e1])
        rows.append(["equivalence_spectral", i, n_factors, "x".join(map(str, sizes)), t, e2])
    checks.append(Check(
        "equivalence", eq_max <= cfg["equivalence_tol"],
        f"max relative Frobenius error {eq_max:.3e} (tol {cfg['equivalence_tol']:g})",
    ))

    rk_max = 0.0
    mass_max = 0.0
    ratio = float("nan")
    dt = cfg["rk4_dt"]
    for i in range(cfg["rk4_instances"]):
        rng = _rng(seed, 3, i)
        n_factors = factors[i % len(factors)]
        sizes = _sizes(rng, n_factors, 2, cfg["rk4_max_nodes"])
        laps = [_random_laplacian(rng, n) for n in sizes]
        u0 = rng.standard_normal(sizes + (cfg["channels"],))
        exact = core_tensor_forward(u0, laps, cfg["rk4_t_end"], np.eye(cfg["channels"]))
        approx = tpdeg_integrate(u0, laps, cfg["rk4_t_end"], dt)
        err = float(np.max(np.abs(approx - exact)))
        axes = tuple(range(n_factors))
        mass = float(np.max(np.abs(approx.sum(axis=axes) - u0.sum(axis=axes))))
        rk_max = max(rk_max, err)
        mass_max = max(mass_max, mass)
        rows.append(["rk4", i, n_factors, "x".join(map(str, sizes)), cfg["rk4_t_end"], err])
        if i == 0:
            half = float(np.max(np.abs(tpdeg_integrate(u0, laps, cfg["rk4_t_end"], dt / 2) - exact)))
            ratio = err / half if half > 0 else float("inf")
            rows.append(["rk4_half_step", i, n_factors, "x".join(map(str, sizes)), cfg["rk4_t_end"], half])
    lo, hi = cfg["rk4_rate_range"]
    if cfg["rk4_instances"]:
        checks.append(Check("rk4_accuracy", rk_max <= cfg["rk4_tol"],
                            f"max error {rk_max:.3e} at dt={dt:g} (tol {cfg['rk4_tol']:g})"))
        checks.append(Check("rk4_rate", lo <= ratio <= hi,
                            f"error ratio {ratio:.3f} when halving dt (range [{lo:g}, {hi:g}])"))
        checks.append(Check("mass_conservation", mass_max <= cfg["mass_tol"],
                            f"max per-channel mass drift {mass_max:.3e} (tol {cfg['mass_tol']:g})"))

    report = {
        "command": "kernel-check",
        "config": cfg,
        "seed": seed,
        "max_errors": {
            "separability": sep_max, "equivalence": eq_max, "rk4": rk_max,
            "rk4_rate": ratio, "mass_drift": mass_max,
        },
    }
    header = ["suite", "instance", "factors", "sizes", "t", "error"]
    return Outcome(report, {"kernel_check.csv": (header, rows)}, checks=checks)


# -- oversmoothing ------------------------------------------------------------

def _energy_rows(rep: analysis.EnergyReport):
    return [list(r) for r in rep.rows()]


def _summary(rep: analysis.EnergyReport, gs) -> dict:
    finite = np.isfinite(rep.log_ratio)
    finite[0] = False
    return {
        "gaps": rep.gaps,
        "s": rep.s,
        "slope": rep.slope,
        "regime": rep.regime,
        "lambda_tilde": float(rep.lambda_tilde.min()),
        "t_tilde": float(rep.t_tilde[np.argmin(rep.t_tilde * rep.lambda_tilde)]),
        "argmin_factor": int(rep.argmin_factor[0]),
        "edges": [g.num_edges for g in gs],
        "final_log_ratio": float(rep.log_ratio[-1]),
        "max_gap_to_bound": float(np.max(rep.log_ratio[finite] - rep.bound[finite], initial=-np.inf)),
        "bound_holds": rep.bound_holds,
    }


def _strictly_decaying(energies) -> bool:
    e = np.asarray(energies)
    return bool(np.all((e[1:] < e[:-1]) | (e[1:] == 0)))


def run_oversmoothing(cfg: dict) -> Outcome:
    """Energy decay of random ReLU stacks against the exponential bound.

    Channel widths shrink by one per layer from `in_channels`; weights are
    standard normal divided by the scenario's divisor.
    """
    seed = cfg["seed"]
    sizes = tuple(cfg["sizes"])
    n_factors = len(sizes)
    layers = cfg["layers"]
    if cfg["in_channels"] - layers < 1 or layers < 1:
        raise ConfigError("in_channels must exceed layers (widths shrink by one per layer)")
    channels = [cfg["in_channels"] - l for l in range(layers + 1)]
    tables = {}
    checks = []
    summaries = {}

    def scenario(key, probs, divisor, t):
        if len(probs) != n_factors:
            raise ConfigError("edge probabilities must match the number of factors")
        gs = [_nonempty_er(n, p, seed, key, f) for f, (n, p) in enumerate(zip(sizes, probs))]
        blocks = analysis.random_stack(_rng(seed, key, 100), channels, n_factors, t, 1.0 / divisor,
                                       cfg["activation"], cfg["slope"])
        x0 = _rng(seed, key, 101).standard_normal(sizes + (cfg["in_channels"],))
        laps = [g.normalized_laplacian for g in gs]
        return gs, blocks, x0, laps

    header = ["layer", "energy", "log_ratio", "bound", "bound_layerwise", "s_layer"]
    gs, blocks, x0, laps = scenario(1, cfg["decay_edge_prob"], cfg["decay_weight_divisor"], cfg["t"])
    decay = analysis.energy_trajectory(blocks, laps, x0, cfg["zero_tol"])
    tables["oversmoothing_decay.csv"] = (header, _energy_rows(decay))
    summaries["decay"] = _summary(decay, gs)
    checks.append(Check("decay_regime", decay.slope < 0, f"bound slope {decay.slope:.4f} (expected < 0)"))
    checks.append(Check("decay_bound", decay.bound_holds,
                        f"observed minus bound at worst {summaries['decay']['max_gap_to_bound']:.4f}"))
    checks.append(Check("decay_monotone", _strictly_decaying(decay.energies),
                        "energy strictly decreases layer over layer"))

    gs, blocks, x0, laps = scenario(2, cfg["loose_edge_prob"], cfg["loose_weight_divisor"], cfg["t"])
    loose = analysis.energy_trajectory(blocks, laps, x0, cfg["zero_tol"])
    tables["oversmoothing_loose.csv"] = (header, _energy_rows(loose))
    summaries["loose"] = _summary(loose, gs)
    checks.append(Check("loose_regime", loose.slope > 0, f"bound slope {loose.slope:.4f} (expected > 0)"))
    checks.append(Check("loose_bound", loose.bound_holds,
                        f"observed minus bound at worst {summaries['loose']['max_gap_to_bound']:.4f}"))

    # receptive-field sweep on the loose scenario's graphs and weights
    critical = n_factors * np.log(loose.s) / (2.0 * float(loose.lambda_tilde.min()))
    sweep_rows = []
    finals = {}
    for t in cfg["t_sweep"]:
        swept = [
            CitrusBlock(ReceptiveField.from_times("per_factor", np.full(n_factors, t)), b.weight, [],
                        b.activation, b.slope)
            for b in blocks
        ]
        rep = analysis.energy_trajectory(swept, laps, x0, cfg["zero_tol"])
        finals[t] = float(rep.log_ratio[-1])
        for l in range(layers + 1):
            sweep_rows.append([t, l, rep.log_ratio[l], rep.bound[l], bool(t > critical)])
    tables["oversmoothing_t_sweep.csv"] = (["t", "layer", "log_ratio", "bound", "above_critical"], sweep_rows)
    above = [v for t, v in finals.items() if t > critical]
    below = [v for t, v in finals.items() if t <= critical]
    if above and below:
        checks.append(Check("t_sweep", max(above) < min(below),
                            f"critical t {critical:.3f}; final log-ratio above it <= {max(above):.3f}, "
                            f"below it >= {min(below):.3f}"))

    report = {
        "command": "oversmoothing",
        "config": cfg,
        "seed": seed,
        "scenarios": summaries,
        "t_sweep": {"critical_t": critical, "final_log_ratio": {str(t): v for t, v in finals.items()}},
    }
    return Outcome(report, tables, checks=checks)


# -- stability ----------------------------------------------------------------

def stability_config(cfg: dict) -> analysis.StabilityConfig:
    if len(cfg["sizes"]) != 2 or len(cfg["edge_prob"]) != 2 or len(cfg["teacher_t"]) != 2:
        raise ConfigError("stability uses exactly two factors (sizes, edge_prob, teacher_t)")
    if cfg["realizations"] < 1 or cfg["student_restarts"] < 1:
        raise ConfigError("realizations and student_restarts must be >= 1")
    return analysis.StabilityConfig(
        sizes=tuple(cfg["sizes"]), edge_prob=tuple(cfg["edge_prob"]), teacher_t=tuple(cfg["teacher_t"]),
        in_channels=cfg["in_channels"], teacher_channels=tuple(cfg["teacher_channels"]),
        student_channels=tuple(cfg["student_channels"]), student_activation=cfg["student_activation"],
        normalize_teacher=cfg["normalize_teacher"], student_restarts=cfg["student_restarts"],
        snr_grid=tuple(cfg["snr_grid"]), realizations=cfg["realizations"], test_frac=cfg["test_frac"],
        val_frac=cfg["val_frac"], learning_rate=cfg["learning_rate"], epochs=cfg["epochs"],
        patience=cfg["patience"], seed=cfg["seed"],
    )


def run_stability(cfg: dict, progress=None) -> Outcome:
    """SNR-grid student training plus the doubled-perturbation deviation test."""
    scfg = stability_config(cfg)
    rep = analysis.stability_run(scfg, progress)
    grid = rep.mse_grid()
    checks = []
    viol = analysis.count_order_violations(grid)
    if len(scfg.snr_grid) > 1:
        worst = max(viol["rows"] + viol["cols"])
        checks.append(Check("snr_trend", worst <= cfg["max_order_violations"],
                            f"adjacent-pair violations per row {viol['rows']}, per column {viol['cols']} "
                            f"(allowed {cfg['max_order_violations']})"))
    ratios, rel_eps = analysis.deviation_ratios(
        scfg.sizes, scfg.edge_prob, scfg.teacher_t, scfg.in_channels, scfg.teacher_channels,
        cfg["deviation_snr"], cfg["deviation_realizations"], scfg.seed,
    )
    median = float(np.median(ratios)) if ratios.size else float("nan")
    eps_max = float(rel_eps.max()) if rel_eps.size else 0.0
    if ratios.size:
        checks.append(Check("deviation_regime", eps_max <= cfg["deviation_eps_max"],
                            f"max eps/||A||_2 = {eps_max:.4f} (limit {cfg['deviation_eps_max']:g})"))
        checks.append(Check("deviation_ratio", median <= cfg["deviation_ratio_max"],
                            f"median deviation ratio {median:.4f} (limit {cfg['deviation_ratio_max']:g})"))

    grid_header = ["snr1", "snr2", "mse_mean", "mse_std", "eps1_mean", "eps2_mean", "deviation_mean", "realizations"]
    grid_rows = [[c[k] for k in grid_header] for c in rep.cells]
    run_header = ["realization", "snr1", "snr2", "test_mse", "eps1", "eps2", "deviation"]
    run_rows = [[r[k] for k in run_header] for r in rep.per_realization]
    dev_rows = [[i, ratios[i], *rel_eps[i]] for i in range(ratios.size)]
    report = {
        "command": "stability",
        "config": cfg,
        "seed": scfg.seed,
        "realization_seeds": [[scfg.seed, r] for r in range(scfg.realizations)],
        "mse_grid": grid,
        "order_violations": viol,
        "deviation": {"median_ratio": median, "ratios": ratios, "max_relative_eps": eps_max},
    }
    tables = {
        "stability_grid.csv": (grid_header, grid_rows),
        "stability_runs.csv": (run_header, run_rows),
        "deviation.csv": (["realization", "ratio", "eps1_rel", "eps2_rel"], dev_rows),
    }
    return Outcome(report, tables, checks=checks)


# -- truncation ---------------------------------------------------------------

def truncation_task(cfg: dict, s: int):
    """Planted one-block linear teacher on a large spatial factor times a small one."""
    seed = cfg["seed"]
    g0 = graphs.erdos_renyi(cfg["spatial_nodes"], cfg["spatial_edge_prob"], _derived_seed(seed, s, 1),
                            require_connected=True)
    g1 = graphs.erdos_renyi(cfg["second_nodes"], cfg["second_edge_prob"], _derived_seed(seed, s, 2),
                            require_connected=True)
    bases = [eigh(g0.normalized_laplacian), eigh(g1.normalized_laplacian)]
    rng = _rng(seed, s, 3)
    f = cfg["channels"]
    teacher = CitrusModel(
        bases,
        [CitrusBlock(ReceptiveField.from_times("per_factor", np.asarray(cfg["teacher_t"])),
                     glorot(rng, f, f), [], "identity")],
        glorot(rng, f, 1),
    )
    n = cfg["samples"]
    x = rng.standard_normal((n, g0.n, g1.n, f))
    y = forward_batch(teacher, x)
    n_train = int(round(cfg["split"][0] * n))
    n_val = int(round(cfg["split"][1] * n))
    if n_train < 1 or n_val < 1 or n - n_train - n_val < 1:
        raise ConfigError("samples too few for the requested split")
    splits = {
        "train": Split(x[:n_train], y[:n_train]),
        "val": Split(x[n_train:n_train + n_val], y[n_train:n_train + n_val]),
        "test": Split(x[n_train + n_val:], y[n_train + n_val:]),
    }
    return bases, splits


def _fit_truncated(cfg, bases, splits, s):
    student = init_model(bases, cfg["channels"], [cfg["channels"]], 1,
                         rng=_rng(cfg["seed"], s, 4), activation="identity")
    tcfg = TrainConfig(loss="mae", learning_rate=cfg["learning_rate"], batch_size=cfg["batch_size"],
                       max_epochs=cfg["epochs"], patience=cfg["epochs"], seed=_derived_seed(cfg["seed"], s, 5))
    result = train(student, splits, tcfg)
    return evaluate(result.model, splits["val"], "mae"), result.epoch_seconds


def run_truncation(cfg: dict) -> Outcome:
    """Validation MAE and per-epoch time against the number of spatial eigenpairs kept."""
    n0 = cfg["spatial_nodes"]
    for k in cfg["k_grid"]:
        if not 1 <= k <= n0:
            raise ConfigError(f"K={k} outside [1, {n0}] (spatial factor size)")
    if len(cfg["teacher_t"]) != 2 or cfg["seeds"] < 1 or cfg["epochs"] < 1:
        raise ConfigError("truncation needs two teacher times, seeds >= 1 and epochs >= 1")
    k_grid = sorted(set(cfg["k_grid"]))
    rows = []
    time_rows = []
    mae = {}
    secs = {}
    full_equal = []
    variance_rows = []
    variance_k = None
    for s in range(cfg["seeds"]):
        bases, splits = truncation_task(cfg, s)
        if s == 0:
            ratios = explained_variance(bases[0])
            cum = np.cumsum(ratios)
            variance_rows = [[i + 1, ratios[i], cum[i]] for i in range(ratios.size)]
            variance_k = components_for_variance(bases[0], cfg["variance_fraction"])
        full_mae, full_secs = _fit_truncated(cfg, bases, splits, s)
        for policy in cfg["policies"]:
            for k in k_grid:
                tb = [truncate(bases[0], k, policy), bases[1]]
                val, epoch_secs = _fit_truncated(cfg, tb, splits, s)
                mae.setdefault((policy, k), []).append(val)
                secs.setdefault(k, []).append(min(epoch_secs))
                rows.append([policy, k, s, val, full_mae])
                time_rows.append([policy, k, s, min(epoch_secs), float(np.median(epoch_secs))])
                if k == n0:
                    full_equal.append(val == full_mae)

    checks = []
    if full_equal:
        checks.append(Check("full_rank_matches", all(full_equal),
                            f"K=N validation MAE identical to the untruncated model in "
                            f"{sum(full_equal)}/{len(full_equal)} runs"))
    summary = {}
    for policy in cfg["policies"]:
        med = [float(np.median(mae[(policy, k)])) for k in k_grid]
        summary[policy] = {"k": k_grid, "median_val_mae": med}
        if policy == "smallest":
            mono = all(b <= a for a, b in zip(med, med[1:]))
            checks.append(Check("mae_monotone", mono, "median validation MAE by K: "
                                + ", ".join(f"{k}:{m:.4g}" for k, m in zip(k_grid, med))))
    # epoch cost does not depend on which eigenpairs are kept, so runs of every policy are pooled
    tmed = [float(np.median(secs[k])) for k in k_grid]
    inc = all(b > a for a, b in zip(tmed, tmed[1:]))
    checks.append(Check("time_increasing", inc, "median per-epoch seconds by K: "
                        + ", ".join(f"{k}:{t:.4f}" for k, t in zip(k_grid, tmed)), timing=True))

    report = {
        "command": "truncation",
        "config": cfg,
        "seed": cfg["seed"],
        "task_seeds": [[cfg["seed"], s] for s in range(cfg["seeds"])],
        "summary": summary,
        "explained_variance": {"fraction": cfg["variance_fraction"], "components": variance_k},
    }
    tables = {
        "truncation.csv": (["policy", "k", "seed", "val_mae", "full_val_mae"], rows),
        "explained_variance.csv": (["component", "ratio", "cumulative"], variance_rows),
    }
    timing_tables = {
        "truncation_timings.csv": (["policy", "k", "seed", "min_epoch_seconds", "median_epoch_seconds"], time_rows),
    }
    return Outcome(report, tables, timing_tables, checks=checks)


# -- forecast -----------------------------------------------------------------

def _resolve_path(value: str, base) -> Path:
    p = Path(value)
    return p if p.is_absolute() or base is None else Path(base) / p


def forecast_inputs(cfg: dict, base_dir=None):
    """Series matrix and spatial graph from CSV files or the planted generator."""
    if cfg["source"] == "planted":
        g = graphs.gaussian_kernel_graph(synthetic_distances(cfg["planted_nodes"], cfg["seed"]),
                                         cfg["sigma"], cfg["threshold"])
        series = planted_series(g, cfg["planted_length"], cfg["planted_t_space"], cfg["planted_t_time"],
                                _derived_seed(cfg["seed"], 1), cfg["planted_noise"], cfg["planted_offset"])
        return series, g
    if not cfg["series"]:
        raise ConfigError("forecast with source=csv needs a 'series' path")
    if bool(cfg["adjacency"]) == bool(cfg["distances"]):
        raise ConfigError("give exactly one of 'adjacency' or 'distances'")
    series = read_csv_matrix(_resolve_path(cfg["series"], base_dir))
    if cfg["adjacency"]:
        g = graphs.load_adjacency_csv(_resolve_path(cfg["adjacency"], base_dir))
    else:
        g = graphs.gaussian_kernel_graph(read_csv_matrix(_resolve_path(cfg["distances"], base_dir)),
                                         cfg["sigma"], cfg["threshold"])
    if series.shape[0] != g.n:
        raise InputError(f"series has {series.shape[0]} rows but the graph has {g.n} nodes")
    return series, g


def run_forecast(cfg: dict, base_dir=None) -> Outcome:
    """Train a space-time model on windowed series and report test metrics."""
    series, g = forecast_inputs(cfg, base_dir)
    try:
        ds = ForecastDataset.build(series, cfg["history"], cfg["horizon"], tuple(cfg["split"]))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    space = eigh(g.normalized_laplacian)
    time_basis = eigh(graphs.path_graph(cfg["history"]).normalized_laplacian)
    for name, k, basis in (("k_space", cfg["k_space"], space), ("k_time", cfg["k_time"], time_basis)):
        if k < 0 or k > basis.k:
            raise InputError(f"{name}={k} outside [0, {basis.k}] (0 keeps every eigenpair)")
    if cfg["k_space"]:
        space = truncate(space, cfg["k_space"], cfg["truncation_policy"])
    if cfg["k_time"]:
        time_basis = truncate(time_basis, cfg["k_time"], cfg["truncation_policy"])
    model = init_model(
        [space, time_basis], 1, list(cfg["block_channels"]), cfg["horizon"],
        rng=_rng(cfg["seed"], 2), encoder_channels=cfg["encoder_channels"] or None,
        mlp_layers=cfg["mlp_layers"], activation=cfg["activation"], residual=cfg["residual"],
        receptive_mode=cfg["receptive_mode"], readout="forecast", concat_input=cfg["concat_input"],
        decoder_bias=True,
    )
    model.metadata.update({
        "seed": cfg["seed"], "truncation_policy": cfg["truncation_policy"],
        "k_space": cfg["k_space"], "k_time": cfg["k_time"],
        "normalizer_mean": ds.normalizer.mean.tolist(), "normalizer_std": ds.normalizer.std.tolist(),
    })
    splits = {name: Split(*ds.split(name)) for name in ("train", "val", "test")}
    tcfg = TrainConfig(loss=cfg["loss"], learning_rate=cfg["learning_rate"], batch_size=cfg["batch_size"],
                       max_epochs=cfg["epochs"], patience=cfg["patience"], seed=_derived_seed(cfg["seed"], 3))
    result = train(model, splits, tcfg)
    pred = ds.normalizer.inverse(forward_batch(result.model, splits["test"].inputs))
    metrics = forecast_metrics(ds.raw_targets("test"), pred)

    keys = ["mae", "rmse", "mape", "mape_excluded", "rnmse"]
    metric_rows = [[h + 1] + [m[k] for k in keys] for h, m in enumerate(metrics["per_horizon"])]
    metric_rows.append(["all"] + [metrics["overall"][k] for k in keys])
    rn = metrics["overall"]["rnmse"]
    checks = []
    if np.isfinite(cfg["max_test_rnmse"]):
        checks.append(Check("test_rnmse", rn <= cfg["max_test_rnmse"],
                            f"test rNMSE {rn:.4f} (limit {cfg['max_test_rnmse']:g})"))
    report = {
        "command": "forecast",
        "config": cfg,
        "seed": cfg["seed"],
        "windows": {k: int(v.size) for k, v in ds.splits.items()},
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history) - 1,
        "test_metrics": metrics,
        "receptive_fields": [b.receptive.times(2) for b in result.model.blocks],
    }
    files = {"checkpoint.json": json.dumps(checkpoint_dict(result.model), sort_keys=True) + "\n"}
    tables = {
        "metrics.csv": (["horizon"] + keys, metric_rows),
        "history.csv": (["epoch", "train_loss", "val_loss"], result.history_rows()),
    }
    return Outcome(report, tables, files=files, checks=checks)


RUNNERS = {
    "kernel-check": run_kernel_check,
    "oversmoothing": run_oversmoothing,
    "stability": run_stability,
    "truncation": run_truncation,
    "forecast": run_forecast,
}
