"""Flat ``key = value`` experiment configuration with typed per-command schemas."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Malformed config file, unknown key, missing key or unparsable value."""


_REQUIRED = object()


@dataclass(frozen=True)
class Key:
    parse: object
    default: object = _REQUIRED


# -- value parsers ------------------------------------------------------------

def integer(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"expected an integer, got {text!r}") from None


def real(text: str) -> float:
    """Float; ``inf`` and ``-inf`` are accepted."""
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"expected a number, got {text!r}") from None
    if value != value:
        raise ValueError("NaN is not allowed")
    return value


def boolean(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def text(value: str) -> str:
    return value


def choice(*options):
    def parse(value: str) -> str:
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {value!r}")
        return value
    return parse


def list_of(item):
    def parse(value: str) -> tuple:
        parts = [p.strip() for p in value.split(",")]
        if not value.strip() or any(not p for p in parts):
            raise ValueError(f"expected a comma-separated list, got {value!r}")
        return tuple(item(p) for p in parts)
    return parse


# -- schemas ------------------------------------------------------------------

KERNEL_CHECK = {
    "seed": Key(integer, 0),
    "factors": Key(list_of(integer), (2, 3)),
    "max_nodes": Key(integer, 8),
    "instances": Key(integer, 50),
    "times": Key(list_of(real), (0.1, 1.0, 5.0)),
    "separability_tol": Key(real, 1e-9),
    "kron_order": Key(choice("descending", "ascending"), "descending"),
    "equivalence_instances": Key(integer, 20),
    "equivalence_tol": Key(real, 1e-9),
    "channels": Key(integer, 3),
    "rk4_instances": Key(integer, 5),
    "rk4_max_nodes": Key(integer, 6),
    "rk4_t_end": Key(real, 1.0),
    "rk4_dt": Key(real, 1e-3),
    "rk4_tol": Key(real, 1e-8),
    "rk4_rate_range": Key(list_of(real), (14.0, 18.0)),
    "mass_tol": Key(real, 1e-8),
}

OVERSMOOTHING = {
    "seed": Key(integer, 0),
    "sizes": Key(list_of(integer), (10, 15)),
    "in_channels": Key(integer, 12),
    "layers": Key(integer, 10),
    "t": Key(real, 1.0),
    "activation": Key(choice("relu", "leaky_relu"), "relu"),
    "slope": Key(real, 0.01),
    "decay_edge_prob": Key(list_of(real), (0.05, 0.95)),
    "decay_weight_divisor": Key(real, 100.0),
    "loose_edge_prob": Key(list_of(real), (0.1, 0.1)),
    "loose_weight_divisor": Key(real, 2.5),
    "t_sweep": Key(list_of(real), (0.1, 1.0, 5.0, 10.0, 20.0)),
    "zero_tol": Key(real, 1e-8),
}

STABILITY = {
    "seed": Key(integer, 0),
    "sizes": Key(list_of(integer), (20, 30)),
    "edge_prob": Key(list_of(real), (0.1, 0.1)),
    "teacher_t": Key(list_of(real), (2.0, 3.0)),
    "in_channels": Key(integer, 6),
    "teacher_channels": Key(list_of(integer), (5, 4, 2)),
    "student_channels": Key(list_of(integer), (4, 4)),
    "student_activation": Key(choice("relu", "leaky_relu"), "leaky_relu"),
    "student_restarts": Key(integer, 2),
    "normalize_teacher": Key(boolean, True),
    "snr_grid": Key(list_of(real), (float("inf"), 20.0, 10.0, 0.0, -10.0)),
    "realizations": Key(integer, 10),
    "test_frac": Key(real, 0.15),
    "val_frac": Key(real, 0.15),
    "learning_rate": Key(real, 0.05),
    "epochs": Key(integer, 600),
    "patience": Key(integer, 100),
    "max_order_violations": Key(integer, 1),
    "deviation_realizations": Key(integer, 20),
    "deviation_snr": Key(real, 40.0),
    "deviation_ratio_max": Key(real, 2.5),
    "deviation_eps_max": Key(real, 0.05),
}

TRUNCATION = {
    "seed": Key(integer, 0),
    "seeds": Key(integer, 5),
    "spatial_nodes": Key(integer, 256),
    "spatial_edge_prob": Key(real, 0.03),
    "second_nodes": Key(integer, 8),
    "second_edge_prob": Key(real, 0.5),
    "channels": Key(integer, 8),
    "teacher_t": Key(list_of(real), (0.3, 1.0)),
    "samples": Key(integer, 72),
    "split": Key(list_of(real), (2 / 3, 1 / 6, 1 / 6)),
    "k_grid": Key(list_of(integer), (32, 64, 128, 256)),
    "policies": Key(list_of(choice("smallest", "largest")), ("smallest", "largest")),
    "learning_rate": Key(real, 0.02),
    "batch_size": Key(integer, 16),
    "epochs": Key(integer, 30),
    "variance_fraction": Key(real, 0.9),
}

FORECAST = {
    "seed": Key(integer, 0),
    "source": Key(choice("csv", "planted"), "csv"),
    "series": Key(text, ""),
    "adjacency": Key(text, ""),
    "distances": Key(text, ""),
    "sigma": Key(real, 0.3),
    "threshold": Key(real, 0.1),
    "planted_nodes": Key(integer, 12),
    "planted_length": Key(integer, 400),
    "planted_t_space": Key(real, 1.0),
    "planted_t_time": Key(real, 20.0),
    "planted_noise": Key(real, 0.0),
    "planted_offset": Key(real, 0.0),
    "history": Key(integer, 6),
    "horizon": Key(integer, 3),
    "split": Key(list_of(real), (0.7, 0.15, 0.15)),
    "encoder_channels": Key(integer, 8),
    "block_channels": Key(list_of(integer), (8, 8)),
    "mlp_layers": Key(integer, 0),
    "activation": Key(choice("relu", "leaky_relu", "identity"), "relu"),
    "residual": Key(boolean, True),
    "concat_input": Key(boolean, True),
    "receptive_mode": Key(choice("scalar", "per_factor", "per_factor_channel"), "per_factor"),
    "k_space": Key(integer, 0),
    "k_time": Key(integer, 0),
    "truncation_policy": Key(choice("smallest", "largest"), "smallest"),
    "loss": Key(choice("mae", "mse"), "mae"),
    "learning_rate": Key(real, 0.01),
    "batch_size": Key(integer, 32),
    "epochs": Key(integer, 300),
    "patience": Key(integer, 50),
    "max_test_rnmse": Key(real, float("inf")),
}

SCHEMAS = {
    "kernel-check": KERNEL_CHECK,
    "oversmoothing": OVERSMOOTHING,
    "stability": STABILITY,
    "truncation": TRUNCATION,
    "forecast": FORECAST,
}


# -- parsing ------------------------------------------------------------------

def parse_lines(text_: str, source: str = "<config>") -> dict:
    """Raw ``key -> value`` strings; ``#`` starts a comment line."""
    raw = {}
    for lineno, line in enumerate(text_.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def parse_override(item: str):
    key, sep, value = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {item!r} is not of the form key=value")
    return key.strip(), value.strip()


def resolve(schema: dict, raw: dict, overrides=(), source: str = "<config>") -> dict:
    """Typed config from raw strings plus ``key=value`` overrides."""
    merged = dict(raw)
    for item in overrides:
        key, value = parse_override(item)
        merged[key] = value
    unknown = sorted(set(merged) - set(schema))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s): {', '.join(unknown)}")
    out = {}
    for key, spec in schema.items():
        if key in merged:
            try:
                out[key] = spec.parse(merged[key])
            except ValueError as exc:
                raise ConfigError(f"{source}: {key}: {exc}") from None
        elif spec.default is _REQUIRED:
            raise ConfigError(f"{source}: missing required key {key!r}")
        else:
            out[key] = spec.default
    return out


def load_config(command: str, path=None, overrides=()) -> dict:
    """Read and validate a config for `command`; `path` may be None (defaults only)."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    raw = {}
    source = "<defaults>"
    if path is not None:
        source = str(path)
        try:
            raw = parse_lines(Path(path).read_text(), source)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    return resolve(SCHEMAS[command], raw, overrides, source)
