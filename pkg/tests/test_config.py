import math

import pytest

from citrus.config import ConfigError, load_config, parse_lines, resolve, SCHEMAS


def test_defaults_only():
    cfg = load_config("kernel-check")
    assert cfg["instances"] == 50
    assert cfg["factors"] == (2, 3)


def test_file_and_overrides(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("# comment\nseed = 4\n\ntimes = 0.5, 2\n")
    cfg = load_config("kernel-check", path, ["seed=9", "kron_order = ascending"])
    assert cfg["seed"] == 9
    assert cfg["times"] == (0.5, 2.0)
    assert cfg["kron_order"] == "ascending"


def test_infinite_values_parse():
    cfg = load_config("stability", None, ["snr_grid=inf, 10, -10"])
    assert math.isinf(cfg["snr_grid"][0])
    with pytest.raises(ConfigError):
        load_config("stability", None, ["learning_rate=nan"])


@pytest.mark.parametrize("text", ["seed 4", "= 3", "seed = 1\nseed = 2"])
def test_malformed_lines(text):
    with pytest.raises(ConfigError):
        parse_lines(text)


@pytest.mark.parametrize("override", ["bogus=1", "seed=abc", "kron_order=sideways", "times=", "seed"])
def test_bad_values(override):
    with pytest.raises(ConfigError):
        load_config("kernel-check", None, [override])


def test_missing_file_and_command(tmp_path):
    with pytest.raises(ConfigError):
        load_config("kernel-check", tmp_path / "missing.cfg")
    with pytest.raises(ConfigError):
        load_config("train")


def test_line_numbers_in_errors():
    with pytest.raises(ConfigError, match=":3:"):
        parse_lines("a = 1\nb = 2\nbroken\n", "x.cfg")


def test_booleans():
    schema = SCHEMAS["forecast"]
    assert resolve(schema, {"residual": "no"})["residual"] is False
    with pytest.raises(ConfigError):
        resolve(schema, {"residual": "maybe"})
