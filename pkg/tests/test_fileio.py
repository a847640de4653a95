import json
import math
import os

import numpy as np
import pytest

from citrus.fileio import CSVParseError, read_csv_matrix, write_csv_matrix, write_json, write_table


def test_csv_roundtrip_is_exact(tmp_path):
    m = np.random.default_rng(0).standard_normal((3, 4))
    write_csv_matrix(tmp_path / "m.csv", m)
    assert np.array_equal(read_csv_matrix(tmp_path / "m.csv"), m)


@pytest.mark.parametrize("text,line", [
    ("1,2\n3\n", 2),
    ("1,2\n\n3,4\n", 2),
    ("1,x\n", 1),
    ("", 1),
])
def test_csv_errors_carry_line_numbers(tmp_path, text, line):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(CSVParseError) as info:
        read_csv_matrix(path)
    assert info.value.line == line


def test_trailing_blank_lines_ignored(tmp_path):
    path = tmp_path / "ok.csv"
    path.write_text("1,2\n3,4\n\n\n")
    assert read_csv_matrix(path).shape == (2, 2)


def test_table_and_json_outputs(tmp_path):
    write_table(tmp_path / "t.csv", ["a", "b"], [[1, 0.5], ["x", float("inf")]])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "a,b"
    write_json(tmp_path / "r.json", {"b": np.float64(1.5), "a": [np.inf, np.arange(2)]})
    payload = json.loads((tmp_path / "r.json").read_text())
    assert payload["b"] == 1.5
    assert payload["a"][1] == [0, 1]
    assert (tmp_path / "r.json").read_text().index('"a"') < (tmp_path / "r.json").read_text().index('"b"')
    assert oct(os.stat(tmp_path / "r.json").st_mode & 0o777) == "0o644"
    assert not [p for p in os.listdir(tmp_path) if p.startswith(".")]
