import json
import math

import numpy as np
import pytest

from nonlocal_fk import ConfigurationError, Field, FieldSeries, Grid, SignedKernel, sample_ensemble
from nonlocal_fk.io import (
    MAGIC,
    dumps,
    read_binary,
    read_csv_grid,
    read_field_series,
    read_table,
    write_binary,
    write_csv_grid,
    write_field_series,
    write_path_dump,
    write_table,
)
from nonlocal_fk.jumps import position_at


def test_binary_round_trip_is_bit_exact(tmp_path, rng):
    g = Grid(2, 3.7, 8)
    f = Field(g, rng.normal(size=g.shape))
    back = read_binary(write_binary(f, tmp_path / "f.bin"))
    assert type(back) is Field and back.grid == g
    assert back.values.tobytes() == f.values.tobytes()
    assert (tmp_path / "f.bin").read_bytes()[:4] == MAGIC


def test_binary_keeps_kernel_type(tmp_path, kernel64):
    back = read_binary(write_binary(kernel64, tmp_path / "k.bin"))
    assert type(back) is type(kernel64)
    s = SignedKernel(kernel64.grid, -kernel64.values)
    assert type(read_binary(write_binary(s, tmp_path / "s.bin"))) is SignedKernel


def test_binary_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ConfigurationError):
        read_binary(p)
    p.write_bytes(b"NL")
    with pytest.raises(ConfigurationError):
        read_binary(p)


def test_binary_size_mismatch(tmp_path, grid64):
    p = write_binary(Field.constant(grid64, 1.0), tmp_path / "f.bin")
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ConfigurationError):
        read_binary(p)


def test_csv_round_trip(tmp_path, rng):
    g = Grid(1, 20.0, 64)
    f = Field(g, rng.normal(size=64))
    back = read_csv_grid(write_csv_grid(f, tmp_path / "f.csv"))
    assert back.grid == g
    # repr floats round-trip exactly through text
    assert np.array_equal(back.values, f.values)


def test_field_series_directory(tmp_path, grid64):
    s = FieldSeries.from_function(grid64, [0.0, 0.5, 1.0], lambda t, x: np.cos(x) * (1 + t))
    d = write_field_series(s, tmp_path / "series", meta={"note": "x"})
    back = read_field_series(d)
    assert np.array_equal(back.values, s.values) and np.array_equal(back.times, s.times)
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["snapshots"] == ["snap_00000.bin", "snap_00001.bin", "snap_00002.bin"]
    assert manifest["note"] == "x"
    norms = read_table(d / "norms.csv")
    assert np.allclose(norms["sup_norm"], s.sup_norms())
    with pytest.raises(FileExistsError):
        write_field_series(s, d)


def test_path_dump_matches_ensemble(tmp_path, kernel64):
    ens = sample_ensemble(kernel64, 2.0, 5, master_seed=3, first_stream=10)
    table = read_table(write_path_dump(ens, tmp_path / "paths.csv", start=7))
    assert set(table["stream_index"].astype(int)) == set(range(10, 15))
    for i in range(5):
        rows = table["stream_index"] == 10 + i
        times, cells = table["jump_time"][rows], table["cell_index"][rows].astype(int)
        p = ens.path(i, start=7)
        assert times[0] == 0.0 and cells[0] == 7
        assert np.array_equal(times[1:], p.jump_times)
        for s, c in zip(times, cells):
            assert position_at(p, s) == c


def test_json_is_deterministic():
    a = {"b": np.float64(0.1), "a": [np.int64(3), math.inf], "c": np.arange(3)}
    b = {"c": np.arange(3), "a": [np.int64(3), math.inf], "b": np.float64(0.1)}
    assert dumps(a) == dumps(b)
    assert json.loads(dumps(a))["b"] == 0.1


def test_table_round_trip(tmp_path):
    cols = [np.linspace(0, 1, 5), np.arange(5) ** 2 / 3.0]
    back = read_table(write_table(tmp_path / "t.csv", ["x", "y"], cols))
    assert np.array_equal(back["x"], cols[0]) and np.array_equal(back["y"], cols[1])
