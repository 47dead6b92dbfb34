"""Persistence: binary/CSV grids, field-series directories, path dumps, JSON reports.

Binary layout (little endian): magic ``NLFK``, a one-byte kind tag, header
``d`` (int64), ``L`` (float64), ``N`` (int64), then ``N^d`` float64 values in
row-major order. The CSV variant has a header line ``d,L,N`` followed by one
value per line in the same order; it is human-readable but only the binary
round trip is bit exact.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .jumps import PathEnsemble, _ravel, _with_origin
from .lattice import Field, FieldSeries, Grid, Kernel, SignedKernel

MAGIC = b"NLFK"
_HEADER = struct.Struct("<4sBqdq")
_KINDS = {Field: 0, SignedKernel: 1, Kernel: 2}
_CLASSES = {v: k for k, v in _KINDS.items()}


def write_binary(obj, path) -> Path:
    path = Path(path)
    g = obj.grid
    kind = _KINDS[type(obj)]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, kind, g.dim, float(g.extent), g.points))
        fh.write(np.ascontiguousarray(obj.values, dtype="<f8").tobytes())
    return path


def read_binary(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ConfigurationError(f"{path}: truncated header")
    magic, kind, d, L, N = _HEADER.unpack_from(raw)
    if magic != MAGIC or kind not in _CLASSES:
        raise ConfigurationError(f"{path}: not a grid file")
    grid = Grid(int(d), float(L), int(N))
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if values.size != grid.size:
        raise ConfigurationError(f"{path}: expected {grid.size} values, found {values.size}")
    return _CLASSES[kind](grid, values.reshape(grid.shape).astype(float))


def write_csv_grid(obj, path) -> Path:
    path = Path(path)
    g = obj.grid
    with open(path, "w", newline="") as fh:
        fh.write(f"{g.dim},{g.extent!r},{g.points}\n")
        for v in obj.values.reshape(-1):
            fh.write(f"{float(v)!r}\n")
    return path


def read_csv_grid(path, cls=Field):
    with open(path) as fh:
        d, L, N = fh.readline().strip().split(",")
        grid = Grid(int(d), float(L), int(N))
        values = np.loadtxt(fh, dtype=float, ndmin=1)
    return cls(grid, values.reshape(grid.shape))


def write_norms_csv(times, sup, mean, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "sup_norm", "mean"])
        for row in zip(times, sup, mean):
            w.writerow([repr(float(x)) for x in row])
    return path


def write_field_series(series: FieldSeries, directory, meta: dict | None = None) -> Path:
    """Snapshots ``snap_00000.bin, ...``, ``manifest.json`` and ``norms.csv``.

    ``norms.csv`` uses the dense per-step norms when the solver recorded them.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=False)
    files = []
    for i in range(len(series)):
        name = f"snap_{i:05d}.bin"
        write_binary(series.field(i), directory / name)
        files.append(name)
    g = series.grid
    manifest = {
        "grid": {"d": g.dim, "L": g.extent, "N": g.points},
        "times": series.times.tolist(),
        "snapshots": files,
    }
    if meta:
        manifest.update(meta)
    write_json(manifest, directory / "manifest.json")
    if series.norms is not None:
        n = series.norms
        write_norms_csv(n.times, n.sup, n.mean, directory / "norms.csv")
    else:
        axes = tuple(range(1, series.values.ndim))
        write_norms_csv(series.times, series.sup_norms(), np.mean(series.values, axis=axes), directory / "norms.csv")
    return directory


def read_field_series(directory) -> FieldSeries:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    g = manifest["grid"]
    grid = Grid(g["d"], g["L"], g["N"])
    values = np.stack([read_binary(directory / f).values for f in manifest["snapshots"]])
    return FieldSeries(grid, np.asarray(manifest["times"]), values)


def write_path_dump(ens: PathEnsemble, path, start: int = 0, max_paths: int | None = None) -> Path:
    """One row per visited site: ``(stream_index, jump_time, cell_index)``; time 0 marks the start."""
    path = Path(path)
    grid = ens.grid
    n = ens.n_paths if max_paths is None else min(max_paths, ens.n_paths)
    start_cell = np.array(np.unravel_index(int(start), grid.shape))
    rel = _with_origin(ens.cells)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stream_index", "jump_time", "cell_index"])
        for i in range(n):
            k = int(ens.counts[i])
            sites = _ravel(grid, (rel[i, : k + 1] + start_cell) % grid.points)
            times = np.concatenate(([0.0], ens.jump_times[i, :k]))
            stream = ens.first_stream + i
            for s, c in zip(times, sites):
                w.writerow([stream, repr(float(s)), int(c)])
    return path


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, repr-exact floats, ``NaN``/``Infinity`` allowed."""
    return json.dumps(obj, sort_keys=True, indent=2, default=_default)


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(dumps(obj) + "\n")
    return path


def write_table(path, header, columns) -> Path:
    """Columns of equal length as CSV."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return path


def read_table(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}


__all__ = [
    "read_binary",
    "write_binary",
    "read_csv_grid",
    "write_csv_grid",
    "write_field_series",
    "read_field_series",
    "write_norms_csv",
    "write_path_dump",
    "write_json",
    "dumps",
    "write_table",
    "read_table",
]
