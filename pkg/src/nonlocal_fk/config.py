"""Experiment configuration: JSON in, validated and normalized, hashed for provenance."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError, UnresolvableKernelError
from .lattice import Field, Gaussian, Grid, ModelParams, Tabulated, TopHat, build_kernel
from .random_fields import REGULARIZATIONS, SpectrumProfile

DEFAULTS = {
    "grid": {"d": 1, "L": 20.0, "N": 64},
    "model": {"kappa_plus": 2.0, "kappa_minus": 1.0, "mortality": 1.0},
    "kernels": {
        "a_plus": {"profile": "gaussian", "sigma": 1.0},
        "a_minus": {"profile": "gaussian", "sigma": 1.0},
    },
    "solver": {"T": 10.0, "dt": 0.01, "store_every": 10},
    "monte_carlo": {"n_paths": 10000, "master_seed": 20240601, "n_jobs": 1},
    "initial": {"kind": "cosine", "mean": 1.0, "amplitude": 0.5, "mode": 1},
    "fk_verify": {
        "t": 1.0,
        "potential": {"kind": "cosine", "mean": 0.0, "amplitude": 0.5, "mode": 1},
        "initial": {"kind": "cosine", "mean": 1.0, "amplitude": 0.5, "mode": 1},
        "duhamel_terms": 6,
        "dt": 0.01,
        "eval_points": 8,
        "det_tol": 1e-4,
        "logistic_t": 1.0,
        "logistic_paths": 2000,
        "logistic_tol": 1e-3,
    },
    "stability": {"block_length": 1.0, "n_blocks": 20, "window": None, "rel_tol": 0.05},
    "taylor": {
        "n_max": 8,
        "xi": {"kind": "cosine", "mean": 0.0, "amplitude": 1.0, "mode": 1},
        "lambda": None,
        "radius_fraction": 0.5,
    },
    "random_field": {
        "spectrum": {"alpha": 0.5, "amplitude": 1.0, "regularization": "smallest"},
        "times": [1.0, 2.0, 4.0],
        "n_samples": 10000,
        "fit_times": {"start": 1.0, "stop": 400.0, "num": 60},
        "window": [20.0, 200.0],
        "tol": 0.05,
        "beta_spec": 2.0,
        "fit_grid": {"L": 256.0, "N": 256},
        "fit_regularization": "cell",
    },
    "assumptions": {"n_kappa": 101},
}

FIELD_KINDS = ("constant", "cosine", "file")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("potential", "initial", "xi", "a_plus", "a_minus", "spectrum"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _positive(problems, path, value, integer=False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value) and value > 0
    if integer:
        ok = ok and float(value).is_integer()
    if not ok:
        problems.append(f"{path}: must be a positive {'integer' if integer else 'number'}, got {value!r}")
    return ok


def _check_field_source(problems, path, src):
    if not isinstance(src, dict) or src.get("kind") not in FIELD_KINDS:
        problems.append(f"{path}.kind: must be one of {FIELD_KINDS}")
        return
    kind = src["kind"]
    if kind == "constant" and not isinstance(src.get("value"), (int, float)):
        problems.append(f"{path}.value: number required")
    if kind == "cosine":
        for key in ("mean", "amplitude"):
            if not isinstance(src.get(key, 0.0), (int, float)):
                problems.append(f"{path}.{key}: number required")
        if not isinstance(src.get("mode", 1), int):
            problems.append(f"{path}.mode: integer required")
    if kind == "file" and not isinstance(src.get("path"), str):
        problems.append(f"{path}.path: file path required")


def _check_kernel(problems, path, spec, grid):
    profile = spec.get("profile") if isinstance(spec, dict) else None
    if profile == "gaussian":
        if _positive(problems, f"{path}.sigma", spec.get("sigma")) and grid and spec["sigma"] < grid.spacing:
            problems.append(f"{path}.sigma: {spec['sigma']} below grid spacing {grid.spacing}")
    elif profile == "tophat":
        if _positive(problems, f"{path}.radius", spec.get("radius")) and grid and spec["radius"] < grid.spacing:
            problems.append(f"{path}.radius: {spec['radius']} below grid spacing {grid.spacing}")
    elif profile == "file":
        if not isinstance(spec.get("path"), str):
            problems.append(f"{path}.path: file path required")
    else:
        problems.append(f"{path}.profile: must be 'gaussian', 'tophat' or 'file'")


def validate(raw: dict) -> list[str]:
    """Every problem in a merged config; empty when valid."""
    problems: list[str] = []
    unknown = set(raw) - set(DEFAULTS)
    problems += [f"{k}: unknown section" for k in sorted(unknown)]
    bad = [k for k in DEFAULTS if not isinstance(raw.get(k), dict)]
    if bad:
        return problems + [f"{k}: must be an object" for k in bad]

    g = raw["grid"]
    grid = None
    ok = _positive(problems, "grid.d", g.get("d"), integer=True)
    ok &= _positive(problems, "grid.L", g.get("L"))
    ok &= _positive(problems, "grid.N", g.get("N"), integer=True)
    if ok:
        try:
            grid = Grid(int(g["d"]), float(g["L"]), int(g["N"]))
        except DomainError as exc:
            problems.append(f"grid: {exc}")

    m = raw["model"]
    if all(_positive(problems, f"model.{k}", m.get(k)) for k in ("kappa_plus", "kappa_minus", "mortality")):
        if not m["mortality"] < m["kappa_plus"]:
            problems.append("model.mortality: must be below kappa_plus so that theta > 0")

    for name in ("a_plus", "a_minus"):
        _check_kernel(problems, f"kernels.{name}", raw["kernels"].get(name), grid)

    s = raw["solver"]
    ok = _positive(problems, "solver.T", s.get("T"))
    ok &= _positive(problems, "solver.dt", s.get("dt"))
    if ok:
        n = s["T"] / s["dt"]
        if not math.isclose(n, round(n), rel_tol=1e-9):
            problems.append("solver.T: must be a multiple of solver.dt")
        elif _positive(problems, "solver.store_every", s.get("store_every"), integer=True) and round(n) % int(s["store_every"]):
            problems.append("solver.store_every: must divide T/dt")

    mc = raw["monte_carlo"]
    _positive(problems, "monte_carlo.n_paths", mc.get("n_paths"), integer=True)
    seed = mc.get("master_seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        problems.append("monte_carlo.master_seed: integer in [0, 2^64) required")
    _positive(problems, "monte_carlo.n_jobs", mc.get("n_jobs"), integer=True)

    _check_field_source(problems, "initial", raw["initial"])
    fk = raw["fk_verify"]
    _check_field_source(problems, "fk_verify.potential", fk.get("potential"))
    _check_field_source(problems, "fk_verify.initial", fk.get("initial"))
    for key in ("t", "dt", "det_tol", "logistic_t", "logistic_tol"):
        _positive(problems, f"fk_verify.{key}", fk.get(key))
    for key in ("duhamel_terms", "eval_points", "logistic_paths"):
        _positive(problems, f"fk_verify.{key}", fk.get(key), integer=True)

    st = raw["stability"]
    _positive(problems, "stability.block_length", st.get("block_length"))
    _positive(problems, "stability.n_blocks", st.get("n_blocks"), integer=True)
    _positive(problems, "stability.rel_tol", st.get("rel_tol"))

    ty = raw["taylor"]
    if _positive(problems, "taylor.n_max", ty.get("n_max"), integer=True) and ty["n_max"] > 30:
        problems.append("taylor.n_max: at most 30")
    _check_field_source(problems, "taylor.xi", ty.get("xi"))
    if ty.get("lambda") is None:
        frac = ty.get("radius_fraction")
        if not isinstance(frac, (int, float)) or not 0 < frac < 1:
            problems.append("taylor.radius_fraction: must lie in (0, 1)")
    elif not isinstance(ty["lambda"], (int, float)):
        problems.append("taylor.lambda: number or null required")

    rf = raw["random_field"]
    sp = rf.get("spectrum", {})
    if not isinstance(sp.get("alpha"), (int, float)) or (grid and not 0 < sp["alpha"] <= grid.dim):
        problems.append("random_field.spectrum.alpha: must lie in (0, d]")
    _positive(problems, "random_field.spectrum.amplitude", sp.get("amplitude", 1.0))
    if sp.get("regularization", "smallest") not in REGULARIZATIONS:
        problems.append(f"random_field.spectrum.regularization: one of {REGULARIZATIONS}")
    times = rf.get("times")
    if not isinstance(times, list) or not times or not all(isinstance(t, (int, float)) and t >= 0 for t in times):
        problems.append("random_field.times: non-empty list of non-negative numbers")
    _positive(problems, "random_field.n_samples", rf.get("n_samples"), integer=True)
    ft = rf.get("fit_times", {})
    ok = _positive(problems, "random_field.fit_times.start", ft.get("start"))
    ok &= _positive(problems, "random_field.fit_times.stop", ft.get("stop"))
    ok &= _positive(problems, "random_field.fit_times.num", ft.get("num"), integer=True)
    if ok and ft["stop"] <= ft["start"]:
        problems.append("random_field.fit_times: stop must exceed start")
    w = rf.get("window")
    if not (isinstance(w, list) and len(w) == 2 and all(isinstance(x, (int, float)) for x in w) and w[0] < w[1]):
        problems.append("random_field.window: [start, stop] with start < stop")
    _positive(problems, "random_field.tol", rf.get("tol"))
    fg = rf.get("fit_grid")
    if not isinstance(fg, dict):
        problems.append("random_field.fit_grid: object with L and N required")
    else:
        _positive(problems, "random_field.fit_grid.L", fg.get("L"))
        _positive(problems, "random_field.fit_grid.N", fg.get("N"), integer=True)
    if rf.get("fit_regularization") not in REGULARIZATIONS:
        problems.append(f"random_field.fit_regularization: one of {REGULARIZATIONS}")
    bs = rf.get("beta_spec")
    if not isinstance(bs, (int, float)) or not 0 < bs <= 2:
        problems.append("random_field.beta_spec: must lie in (0, 2]")

    if _positive(problems, "assumptions.n_kappa", raw["assumptions"].get("n_kappa"), integer=True) and raw["assumptions"]["n_kappa"] < 2:
        problems.append("assumptions.n_kappa: at least 2")
    return problems


@dataclass
class ExperimentConfig:
    """Validated configuration; ``raw`` holds the normalized dictionary."""

    raw: dict
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, data: dict | None = None, base_dir=".", seed=None, paths=None) -> "ExperimentConfig":
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigurationError("configuration must be a JSON object", ["<root>"])
        raw = _merge(DEFAULTS, data)
        if seed is not None:
            raw["monte_carlo"]["master_seed"] = seed
        if paths is not None:
            raw["monte_carlo"]["n_paths"] = paths
            raw["random_field"]["n_samples"] = paths
        problems = validate(raw)
        if problems:
            raise ConfigurationError(f"{len(problems)} configuration problem(s)", problems)
        return cls(raw, Path(base_dir))

    @classmethod
    def load(cls, path, seed=None, paths=None) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}", [str(path)]) from exc
        return cls.from_dict(data, path.parent, seed=seed, paths=paths)

    def canonical(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def section(self, name: str) -> dict:
        return self.raw[name]

    def grid(self) -> Grid:
        g = self.raw["grid"]
        return Grid(int(g["d"]), float(g["L"]), int(g["N"]))

    def params(self) -> ModelParams:
        m = self.raw["model"]
        return ModelParams(float(m["kappa_plus"]), float(m["kappa_minus"]), float(m["mortality"]))

    def fit_grid(self) -> Grid:
        fg = self.raw["random_field"]["fit_grid"]
        return Grid(int(self.raw["grid"]["d"]), float(fg["L"]), int(fg["N"]))

    def kernel(self, name: str, grid: Grid | None = None):
        spec = self.raw["kernels"][name]
        grid = grid or self.grid()
        if spec["profile"] == "gaussian":
            profile = Gaussian(float(spec["sigma"]))
        elif spec["profile"] == "tophat":
            profile = TopHat(float(spec["radius"]))
        else:
            from .io import read_binary

            profile = Tabulated(read_binary(self.base_dir / spec["path"]).values)
        try:
            return build_kernel(profile, grid)
        except (UnresolvableKernelError, DomainError) as exc:
            raise ConfigurationError(str(exc), [f"kernels.{name}"]) from exc

    def build_field(self, src: dict) -> Field:
        grid = self.grid()
        kind = src["kind"]
        if kind == "constant":
            return Field.constant(grid, float(src["value"]))
        if kind == "cosine":
            k = 2 * np.pi * int(src.get("mode", 1)) / grid.extent
            mean, amp = float(src.get("mean", 0.0)), float(src.get("amplitude", 0.0))
            return Field.from_function(grid, lambda *x: mean + amp * np.cos(k * sum(x)))
        from .io import read_binary

        f = read_binary(self.base_dir / src["path"])
        grid.check_same(f.grid)
        return Field(grid, f.values)

    def spectrum(self, regularization: str | None = None) -> SpectrumProfile:
        sp = self.raw["random_field"]["spectrum"]
        return SpectrumProfile(
            alpha=float(sp["alpha"]),
            amplitude=float(sp.get("amplitude", 1.0)),
            regularization=regularization or sp.get("regularization", "smallest"),
            zero_weight=sp.get("zero_weight"),
            cutoff=sp.get("cutoff"),
            highpass=sp.get("highpass"),
        )
