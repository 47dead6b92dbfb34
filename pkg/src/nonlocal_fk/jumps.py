"""Compound Poisson paths on the periodic lattice.

The process generated by ``L_J f(x) = sum_y h^d J(x - y) (f(y) - f(x))`` waits
an Exponential(mu) time at each site, ``mu = int J``, and then jumps from ``x``
to ``y`` with probability ``h^d J(x - y) / mu``; displacements are therefore
drawn from the reflected kernel ``z -> J(-z)``.

Every path owns an independent random stream keyed by
``(master_seed, stream_index)``, so ensembles are reproducible bit for bit no
matter how the sampling work is split across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, DomainError
from .lattice import FieldSeries, Grid, SignedKernel


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_index: int = 0

    def rng(self) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.stream_index),))
        return np.random.Generator(np.random.PCG64(seq))


class AliasTable:
    """Walker/Vose alias table for O(1) sampling from a finite distribution."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float).ravel()
        if w.size == 0 or np.any(w < 0) or not np.sum(w) > 0:
            raise DomainError("alias weights must be non-negative with positive sum")
        n = w.size
        scaled = w * (n / np.sum(w))
        prob = np.ones(n)
        alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        # leftovers are 1 up to rounding
        for i in small + large:
            prob[i] = 1.0
            alias[i] = i
        self.prob = prob
        self.alias = alias
        self.size = n

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        i = rng.integers(self.size, size=size)
        u = rng.random(size)
        return np.where(u < self.prob[i], i, self.alias[i])

    def probabilities(self) -> np.ndarray:
        """Distribution encoded by the table (used to check construction)."""
        p = self.prob / self.size
        out = p.copy()
        np.add.at(out, self.alias, (1.0 - self.prob) / self.size)
        return out


def displacement_table(J: SignedKernel) -> AliasTable:
    """Alias table over displacement cells with law ``J(-z) / sum J``."""
    if not J.nonneg:
        raise DomainError("jump kernel must be non-negative")
    axes = tuple(range(J.grid.dim))
    reflected = np.roll(np.flip(J.values, axis=axes), 1, axis=axes)
    return AliasTable(reflected)


@dataclass(frozen=True, eq=False)
class JumpPath:
    """Right-continuous piecewise-constant trajectory; sites are flat grid indices."""

    start: int
    horizon: float
    jump_times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        if len(self.jump_times) != len(self.positions):
            raise DomainError("one position per jump time required")


def _draw_jump_times(rng: np.random.Generator, rate: float, horizon: float) -> np.ndarray:
    mean = rate * horizon
    chunk = int(mean + 5.0 * np.sqrt(mean) + 10)
    times = np.cumsum(rng.exponential(1.0 / rate, size=chunk))
    while times[-1] <= horizon:
        more = times[-1] + np.cumsum(rng.exponential(1.0 / rate, size=chunk))
        times = np.concatenate((times, more))
    return times[: np.searchsorted(times, horizon, side="right")]


def _relative_cells(J: SignedKernel, horizon: float, seed: SeedSpec, table: AliasTable | None):
    """Jump times and cumulative per-axis displacement indices from the origin."""
    grid = J.grid
    mu = J.integral
    if horizon < 0:
        raise DomainError("horizon must be non-negative")
    if horizon == 0 or mu <= 0:
        return np.empty(0), np.empty((0, grid.dim), dtype=np.int64)
    if table is None:
        table = displacement_table(J)
    rng = seed.rng()
    times = _draw_jump_times(rng, mu, horizon)
    cells = table.sample(rng, times.size)
    steps = np.stack(np.unravel_index(cells, grid.shape), axis=-1).astype(np.int64)
    return times, np.cumsum(steps, axis=0) % grid.points


def _shift(grid: Grid, start: int, rel: np.ndarray) -> np.ndarray:
    origin = np.array(np.unravel_index(int(start), grid.shape), dtype=np.int64)
    absolute = (origin + rel) % grid.points
    return np.ravel_multi_index(tuple(np.moveaxis(absolute, -1, 0)), grid.shape)


def sample_path(
    J: SignedKernel,
    start: int,
    horizon: float,
    seed: SeedSpec,
    table: AliasTable | None = None,
) -> JumpPath:
    """One trajectory of the L_J process on ``[0, horizon]`` started at site ``start``.

    A kernel with zero mass yields a path without jumps.
    """
    if not J.nonneg:
        raise DomainError("jump kernel must be non-negative")
    start = int(start)
    if not 0 <= start < J.grid.size:
        raise DomainError(f"start site {start} outside grid")
    times, rel = _relative_cells(J, horizon, seed, table)
    return JumpPath(start, float(horizon), times, _shift(J.grid, start, rel))


def position_at(path: JumpPath, s: float) -> int:
    if not 0.0 <= s <= path.horizon:
        raise DomainError(f"time {s} outside [0, {path.horizon}]")
    i = int(np.searchsorted(path.jump_times, s, side="right"))
    return path.start if i == 0 else int(path.positions[i - 1])


def _check_cover(W: FieldSeries, t: float):
    if not W.covers(0.0, t):
        raise CoverageError(
            f"potential defined on [{W.times[0]}, {W.times[-1]}] does not cover [0, {t}]"
        )


def path_potential_integral(path: JumpPath, W: FieldSeries) -> float:
    """``int_0^t W(X_{t-s}, s) ds`` with ``t = path.horizon``.

    The path is constant between jumps and W is linear in time between its
    nodes, so splitting at both sets of breakpoints makes the midpoint rule exact.
    """
    t = path.horizon
    _check_cover(W, t)
    if t == 0:
        return 0.0
    flat = W.values.reshape(W.times.size, -1)
    nodes = W.times[(W.times > 0) & (W.times < t)]
    flips = t - path.jump_times
    br = np.unique(np.concatenate(([0.0, t], nodes, flips[(flips > 0) & (flips < t)])))
    total = 0.0
    for a, b in zip(br[:-1], br[1:]):
        mid = 0.5 * (a + b)
        x = position_at(path, t - mid)
        total += (b - a) * np.interp(mid, W.times, flat[:, x])
    return float(total)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Paths started at the origin, padded to a common jump count.

    On the torus a path from ``x`` is the origin path shifted by ``x``, so one
    ensemble serves every start site (common random numbers across sites).
    """

    grid: Grid
    horizon: float
    jump_times: np.ndarray  # (n_paths, K), +inf padding
    cells: np.ndarray  # (n_paths, K, d) cumulative displacement indices
    counts: np.ndarray  # (n_paths,)
    master_seed: int
    first_stream: int = 0

    @property
    def n_paths(self) -> int:
        return self.counts.size

    def path(self, i: int, start: int = 0) -> JumpPath:
        k = int(self.counts[i])
        return JumpPath(
            int(start), self.horizon, self.jump_times[i, :k], _shift(self.grid, start, self.cells[i, :k])
        )

    def positions_at(self, start: int, s: float) -> np.ndarray:
        """Site of every path at time ``s`` when started from ``start``."""
        if not 0.0 <= s <= self.horizon:
            raise DomainError(f"time {s} outside [0, {self.horizon}]")
        idx = np.sum(self.jump_times <= s, axis=1)
        rel = _with_origin(self.cells)[np.arange(self.n_paths), idx]
        return _shift(self.grid, start, rel)


def _with_origin(cells: np.ndarray) -> np.ndarray:
    n, _, d = cells.shape
    return np.concatenate((np.zeros((n, 1, d), dtype=np.int64), cells), axis=1)


def _sample_block(J, horizon, master_seed, streams):
    table = displacement_table(J) if J.integral > 0 else None
    return [_relative_cells(J, horizon, SeedSpec(master_seed, s), table) for s in streams]


def sample_ensemble(
    J: SignedKernel,
    horizon: float,
    n_paths: int,
    master_seed: int,
    first_stream: int = 0,
    n_jobs: int = 1,
) -> PathEnsemble:
    """Sample ``n_paths`` origin-started paths on streams ``first_stream, ...``.

    ``n_jobs != 1`` farms contiguous stream blocks out with joblib; the result
    is identical to the serial one because each stream is self-contained.
    """
    if not J.nonneg:
        raise DomainError("jump kernel must be non-negative")
    if n_paths < 1:
        raise DomainError("n_paths must be positive")
    streams = np.arange(first_stream, first_stream + n_paths)
    if n_jobs == 1:
        raw = _sample_block(J, horizon, master_seed, streams)
    else:
        from joblib import Parallel, delayed, effective_n_jobs

        blocks = np.array_split(streams, max(1, effective_n_jobs(n_jobs)) * 4)
        parts = Parallel(n_jobs=n_jobs)(
            delayed(_sample_block)(J, horizon, master_seed, b) for b in blocks if b.size
        )
        raw = [item for part in parts for item in part]
    counts = np.array([r[0].size for r in raw], dtype=np.int64)
    width = max(1, int(counts.max()))
    d = J.grid.dim
    times = np.full((n_paths, width), np.inf)
    cells = np.zeros((n_paths, width, d), dtype=np.int64)
    for i, (tm, rel) in enumerate(raw):
        k = tm.size
        times[i, :k] = tm
        cells[i, :k] = rel
        if k:
            cells[i, k:] = rel[-1]
    return PathEnsemble(J.grid, float(horizon), times, cells, counts, int(master_seed), int(first_stream))


@dataclass(frozen=True, eq=False)
class IntegrationPlan:
    """Breakpoints and visited sites of an ensemble on ``[0, t]``.

    Depends only on the paths, ``t`` and the potential's time nodes, so one
    plan serves any number of potentials sharing that time grid.
    """

    t: float
    times: np.ndarray
    width: np.ndarray  # (n, P)
    node: np.ndarray  # (n, P) left time node of each piece midpoint
    weight: np.ndarray  # (n, P) linear interpolation weight toward node + 1
    rel: np.ndarray  # (n, P, d) displacement from the start during each piece
    end_rel: np.ndarray  # (n, d) displacement at time t


def integration_plan(ens: PathEnsemble, times, t: float | None = None) -> IntegrationPlan:
    t = ens.horizon if t is None else float(t)
    if t > ens.horizon * (1 + 1e-12):
        raise DomainError(f"t={t} beyond ensemble horizon {ens.horizon}")
    times = np.asarray(times, dtype=float)
    n = ens.n_paths
    K = ens.jump_times.shape[1]
    live = ens.jump_times <= t
    k_t = np.sum(live, axis=1)
    rel_all = _with_origin(ens.cells)
    end_rel = rel_all[np.arange(n), k_t]

    nodes = times[(times > 0) & (times < t)]
    G = nodes.size + 2
    flips = np.where(live, t - ens.jump_times, t)
    base = np.broadcast_to(np.concatenate(([0.0], nodes, [t])), (n, G))
    merged = np.concatenate((base, flips), axis=1)
    is_jump = np.concatenate((np.zeros((n, G), dtype=bool), live), axis=1)
    order = np.argsort(merged, axis=1, kind="stable")
    S = np.take_along_axis(merged, order, axis=1)
    flags = np.take_along_axis(is_jump, order, axis=1)
    width = S[:, 1:] - S[:, :-1]
    mid = 0.5 * (S[:, 1:] + S[:, :-1])
    # flips below the midpoint belong to jumps that happen after time t - mid
    before = np.cumsum(flags, axis=1)[:, :-1]
    idx = np.clip(k_t[:, None] - before, 0, K)
    rel = np.take_along_axis(rel_all, idx[:, :, None], axis=1)
    if times.size > 1:
        node = np.clip(np.searchsorted(times, mid, side="right") - 1, 0, times.size - 2)
        weight = (mid - times[node]) / (times[node + 1] - times[node])
    else:
        node = np.zeros(mid.shape, dtype=np.int64)
        weight = np.zeros(mid.shape)
    return IntegrationPlan(t, times, width, node, weight, rel, end_rel)


def evaluate_plan(
    plan: IntegrationPlan,
    grid: Grid,
    W: FieldSeries | None,
    starts,
    chunk: int = 4_000_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrals and end sites, both shaped ``(len(starts), n_paths)``."""
    starts = np.atleast_1d(np.asarray(starts, dtype=np.int64))
    origin = np.stack(np.unravel_index(starts, grid.shape), axis=-1)
    end_sites = _ravel(grid, origin[:, None, :] + plan.end_rel[None, :, :])
    n = plan.width.shape[0]
    if W is None or plan.t == 0:
        return np.zeros((starts.size, n)), end_sites
    _check_cover(W, plan.t)
    if W.times.shape != plan.times.shape or np.any(W.times != plan.times):
        raise DomainError("potential time nodes differ from the plan's")
    if W.times.size == 1:
        raise CoverageError("a single time node cannot cover a positive horizon")
    flatW = W.values.reshape(W.times.size, -1)
    P = plan.width.shape[1]
    per = max(1, chunk // max(1, n * P))
    out = np.empty((starts.size, n))
    k, w = plan.node, plan.weight
    for lo in range(0, starts.size, per):
        o = origin[lo : lo + per]
        sites = _ravel(grid, o[:, None, None, :] + plan.rel[None])
        vals = (1.0 - w) * flatW[k, sites] + w * flatW[k + 1, sites]
        out[lo : lo + per] = np.sum(plan.width * vals, axis=-1)
    return out, end_sites


def ensemble_potential_integrals(
    ens: PathEnsemble,
    W: FieldSeries | None,
    starts,
    t: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``int_0^t W(X_{t-s}, s) ds`` for every (start, path) pair.

    Paths are truncated at ``t <= ens.horizon``. Returns ``(integrals,
    end_sites)``; ``end_sites`` holds the flat index of ``X_t``. ``W=None``
    means a zero potential.
    """
    times = np.zeros(1) if W is None else W.times
    plan = integration_plan(ens, times, t)
    return evaluate_plan(plan, ens.grid, W, starts)


def _ravel(grid: Grid, cells: np.ndarray) -> np.ndarray:
    cells = cells % grid.points
    return np.ravel_multi_index(tuple(np.moveaxis(cells, -1, 0)), grid.shape)
