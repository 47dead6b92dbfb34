"""Periodic lattice: grids, fields, convolution kernels and the jump generator.

All spatial objects live on a torus ``[0, L)^d`` sampled at ``N`` points per
axis, ``x_i = i * h`` with ``h = L / N``. Kernels are stored by displacement
in FFT order (index 0 is the origin), so circular convolution is a pointwise
product of spectra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError, GridMismatchError, UnresolvableKernelError


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``points`` nodes on each of ``dim`` axes."""

    dim: int
    extent: float
    points: int

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise DomainError(f"dim must be a positive integer, got {self.dim}")
        if not self.extent > 0:
            raise DomainError(f"extent must be positive, got {self.extent}")
        if int(self.points) != self.points or self.points < 4:
            raise DomainError(f"points must be an integer >= 4, got {self.points}")
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "extent", float(self.extent))
        object.__setattr__(self, "points", int(self.points))

    @property
    def spacing(self) -> float:
        return self.extent / self.points

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dim

    @property
    def size(self) -> int:
        return self.points**self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        """Trailing array axes holding the spatial dimensions."""
        return tuple(range(-self.dim, 0))

    def offsets(self) -> np.ndarray:
        """Wrapped integer displacement per axis, ``-N/2 <= j < N/2``."""
        return np.fft.fftfreq(self.points, d=1.0 / self.points).astype(np.int64)

    def displacement_norm(self) -> np.ndarray:
        """Euclidean length of the wrapped displacement of every cell."""
        j = self.offsets() * self.spacing
        mesh = np.meshgrid(*([j] * self.dim), indexing="ij")
        return np.sqrt(sum(m**2 for m in mesh))

    def coordinates(self) -> list[np.ndarray]:
        """Node coordinates ``i * h`` as an ``ij``-indexed meshgrid."""
        x = np.arange(self.points) * self.spacing
        return np.meshgrid(*([x] * self.dim), indexing="ij")

    def wavenumbers(self) -> np.ndarray:
        """Angular frequency magnitude ``|lambda_k|`` of every Fourier mode."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.points, d=self.spacing)
        mesh = np.meshgrid(*([k] * self.dim), indexing="ij")
        return np.sqrt(sum(m**2 for m in mesh))

    def check_same(self, other: "Grid"):
        if self != other:
            raise GridMismatchError(f"grid mismatch: {self} vs {other}")


def _as_grid_array(grid: Grid, values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != grid.shape:
        if arr.size != grid.size:
            raise GridMismatchError(
                f"expected {grid.size} values for grid {grid.shape}, got shape {arr.shape}"
            )
        arr = arr.reshape(grid.shape)
    return arr


@dataclass(frozen=True, eq=False)
class Field:
    """Real function sampled on the nodes of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        arr = _as_grid_array(self.grid, self.values)
        if not np.all(np.isfinite(arr)):
            raise DomainError("field values must be finite")
        object.__setattr__(self, "values", arr)

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        """Evaluate ``fn(*coords)`` on the node meshgrid."""
        return cls(grid, np.broadcast_to(fn(*grid.coordinates()), grid.shape).copy())

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def mean(self) -> float:
        return float(np.mean(self.values))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass(frozen=True, eq=False)
class SignedKernel:
    """Real convolution kernel indexed by displacement (origin at index 0)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        arr = _as_grid_array(self.grid, self.values)
        if not np.all(np.isfinite(arr)):
            raise DomainError("kernel values must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def integral(self) -> float:
        return float(self.grid.cell_volume * np.sum(self.values))

    @property
    def l1_mass(self) -> float:
        return float(self.grid.cell_volume * np.sum(np.abs(self.values)))

    @property
    def nonneg(self) -> bool:
        return bool(np.min(self.values) >= 0.0)

    @cached_property
    def symbol(self) -> np.ndarray:
        """Discrete Fourier transform ``h^d sum_j J(x_j) exp(-i lambda x_j)``."""
        return self.grid.cell_volume * np.fft.fftn(self.values)

    @cached_property
    def generator_symbol(self) -> np.ndarray:
        """Multiplier of ``L_J``; the zero mode is pinned to exactly 0."""
        mult = self.symbol - self.symbol.flat[0]
        mult.flat[0] = 0.0
        return mult

    def as_kernel(self) -> "Kernel":
        if not self.nonneg:
            raise DomainError("kernel has negative entries")
        return Kernel(self.grid, self.values)


class Kernel(SignedKernel):
    """Non-negative kernel; ``mass`` is the jump intensity it generates."""

    def __post_init__(self):
        super().__post_init__()
        if np.min(self.values) < 0.0:
            raise DomainError("Kernel values must be non-negative; use SignedKernel")

    @property
    def mass(self) -> float:
        return self.integral

    def as_kernel(self) -> "Kernel":
        return self


@dataclass(frozen=True)
class Gaussian:
    sigma: float


@dataclass(frozen=True)
class TopHat:
    radius: float


@dataclass(frozen=True, eq=False)
class Tabulated:
    """Raw non-negative values in displacement (FFT) order."""

    values: np.ndarray


def build_kernel(profile, grid: Grid) -> Kernel:
    """Sample a kernel profile at the wrapped displacements and renormalize to unit mass."""
    h = grid.spacing
    if isinstance(profile, Gaussian):
        if not profile.sigma > 0:
            raise DomainError("sigma must be positive")
        if profile.sigma < h:
            raise UnresolvableKernelError(f"sigma={profile.sigma} below grid spacing {h}")
        r = grid.displacement_norm()
        raw = np.exp(-0.5 * (r / profile.sigma) ** 2)
    elif isinstance(profile, TopHat):
        if not profile.radius > 0:
            raise DomainError("radius must be positive")
        if profile.radius < h:
            raise UnresolvableKernelError(f"radius={profile.radius} below grid spacing {h}")
        r = grid.displacement_norm()
        raw = (r <= profile.radius * (1.0 + 1e-12)).astype(float)
    elif isinstance(profile, Tabulated):
        raw = _as_grid_array(grid, profile.values).copy()
        if np.min(raw) < 0:
            raise DomainError("tabulated kernel values must be non-negative")
    else:
        raise TypeError(f"unknown kernel profile {profile!r}")
    total = float(np.sum(raw))
    if not total > 0:
        raise UnresolvableKernelError("kernel has no mass on this grid")
    return Kernel(grid, raw / (total * grid.cell_volume))


def _check_grid(k: SignedKernel, f: Field):
    k.grid.check_same(f.grid)


def convolve_array(k: SignedKernel, arr: np.ndarray) -> np.ndarray:
    """Circular convolution over the trailing ``d`` axes; leading axes are a batch."""
    axes = k.grid.axes
    return np.fft.ifftn(k.symbol * np.fft.fftn(arr, axes=axes), axes=axes).real


def convolve(k: SignedKernel, f: Field) -> Field:
    """``(k * f)(x_i) = h^d sum_j k(x_i - x_j) f(x_j)`` computed spectrally."""
    _check_grid(k, f)
    return Field(f.grid, convolve_array(k, f.values))


def apply_generator(J: SignedKernel, f: Field) -> Field:
    """``L_J f = J * f - (int J) f``."""
    _check_grid(J, f)
    return Field(f.grid, convolve_array(J, f.values) - J.integral * f.values)


def semigroup_array(J: SignedKernel, t, arr: np.ndarray) -> np.ndarray:
    """``exp(t L_J)`` applied over the trailing axes of ``arr``."""
    if t < 0:
        raise DomainError(f"semigroup time must be non-negative, got {t}")
    if t == 0:
        return np.array(arr, dtype=float, copy=True)
    axes = J.grid.axes
    mult = np.exp(t * J.generator_symbol)
    return np.fft.ifftn(mult * np.fft.fftn(arr, axes=axes), axes=axes).real


def semigroup_apply(J: SignedKernel, t: float, f: Field) -> Field:
    """Exact spectral evolution ``exp(t L_J) f``."""
    _check_grid(J, f)
    return Field(f.grid, semigroup_array(J, t, f.values))


@dataclass(frozen=True)
class ModelParams:
    """Birth rate ``kappa_plus``, competition ``kappa_minus`` and mortality."""

    kappa_plus: float
    kappa_minus: float
    mortality: float

    def __post_init__(self):
        problems = []
        if not self.kappa_plus > 0:
            problems.append("kappa_plus must be > 0")
        if not self.kappa_minus > 0:
            problems.append("kappa_minus must be > 0")
        if not 0 < self.mortality < self.kappa_plus:
            problems.append("mortality must satisfy 0 < m < kappa_plus")
        if problems:
            raise DomainError("; ".join(problems))

    @property
    def theta(self) -> float:
        return (self.kappa_plus - self.mortality) / self.kappa_minus

    @property
    def beta(self) -> float:
        return self.kappa_plus - self.mortality

    def gamma(self, J_theta: SignedKernel) -> float:
        """``kappa_plus - ||J_theta||_1``; depends on the discretized kernel."""
        return self.kappa_plus - J_theta.l1_mass

    def to_dict(self, J_theta: SignedKernel | None = None) -> dict:
        out = {
            "kappa_plus": self.kappa_plus,
            "kappa_minus": self.kappa_minus,
            "mortality": self.mortality,
            "theta": self.theta,
            "beta": self.beta,
        }
        if J_theta is not None:
            out["gamma"] = self.gamma(J_theta)
        return out


def combined_kernel(
    params: ModelParams, a_plus: Kernel, a_minus: Kernel, kappa: float
) -> SignedKernel:
    """``J_kappa = kappa_plus a+ - kappa kappa_minus a-`` for ``kappa`` in ``[0, theta]``."""
    a_plus.grid.check_same(a_minus.grid)
    if not 0.0 <= kappa <= params.theta:
        raise DomainError(f"kappa={kappa} outside [0, theta={params.theta}]")
    values = params.kappa_plus * a_plus.values - kappa * params.kappa_minus * a_minus.values
    return SignedKernel(a_plus.grid, values)


@dataclass(frozen=True, eq=False)
class NormSeries:
    """Dense per-step diagnostics: sup norm, mean and sup distance to ``reference``."""

    times: np.ndarray
    sup: np.ndarray
    mean: np.ndarray
    deviation: np.ndarray
    reference: float = 0.0


@dataclass(frozen=True, eq=False)
class FieldSeries:
    """Fields stored on an increasing time grid; linear in time between nodes."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    norms: NormSeries | None = field(default=None)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.size < 1:
            raise DomainError("times must be a non-empty 1-D array")
        if np.any(np.diff(times) <= 0):
            raise DomainError("times must be strictly increasing")
        if values.shape != (times.size,) + self.grid.shape:
            raise GridMismatchError(
                f"values shape {values.shape} != {(times.size,) + self.grid.shape}"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: Grid, times, value: float) -> "FieldSeries":
        times = np.asarray(times, dtype=float)
        return cls(grid, times, np.full((times.size,) + grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, times, fn) -> "FieldSeries":
        """``fn(s, *coords)`` evaluated at every stored time."""
        times = np.asarray(times, dtype=float)
        coords = grid.coordinates()
        vals = np.stack([np.broadcast_to(fn(s, *coords), grid.shape) for s in times])
        return cls(grid, times, vals)

    @classmethod
    def stationary(cls, f: Field, times) -> "FieldSeries":
        times = np.asarray(times, dtype=float)
        return cls(f.grid, times, np.broadcast_to(f.values, (times.size,) + f.grid.shape).copy())

    def __len__(self):
        return self.times.size

    def field(self, i: int) -> Field:
        return Field(self.grid, self.values[i])

    def final(self) -> Field:
        return self.field(-1)

    def covers(self, start: float, stop: float, rtol: float = 1e-12) -> bool:
        slack = rtol * max(1.0, abs(stop))
        return self.times[0] <= start + slack and self.times[-1] >= stop - slack

    def at(self, s: float) -> np.ndarray:
        """Linear interpolation in time; returns a raw array."""
        times = self.times
        if s <= times[0]:
            return self.values[0]
        if s >= times[-1]:
            return self.values[-1]
        i = int(np.searchsorted(times, s, side="right")) - 1
        w = (s - times[i]) / (times[i + 1] - times[i])
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]

    def integrate(self, start: float, stop: float) -> np.ndarray:
        """Exact integral of the piecewise-linear interpolant over ``[start, stop]``."""
        if stop < start:
            raise DomainError("integration bounds reversed")
        inner = self.times[(self.times > start) & (self.times < stop)]
        nodes = np.concatenate(([start], inner, [stop]))
        vals = np.stack([self.at(s) for s in nodes])
        widths = np.diff(nodes).reshape((-1,) + (1,) * self.grid.dim)
        return np.sum(0.5 * widths * (vals[1:] + vals[:-1]), axis=0)

    def sup_norms(self, reference: float = 0.0) -> np.ndarray:
        axes = tuple(range(1, self.values.ndim))
        return np.max(np.abs(self.values - reference), axis=axes)

    def uniform_step(self, rtol: float = 1e-9) -> float:
        if self.times.size < 2:
            raise DomainError("need at least two time nodes")
        steps = np.diff(self.times)
        if np.ptp(steps) > rtol * steps[0] * max(1, steps.size):
            raise DomainError("time grid is not uniform")
        return float((self.times[-1] - self.times[0]) / (self.times.size - 1))

    def map(self, fn) -> "FieldSeries":
        """Apply ``fn`` to the stacked value array (e.g. ``lambda v: v - theta``)."""
        return FieldSeries(self.grid, self.times, fn(self.values))


def time_grid(T: float, dt: float) -> tuple[np.ndarray, int]:
    """Uniform grid ``0, dt, ..., T``; ``T`` must be a multiple of ``dt``."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    if T < 0:
        raise DomainError("horizon must be non-negative")
    n = int(round(T / dt))
    if not math.isclose(n * dt, T, rel_tol=1e-9, abs_tol=1e-12):
        raise DomainError(f"T={T} is not a multiple of dt={dt}")
    return np.linspace(0.0, T, n + 1), n
