"""Reference time steppers.

Every scheme is Strang splitting: half a step of the reaction/potential part,
a full step of the linear jump part through its exact spectral multiplier,
then the second half step. Constant fields see the identity in the spectral
step, so the constant solutions 0 and theta are preserved to rounding.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolated, DomainError, PositivityWarning, StepSizeError
from .lattice import (
    Field,
    FieldSeries,
    Kernel,
    ModelParams,
    NormSeries,
    SignedKernel,
    combined_kernel,
    convolve_array,
    time_grid,
)

NEGATIVITY_FLOOR = -1e-10
MAX_BINOMIAL_ORDER = 30


class _Recorder:
    """Collects stored snapshots every ``store_every`` steps plus dense norms."""

    def __init__(self, u0, n_steps, store_every, dt, reference):
        if store_every < 1 or n_steps % store_every:
            raise DomainError(f"store_every={store_every} must divide the step count {n_steps}")
        self.dt = dt
        self.store_every = store_every
        self.reference = reference
        self.snaps = [u0.copy()]
        self.sup = [np.max(np.abs(u0))]
        self.mean = [np.mean(u0)]
        self.dev = [np.max(np.abs(u0 - reference))]

    def record(self, step, u):
        self.sup.append(np.max(np.abs(u)))
        self.mean.append(np.mean(u))
        self.dev.append(np.max(np.abs(u - self.reference)))
        if step % self.store_every == 0:
            self.snaps.append(u.copy())

    def series(self, grid, n_steps) -> FieldSeries:
        dense = np.arange(n_steps + 1) * self.dt
        norms = NormSeries(
            dense, np.array(self.sup), np.array(self.mean), np.array(self.dev), self.reference
        )
        stored = dense[:: self.store_every]
        return FieldSeries(grid, stored, np.stack(self.snaps), norms)


def _potential_sup(W: FieldSeries, T: float) -> float:
    mask = (W.times >= 0) & (W.times <= T)
    vals = [np.max(np.abs(W.values[mask]))] if np.any(mask) else []
    vals += [np.max(np.abs(W.at(0.0))), np.max(np.abs(W.at(T)))]
    return float(max(vals))


def solve_perturbed(
    u0: Field, W: FieldSeries, J: SignedKernel, T: float, dt: float, store_every: int = 1
) -> FieldSeries:
    """``du/dt = L_J u + W(x, t) u`` on ``[0, T]``.

    The potential half steps are exact exponentials of the time integral of
    the (piecewise-linear) potential, so constant potentials are integrated
    without error.
    """
    u0.grid.check_same(J.grid)
    W.grid.check_same(J.grid)
    if not W.covers(0.0, T):
        raise DomainError(f"potential does not cover [0, {T}]")
    times, n = time_grid(T, dt)
    w_sup = _potential_sup(W, T)
    limit = 0.1 / (J.l1_mass + w_sup)
    if dt > limit * (1 + 1e-12):
        raise StepSizeError(f"dt={dt} exceeds stability bound {limit:.4g}")
    mult = np.exp(dt * J.generator_symbol)
    axes = J.grid.axes
    growth = math.exp(w_sup * T) * max(np.max(np.abs(u0.values)), 1e-300) * 10.0

    u = u0.values.copy()
    rec = _Recorder(u, n, store_every, dt, 0.0)
    for i in range(n):
        t0 = times[i]
        u = u * np.exp(W.integrate(t0, t0 + 0.5 * dt))
        u = np.fft.ifftn(mult * np.fft.fftn(u, axes=axes), axes=axes).real
        u = u * np.exp(W.integrate(t0 + 0.5 * dt, times[i + 1]))
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > growth:
            raise StepSizeError(f"solution growth beyond a priori bound at t={times[i + 1]}")
        rec.record(i + 1, u)
    return rec.series(u0.grid, n)


def logistic_closed_form(q0: float, params: ModelParams, t):
    """Spatially constant logistic solution started from ``q0 > 0``."""
    if not q0 > 0:
        raise DomainError(f"q0 must be positive, got {q0}")
    theta = params.theta
    t = np.asarray(t, dtype=float)
    out = theta / (1.0 + np.exp(-params.beta * t) * (theta / q0 - 1.0))
    return float(out) if out.ndim == 0 else out


def _logistic_reaction(params: ModelParams, a_minus: Kernel):
    beta, km = params.beta, params.kappa_minus

    def F(u):
        return beta * u - km * u * convolve_array(a_minus, u)

    return F


def _rk2(F, u, h):
    return u + h * F(u + 0.5 * h * F(u))


def solve_logistic(
    u0: Field,
    params: ModelParams,
    a_plus: Kernel,
    a_minus: Kernel,
    T: float,
    dt: float,
    store_every: int = 1,
    max_refinements: int = 3,
) -> FieldSeries:
    """Spatial logistic equation ``du/dt = kappa+ L_{a+} u + F(u)``.

    ``F(u) = (kappa+ - m) u - kappa- u (a- * u)`` is advanced by explicit
    midpoint half steps. Values below ``-1e-10`` trigger a warning and a rerun
    with half the step (at most ``max_refinements`` times).
    """
    for k in (a_plus, a_minus):
        u0.grid.check_same(k.grid)
    if np.min(u0.values) < 0:
        raise DomainError("initial condition must be non-negative")
    sup0 = float(np.max(u0.values))
    limit = 0.1 / (2.0 * params.kappa_plus + params.kappa_minus * sup0)
    if dt > limit * (1 + 1e-12):
        raise StepSizeError(f"dt={dt} exceeds stability bound {limit:.4g}")
    for attempt in range(max_refinements + 1):
        series, min_val = _logistic_run(u0, params, a_plus, a_minus, T, dt, store_every)
        if min_val >= NEGATIVITY_FLOOR:
            return series
        warnings.warn(
            f"logistic solution reached {min_val:.3e} < {NEGATIVITY_FLOOR} with dt={dt}",
            PositivityWarning,
            stacklevel=2,
        )
        if attempt < max_refinements:
            dt *= 0.5
            store_every *= 2
    return series


def _logistic_run(u0, params, a_plus, a_minus, T, dt, store_every):
    _, n = time_grid(T, dt)
    birth = SignedKernel(a_plus.grid, params.kappa_plus * a_plus.values)
    mult = np.exp(dt * birth.generator_symbol)
    axes = u0.grid.axes
    F = _logistic_reaction(params, a_minus)
    half = 0.5 * dt
    u = u0.values.copy()
    rec = _Recorder(u, n, store_every, dt, params.theta)
    min_val = float(np.min(u))
    for i in range(n):
        u = _rk2(F, u, half)
        u = np.fft.ifftn(mult * np.fft.fftn(u, axes=axes), axes=axes).real
        u = _rk2(F, u, half)
        if not np.all(np.isfinite(u)):
            raise StepSizeError(f"non-finite logistic solution at step {i + 1}")
        min_val = min(min_val, float(np.min(u)))
        rec.record(i + 1, u)
    return rec.series(u0.grid, n), min_val


@dataclass
class ComparisonReport:
    passed: bool
    q0: float
    tol: float
    min_margin: float
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "q0": self.q0,
            "tol": self.tol,
            "min_margin": self.min_margin,
            "violations": self.violations,
        }


def comparison_check(
    u: FieldSeries,
    params: ModelParams,
    q0: float,
    a_plus: Kernel,
    a_minus: Kernel,
    tol: float,
    max_listed: int = 20,
) -> ComparisonReport:
    """Check ``u_t(x) >= q_t - tol`` at every stored time and site."""
    if not combined_kernel(params, a_plus, a_minus, q0).nonneg:
        raise AssumptionViolated(
            f"J_kappa = kappa+ a+ - kappa kappa- a- is negative somewhere for kappa = q0 = {q0}",
            assumption="J_kappa >= 0 with kappa = q0",
        )
    if np.min(u.values[0]) < q0 - tol:
        raise DomainError("initial condition must satisfy u0 >= q0")
    q = logistic_closed_form(q0, params, u.times)
    axes = tuple(range(1, u.values.ndim))
    margins = np.min(u.values, axis=axes) - q
    bad = np.nonzero(margins < -tol)[0]
    violations = [
        {"t": float(u.times[i]), "min_u": float(margins[i] + q[i]), "q_t": float(q[i])}
        for i in bad[:max_listed]
    ]
    return ComparisonReport(bad.size == 0, float(q0), float(tol), float(np.min(margins)), violations)


def _binomials(n_max: int) -> list[list[int]]:
    return [[math.comb(n, l) for l in range(n + 1)] for n in range(n_max + 1)]


def hierarchy_rhs(K, params: ModelParams, a_plus: Kernel, a_minus: Kernel) -> np.ndarray:
    """Right-hand side of the Taylor-coefficient equations, term for term.

    ``K[n]`` holds ``k_n``; the sum over ``l`` runs over ``0..n`` including the
    terms with ``k_0``.
    """
    K = np.asarray(K, dtype=float)
    n_max = K.shape[0] - 1
    binom = _binomials(n_max)
    conv = convolve_array(a_minus, K)
    lin = params.kappa_plus * (convolve_array(a_plus, K) - K) + params.beta * K
    out = np.empty_like(K)
    for n in range(n_max + 1):
        quad = sum(binom[n][l] * K[l] * conv[n - l] for l in range(n + 1))
        out[n] = lin[n] - params.kappa_minus * quad
    return out


def _hierarchy_source(params, a_minus, n_max):
    binom = _binomials(n_max)
    km = params.kappa_minus

    def S(K):
        # K excludes k_0; K[j] is k_{j+1}
        out = np.zeros_like(K)
        if n_max < 2:
            return out
        conv = convolve_array(a_minus, K[: n_max - 1])
        for n in range(2, n_max + 1):
            acc = 0.0
            for l in range(1, n):
                acc = acc + binom[n][l] * K[l - 1] * conv[n - l - 1]
            out[n - 1] = -km * acc
        return out

    return S


def solve_taylor_hierarchy(
    xi: Field,
    params: ModelParams,
    a_plus: Kernel,
    a_minus: Kernel,
    n_max: int,
    T: float,
    dt: float,
    store_every: int = 1,
) -> list[FieldSeries]:
    """Taylor coefficients ``k_n`` of the logistic solution in the amplitude of ``theta e^{lambda xi}``.

    The terms of the sum with ``l = 0`` or ``l = n`` are linear in ``k_n`` and
    combine with the birth and reaction terms into ``J_theta * k_n -
    kappa+ k_n``; that operator is applied exactly in Fourier space. The
    remaining sum only involves lower orders and is the split-off source.
    Returns ``[k_0, ..., k_{n_max}]``.
    """
    if not 1 <= n_max <= MAX_BINOMIAL_ORDER:
        raise DomainError(f"n_max must be in [1, {MAX_BINOMIAL_ORDER}]")
    for k in (a_plus, a_minus):
        xi.grid.check_same(k.grid)
    grid = xi.grid
    theta = params.theta
    J_theta = combined_kernel(params, a_plus, a_minus, theta)
    times, n = time_grid(T, dt)
    if store_every < 1 or n % store_every:
        raise DomainError(f"store_every={store_every} must divide the step count {n}")
    mult = np.exp(dt * (J_theta.symbol - params.kappa_plus))
    axes = grid.axes
    S = _hierarchy_source(params, a_minus, n_max)
    half = 0.5 * dt

    K = np.stack([theta * xi.values**m for m in range(1, n_max + 1)])
    snaps = [K.copy()]
    for i in range(n):
        K = _rk2(S, K, half)
        K = np.fft.ifftn(mult * np.fft.fftn(K, axes=axes), axes=axes).real
        K = _rk2(S, K, half)
        if (i + 1) % store_every == 0:
            snaps.append(K.copy())
    stored = times[::store_every]
    data = np.stack(snaps, axis=1)  # (n_max, M, *shape)
    k0 = FieldSeries.constant(grid, stored, theta)
    return [k0] + [FieldSeries(grid, stored, data[j]) for j in range(n_max)]


def taylor_sum(ks: list[FieldSeries], lam: float) -> FieldSeries:
    """``sum_n lambda^n / n! k_n`` over the supplied coefficients."""
    total = np.zeros_like(ks[0].values)
    for m, k in enumerate(ks):
        total = total + lam**m / math.factorial(m) * k.values
    return FieldSeries(ks[0].grid, ks[0].times, total)
