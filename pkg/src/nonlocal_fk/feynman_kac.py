"""Monte Carlo Feynman-Kac estimators and the Duhamel series they are checked against.

For ``du/dt = L_J u + W u`` the solution at ``(x, t)`` is the average over
paths of the L_J process started at ``x`` of
``u0(X_t) * exp(int_0^t W(X_{t-s}, s) ds)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolated, ConvergenceFailure, CoverageError, DomainError, EstimatorOverflow
from .jumps import PathEnsemble, SeedSpec, evaluate_plan, integration_plan, sample_ensemble
from .lattice import Field, FieldSeries, Kernel, ModelParams, SignedKernel, convolve_array, time_grid

log = logging.getLogger(__name__)

# exp() overflows just above 709.78
MAX_EXPONENT = 700.0


def _as_seed(seed) -> SeedSpec:
    return seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed), 0)


def _weights(integrals: np.ndarray, context: str) -> np.ndarray:
    top = float(np.max(integrals)) if integrals.size else 0.0
    if top > MAX_EXPONENT:
        where = np.unravel_index(int(np.argmax(integrals)), integrals.shape)
        raise EstimatorOverflow(
            f"{context}: weight exponent {top:.1f} exceeds {MAX_EXPONENT}",
            stats={
                "max_exponent": top,
                "point_index": int(where[0]),
                "path_index": int(where[1]),
                "n_over": int(np.sum(integrals > MAX_EXPONENT)),
            },
        )
    return np.exp(integrals)


@dataclass
class FKEstimate:
    points: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_paths: int
    seed: SeedSpec
    t: float

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "n_paths": self.n_paths,
            "master_seed": self.seed.master_seed,
            "stream_index": self.seed.stream_index,
            "points": self.points.tolist(),
            "mean": self.mean.tolist(),
            "stderr": self.stderr.tolist(),
        }


def fk_linear_estimate(
    u0: Field,
    W: FieldSeries | None,
    J: SignedKernel,
    t: float,
    n_paths: int,
    seed,
    eval_points,
    ensemble: PathEnsemble | None = None,
    n_jobs: int = 1,
) -> FKEstimate:
    """Monte Carlo estimate of ``u(x, t)`` at ``eval_points`` (flat site indices).

    ``W=None`` stands for the zero potential. A precomputed ``ensemble``
    (horizon >= t) is reused instead of sampling.
    """
    if n_paths < 100:
        raise DomainError("n_paths must be at least 100")
    u0.grid.check_same(J.grid)
    seed = _as_seed(seed)
    if ensemble is None:
        ensemble = sample_ensemble(J, t, n_paths, seed.master_seed, seed.stream_index, n_jobs=n_jobs)
    elif ensemble.n_paths != n_paths:
        raise DomainError("ensemble size differs from n_paths")
    if W is not None and not W.covers(0.0, t):
        raise CoverageError(f"potential does not cover [0, {t}]")
    points = np.atleast_1d(np.asarray(eval_points, dtype=np.int64))
    times = np.zeros(1) if W is None else W.times
    plan = integration_plan(ensemble, times, t)
    integrals, ends = evaluate_plan(plan, u0.grid, W, points)
    samples = u0.flat()[ends] * _weights(integrals, "fk_linear_estimate")
    mean = np.mean(samples, axis=1)
    stderr = np.std(samples, axis=1, ddof=1) / math.sqrt(n_paths)
    return FKEstimate(points, mean, stderr, n_paths, seed, float(t))


@dataclass
class DuhamelResult:
    partial_sum: Field
    remainder_bound: float
    series: FieldSeries  # partial sum over the whole time grid
    term_norms: list = field(default_factory=list)


def duhamel_series(
    u0: Field, W: FieldSeries, J: Kernel, t: float, n_terms: int, dt: float
) -> DuhamelResult:
    """``sum_{j=0}^{n} Q^j (p * u0)`` with ``n = n_terms``.

    ``(Q f)(t) = int_0^t exp((t-s) L_J) [W(s) f(s)] ds`` is evaluated with the
    trapezoid rule on the grid ``k * dt``; each exponential is an exact Fourier
    multiplier. The dropped tail is bounded by
    ``(t ||W||)^{n+1} / (n+1)! * ||u0|| e^{t ||W||}``.
    """
    if n_terms < 1:
        raise DomainError("n_terms must be >= 1")
    if not J.nonneg:
        raise DomainError("the tail bound needs a non-negative jump kernel")
    u0.grid.check_same(J.grid)
    if not W.covers(0.0, t):
        raise CoverageError(f"potential does not cover [0, {t}]")
    times, M = time_grid(t, dt)
    axes = J.grid.axes
    Wk = np.stack([W.at(s) for s in times])
    step = np.exp(dt * J.generator_symbol)

    def fft(a):
        return np.fft.fftn(a, axes=axes)

    def ifft(a):
        return np.fft.ifftn(a, axes=axes).real

    # p * u0 at every grid time
    term = np.empty((M + 1,) + J.grid.shape)
    spec = fft(u0.values)
    term[0] = u0.values
    for k in range(M):
        spec = step * spec
        term[k + 1] = ifft(spec)
    total = term.copy()
    norms = [float(np.max(np.abs(term[-1])))]
    for _ in range(n_terms):
        g = fft(Wk * term)
        acc = np.zeros_like(g[0])
        nxt = np.empty_like(term)
        nxt[0] = 0.0
        for k in range(M):
            acc = step * (acc + 0.5 * dt * g[k]) + 0.5 * dt * g[k + 1]
            nxt[k + 1] = ifft(acc)
        term = nxt
        total += term
        norms.append(float(np.max(np.abs(term[-1]))))

    w_sup = float(np.max(np.abs(Wk)))
    u_sup = float(np.max(np.abs(u0.values)))
    x = t * w_sup
    bound = x ** (n_terms + 1) / math.factorial(n_terms + 1) * u_sup * math.exp(x)
    series = FieldSeries(J.grid, times, total)
    return DuhamelResult(series.final(), bound, series, norms)


@dataclass
class PsiResult:
    mean: FieldSeries
    stderr: FieldSeries


class _PsiMap:
    """``w -> Psi w`` on one block, with frozen paths and cached integration plans."""

    def __init__(self, v0: np.ndarray, V, ens: PathEnsemble, times: np.ndarray):
        self.v0 = v0
        self.V = V
        self.ens = ens
        self.times = times
        self.sites = np.arange(ens.grid.size)
        self.plans = [integration_plan(ens, times, s) for s in times]

    def __call__(self, w: FieldSeries) -> PsiResult:
        grid = self.ens.grid
        W = FieldSeries(grid, self.times, np.stack([self.V(w.values[k]) for k in range(len(self.times))]))
        flat0 = self.v0.reshape(-1)
        mean = np.empty((self.times.size,) + grid.shape)
        err = np.zeros_like(mean)
        mean[0] = self.v0
        n = self.ens.n_paths
        for k in range(1, self.times.size):
            integrals, ends = evaluate_plan(self.plans[k], grid, W, self.sites)
            samples = flat0[ends] * _weights(integrals, "Psi")
            mean[k] = np.mean(samples, axis=1).reshape(grid.shape)
            err[k] = (np.std(samples, axis=1, ddof=1) / math.sqrt(n)).reshape(grid.shape)
        return PsiResult(FieldSeries(grid, self.times, mean), FieldSeries(grid, self.times, err))


def psi_operator(u0: Field, V, ens: PathEnsemble, w: FieldSeries) -> PsiResult:
    """One application of the Feynman-Kac map with potential ``V(w_s)``.

    ``[Psi w](x, t) = E^x u0(X_t) exp(int_0^t V(w_s)(X_{t-s}) ds)`` at every
    site and every time node of ``w``.
    """
    return _PsiMap(u0.values, V, ens, w.times)(w)


@dataclass
class FixedPointResult:
    series: FieldSeries
    stderr: FieldSeries
    increments: list  # per block, sup-norm change of each Picard step
    block_starts: list

    @property
    def iterations(self) -> list[int]:
        return [len(h) for h in self.increments]


def fk_nonlinear_fixed_point(
    u0: Field,
    V,
    J: SignedKernel,
    T: float,
    n_paths: int,
    seed,
    max_iter: int = 50,
    tol: float = 1e-10,
    dt: float = 0.05,
    lipschitz: float | None = None,
    n_jobs: int = 1,
) -> FixedPointResult:
    """Solve ``u = Psi u`` by Picard iteration on frozen path ensembles.

    ``V`` maps a field's value array to the potential's value array and is
    Lipschitz with constant ``lipschitz`` on the relevant ball. When
    ``sup|u| * T * lipschitz >= 1`` the horizon is cut into blocks of length
    at most ``1 / (2 sup|u| lipschitz)`` (rounded down to whole ``dt``) and
    each block restarts from the previous block's end state. Block ``b`` uses
    streams ``stream_index + b * n_paths, ...``.
    """
    if n_paths < 100:
        raise DomainError("n_paths must be at least 100")
    u0.grid.check_same(J.grid)
    seed = _as_seed(seed)
    times, n_steps = time_grid(T, dt)
    grid = u0.grid

    def block_steps(v):
        d = float(np.max(np.abs(v)))
        if lipschitz is None or d == 0 or d * (n_steps * dt) * lipschitz < 1:
            return n_steps
        t_sub = 1.0 / (2.0 * d * lipschitz)
        k = int(math.floor(t_sub / dt + 1e-9))
        if k < 1:
            raise ConvergenceFailure(
                f"contraction horizon {t_sub:.3g} shorter than dt={dt}; reduce dt"
            )
        return k

    means = [u0.values[None]]
    errs = [np.zeros((1,) + grid.shape)]
    history: list[list[float]] = []
    starts: list[float] = []
    v0 = u0.values.copy()
    done = 0
    block = 0
    while done < n_steps:
        k = min(block_steps(v0), n_steps - done)
        local = times[: k + 1]
        starts.append(float(times[done]))
        ens = sample_ensemble(
            J, local[-1], n_paths, seed.master_seed, seed.stream_index + block * n_paths, n_jobs=n_jobs
        )
        psi = _PsiMap(v0, V, ens, local)
        w = FieldSeries.stationary(Field(grid, v0), local)
        incs: list[float] = []
        for _ in range(max_iter):
            res = psi(w)
            inc = float(np.max(np.abs(res.mean.values - w.values)))
            incs.append(inc)
            w = res.mean
            if inc < tol:
                break
        else:
            raise ConvergenceFailure(
                f"Picard iteration did not reach tol={tol} on block {block} in {max_iter} steps",
                history=incs,
            )
        log.debug("block %d converged in %d iterations", block, len(incs))
        history.append(incs)
        means.append(res.mean.values[1:])
        errs.append(res.stderr.values[1:])
        v0 = res.mean.values[-1].copy()
        done += k
        block += 1
    return FixedPointResult(
        FieldSeries(grid, times, np.concatenate(means)),
        FieldSeries(grid, times, np.concatenate(errs)),
        history,
        starts,
    )


def logistic_potential(params: ModelParams, a_minus: Kernel):
    """``V(h) = -kappa- (a- * h) - beta`` acting on ``g = u - theta``."""
    km, beta = params.kappa_minus, params.beta

    def V(h):
        return -km * convolve_array(a_minus, h) - beta

    return V


@dataclass
class IdentityReport:
    t: float
    points: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    stderr: np.ndarray
    tol: float

    @property
    def residual(self) -> np.ndarray:
        return np.abs(self.lhs - self.rhs)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual))

    @property
    def passed(self) -> bool:
        return bool(np.all(self.residual <= 3.0 * self.stderr + self.tol))

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "points": self.points.tolist(),
            "lhs": self.lhs.tolist(),
            "rhs": self.rhs.tolist(),
            "stderr": self.stderr.tolist(),
            "max_residual": self.max_residual,
            "tol": self.tol,
            "passed": self.passed,
        }


def fk_logistic_identity_check(
    u: FieldSeries,
    u0: Field,
    params: ModelParams,
    J_theta: SignedKernel,
    a_minus: Kernel,
    t: float,
    n_paths: int,
    seed,
    eval_points,
    tol: float = 1e-3,
    n_jobs: int = 1,
) -> IdentityReport:
    """Compare ``u(x, t)`` with ``theta + E^x[(u0(X_t) - theta) exp(-kappa- int_0^t (a- * u_{t-s})(X_s) ds)]``.

    Paths are those of the L_{J_theta} process, which requires ``J_theta >= 0``.
    """
    if not J_theta.nonneg:
        raise AssumptionViolated(
            "J_theta = kappa+ a+ - theta kappa- a- has negative entries; "
            "the Feynman-Kac representation of the logistic solution is not justified",
            assumption="J_kappa >= 0 with kappa = theta",
        )
    if not u.covers(0.0, t):
        raise CoverageError(f"solution does not cover [0, {t}]")
    mask = u.times <= t * (1 + 1e-12)
    conv = convolve_array(a_minus, u.values[mask])
    W = FieldSeries(u.grid, u.times[mask], -params.kappa_minus * conv)
    g0 = Field(u0.grid, u0.values - params.theta)
    est = fk_linear_estimate(g0, W, J_theta, t, n_paths, seed, eval_points, n_jobs=n_jobs)
    lhs = u.at(t).reshape(-1)[est.points]
    return IdentityReport(float(t), est.points, lhs, params.theta + est.mean, est.stderr, float(tol))
