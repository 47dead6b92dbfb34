"""Stability certificates: block decay envelopes, decay-rate fits and the
generating-function bound on Taylor coefficients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .errors import DomainError, InvalidRateFunction
from .lattice import Field, FieldSeries, ModelParams, NormSeries, SignedKernel
from .solvers import MAX_BINOMIAL_ORDER

NORM_FLOOR = 1e-14
# slack for comparing two roundings of the same product
_ULP_SLACK = 1e-13


@dataclass
class DecayEnvelope:
    """Block recursion ``c_n = c_{n-1} exp(-T p(c_{n-1}, d_{n-1}))`` (same for ``d_n``)."""

    c_seq: np.ndarray
    d_seq: np.ndarray
    rates: np.ndarray  # p(c_n, d_n)
    block_length: float
    rate_fn: Callable = field(repr=False)
    cross_bounds_ok: bool = True
    worst_cross_gap: float = 0.0

    @property
    def n_blocks(self) -> int:
        return self.c_seq.size - 1

    def bounds(self, t):
        """Lower/upper envelope ``c_n e^{-(t - nT) p_n}``, ``d_n e^{-(t - nT) p_n}``."""
        t = np.asarray(t, dtype=float)
        T = self.block_length
        n = np.clip(np.floor(t / T + 1e-12).astype(int), 0, self.n_blocks)
        decay = np.exp(-(t - n * T) * self.rates[n])
        return self.c_seq[n] * decay, self.d_seq[n] * decay

    def limit_rate(self) -> float:
        """Log-slope of ``max(|c_n|, d_n)`` over the last block."""
        m = np.maximum(np.abs(self.c_seq), self.d_seq)
        if m[-1] == 0 or m[-2] == 0:
            return -math.inf
        return float((math.log(m[-1]) - math.log(m[-2])) / self.block_length)

    def to_dict(self) -> dict:
        return {
            "block_length": self.block_length,
            "c_seq": self.c_seq.tolist(),
            "d_seq": self.d_seq.tolist(),
            "rates": self.rates.tolist(),
            "p_at_origin": float(self.rate_fn(0.0, 0.0)),
            "limit_rate": self.limit_rate(),
            "cross_bounds_ok": self.cross_bounds_ok,
            "worst_cross_gap": self.worst_cross_gap,
        }


def decay_envelope(c0: float, d0: float, p, T: float, n_blocks: int) -> DecayEnvelope:
    """Compute the envelopes and verify the cross bounds for every ``k <= n``.

    ``p`` must be non-negative and non-decreasing along the visited sequence;
    otherwise :class:`InvalidRateFunction` is raised.
    """
    if c0 > 0 or d0 < 0:
        raise DomainError("need c0 <= 0 <= d0")
    if not T > 0 or n_blocks < 1:
        raise DomainError("need T > 0 and n_blocks >= 1")
    c = np.empty(n_blocks + 1)
    d = np.empty(n_blocks + 1)
    rates = np.empty(n_blocks + 1)
    c[0], d[0] = c0, d0
    for n in range(n_blocks + 1):
        rates[n] = float(p(c[n], d[n]))
        if rates[n] < 0:
            raise InvalidRateFunction(f"p({c[n]}, {d[n]}) = {rates[n]} is negative")
        if n and rates[n] < rates[n - 1]:
            raise InvalidRateFunction(
                f"p decreases along the envelope: p_{n - 1}={rates[n - 1]} > p_{n}={rates[n]}"
            )
        if n < n_blocks:
            factor = math.exp(-T * rates[n])
            c[n + 1] = c[n] * factor
            d[n + 1] = d[n] * factor

    k = np.arange(n_blocks + 1)
    lag = np.maximum(k[None, :] - k[:, None], 0)  # (k, n)
    upper = np.triu(np.ones((n_blocks + 1, n_blocks + 1), dtype=bool))
    shrink = np.exp(-T * lag * rates[:, None])
    c_gap = (c[:, None] * shrink - c[None, :]) - _ULP_SLACK * np.abs(c[None, :])
    d_gap = (d[None, :] - d[:, None] * shrink) - _ULP_SLACK * np.abs(d[None, :])
    worst = float(max(np.max(np.where(upper, c_gap, -np.inf)), np.max(np.where(upper, d_gap, -np.inf))))
    return DecayEnvelope(c, d, rates, float(T), p, worst <= 0.0, worst)


def logistic_rate_fn(params: ModelParams):
    """``p(c, d) = kappa- (theta + c)``; independent of ``d``."""
    km, theta = params.kappa_minus, params.theta

    def p(c, d):
        return km * (theta + c)

    return p


@dataclass
class DecayFit:
    times: np.ndarray
    log_norms: np.ndarray
    slope: float
    slope_ci: float
    window: tuple
    status: str = "fitted"  # or "stationary", "insufficient"
    target_rate: float | None = None
    rel_tol: float = 0.05
    hypotheses: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool | None:
        if self.status == "stationary":
            return True
        if self.status != "fitted" or self.target_rate is None:
            return None
        return bool(self.slope <= -self.target_rate + self.rel_tol * self.target_rate)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "slope": self.slope,
            "slope_ci": self.slope_ci,
            "window": list(self.window),
            "n_points": int(self.times.size),
            "target_rate": self.target_rate,
            "rel_tol": self.rel_tol,
            "passed": self.passed,
            "hypotheses": self.hypotheses,
        }


def _deviation_norms(u, reference: float) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(u, NormSeries):
        if u.reference != reference:
            raise DomainError("norm series was recorded against a different reference")
        return u.times, u.deviation
    if u.norms is not None and u.norms.reference == reference:
        return u.norms.times, u.norms.deviation
    return u.times, u.sup_norms(reference)


def fit_log_slope(times, norms, window) -> DecayFit:
    """Least-squares slope of ``ln norm`` on ``window``; sub-floor norms are dropped."""
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    lo, hi = window
    sel = (times >= lo - 1e-12) & (times <= hi + 1e-12) & (norms > NORM_FLOOR)
    tt, nn = times[sel], norms[sel]
    if tt.size < 3:
        return DecayFit(tt, np.log(nn), math.nan, math.nan, (lo, hi), "insufficient")
    res = stats.linregress(tt, np.log(nn))
    ci = float(stats.t.ppf(0.975, tt.size - 2) * res.stderr)
    return DecayFit(tt, np.log(nn), float(res.slope), ci, (float(tt[0]), float(tt[-1])))


def logistic_decay_rate(
    u,
    params: ModelParams,
    window=None,
    rel_tol: float = 0.05,
    J_theta: SignedKernel | None = None,
    u0: Field | None = None,
) -> DecayFit:
    """Fit the exponential decay rate of ``||u_t - theta||`` on ``window`` (default ``[T/2, T]``).

    Pass ``J_theta`` and ``u0`` to record whether the stability hypotheses
    hold; the fit is compared against ``-beta`` only when they do (or when
    neither is given).
    """
    theta = params.theta
    times, dev = _deviation_norms(u, theta)
    if window is None:
        window = (0.5 * times[-1], times[-1])
    if np.all(dev <= NORM_FLOOR):
        return DecayFit(times[:0], dev[:0], -math.inf, 0.0, tuple(window), "stationary")
    fit = fit_log_slope(times, dev, window)
    hyp = {}
    if J_theta is not None:
        hyp["J_theta_nonneg"] = J_theta.nonneg
    if u0 is not None:
        # c1 = min(u0, theta) and c2 = max(u0, theta) always bracket theta
        hyp["u0_separated_from_zero"] = bool(np.min(u0.values) > 0)
    fit.hypotheses = hyp
    fit.rel_tol = rel_tol
    if all(hyp.values()):
        fit.target_rate = params.beta
    return fit


def cn_coefficients(beta: float, gamma: float, n_max: int) -> np.ndarray:
    """``C_0 = 0, C_1 = 1, C_n = 1 + (beta/gamma) sum_{l=1}^{n-1} binom(n,l) C_l C_{n-l}``."""
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    if not 1 <= n_max <= MAX_BINOMIAL_ORDER:
        raise DomainError(f"n_max must be in [1, {MAX_BINOMIAL_ORDER}]")
    ratio = beta / gamma
    C = np.zeros(n_max + 1)
    C[1] = 1.0
    for n in range(2, n_max + 1):
        C[n] = 1.0 + ratio * sum(math.comb(n, l) * C[l] * C[n - l] for l in range(1, n))
    return C


def generating_radius(beta: float, gamma: float) -> float:
    return math.log(gamma / (4.0 * beta) + 1.0)


def generating_function(x: float, beta: float, gamma: float) -> float:
    """Closed form of ``H(x) = sum_n C_n x^n / n!``, the root of ``H = e^x - 1 + (beta/gamma) H^2`` with ``H(0) = 0``."""
    if not gamma > 0 or not beta > 0:
        raise DomainError("beta and gamma must be positive")
    radius = generating_radius(beta, gamma)
    if not x < radius:
        raise DomainError(f"x={x} outside the domain x < ln(gamma/(4 beta) + 1) = {radius}")
    half = gamma / (2.0 * beta)
    b = math.expm1(x) * gamma / beta
    # a - sqrt(a^2 - b) rewritten as b / (a + sqrt(a^2 - b)) to avoid cancellation
    return b / (half + math.sqrt(half * half - b))


@dataclass
class BoundReport:
    times: np.ndarray
    observed: np.ndarray
    bound: np.ndarray
    tol: float
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.observed <= self.bound + self.tol))

    @property
    def violations(self) -> list:
        bad = np.nonzero(self.observed > self.bound + self.tol)[0]
        return [
            {"t": float(self.times[i]), "observed": float(self.observed[i]), "bound": float(self.bound[i])}
            for i in bad
        ]

    def to_dict(self) -> dict:
        out = dict(self.info)
        out.update(
            {
                "passed": self.passed,
                "tol": self.tol,
                "max_ratio": float(np.max(self.observed / np.maximum(self.bound, 1e-300))),
                "violations": self.violations,
            }
        )
        return out


def taylor_bound_check(
    u_lambda: FieldSeries,
    xi: Field,
    lam: float,
    params: ModelParams,
    gamma: float,
    solver_tol: float = 0.0,
) -> BoundReport:
    """Check ``||u_t - theta|| <= theta e^{-gamma t} H(|lambda| ||xi||)`` at every stored time."""
    x = abs(lam) * xi.sup_norm()
    beta = params.beta
    radius = generating_radius(beta, gamma)
    if not x < radius:
        raise DomainError(f"|lambda| ||xi|| = {x} outside the radius {radius}")
    H = generating_function(x, beta, gamma)
    theta = params.theta
    times, observed = _deviation_norms(u_lambda, theta)
    bound = theta * np.exp(-gamma * times) * H
    info = {"x": x, "radius": radius, "H": H, "gamma": gamma, "beta": beta}
    return BoundReport(times, observed, bound, float(solver_tol), info)


def k1_decay_check(k1: FieldSeries, gamma: float, solver_tol: float = 1e-10) -> BoundReport:
    """Check ``||k_{1,t}|| <= ||k_{1,0}|| e^{-gamma t}`` and report the fitted decay slope."""
    observed = k1.sup_norms()
    bound = observed[0] * np.exp(-gamma * k1.times)
    fit = fit_log_slope(k1.times, observed, (0.5 * k1.times[-1], k1.times[-1]))
    info = {"gamma": gamma, "fitted_slope": fit.slope, "slope_ci": fit.slope_ci}
    return BoundReport(k1.times, observed, bound, float(solver_tol), info)
