"""Curve fitting and crossover solving for host-vs-device cost curves.

The host curve is a*n*log2(n)+b (sort family), the device curve is a linear
transfer term c*n+d plus the profile's launch/kernel/post terms. The break-even
size n_star is where they meet; a measured sweep validates the solved value.

Fits use closed-form two-parameter least squares (no linear-algebra library),
so results are bit-reproducible across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

from .errors import CalibrationError, NoCrossingError, SweepBracketError

_N_LO = 2.0
_N_HI = float(2**40)


class DeviceTerms(NamedTuple):
    """Non-transfer device costs added on top of the fitted c*n+d curve."""

    launch: float
    kernel_rate: float
    post_rate: float
    k: int


@dataclass(frozen=True)
class FitResult:
    a: float
    b: float
    c: float
    d: float
    rss_cpu: float
    rss_tx: float
    r2_cpu: float
    r2_tx: float

    def cpu_seconds(self, n: float) -> float:
        return self.a * n * math.log2(max(n, 2.0)) + self.b

    def tx_seconds(self, n: float) -> float:
        return self.c * n + self.d

    def to_json_dict(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "d": self.d,
            "rss_cpu": self.rss_cpu,
            "rss_tx": self.rss_tx,
            "r2_cpu": self.r2_cpu,
            "r2_tx": self.r2_tx,
        }


@dataclass(frozen=True)
class BreakEven:
    n_star: float
    fit: FitResult
    device_terms: DeviceTerms
    measured_n_star: Optional[float] = None
    relative_error: Optional[float] = None


def _fit_on_basis(points: Sequence[tuple[float, float]], basis) -> tuple[float, float, float, float]:
    if len(points) < 2:
        raise CalibrationError("fit needs at least 2 points")
    ns = [float(n) for n, _ in points]
    if len(set(ns)) < 2:
        raise CalibrationError("degenerate fit: all n equal")
    xs = [basis(n) for n in ns]
    ys = [float(s) for _, s in points]
    m = len(xs)
    xbar = math.fsum(xs) / m
    ybar = math.fsum(ys) / m
    sxx = math.fsum((x - xbar) ** 2 for x in xs)
    if sxx == 0.0:
        raise CalibrationError("degenerate fit: basis values all equal")
    sxy = math.fsum((x - xbar) * (y - ybar) for x, y in zip(xs, ys))
    slope = sxy / sxx
    intercept = ybar - slope * xbar
    if slope < 0.0:
        # slope is a physical rate; clamp and keep the best constant fit
        slope = 0.0
        intercept = ybar
    rss = math.fsum((y - (slope * x + intercept)) ** 2 for x, y in zip(xs, ys))
    tss = math.fsum((y - ybar) ** 2 for y in ys)
    if tss == 0.0:
        r2 = 1.0 if rss <= 1e-300 else -math.inf
    else:
        r2 = 1.0 - rss / tss
    return slope, intercept, rss, r2


def fit_nlogn(points: Sequence[tuple[float, float]]) -> tuple[float, float, float, float]:
    """OLS of seconds on {n*log2(n), 1}. Returns (a, b, rss, r2)."""
    for n, _ in points:
        if n < 2:
            raise CalibrationError("fit_nlogn needs all n >= 2")
    return _fit_on_basis(points, lambda n: n * math.log2(n))


def fit_linear(points: Sequence[tuple[float, float]]) -> tuple[float, float, float, float]:
    """OLS of seconds on {n, 1}. Returns (c, d, rss, r2)."""
    return _fit_on_basis(points, lambda n: n)


def make_fit_result(
    cpu_points: Sequence[tuple[float, float]],
    tx_points: Sequence[tuple[float, float]],
) -> FitResult:
    a, b, rss_cpu, r2_cpu = fit_nlogn(cpu_points)
    c, d, rss_tx, r2_tx = fit_linear(tx_points)
    return FitResult(a=a, b=b, c=c, d=d, rss_cpu=rss_cpu, rss_tx=rss_tx,
                     r2_cpu=r2_cpu, r2_tx=r2_tx)


def _difference(fit: FitResult, terms: DeviceTerms, n: float) -> float:
    device = fit.tx_seconds(n) + terms.launch + terms.kernel_rate * n + terms.post_rate * terms.k
    return fit.cpu_seconds(n) - device


def solve_break_even(fit: FitResult, device_terms: DeviceTerms) -> BreakEven:
    """Smallest n in [2, 2**40] where the cpu and device curves cross.

    Bisection on the difference function; the returned n_star satisfies
    |T_cpu - T_dev| / T_cpu <= 1e-9.
    """
    if not fit.a > 0.0:
        raise NoCrossingError("cpu curve has no n*log2(n) growth (a <= 0)")
    terms = DeviceTerms(*device_terms)

    lo = _N_LO
    g_lo = _difference(fit, terms, lo)
    if g_lo == 0.0:
        return BreakEven(n_star=lo, fit=fit, device_terms=terms)
    hi = lo
    bracket = None
    while hi < _N_HI:
        nxt = min(hi * 2.0, _N_HI)
        g_next = _difference(fit, terms, nxt)
        if g_next == 0.0:
            bracket = (nxt, nxt)
            break
        if (g_lo < 0.0) != (g_next < 0.0):
            bracket = (hi, nxt)
            break
        hi = nxt
        g_lo = g_next
    if bracket is None:
        raise NoCrossingError(
            "cost curves do not cross on [2, 2**40] with these constants"
        )
    lo, hi = bracket
    if lo == hi:
        return BreakEven(n_star=lo, fit=fit, device_terms=terms)
    g_lo = _difference(fit, terms, lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g_mid = _difference(fit, terms, mid)
        if g_mid == 0.0:
            lo = hi = mid
            break
        if (g_mid < 0.0) == (g_lo < 0.0):
            lo = mid
            g_lo = g_mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(lo, 1.0):
            break
    n_star = 0.5 * (lo + hi)
    return BreakEven(n_star=n_star, fit=fit, device_terms=terms)


def measured_crossover(sweep: Sequence[tuple[float, float, float]]) -> float:
    """Crossover n in a measured (n, host_s, device_s) sweep.

    The first n where the device becomes cheaper, linearly interpolated
    between the straddling sweep points.
    """
    rows = sorted((float(n), float(h), float(d)) for n, h, d in sweep)
    if len(rows) < 2:
        raise SweepBracketError("sweep needs at least 2 points")
    for i, (n, host_s, device_s) in enumerate(rows):
        if device_s < host_s:
            if i == 0:
                raise SweepBracketError(
                    "sweep starts device-cheaper; no host-cheaper point precedes the crossover"
                )
            n0, h0, d0 = rows[i - 1]
            diff0 = d0 - h0  # >= 0: host was cheaper (or tied) at the previous point
            diff1 = device_s - host_s  # < 0 here
            return n0 + diff0 * (n - n0) / (diff0 - diff1)
    raise SweepBracketError("sweep never becomes device-cheaper")


def validate_break_even(
    n_star: float, sweep: Sequence[tuple[float, float, float]]
) -> float:
    """Relative error of n_star against a measured (n, host_s, device_s) sweep."""
    cross = measured_crossover(sweep)
    return abs(n_star - cross) / cross
