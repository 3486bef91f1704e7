"""Distribution functions, Kolmogorov-Smirnov tests and simultaneous
confidence bands for uniform order statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import special

from .errors import DomainError, EmptySample, NonPositiveIncrement, TooFewSamples


def normal_cdf(x):
    return special.ndtr(x)


def normal_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)) or np.any(np.isnan(p)):
        raise DomainError("normal quantile needs 0 < p < 1")
    out = special.ndtri(p)
    return out[()] if out.ndim == 0 else out


def chi2_sf(x, dof):
    if dof < 1:
        raise DomainError("chi-square needs dof >= 1")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("chi-square survival needs x >= 0")
    out = special.gammaincc(dof / 2.0, x / 2.0)
    return out[()] if out.ndim == 0 else out


def kolmogorov_sf(lam: float) -> float:
    """P(K > lam) for the Kolmogorov limiting distribution."""
    if lam <= 0:
        return 1.0
    if lam < 1.18:
        # Jacobi-theta form converges fast for small arguments
        y = math.exp(-math.pi ** 2 / (8 * lam * lam))
        s = sum(y ** ((2 * k - 1) ** 2) for k in range(1, 8))
        return min(1.0, max(0.0, 1.0 - math.sqrt(2 * math.pi) / lam * s))
    s = 0.0
    for k in range(1, 101):
        term = math.exp(-2.0 * k * k * lam * lam)
        s += term if k % 2 else -term
        if term < 1e-17:
            break
    return min(1.0, max(0.0, 2.0 * s))


def ks_statistic(sample) -> float:
    u = np.asarray(sample, dtype=float)
    n = u.size
    if n == 0:
        raise EmptySample("KS statistic of an empty sample")
    if np.any(np.diff(u) < 0):
        raise DomainError("KS statistic needs a sorted sample")
    if u[0] < 0 or u[-1] > 1:
        raise DomainError("KS statistic needs values in [0, 1]")
    k = np.arange(1, n + 1)
    return float(max(np.max(k / n - u), np.max(u - (k - 1) / n)))


def ks_pvalue(D: float, n: int) -> float:
    if n < 1:
        raise EmptySample("KS p-value needs n >= 1")
    rn = math.sqrt(n)
    return kolmogorov_sf((rn + 0.12 + 0.11 / rn) * D)


@dataclass(frozen=True)
class KSResult:
    D: float
    pvalue: float
    n: int


def ks_test_uniform(sample) -> KSResult:
    u = np.sort(np.asarray(sample, dtype=float))
    D = ks_statistic(u)
    return KSResult(D, ks_pvalue(D, u.size), int(u.size))


def ks_test_exp1(increments) -> KSResult:
    x = np.asarray(increments, dtype=float)
    if x.size == 0:
        raise EmptySample("no increments")
    if np.any(x <= 0):
        raise NonPositiveIncrement("increments must be > 0")
    return ks_test_uniform(-np.expm1(-x))


@dataclass(frozen=True)
class BandResult:
    n: int
    global_alpha: float
    local_level: float
    lower: np.ndarray
    upper: np.ndarray
    inside: Optional[bool] = None
    first_violation: Optional[int] = None


def _pointwise_levels(u_sorted, n):
    k = np.arange(1, n + 1)
    F = special.betainc(k, n - k + 1, u_sorted)
    return 2.0 * np.minimum(F, 1.0 - F)


@lru_cache(maxsize=64)
def _calibrate(n, global_alpha, mc_reps, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    mins = np.empty(mc_reps)
    chunk = max(1, 2_000_000 // max(n, 1))
    for s in range(0, mc_reps, chunk):
        m = min(chunk, mc_reps - s)
        u = np.sort(rng.random((m, n)), axis=1)
        k = np.arange(1, n + 1)
        F = special.betainc(k, n - k + 1, u)
        mins[s:s + m] = np.min(2.0 * np.minimum(F, 1.0 - F), axis=1)
    return float(np.quantile(mins, global_alpha))


def uniform_band(n: int, global_alpha: float = 0.05, mc_reps: int = 10_000,
                 seed: int = 20240101) -> BandResult:
    """Simultaneous band for the order statistics of n uniforms.

    Every order statistic gets a two-sided Beta(k, n-k+1) interval at one
    common local level, chosen by Monte Carlo so that all n intervals hold
    jointly with probability 1 - global_alpha.
    """
    if n < 1:
        raise DomainError("band needs n >= 1")
    if not 0 < global_alpha < 1:
        raise DomainError("global level must lie in (0, 1)")
    if mc_reps < 1:
        raise DomainError("mc_reps must be >= 1")
    eta = _calibrate(int(n), float(global_alpha), int(mc_reps), int(seed))
    k = np.arange(1, n + 1)
    lower = special.betaincinv(k, n - k + 1, eta / 2.0)
    upper = special.betaincinv(k, n - k + 1, 1.0 - eta / 2.0)
    return BandResult(int(n), float(global_alpha), eta, lower, upper)


def band_check(sample, band: BandResult) -> BandResult:
    u = np.sort(np.asarray(sample, dtype=float))
    if u.size != band.n:
        raise DomainError(f"sample size {u.size} does not match band size {band.n}")
    bad = np.flatnonzero((u < band.lower) | (u > band.upper))
    first = int(bad[0]) + 1 if bad.size else None
    return replace(band, inside=bad.size == 0, first_violation=first)


def uniform_band_check(sample, global_alpha=0.05, mc_reps=10_000) -> BandResult:
    sample = np.asarray(sample, dtype=float)
    return band_check(sample, uniform_band(sample.size, global_alpha, mc_reps))


def normal_band_check(z, global_alpha=0.05, mc_reps=10_000) -> BandResult:
    """Normality verdict for standardized statistics via the probability integral transform."""
    return uniform_band_check(normal_cdf(np.asarray(z, dtype=float)), global_alpha, mc_reps)


def qq_uniform(sample, band: Optional[BandResult] = None):
    """Rows (theoretical, empirical, band_lower, band_upper) for a uniform QQ plot."""
    u = np.sort(np.asarray(sample, dtype=float))
    n = u.size
    band = band or uniform_band(n)
    theo = (np.arange(1, n + 1) - 0.5) / n
    return np.column_stack([theo, u, band.lower, band.upper])


def qq_normal(z, band: Optional[BandResult] = None):
    x = np.sort(np.asarray(z, dtype=float))
    n = x.size
    band = band or uniform_band(n)
    theo = special.ndtri((np.arange(1, n + 1) - 0.5) / n)
    with np.errstate(divide="ignore"):
        return np.column_stack([theo, x, special.ndtri(band.lower), special.ndtri(band.upper)])


def qq_exp1(increments):
    x = np.sort(np.asarray(increments, dtype=float))
    n = x.size
    return np.column_stack([-np.log1p(-(np.arange(1, n + 1) - 0.5) / n), x])


def empirical_moments(x, y=None) -> dict:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise TooFewSamples("need at least two observations")
    out = {"mean": float(x.mean()), "sd": float(x.std(ddof=1))}
    if y is not None:
        y = np.asarray(y, dtype=float)
        if y.shape != x.shape:
            raise DomainError("paired samples differ in length")
        out["cov"] = float(np.cov(x, y, ddof=1)[0, 1])
    return out
