"""Statistical primitives used by the detectors.

One-sided Welch t-test, Student-t CDF, uniform subsampling, a one-dimensional
Gaussian KDE and the two-sample Kolmogorov-Smirnov test.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import betainc

KDE_BANDWIDTH_FLOOR = 1e-6
_SQRT_2PI = math.sqrt(2.0 * math.pi)


class DegenerateFitWarning(UserWarning):
    """Raised when a KDE is fitted on a sample with zero spread."""


class TTestResult(NamedTuple):
    t_statistic: float
    degrees_of_freedom: float
    p_value: float


class KSResult(NamedTuple):
    statistic: float
    p_value: float


def student_t_cdf(t: float, dof: float) -> float:
    """CDF of Student's t distribution with ``dof`` degrees of freedom.

    Uses the identity P(T <= t) = 1 - I_x(dof/2, 1/2) / 2 for t > 0 with
    x = dof / (dof + t^2), I being the regularized incomplete beta function.
    """
    if dof <= 0:
        raise ValueError(f"dof must be positive, got {dof}")
    if t == 0:
        return 0.5
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    x = dof / (dof + t * t)
    tail = 0.5 * float(betainc(0.5 * dof, 0.5, x))
    return 1.0 - tail if t > 0 else tail


def one_sided_t_test(reference: Sequence[float], current: Sequence[float]) -> TTestResult:
    """Welch test of H0: mean(reference) >= mean(current).

    The p-value is small when the current sample's mean exceeds the
    reference mean. Degrees of freedom follow Welch-Satterthwaite.
    """
    a = np.asarray(reference, dtype=float)
    b = np.asarray(current, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("both samples need at least 2 elements")

    var_a = a.var(ddof=1) / a.size
    var_b = b.var(ddof=1) / b.size
    se2 = var_a + var_b
    diff = a.mean() - b.mean()
    if se2 == 0.0:
        if diff == 0.0:
            return TTestResult(0.0, float(a.size + b.size - 2), 0.5)
        # zero spread but distinct means: the evidence is total
        t = -math.inf if diff < 0 else math.inf
        return TTestResult(t, float(a.size + b.size - 2), 0.0 if diff < 0 else 1.0)

    t = float(diff / math.sqrt(se2))
    dof = float(se2**2 / (var_a**2 / (a.size - 1) + var_b**2 / (b.size - 1)))
    return TTestResult(t, dof, student_t_cdf(t, dof))


def subsample(values: Sequence[float], n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` elements uniformly without replacement."""
    values = np.asarray(values, dtype=float)
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if n > values.size:
        raise ValueError(f"cannot draw {n} elements from {values.size}")
    return values[rng.choice(values.size, size=n, replace=False)]


@dataclass(frozen=True)
class KdeModel:
    support_points: np.ndarray
    bandwidth: float

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if len(self.support_points) == 0:
            raise ValueError("support_points must be non-empty")

    def score(self, points) -> np.ndarray:
        return kde_score(self, points)


def scott_bandwidth(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) * values.size ** (-0.2))


def kde_fit(errors: Sequence[float]) -> KdeModel:
    """Fit a Gaussian KDE with Scott's-rule bandwidth.

    A zero-spread sample falls back to ``KDE_BANDWIDTH_FLOOR`` and emits a
    :class:`DegenerateFitWarning`.
    """
    values = np.array(errors, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("cannot fit a KDE on an empty sample")
    h = scott_bandwidth(values)
    if h < KDE_BANDWIDTH_FLOOR:
        warnings.warn(
            f"KDE sample has no spread (n={values.size}); bandwidth floored to {KDE_BANDWIDTH_FLOOR}",
            DegenerateFitWarning,
            stacklevel=2,
        )
        h = KDE_BANDWIDTH_FLOOR
    return KdeModel(values, h)


def kde_score(model: KdeModel, points: Sequence[float], block: int = 4096) -> np.ndarray:
    """Density (not log-density) of the KDE at each query point."""
    x = np.asarray(points, dtype=float).ravel()
    support = np.asarray(model.support_points, dtype=float)
    h = model.bandwidth
    out = np.empty(x.size)
    norm = 1.0 / (support.size * h * _SQRT_2PI)
    # blocked to bound the (queries x support) temporary
    for start in range(0, x.size, block):
        z = (x[start:start + block, None] - support[None, :]) / h
        out[start:start + block] = np.exp(-0.5 * z * z).sum(axis=1) * norm
    return out


def kolmogorov_sf(x: float, terms: int = 100) -> float:
    """Survival function of the asymptotic Kolmogorov distribution.

    Q(x) = 2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2).
    """
    if x <= 0:
        return 1.0
    if x < 0.2:
        # the alternating series converges slowly here; use the dual form
        # P(K <= x) = sqrt(2 pi)/x * sum exp(-(2k-1)^2 pi^2 / (8 x^2))
        cdf = 0.0
        for k in range(1, terms + 1):
            term = math.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8 * x * x))
            cdf += term
            if term < 1e-300:
                break
        return 1.0 - math.sqrt(2 * math.pi) / x * cdf
    total = 0.0
    for k in range(1, terms + 1):
        term = math.exp(-2.0 * k * k * x * x)
        total += term if k % 2 else -term
        if term < 1e-17:
            break
    return min(1.0, max(0.0, 2.0 * total))


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> KSResult:
    """Two-sample KS test with the asymptotic p-value.

    The statistic is the largest gap between empirical CDFs. The p-value
    uses the effective sample size en = sqrt(n m / (n + m)) with the
    small-sample correction (en + 0.12 + 0.11 / en) * D.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    n, m = a.size, b.size
    if n < 2 or m < 2:
        raise ValueError("both samples need at least 2 elements")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / n
    cdf_b = np.searchsorted(b, grid, side="right") / m
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    en = math.sqrt(n * m / (n + m))
    return KSResult(d, kolmogorov_sf((en + 0.12 + 0.11 / en) * d))
