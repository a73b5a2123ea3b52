"""Per-user risk thresholds from a sample of reconstruction errors.

The lower threshold is a robust location plus 1.5 raw MADs. Excesses above
it form the tail: a generalized Pareto fit on the tail is kept as a
diagnostic, and an exact two-cluster split of the tail places the upper
threshold at the smallest member of the high cluster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MIN_SAMPLES = 4
MAD_FACTOR = 1.5


@dataclass(frozen=True)
class RiskThresholds:
    t_lower: float
    t_upper: float
    gpd_shape: float = 0.0
    gpd_scale: float = 1.0
    fitted_on: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.t_lower) and math.isfinite(self.t_upper)):
            raise ValueError("thresholds must be finite")
        if self.t_lower < 0 or self.t_upper < 0:
            raise ValueError("thresholds must be non-negative")
        if self.t_lower > self.t_upper:
            raise ValueError(f"t_lower {self.t_lower} exceeds t_upper {self.t_upper}")

    def to_dict(self) -> dict:
        return {
            "t_lower": self.t_lower,
            "t_upper": self.t_upper,
            "gpd_shape": self.gpd_shape,
            "gpd_scale": self.gpd_scale,
            "fitted_on": self.fitted_on,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RiskThresholds":
        return cls(**doc)


def _min_variance_window(sorted_x: np.ndarray, h: int) -> int:
    """Start index of the length-``h`` window with the smallest variance."""
    n = sorted_x.size
    c1 = np.concatenate(([0.0], np.cumsum(sorted_x)))
    c2 = np.concatenate(([0.0], np.cumsum(sorted_x * sorted_x)))
    starts = np.arange(n - h + 1)
    s1 = c1[starts + h] - c1[starts]
    s2 = c2[starts + h] - c2[starts]
    var = np.maximum(s2 / h - (s1 / h) ** 2, 0.0)
    # cumulative sums are not exact; treat near-equal variances as ties
    tol = 1e-12 * max(1.0, float(np.max(np.abs(sorted_x))) ** 2)
    return int(np.flatnonzero(var <= var.min() + tol)[0])


def robust_mean_1d(errors) -> float:
    """Univariate MCD location: mean of the tightest half-sample.

    With ``h = ceil((n + 1) / 2)``, every run of ``h`` consecutive sorted
    values is a candidate; the one with least variance wins, lowest start
    index on ties.
    """
    x = np.sort(np.asarray(errors, dtype=np.float64))
    n = x.size
    if n < 2:
        raise ValueError("robust_mean_1d needs at least 2 samples")
    h = math.ceil((n + 1) / 2)
    start = _min_variance_window(x, h)
    win = x[start : start + h]
    # rounding can push the mean of a constant window just outside it
    return float(np.clip(win.mean(), win[0], win[-1]))


def mad(errors) -> float:
    """Median absolute deviation, unscaled."""
    x = np.asarray(errors, dtype=np.float64)
    if x.size == 0:
        raise ValueError("mad of an empty sample")
    return float(np.median(np.abs(x - np.median(x))))


def fit_gpd_moments(excesses) -> tuple[float, float]:
    """Method-of-moments GPD fit, returns (shape xi, scale)."""
    y = np.asarray(excesses, dtype=np.float64)
    if y.size == 0:
        raise ValueError("GPD fit needs at least one excess")
    m = float(y.mean())
    v = float(y.var(ddof=1)) if y.size > 1 else 0.0
    if v <= 0.0:
        return 0.0, m
    r = m * m / v
    return 0.5 * (1.0 - r), 0.5 * m * (1.0 + r)


def two_means_1d(values) -> tuple[np.ndarray, np.ndarray]:
    """Globally optimal k=2 partition of 1-D data.

    On sorted data an optimal 2-means partition is a split point, so every
    split is scored by within-cluster sum of squares; the first minimum
    wins. Returns (low cluster, high cluster), each sorted.
    """
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    if n < 2:
        raise ValueError("two_means_1d needs at least 2 values")
    c1 = np.cumsum(x)
    c2 = np.cumsum(x * x)
    k = np.arange(1, n)  # size of the low cluster
    left_sum, left_sq = c1[k - 1], c2[k - 1]
    right_sum, right_sq = c1[-1] - left_sum, c2[-1] - left_sq
    sse = (left_sq - left_sum**2 / k) + (right_sq - right_sum**2 / (n - k))
    tol = 1e-12 * max(1.0, float(c2[-1]))
    best = int(np.flatnonzero(sse <= sse.min() + tol)[0]) + 1
    return x[:best], x[best:]


def compute_thresholds(errors, mad_factor: float = MAD_FACTOR) -> RiskThresholds:
    if mad_factor < 0:
        raise ValueError("mad_factor must be >= 0")
    x = np.asarray(errors, dtype=np.float64)
    if x.size < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} errors to fit thresholds, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("errors must be finite")
    t_lower = max(0.0, robust_mean_1d(x) + mad_factor * mad(x))
    tail = x[x > t_lower] - t_lower
    if tail.size < 2:
        return RiskThresholds(t_lower, t_lower, 0.0, 0.0, fitted_on=int(x.size))
    shape, scale = fit_gpd_moments(tail)
    _, high = two_means_1d(tail)
    t_upper = t_lower + float(high[0])
    return RiskThresholds(t_lower, t_upper, shape, scale, fitted_on=int(x.size))


def classify_risk_level(x: float, t: RiskThresholds) -> int:
    if not math.isfinite(x):
        raise ValueError("error value must be finite")
    if x <= t.t_lower:
        return 0
    if x <= t.t_upper:
        return 1
    return 2


def aggregate_thresholds(items: list[tuple[RiskThresholds, int]]) -> RiskThresholds:
    """Sample-weighted componentwise mean of (thresholds, sample count) pairs."""
    total = sum(n for _, n in items)
    if total <= 0:
        raise ValueError("aggregate_thresholds needs positive sample counts")
    lo = sum(n / total * t.t_lower for t, n in items)
    hi = sum(n / total * t.t_upper for t, n in items)
    shape = sum(n / total * t.gpd_shape for t, n in items)
    scale = sum(n / total * t.gpd_scale for t, n in items)
    # weighted means of ordered pairs stay ordered, up to rounding
    return RiskThresholds(lo, max(lo, hi), shape, scale, fitted_on=int(total))
