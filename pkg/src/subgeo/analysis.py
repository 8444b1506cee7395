"""Derived quantities and statistics over simulation results."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, PreconditionError


def effective_rank(singular_values) -> float:
    """Entropy effective rank ``exp(-sum p_i log p_i)`` with ``p_i = s_i / sum s``.

    The distribution is formed from the singular values themselves, not
    their squares.
    """
    s = np.asarray(singular_values, dtype=float).ravel()
    if s.size == 0 or np.any(s < 0) or not np.all(np.isfinite(s)):
        raise PreconditionError("singular values must be finite and non-negative")
    total = s.sum()
    if total <= 0:
        raise PreconditionError("effective rank of an all-zero spectrum is undefined")
    p = s[s > 0] / total
    return float(math.exp(-np.sum(p * np.log(p))))


@dataclass(frozen=True)
class FitResult:
    alpha: float
    beta: float
    r_squared: float
    pearson_r: float
    n_points: int
    flags: tuple[str, ...] = ()

    def predict(self, x):
        return self.alpha * np.asarray(x, dtype=float) + self.beta

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "r_squared": self.r_squared,
            "pearson_r": self.pearson_r,
            "n_points": self.n_points,
            "flags": list(self.flags),
        }


def _xy(points) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise PreconditionError("points must be a sequence of (x, y) pairs")
    if not np.all(np.isfinite(arr)):
        raise PreconditionError("points must be finite")
    return arr[:, 0], arr[:, 1]


def fit_forgetting_law(points) -> FitResult:
    """Least-squares line ``y = alpha * x + beta`` through (interference, forgetting)."""
    x, y = _xy(points)
    n = x.size
    if n < 3:
        raise PreconditionError(f"need at least 3 points, got {n}")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise PreconditionError("degenerate fit: all interference values are equal")
    alpha = float(xc @ yc) / sxx
    beta = float(y.mean() - alpha * x.mean())
    syy = float(yc @ yc)
    if syy == 0.0:
        return FitResult(0.0, float(y.mean()), 1.0, 0.0, n, ("zero_variance_y",))
    resid = y - (alpha * x + beta)
    r2 = 1.0 - float(resid @ resid) / syy
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return FitResult(alpha, beta, min(max(r2, 0.0), 1.0), max(-1.0, min(1.0, r)), n)


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    if x.size != y.size:
        raise PreconditionError("xs and ys differ in length")
    if x.size < 2:
        raise PreconditionError("need at least 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise PreconditionError("pearson correlation undefined for zero variance")
    return max(-1.0, min(1.0, float(xc @ yc) / math.sqrt(sxx * syy)))


@dataclass(frozen=True)
class StatsSummary:
    mean: float
    std: float
    cv: float | None
    n: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "cv": self.cv, "n": self.n,
                "cv_defined": self.cv is not None}


def summarize(values) -> StatsSummary:
    """Mean, sample std (n-1) and coefficient of variation.

    ``cv`` is None when the mean is zero.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise PreconditionError(f"need at least 2 values, got {v.size}")
    mean = float(v.mean())
    std = float(v.std(ddof=1))
    cv = std / abs(mean) if mean != 0 else None
    return StatsSummary(mean, std, cv, int(v.size))


def _pooled_std(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = a.size, b.size
    return math.sqrt(((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2))


def cohens_d(group_a, group_b) -> float:
    a = np.asarray(group_a, dtype=float).ravel()
    b = np.asarray(group_b, dtype=float).ravel()
    if a.size < 2 or b.size < 2:
        raise PreconditionError("each group needs at least 2 values")
    diff = float(a.mean() - b.mean())
    pooled = _pooled_std(a, b)
    if pooled == 0.0:
        if diff == 0.0:
            return 0.0
        raise PreconditionError("Cohen's d undefined: pooled standard deviation is zero")
    return diff / pooled


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 1001):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ConvergenceError("incomplete beta continued fraction", 1000)


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise PreconditionError("betainc needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise PreconditionError("betainc needs x in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t."""
    if df <= 0:
        raise PreconditionError("degrees of freedom must be positive")
    if t == 0:
        return 1.0
    return min(1.0, betainc(df / 2.0, 0.5, df / (df + t * t)))


@dataclass(frozen=True)
class WelchResult:
    t: float
    p: float
    df: float

    def __iter__(self):
        return iter((self.t, self.p))


def welch_t_test(group_a, group_b) -> WelchResult:
    """Welch's unequal-variance t test with Welch-Satterthwaite df."""
    a = np.asarray(group_a, dtype=float).ravel()
    b = np.asarray(group_b, dtype=float).ravel()
    if a.size < 2 or b.size < 2:
        raise PreconditionError("each group needs at least 2 values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    if va == 0 and vb == 0:
        raise PreconditionError("Welch test undefined: both groups have zero variance")
    t = float((a.mean() - b.mean()) / math.sqrt(va + vb))
    df = float((va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1)))
    return WelchResult(t, student_t_sf2(t, df), df)


def rank_angle_effective(theta: float, r: int, c: float) -> float:
    """``min(r, c / (1 - cos theta))``, equal to r at theta = 0."""
    if not 0.0 <= theta <= math.pi / 2:
        raise PreconditionError(f"angle {theta} outside [0, pi/2]")
    if r < 1:
        raise PreconditionError("rank must be >= 1")
    if c <= 0:
        raise PreconditionError("c must be positive")
    gap = 1.0 - math.cos(theta)
    if gap <= 0.0:
        return float(r)
    return float(min(r, c / gap))


@dataclass(frozen=True)
class RegimeStat:
    r: float | None
    n: int
    status: str  # "ok" | "insufficient" | "zero_variance"

    def to_dict(self) -> dict:
        return {"r": self.r, "n": self.n, "status": self.status}


@dataclass(frozen=True)
class RegimeResult:
    low: RegimeStat
    high: RegimeStat
    pooled: RegimeStat
    threshold: float

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "low": self.low.to_dict(),
                "high": self.high.to_dict(), "pooled": self.pooled.to_dict()}


def _regime_stat(rows: np.ndarray, min_n: int = 3) -> RegimeStat:
    n = rows.shape[0]
    if n < min_n:
        return RegimeStat(None, n, "insufficient")
    ranks, forgetting = rows[:, 0], rows[:, 2]
    if np.ptp(ranks) == 0 or np.ptp(forgetting) == 0:
        return RegimeStat(None, n, "zero_variance")
    return RegimeStat(pearson(ranks, forgetting), n, "ok")


def regime_analysis(records, angle_threshold: float) -> RegimeResult:
    """Rank-forgetting correlation below and above an angle threshold.

    ``records`` holds (rank, theta_min, forgetting) triples.  Angles strictly
    below the threshold form the low regime.
    """
    rows = np.asarray(records, dtype=float).reshape(-1, 3)
    low = rows[rows[:, 1] < angle_threshold]
    high = rows[rows[:, 1] >= angle_threshold]
    return RegimeResult(_regime_stat(low), _regime_stat(high), _regime_stat(rows),
                        float(angle_threshold))


@dataclass(frozen=True)
class LayerwiseResult:
    per_block_r: list[float | None]
    aggregate_r: float | None
    positive_count: int
    excluded: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"per_block_r": self.per_block_r, "aggregate_r": self.aggregate_r,
                "positive_count": self.positive_count, "n_blocks": len(self.per_block_r),
                "excluded": self.excluded}


def layerwise_correlation(per_block) -> LayerwiseResult:
    """Per-block Pearson r plus a pooled r after z-scoring each block.

    Blocks with fewer than 3 pairs or zero variance are excluded from the
    pooled figure and reported in ``excluded``.
    """
    per_r: list[float | None] = []
    excluded: list[int] = []
    zx, zy = [], []
    for k, (x, y) in enumerate(per_block):
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if x.size != y.size:
            raise PreconditionError(f"block {k}: interference and forgetting differ in length")
        if x.size < 3 or x.std() == 0 or y.std() == 0:
            per_r.append(None)
            excluded.append(k)
            continue
        per_r.append(pearson(x, y))
        zx.append((x - x.mean()) / x.std())
        zy.append((y - y.mean()) / y.std())
    aggregate = pearson(np.concatenate(zx), np.concatenate(zy)) if zx else None
    positive = sum(1 for r in per_r if r is not None and r > 0)
    return LayerwiseResult(per_r, aggregate, positive, excluded)
