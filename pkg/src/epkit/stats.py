"""Small-sample tests: Shapiro-Wilk, Student t, Mann-Whitney, least squares.

Everything is computed here without a statistics library so that the
p-value conventions are explicit and stable down to ~1e-300.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .errors import (DegenerateX, EmptySample, LengthMismatch, SampleTooLarge,
                     SampleTooSmall, ZeroVariance)

EXACT_RANK_LIMIT = 400
_EPS = 1e-16
_TINY = 1e-300
_STD_NORMAL = NormalDist()


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    test_name: str
    tails: str = "two"
    df: float | None = None
    n: int = 0
    alternative: str = "two-sided"

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")
        if self.df is not None and not self.df > 0:
            raise ValueError(f"df must be positive, got {self.df}")

    def to_record(self) -> dict:
        return {"test_name": self.test_name, "statistic": self.statistic, "df": self.df,
                "p_value": self.p_value, "tails": self.tails,
                "alternative": self.alternative, "n": self.n}


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    n: int

    def to_record(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "r_squared": self.r_squared, "n": self.n}


def _alternative(tails: str, alternative: str | None) -> str:
    if tails not in ("one", "two"):
        raise ValueError(f"tails must be 'one' or 'two', got {tails!r}")
    if tails == "two":
        return "two-sided"
    alt = alternative or "greater"
    if alt not in ("greater", "less"):
        raise ValueError(f"one-tailed alternative must be 'greater' or 'less', got {alt!r}")
    return alt


# --- distributions -------------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x = {x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(ln_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(ln_front) * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """Upper tail P(T > t) of Student's t."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    half = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return half if t > 0 else 1.0 - half


def t_two_sided(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return min(1.0, betainc(df / 2.0, 0.5, df / (df + t * t)))


def norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


# --- Shapiro-Wilk --------------------------------------------------------------

_SW_C1 = (0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056)
_SW_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_SW_C3 = (0.544, -0.39978, 0.025054, -6.714e-4)
_SW_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_SW_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_SW_C6 = (-0.4803, -0.082676, 0.0030302)
_SW_G = (-2.273, 0.459)


def _poly(c: Sequence[float], x: float) -> float:
    out = 0.0
    for coef in reversed(c):
        out = out * x + coef
    return out


def shapiro_coefficients(n: int) -> np.ndarray:
    """Royston's approximation to the Shapiro-Wilk weights, lower half.

    Returns the ``n // 2`` positive weights paired with the largest minus
    smallest order statistics.
    """
    half = n // 2
    if n == 3:
        return np.array([math.sqrt(0.5)])
    m = np.array([_STD_NORMAL.inv_cdf((i - 0.375) / (n + 0.25)) for i in range(1, half + 1)])
    summ2 = 2.0 * float(m @ m)
    ssumm2 = math.sqrt(summ2)
    rsn = 1.0 / math.sqrt(n)
    a1 = _poly(_SW_C1, rsn) - m[0] / ssumm2
    a = np.empty(half)
    if n > 5:
        a2 = -m[1] / ssumm2 + _poly(_SW_C2, rsn)
        fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1 ** 2 - 2 * a2 ** 2))
        a[1] = a2
        first = 2
    else:
        fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1 ** 2))
        first = 1
    a[0] = a1
    a[first:] = -m[first:] / fac
    return a


def _sw_pvalue(w: float, n: int) -> float:
    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.pi / 3.0)
        return min(max(p, 0.0), 1.0)
    w1 = math.log(max(1.0 - w, _TINY))
    if n <= 11:
        gamma = _poly(_SW_G, n)
        if w1 >= gamma:
            return 0.0
        y = -math.log(gamma - w1)
        mu, sigma = _poly(_SW_C3, n), math.exp(_poly(_SW_C4, n))
    else:
        ln_n = math.log(n)
        y = w1
        mu, sigma = _poly(_SW_C5, ln_n), math.exp(_poly(_SW_C6, ln_n))
    return min(max(norm_sf((y - mu) / sigma), 0.0), 1.0)


def shapiro_wilk(sample: Sequence[float]) -> TestResult:
    """W statistic and Royston's normal-approximation p-value, 3 <= n <= 50."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n < 3:
        raise SampleTooSmall(f"Shapiro-Wilk needs at least 3 values, got {n}")
    if n > 50:
        raise SampleTooLarge(f"Shapiro-Wilk coefficients are pinned for n <= 50, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample contains non-finite values")
    ss = float(np.sum((x - x.mean()) ** 2))
    if ss == 0.0:
        raise ZeroVariance("all values are equal")
    a = shapiro_coefficients(n)
    half = a.size
    num = float(a @ (x[::-1][:half] - x[:half]))
    w = min(num * num / ss, 1.0)
    return TestResult(w, _sw_pvalue(w, n), "shapiro-wilk", "one", None, n, "non-normal")


# --- t tests -------------------------------------------------------------------


def t_test(a: Sequence[float], b: Sequence[float] | None = None, mode: str = "paired",
           tails: str = "two", alternative: str | None = None, popmean: float = 0.0) -> TestResult:
    """Paired or one-sample Student t.

    ``mode="paired"`` tests the mean of ``a - b``; ``mode="one-sample"``
    tests the mean of ``a`` against ``popmean``. One-tailed tests use
    ``alternative`` ("greater", the default, or "less") for the sign of the
    effect in ``a`` relative to ``b`` or ``popmean``.
    """
    alt = _alternative(tails, alternative)
    a = np.asarray(a, dtype=float)
    if mode == "paired":
        if b is None:
            raise LengthMismatch("paired test needs a second sample")
        b = np.asarray(b, dtype=float)
        if a.size != b.size:
            raise LengthMismatch(f"paired samples differ in length: {a.size} vs {b.size}")
        d = a - b
        name = "paired-t"
    elif mode in ("one-sample", "one-sample-vs-zero"):
        d = a - popmean
        name = "one-sample-t"
    else:
        raise ValueError(f"unknown t-test mode {mode!r}")
    n = d.size
    if n < 2:
        raise SampleTooSmall(f"t test needs at least 2 values, got {n}")
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ZeroVariance("differences have zero variance")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    df = n - 1
    if alt == "two-sided":
        p = t_two_sided(t, df)
    elif alt == "greater":
        p = t_sf(t, df)
    else:
        p = t_sf(-t, df)
    return TestResult(t, p, name, tails, float(df), n, alt)


# --- Mann-Whitney --------------------------------------------------------------


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the average rank."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _rank_sum_distribution(doubled: np.ndarray, k: int) -> np.ndarray:
    """Counts of every sum of ``k`` items drawn from ``doubled`` (integers)."""
    total = int(doubled.sum())
    counts = np.zeros((k + 1, total + 1))
    counts[0, 0] = 1.0
    for r in doubled.astype(int):
        # descending k so each item is used at most once
        for j in range(k, 0, -1):
            counts[j, r:] += counts[j - 1, :total + 1 - r]
    return counts[k]


def rank_sum(a: Sequence[float], b: Sequence[float], tails: str = "two",
             alternative: str | None = None) -> TestResult:
    """Wilcoxon-Mann-Whitney test; the statistic is U of sample ``a``.

    Exact when ``len(a) * len(b) <= 400``: the null distribution of the
    rank sum is enumerated over the actual (mid)ranks, so ties are exact
    too. Otherwise a normal approximation with tie and continuity
    correction is used. One-tailed ``alternative="less"`` asks whether
    ``a`` tends to be smaller; two-sided p is twice the smaller tail,
    capped at 1.
    """
    alt = _alternative(tails, alternative)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = a.size, b.size
    if na == 0 or nb == 0:
        raise EmptySample("both samples must be non-empty")
    pooled = np.concatenate([a, b])
    ranks = midranks(pooled)
    r_a = float(ranks[:na].sum())
    u = r_a - na * (na + 1) / 2.0
    n = na + nb

    if na * nb <= EXACT_RANK_LIMIT:
        doubled = np.rint(2 * ranks).astype(int)
        dist = _rank_sum_distribution(doubled, na)
        dist = dist / dist.sum()
        obs = int(round(2 * r_a))
        p_le = float(min(dist[:obs + 1].sum(), 1.0))
        p_ge = float(min(dist[obs:].sum(), 1.0))
        name = "mann-whitney-exact"
    else:
        _, tie_counts = np.unique(pooled, return_counts=True)
        tie_term = float(np.sum(tie_counts ** 3 - tie_counts)) / (n * (n - 1))
        sigma = math.sqrt(na * nb / 12.0 * ((n + 1) - tie_term))
        if sigma == 0:
            raise ZeroVariance("all values are tied")
        mu = na * nb / 2.0
        p_le = 1.0 - norm_sf((u - mu + 0.5) / sigma)
        p_ge = norm_sf((u - mu - 0.5) / sigma)
        name = "mann-whitney-normal"

    if alt == "two-sided":
        p = min(1.0, 2.0 * min(p_le, p_ge))
    elif alt == "less":
        p = p_le
    else:
        p = p_ge
    return TestResult(u, p, name, tails, None, n, alt)


# --- regression ----------------------------------------------------------------


def linear_regression(x: Sequence[float], y: Sequence[float]) -> RegressionResult:
    """Ordinary least squares line through (x, y) with its R^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size:
        raise LengthMismatch(f"x and y differ in length: {x.size} vs {y.size}")
    if x.size < 2:
        raise SampleTooSmall(f"regression needs at least 2 points, got {x.size}")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateX("x is constant")
    dy = y - y.mean()
    slope = float(dx @ dy) / sxx
    intercept = float(y.mean() - slope * x.mean())
    syy = float(dy @ dy)
    if syy == 0.0:
        r2 = 0.0
    else:
        resid = dy - slope * dx
        r2 = min(max(1.0 - float(resid @ resid) / syy, 0.0), 1.0)
    return RegressionResult(slope, intercept, r2, int(x.size))
