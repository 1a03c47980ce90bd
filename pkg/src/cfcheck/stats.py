"""Confidence intervals, threshold decisions and sequential tests."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class Estimate:
    mean: float
    ci_low: float
    ci_high: float
    n: int
    method: str
    std: float = float("nan")

    @property
    def ci(self) -> tuple[float, float]:
        return self.ci_low, self.ci_high

    @property
    def width(self) -> float:
        return self.ci_high - self.ci_low

    def to_dict(self) -> dict:
        def fin(x):
            return float(x) if math.isfinite(x) else None

        return {"mean": fin(self.mean), "ci": [fin(self.ci_low), fin(self.ci_high)], "n": self.n, "method": self.method}


def exact_estimate(value: float, n: int = 1) -> Estimate:
    """Degenerate estimate of a quantity known without sampling error."""
    return Estimate(float(value), float(value), float(value), n, "exact", 0.0)


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")


def clopper_pearson(successes: int, n: int, alpha: float) -> Estimate:
    _check_alpha(alpha)
    lo = 0.0 if successes == 0 else float(stats.beta.ppf(alpha / 2, successes, n - successes + 1))
    hi = 1.0 if successes == n else float(stats.beta.ppf(1 - alpha / 2, successes + 1, n - successes))
    p = successes / n
    return Estimate(p, min(lo, p), max(hi, p), n, "clopper_pearson")


def wald(successes: int, n: int, alpha: float) -> Estimate:
    _check_alpha(alpha)
    p = successes / n
    half = stats.norm.ppf(1 - alpha / 2) * math.sqrt(p * (1 - p) / n)
    return Estimate(p, max(0.0, p - half), min(1.0, p + half), n, "wald")


def proportion_interval(indicators: np.ndarray, alpha: float, method: str = "clopper_pearson") -> Estimate:
    indicators = np.asarray(indicators, dtype=bool)
    k, n = int(indicators.sum()), indicators.size
    if n == 0:
        raise ValueError("no samples")
    if method == "wald":
        return wald(k, n, alpha)
    if method == "clopper_pearson":
        return clopper_pearson(k, n, alpha)
    raise ValueError(f"unknown interval method {method!r}")


def t_interval(values: np.ndarray, alpha: float, method: str = "t_interval") -> Estimate:
    _check_alpha(alpha)
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        raise ValueError("no samples")
    mean = float(values.mean())
    if n == 1:
        return Estimate(mean, -math.inf, math.inf, 1, method)
    sd = float(values.std(ddof=1))
    half = float(stats.t.ppf(1 - alpha / 2, n - 1)) * sd / math.sqrt(n)
    return Estimate(mean, mean - half, mean + half, n, method, sd)


def two_sample_interval(x1: np.ndarray, x0: np.ndarray, alpha: float, proportions: bool) -> Estimate:
    """Interval for ``mean(x1) - mean(x0)`` from independent samples.

    Two-proportion Z interval when ``proportions``, Welch otherwise.
    """
    _check_alpha(alpha)
    x1 = np.asarray(x1, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    n1, n0 = x1.size, x0.size
    diff = float(x1.mean() - x0.mean())
    if proportions:
        p1, p0 = x1.mean(), x0.mean()
        se = math.sqrt(p1 * (1 - p1) / n1 + p0 * (1 - p0) / n0)
        half = float(stats.norm.ppf(1 - alpha / 2)) * se
    else:
        if min(n1, n0) < 2:
            return Estimate(diff, -math.inf, math.inf, n1 + n0, "two_sample")
        v1, v0 = x1.var(ddof=1) / n1, x0.var(ddof=1) / n0
        se = math.sqrt(v1 + v0)
        if se == 0:
            half = 0.0
        else:
            df = (v1 + v0) ** 2 / (v1**2 / (n1 - 1) + v0**2 / (n0 - 1))
            half = float(stats.t.ppf(1 - alpha / 2, df)) * se
    return Estimate(diff, diff - half, diff + half, n1 + n0, "two_sample")


# verdicts ----------------------------------------------------------------------


class Truth(enum.Enum):
    TRUE = "true"
    FALSE = "false"
    UNDECIDED = "undecided"

    @classmethod
    def of(cls, b: bool) -> "Truth":
        return cls.TRUE if b else cls.FALSE

    def __invert__(self) -> "Truth":
        return {Truth.TRUE: Truth.FALSE, Truth.FALSE: Truth.TRUE}.get(self, Truth.UNDECIDED)

    def __and__(self, other: "Truth") -> "Truth":
        if Truth.FALSE in (self, other):
            return Truth.FALSE
        if Truth.UNDECIDED in (self, other):
            return Truth.UNDECIDED
        return Truth.TRUE


@dataclass(frozen=True)
class Verdict:
    """Outcome of a check. ``value`` is ``None`` for ``=?`` queries."""

    value: Optional[Truth]
    estimate: Optional[Estimate] = None


_HOLDS = {
    "<": lambda x, p: x < p,
    "<=": lambda x, p: x <= p,
    ">": lambda x, p: x > p,
    ">=": lambda x, p: x >= p,
}


def compare(op: str, x: float, p: float) -> bool:
    return _HOLDS[op](x, p)


def check_threshold(est: Estimate, op: str, p: float) -> Verdict:
    """True when the whole interval satisfies ``op p``, False when none of it does."""
    if compare(op, est.ci_low, p) and compare(op, est.ci_high, p):
        return Verdict(Truth.TRUE, est)
    if not compare(op, est.ci_low, p) and not compare(op, est.ci_high, p):
        return Verdict(Truth.FALSE, est)
    return Verdict(Truth.UNDECIDED, est)


# sample sizes and sequential testing ---------------------------------------------


def chernoff_sample_size(theta: float, gamma: float) -> int:
    """Samples so that ``P(|p_hat - p| > theta) <= gamma`` (Okamoto bound)."""
    if not (0.0 < theta < 1.0 and 0.0 < gamma < 1.0):
        raise ValueError("theta and gamma must lie in (0, 1)")
    return math.ceil(math.log(2.0 / gamma) / (2.0 * theta * theta))


class SprtUndecided(RuntimeError):
    def __init__(self, n: int, llr: float):
        super().__init__(f"SPRT undecided after {n} samples (log-likelihood ratio {llr:.4g})")
        self.n = n
        self.llr = llr


@dataclass(frozen=True)
class SprtResult:
    holds: bool  # True: accept prob >= p + delta; False: accept prob <= p - delta
    n: int
    llr: float


def sprt(
    draw: Callable[[int], np.ndarray],
    p: float,
    delta: float,
    alpha: float,
    beta: float,
    max_samples: int = 1_000_000,
    batch: int = 64,
) -> SprtResult:
    """Wald's test of ``prob >= p + delta`` against ``prob <= p - delta``.

    ``draw(k)`` returns ``k`` fresh Bernoulli outcomes. ``alpha`` bounds the
    chance of rejecting the first hypothesis when it holds, ``beta`` the
    chance of accepting it when the second holds.
    """
    p0, p1 = p + delta, p - delta
    if not (delta > 0 and 0.0 < p1 and p0 < 1.0):
        raise ValueError("need 0 < p - delta and p + delta < 1")
    _check_alpha(alpha)
    _check_alpha(beta)
    up = math.log((1 - beta) / alpha)  # accept the second hypothesis
    down = math.log(beta / (1 - alpha))  # accept the first hypothesis
    inc_success = math.log(p1 / p0)
    inc_failure = math.log((1 - p1) / (1 - p0))
    llr = 0.0
    n = 0
    while n < max_samples:
        xs = np.asarray(draw(min(batch, max_samples - n)), dtype=bool)
        steps = np.where(xs, inc_success, inc_failure)
        path = llr + np.cumsum(steps)
        crossed = np.flatnonzero((path >= up) | (path <= down))
        if crossed.size:
            k = int(crossed[0])
            return SprtResult(bool(path[k] <= down), n + k + 1, float(path[k]))
        llr = float(path[-1])
        n += xs.size
    raise SprtUndecided(n, llr)
