"""Paired Student t-test with an in-house t-distribution tail."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import DegenerateTestError

_FPMIN = 1e-300
_EPS = 1e-16


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, 1000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _FPMIN if abs(d) < _FPMIN else d
        c = 1.0 + aa / c
        c = _FPMIN if abs(c) < _FPMIN else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _FPMIN if abs(d) < _FPMIN else d
        c = 1.0 + aa / c
        c = _FPMIN if abs(c) < _FPMIN else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    x = df / (df + t * t)
    return min(1.0, max(0.0, betainc_regularized(df / 2.0, 0.5, x)))


@dataclass
class TTestReport:
    mean_a: float
    mean_b: float
    sd_a: float
    sd_b: float
    n: int
    df: int
    t: float
    p: float

    def to_row(self) -> list[str]:
        return [f"{v:.10g}" for v in (self.mean_a, self.mean_b, self.sd_a, self.sd_b)] + [
            str(self.n),
            str(self.df),
            f"{self.t:.10g}",
            f"{self.p:.10g}",
        ]


def _mean(xs):
    return math.fsum(xs) / len(xs)


def _sd(xs):
    m = _mean(xs)
    return math.sqrt(math.fsum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestReport:
    """t-test on differences ``b - a``; sample sd uses the n-1 denominator."""
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    if len(a) != len(b):
        raise ValueError(f"paired series differ in length ({len(a)} vs {len(b)})")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two observations")
    diff = [y - x for x, y in zip(a, b)]
    sd = _sd(diff)
    if sd <= 1e-14 * max(abs(x) for x in diff):
        raise DegenerateTestError("differences have zero variance")
    t = _mean(diff) / (sd / math.sqrt(n))
    return TTestReport(_mean(a), _mean(b), _sd(a), _sd(b), n, n - 1, t, t_two_sided_p(t, n - 1))
