"""Paired t-test and time-to-target helpers for comparing training runs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import ParameterError


def epochs_to_target(losses, reduction: float = 0.95) -> int | None:
    """First index e with ``losses[e] <= (1 - reduction) * losses[0]``, or None."""
    if not 0.0 < reduction < 1.0:
        raise ParameterError(f"reduction must lie in (0, 1), got {reduction}")
    losses = list(losses)
    if not losses:
        raise ParameterError("losses must be non-empty")
    target = (1.0 - reduction) * losses[0]
    for e, value in enumerate(losses):
        if value <= target:
            return e
    return None


def _betacf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if a <= 0 or b <= 0:
        raise ParameterError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ParameterError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # the fraction converges fast for x < (a+1)/(a+b+2); use the symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, dof: float) -> float:
    """P(|T| >= |t|) for Student's t with ``dof`` degrees of freedom."""
    if dof <= 0:
        raise ParameterError(f"degrees of freedom must be positive, got {dof}")
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(dof / (dof + t * t), 0.5 * dof, 0.5)


def t_cdf(t: float, dof: float) -> float:
    tail = 0.5 * t_two_sided_p(t, dof)
    return 1.0 - tail if t > 0 else tail


@dataclass(frozen=True)
class TTestResult:
    t_stat: float
    dof: int
    p_two_sided: float
    mean_diff: float
    degenerate: bool = False

    def to_json(self) -> dict:
        t = self.t_stat if math.isfinite(self.t_stat) else repr(self.t_stat)
        return {"t_stat": t, "dof": self.dof, "p_two_sided": self.p_two_sided,
                "mean_diff": self.mean_diff, "degenerate": self.degenerate}


def paired_t_test(a, b) -> TTestResult:
    """Paired t-test on ``d = a - b`` with sample (n-1) standard deviation.

    Zero spread in the differences is flagged ``degenerate``: |t| is infinite
    with p = 0 when the mean difference is nonzero, and t = 0, p = 1 when every
    difference is zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ParameterError(f"paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    n = a.size
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ParameterError("paired samples must be finite")
    if n < 2:
        raise ParameterError("paired t-test needs at least 2 pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, n - 1, 1.0, 0.0, True)
        return TTestResult(math.copysign(math.inf, mean), n - 1, 0.0, mean, True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, n - 1, t_two_sided_p(t, n - 1), mean)
