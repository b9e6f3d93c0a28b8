"""Pointwise nonlinearities and their Gaussian second moments.

GELU is the exact form ``z * Phi(z)`` everywhere (engine, transformer and
theory), never the tanh approximation.
"""
from __future__ import annotations

import enum
import math
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from .numerics import ParameterError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ActivationKind(str, enum.Enum):
    LINEAR = "linear"
    RELU = "relu"
    GELU = "gelu"

    @classmethod
    def parse(cls, name) -> "ActivationKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ParameterError(f"unknown nonlinearity {name!r}; expected one of linear, relu, gelu") from None


def normal_pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(z))


def apply(kind: ActivationKind, z: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.LINEAR:
        return z
    if kind is ActivationKind.RELU:
        return np.maximum(z, 0.0)
    return z * ndtr(z)


def derivative(kind: ActivationKind, z: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.LINEAR:
        return np.ones_like(z)
    if kind is ActivationKind.RELU:
        return (z > 0).astype(z.dtype)
    return ndtr(z) + z * normal_pdf(z)


def adaptive_simpson(f, a: float, b: float, rtol: float = 1e-10, max_depth: int = 50) -> float:
    """Adaptive Simpson quadrature with Richardson correction.

    Intervals are bisected until the two-panel estimate agrees with the
    one-panel estimate to ``15 * tol`` where ``tol`` is a share of the global
    tolerance ``rtol * |coarse estimate|``.
    """
    def simpson(fa, fm, fb, h):
        return h / 6.0 * (fa + 4.0 * fm + fb)

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    whole = simpson(fa, fm, fb, b - a)
    # seed the tolerance from a 64-panel composite rule so a near-zero
    # coarse estimate cannot make the target unreachable
    xs = np.linspace(a, b, 129)
    ys = np.array([f(x) for x in xs])
    coarse = (b - a) / 384.0 * (ys[0:-1:2] + 4.0 * ys[1::2] + ys[2::2]).sum()
    tol = max(rtol * abs(coarse), 1e-300)

    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        lo, hi, flo, fmid, fhi, est, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = simpson(flo, flm, fmid, mid - lo)
        right = simpson(fmid, frm, fhi, hi - mid)
        delta = left + right - est
        if depth >= max_depth or abs(delta) <= 15.0 * eps:
            total += left + right + delta / 15.0
        else:
            stack.append((mid, hi, fmid, frm, fhi, right, eps / 2.0, depth + 1))
            stack.append((lo, mid, flo, flm, fmid, left, eps / 2.0, depth + 1))
    return total


QUADRATURE_LIMIT = 12.0
QUADRATURE_RTOL = 1e-10


@lru_cache(maxsize=None)
def gaussian_moments(kind: ActivationKind) -> tuple[float, float]:
    """``(E[phi(z)^2], E[phi'(z)^2])`` for z ~ N(0, 1) by adaptive Simpson on [-12, 12]."""
    kind = ActivationKind.parse(kind)

    def fwd(z):
        return float(apply(kind, np.float64(z)) ** 2 * normal_pdf(z))

    def bwd(z):
        return float(derivative(kind, np.float64(z)) ** 2 * normal_pdf(z))

    lim = QUADRATURE_LIMIT
    if kind is ActivationKind.RELU:
        # the kink at 0 is integrated exactly by splitting there
        return (adaptive_simpson(fwd, 0.0, lim, QUADRATURE_RTOL),
                adaptive_simpson(bwd, 0.0, lim, QUADRATURE_RTOL))
    return (adaptive_simpson(fwd, -lim, lim, QUADRATURE_RTOL),
            adaptive_simpson(bwd, -lim, lim, QUADRATURE_RTOL))
