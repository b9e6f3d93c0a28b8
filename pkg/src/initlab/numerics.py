"""Seedable sampling, dense matrix helpers and descriptive statistics.

Every random draw in the package goes through :class:`RngState`, which wraps
numpy's Philox4x64 counter-based generator.  Normal variates come from
numpy's ziggurat sampler (``Generator.standard_normal``), uniforms from the
53-bit ``Generator.random`` mapping onto [0, 1).

A "matrix" throughout the package is a 2-D C-contiguous ``float64`` ndarray
with (rows, cols) shape; vectors are 1-D ``float64`` arrays.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


class ParameterError(ValueError):
    """Invalid argument value (negative std, empty input, bad range...)."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def derive_seed(seed: int, label: str) -> int:
    """Hash ``(seed, label)`` into a fresh 64-bit seed."""
    digest = hashlib.blake2b(f"{seed}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngState:
    """Deterministic random stream keyed by a 64-bit seed.

    Child streams for sub-components are derived by hashing the parent seed
    with a label, so they never share a Philox key with the parent or with
    each other.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, label: str) -> "RngState":
        return RngState(derive_seed(self.seed, label))

    def get_state(self) -> dict:
        return {"seed": self.seed, "bit_generator": self._gen.bit_generator.state}

    @classmethod
    def from_state(cls, state: dict) -> "RngState":
        rng = cls(state["seed"])
        rng._gen.bit_generator.state = state["bit_generator"]
        return rng

    def __repr__(self):
        return f"RngState(seed={self.seed})"


def sample_normal(rng: RngState, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if std < 0 or not np.isfinite(std):
        raise ParameterError(f"std must be finite and >= 0, got {std}")
    if n < 0:
        raise ParameterError(f"n must be >= 0, got {n}")
    return mean + std * rng.generator.standard_normal(n)


def sample_uniform(rng: RngState, n: int, lo: float, hi: float) -> np.ndarray:
    if lo > hi:
        raise ParameterError(f"lo must be <= hi, got lo={lo}, hi={hi}")
    if n < 0:
        raise ParameterError(f"n must be >= 0, got {n}")
    if lo == hi:
        return np.full(n, float(lo))
    return lo + (hi - lo) * rng.generator.random(n)


def as_matrix(a) -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    std: float
    min: float
    max: float
    n: int


def summarize(values) -> SummaryStats:
    """Population (divisor n) summary of ``values``."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ParameterError("cannot summarize an empty input")
    mean = float(v.mean())
    std = float(v.std())
    lo, hi = float(v.min()), float(v.max())
    # rounding in the mean can put it a ulp outside [min, max] for constant data
    mean = min(max(mean, lo), hi)
    return SummaryStats(mean=mean, std=std, min=lo, max=hi, n=int(v.size))


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    overflow_lo: int
    overflow_hi: int

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.overflow_lo + self.overflow_hi


def histogram(values, bins: int, lo: float, hi: float) -> Histogram:
    """Equal-width histogram over [lo, hi].

    Bin k covers [lo + k*w, lo + (k+1)*w); the value ``hi`` itself lands in
    the last bin.  Values below ``lo`` or above ``hi`` are tallied in the two
    overflow counters (NaN counts as high overflow), so ``counts.sum() + overflow_lo + overflow_hi == n``.
    """
    if bins < 1:
        raise ParameterError(f"bins must be >= 1, got {bins}")
    if not lo < hi:
        raise ParameterError(f"lo must be < hi, got lo={lo}, hi={hi}")
    v = np.asarray(values, dtype=np.float64).ravel()
    below = v < lo
    above = (v > hi) | np.isnan(v)
    inside = v[~(below | above)]
    idx = np.floor((inside - lo) / (hi - lo) * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.int64)
    edges = np.linspace(lo, hi, bins + 1)
    return Histogram(edges=edges, counts=counts, overflow_lo=int(below.sum()), overflow_hi=int(above.sum()))
