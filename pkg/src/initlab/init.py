"""Weight initializers: LeCun, Xavier/Glorot, Kaiming/He and constant-std.

Weights are laid out (fan_out x fan_in) so a layer computes ``z = W @ x``.
Uniform variants use the bound ``sqrt(3) * std`` so both distributions share
the same variance.  Biases are always zero.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .activations import ActivationKind, gaussian_moments
from .numerics import ParameterError, RngState, sample_normal, sample_uniform


class Family(str, enum.Enum):
    LECUN = "lecun"
    XAVIER = "xavier"
    KAIMING = "kaiming"
    CONSTANT_STD = "constant_std"


class FanMode(str, enum.Enum):
    FAN_IN = "fan_in"
    FAN_OUT = "fan_out"
    FAN_AVG = "fan_avg"


class Distribution(str, enum.Enum):
    NORMAL = "normal"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class FanSpec:
    fan_in: int
    fan_out: int

    def __post_init__(self):
        if self.fan_in < 1 or self.fan_out < 1:
            raise ParameterError(f"fans must be >= 1, got fan_in={self.fan_in}, fan_out={self.fan_out}")


def gain_for(nonlinearity) -> float:
    """Rectifier gain ``sqrt(1 / c_phi)``: 1 for linear, sqrt(2) for ReLU."""
    kind = ActivationKind.parse(nonlinearity)
    if kind is ActivationKind.LINEAR:
        return 1.0
    if kind is ActivationKind.RELU:
        return math.sqrt(2.0)
    c_phi, _ = gaussian_moments(kind)
    return math.sqrt(1.0 / c_phi)


@dataclass(frozen=True)
class InitScheme:
    family: Family
    fan_mode: FanMode = FanMode.FAN_IN
    distribution: Distribution = Distribution.NORMAL
    gain: float = 1.0
    explicit_std: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "fan_mode", FanMode(self.fan_mode))
        object.__setattr__(self, "distribution", Distribution(self.distribution))
        if self.family is Family.XAVIER:
            object.__setattr__(self, "fan_mode", FanMode.FAN_AVG)
        if self.gain < 0:
            raise ParameterError(f"gain must be >= 0, got {self.gain}")
        if self.family is Family.CONSTANT_STD:
            if self.explicit_std is None or not self.explicit_std > 0:
                raise ParameterError(f"constant_std scheme needs explicit_std > 0, got {self.explicit_std}")
        elif self.explicit_std is not None:
            raise ParameterError("explicit_std is only valid for the constant_std family")

    @classmethod
    def lecun(cls, distribution="normal") -> "InitScheme":
        return cls(Family.LECUN, FanMode.FAN_IN, distribution)

    @classmethod
    def xavier(cls, distribution="normal", gain: float = 1.0) -> "InitScheme":
        return cls(Family.XAVIER, FanMode.FAN_AVG, distribution, gain)

    @classmethod
    def kaiming(cls, distribution="normal", fan_mode="fan_in", nonlinearity="relu") -> "InitScheme":
        return cls(Family.KAIMING, fan_mode, distribution, gain_for(nonlinearity))

    @classmethod
    def constant(cls, std: float, distribution="normal") -> "InitScheme":
        return cls(Family.CONSTANT_STD, FanMode.FAN_IN, distribution, 1.0, std)

    def to_json(self) -> dict:
        out = {"family": self.family.value, "fan_mode": self.fan_mode.value,
               "distribution": self.distribution.value}
        if self.family is Family.CONSTANT_STD:
            out["std"] = self.explicit_std
        else:
            out["gain"] = self.gain
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "InitScheme":
        family = Family(obj["family"])
        gain = obj.get("gain", 1.0)
        if isinstance(gain, str):
            gain = gain_for(gain)
        return cls(family, obj.get("fan_mode", "fan_in"), obj.get("distribution", "normal"),
                   float(gain), obj.get("std"))

    def label(self) -> str:
        if self.family is Family.CONSTANT_STD:
            return f"{self.distribution.value}(std={self.explicit_std:g})"
        return f"{self.family.value}_{self.distribution.value}"


def _fan(mode: FanMode, fan: FanSpec) -> float:
    if mode is FanMode.FAN_IN:
        return fan.fan_in
    if mode is FanMode.FAN_OUT:
        return fan.fan_out
    return 0.5 * (fan.fan_in + fan.fan_out)


def target_std(scheme: InitScheme, fan: FanSpec) -> float:
    if scheme.family is Family.CONSTANT_STD:
        return float(scheme.explicit_std)
    if scheme.family is Family.XAVIER:
        return scheme.gain * math.sqrt(2.0 / (fan.fan_in + fan.fan_out))
    return scheme.gain * math.sqrt(1.0 / _fan(scheme.fan_mode, fan))


def init_matrix(rng: RngState, scheme: InitScheme, fan: FanSpec) -> np.ndarray:
    std = target_std(scheme, fan)
    n = fan.fan_in * fan.fan_out
    if scheme.distribution is Distribution.NORMAL:
        values = sample_normal(rng, n, 0.0, std)
    else:
        bound = math.sqrt(3.0) * std
        values = sample_uniform(rng, n, -bound, bound)
    return values.reshape(fan.fan_out, fan.fan_in)
