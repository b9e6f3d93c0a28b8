"""Forward/backward variance propagation through a layer stack.

With i.i.d. zero-mean weights of variance sigma^2 the recurrences are

    Var[x_l]       = c_phi * n_in  * sigma^2 * Var[x_{l-1}]
    Var[delta_l-1] = d_phi * n_out * sigma^2 * Var[delta_l]

where c_phi = E[phi(z)^2] / Var[z] and d_phi = E[phi'(z)^2] for Gaussian z.
c_phi is a second moment about zero, so "variance" of a post-activation here
means its mean square; ReLU outputs have nonzero mean and their centered
variance is smaller.  Measured profiles use the same mean-square convention.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationKind, apply, derivative, gaussian_moments
from .init import FanSpec, InitScheme, target_std
from .nn import DenseLayer, Mlp, backward, forward
from .numerics import ParameterError, RngState

QUOTED_GELU_C_PHI_BAND = (0.45, 0.5)
MIN_MC_SAMPLES = 10_000


class Method(str, enum.Enum):
    CLOSED = "closed"
    QUADRATURE = "quadrature"
    MONTE_CARLO = "monte_carlo"


class Direction(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    COMPROMISE = "compromise"


@dataclass(frozen=True)
class GainPair:
    c_phi: float
    d_phi: float
    method: Method
    c_stderr: float | None = None
    d_stderr: float | None = None


_CLOSED = {ActivationKind.LINEAR: (1.0, 1.0), ActivationKind.RELU: (0.5, 0.5)}


def gains(kind, method=None, mc_samples: int = 1_000_000, rng: RngState | None = None) -> GainPair:
    """Second-moment gains of ``kind`` for z ~ N(0, 1).

    ``method=None`` picks the closed form for linear/ReLU and quadrature for GELU.
    """
    kind = ActivationKind.parse(kind)
    if method is None:
        method = Method.CLOSED if kind in _CLOSED else Method.QUADRATURE
    method = Method(method)
    if method is Method.CLOSED:
        if kind not in _CLOSED:
            raise ParameterError(f"no closed form for {kind.value}; use quadrature")
        return GainPair(*_CLOSED[kind], method)
    if method is Method.QUADRATURE:
        c, d = gaussian_moments(kind)
        return GainPair(c, d, method)
    if mc_samples < MIN_MC_SAMPLES:
        raise ParameterError(f"Monte Carlo needs at least {MIN_MC_SAMPLES} samples, got {mc_samples}")
    rng = rng if rng is not None else RngState(0)
    z = rng.generator.standard_normal(mc_samples)
    f2 = np.square(apply(kind, z))
    d2 = np.square(derivative(kind, z))
    root_n = math.sqrt(mc_samples)
    return GainPair(float(f2.mean()), float(d2.mean()), method,
                    float(f2.std(ddof=1) / root_n), float(d2.std(ddof=1) / root_n))


def _check_stack(fans, sigmas):
    if len(fans) != len(sigmas):
        raise ParameterError(f"{len(fans)} layers but {len(sigmas)} sigmas")
    for a, b in zip(fans, fans[1:]):
        if a.fan_out != b.fan_in:
            raise ParameterError(f"fan_out {a.fan_out} does not feed fan_in {b.fan_in}")


def forward_variance_map(fans: list[FanSpec], sigmas: list[float], activation, input_var: float = 1.0) -> list[float]:
    """Predicted Var[x_l] for l = 0..L."""
    if not input_var > 0:
        raise ParameterError(f"input variance must be positive, got {input_var}")
    _check_stack(fans, sigmas)
    c_phi = gains(activation).c_phi
    out = [float(input_var)]
    for fan, sigma in zip(fans, sigmas):
        out.append(c_phi * fan.fan_in * sigma * sigma * out[-1])
    return out


def backward_variance_map(fans: list[FanSpec], sigmas: list[float], activation, output_grad_var: float = 1.0) -> list[float]:
    """Predicted Var[delta_l] for l = L..0 (output side first)."""
    if not output_grad_var > 0:
        raise ParameterError(f"output gradient variance must be positive, got {output_grad_var}")
    _check_stack(fans, sigmas)
    d_phi = gains(activation).d_phi
    out = [float(output_grad_var)]
    for fan, sigma in zip(reversed(fans), reversed(sigmas)):
        out.append(d_phi * fan.fan_out * sigma * sigma * out[-1])
    return out


@dataclass
class VarianceProfile:
    layer_fans: list[FanSpec]
    sigmas: list[float]
    activation: ActivationKind
    forward_vars: list[float]
    backward_vars: list[float]
    measured_forward: list[float] | None = None
    measured_backward: list[float] | None = None

    CSV_COLUMNS = ("layer", "fan_in", "fan_out", "sigma", "pred_fwd_var", "meas_fwd_var",
                   "pred_bwd_var", "meas_bwd_var")

    @property
    def depth(self) -> int:
        return len(self.layer_fans)

    def to_csv(self) -> str:
        """One row per layer boundary l = 0..L; row 0 is the network input."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        depth = self.depth
        for l in range(depth + 1):
            fan = self.layer_fans[l - 1] if l else None
            back = depth - l  # backward lists run from layer L down to 0
            w.writerow([
                l,
                fan.fan_in if fan else "",
                fan.fan_out if fan else "",
                repr(self.sigmas[l - 1]) if fan else "",
                repr(self.forward_vars[l]),
                repr(self.measured_forward[l]) if self.measured_forward else "",
                repr(self.backward_vars[back]),
                repr(self.measured_backward[back]) if self.measured_backward else "",
            ])
        return buf.getvalue()


def predicted_profile(fans, sigmas, activation, input_var=1.0, output_grad_var=1.0) -> VarianceProfile:
    activation = ActivationKind.parse(activation)
    return VarianceProfile(list(fans), [float(s) for s in sigmas], activation,
                           forward_variance_map(fans, sigmas, activation, input_var),
                           backward_variance_map(fans, sigmas, activation, output_grad_var))


def mc_propagation_check(fans: list[FanSpec], scheme: InitScheme, activation, batch: int,
                         rng: RngState, draws: int = 1) -> VarianceProfile:
    """Measure per-layer mean-square activations and gradients through the MLP engine.

    Every layer (including the last) applies ``activation``; inputs and the
    synthetic output gradient are standard normal.  The maps are expectations
    over the weights as well as the inputs, and a single weight draw at finite
    width scatters around them by a factor that compounds with depth, so the
    measurement averages ``draws`` independent networks.
    """
    if batch < 256:
        raise ParameterError(f"batch must be >= 256, got {batch}")
    if draws < 1:
        raise ParameterError(f"draws must be >= 1, got {draws}")
    activation = ActivationKind.parse(activation)
    sigmas = [target_std(scheme, f) for f in fans]
    _check_stack(fans, sigmas)
    fwd = np.zeros(len(fans) + 1)
    bwd = np.zeros(len(fans) + 1)
    for k in range(draws):
        sub = rng if draws == 1 else rng.child(f"draw{k}")
        layers = [DenseLayer(np.zeros((f.fan_out, f.fan_in)), np.zeros(f.fan_out), activation) for f in fans]
        mlp = Mlp(layers)
        mlp.initialize(sub.child("weights"), scheme)
        x0 = sub.child("inputs").generator.standard_normal((batch, fans[0].fan_in))
        out, cache = forward(mlp, x0)
        acts = cache.inputs + [out]
        g_out = sub.child("grads").generator.standard_normal(out.shape)
        trace: list[np.ndarray] = []
        backward(mlp, cache, g_out, trace=trace)
        fwd += [np.mean(np.square(a)) for a in acts]
        bwd += [np.mean(np.square(d)) for d in trace]

    profile = predicted_profile(fans, sigmas, activation)
    profile.measured_forward = [float(v) for v in fwd / draws]
    profile.measured_backward = [float(v) for v in bwd / draws]
    return profile


def recommended_std(activation, fan: FanSpec, direction=Direction.FORWARD) -> float:
    g = gains(activation)
    direction = Direction(direction)
    if direction is Direction.FORWARD:
        return math.sqrt(1.0 / (g.c_phi * fan.fan_in))
    if direction is Direction.BACKWARD:
        return math.sqrt(1.0 / (g.d_phi * fan.fan_out))
    return math.sqrt(2.0 / (g.c_phi * fan.fan_in + g.d_phi * fan.fan_out))
