"""Main network: a small MLP whose flat parameter vector is produced per input.

In residual mode the head is ELU + 1, so the network output is a strictly
positive residual R and the value estimate F - R never exceeds the SDF.
In NTC mode the head is the identity and the output is the value itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rntc.geometry import WINDOW_SIZE
from rntc.neural.layers import activation

RNTC = "rntc"
NTC = "ntc"
MODES = (RNTC, NTC)


@dataclass(frozen=True)
class MainNetSpec:
    widths: tuple[int, ...] = (3, 36, 36, 36, 18, 18, 18, 9, 9, 9, 1)
    hidden: tuple[str, ...] = ("sin",) * 3 + ("selu",) * 6
    mode: str = RNTC

    def __post_init__(self):
        if self.widths[0] != 3 or self.widths[-1] != 1:
            raise ValueError("main network maps a 3-d state to a scalar")
        if len(self.hidden) != len(self.widths) - 2:
            raise ValueError("one hidden activation per hidden layer")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @classmethod
    def canonical(cls, mode: str = RNTC) -> "MainNetSpec":
        return cls(mode=mode)

    @classmethod
    def desk(cls, mode: str = RNTC) -> "MainNetSpec":
        return cls((3, 18, 18, 18, 9, 9, 9, 5, 5, 5, 1), mode=mode)

    @property
    def output(self) -> str:
        return "elu1" if self.mode == RNTC else "identity"

    @property
    def activations(self) -> tuple[str, ...]:
        return self.hidden + (self.output,)

    def layout(self) -> list[tuple[slice, tuple[int, int], slice]]:
        """(weight slice, weight shape (out, in), bias slice) per layer."""
        out, pos = [], 0
        for n_in, n_out in zip(self.widths, self.widths[1:]):
            w = slice(pos, pos + n_in * n_out)
            pos = w.stop
            b = slice(pos, pos + n_out)
            pos = b.stop
            out.append((w, (n_out, n_in), b))
        return out

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths, self.widths[1:]))


RESIDUAL_INIT_BIAS = -2.0  # R = exp(-2) ~ 0.14 at initialization
FIRST_SIN_BOUND = 10.0  # ~ one period per 0.6 normalized units, a few grid cells at desk scale


def init_main_params(spec: MainNetSpec, seed: int = 0) -> np.ndarray:
    """A well-scaled starting point for generated parameters.

    Sine layers follow the usual sinusoidal-network init (a wide first layer with
    random phases so the features can resolve obstacle-sized detail, then
    U(+-sqrt(6/fan_in))); SELU layers are LeCun normal with zero bias. In
    residual mode the output bias starts at -2 so R is small but the ELU + 1
    head is away from its flat exponential tail.
    """
    rng = np.random.default_rng(seed)
    theta = np.zeros(spec.n_params)
    for i, ((ws, (n_out, n_in), bs), act) in enumerate(zip(spec.layout(), spec.activations)):
        if act == "sin":
            bound = FIRST_SIN_BOUND if i == 0 else math.sqrt(6.0 / n_in)
            theta[ws] = rng.uniform(-bound, bound, n_out * n_in)
            if i == 0:
                theta[bs] = rng.uniform(-math.pi, math.pi, n_out)
        else:
            theta[ws] = rng.normal(0.0, 1.0 / math.sqrt(n_in), n_out * n_in)
    if spec.mode == RNTC:
        theta[spec.layout()[-1][2]] = RESIDUAL_INIT_BIAS
    return theta


def main_param_scale(spec: MainNetSpec) -> np.ndarray:
    """Per-entry standard deviation of the weights drawn by ``init_main_params``.

    Biases get the scale of their layer's weights. Used to size how strongly the
    hypernetwork output may vary with its input at initialization.
    """
    scale = np.zeros(spec.n_params)
    for i, ((ws, (_, n_in), bs), act) in enumerate(zip(spec.layout(), spec.activations)):
        if act == "sin":
            std = (FIRST_SIN_BOUND if i == 0 else math.sqrt(6.0 / n_in)) / math.sqrt(3.0)
        else:
            std = 1.0 / math.sqrt(n_in)
        scale[ws] = std
        scale[bs] = std
    return scale


def wrap_angle(theta):
    """Wrap to (-pi, pi]; values already in range are returned unchanged."""
    theta = np.asarray(theta, dtype=float)
    inside = (theta > -math.pi) & (theta <= math.pi)
    return np.where(inside, theta, math.pi - np.mod(math.pi - theta, 2 * math.pi))


@dataclass(frozen=True)
class StateNormalizer:
    """x, y -> [-1, 1] over the sensing window; theta -> wrap(theta) / pi."""

    center: tuple[float, float] = (0.0, 0.0)
    size: float = WINDOW_SIZE

    @property
    def scale(self) -> np.ndarray:
        return np.array([2.0 / self.size, 2.0 / self.size, 1.0 / math.pi])

    def __call__(self, states):
        s = np.asarray(states, dtype=float)
        out = np.empty_like(s)
        out[..., 0] = (s[..., 0] - self.center[0]) * (2.0 / self.size)
        out[..., 1] = (s[..., 1] - self.center[1]) * (2.0 / self.size)
        out[..., 2] = wrap_angle(s[..., 2]) / math.pi
        return out


def _check_theta(theta, spec: MainNetSpec) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != spec.n_params:
        raise ValueError(f"parameter vector has length {theta.shape[-1]}, "
                         f"architecture needs {spec.n_params}")
    return theta


def forward_batch(theta, x, spec: MainNetSpec):
    """theta (B, P), x (B, M, 3) normalized -> (out (B, M), cache)."""
    theta = _check_theta(theta, spec)
    B = theta.shape[0]
    h = x
    cache = []
    for (ws, shape, bs), act in zip(spec.layout(), spec.activations):
        W = theta[:, ws].reshape(B, *shape)
        z = h @ W.transpose(0, 2, 1) + theta[:, None, bs]
        a, da = activation(act, z)
        cache.append((h, W, da))
        h = a
    return h[..., 0], cache


def backward_batch(dout, cache, spec: MainNetSpec, need_input: bool = False):
    """dout (B, M) -> (dtheta (B, P), dx (B, M, 3) or None)."""
    B = dout.shape[0]
    dtheta = np.zeros((B, spec.n_params))
    g = dout[..., None]
    layout = spec.layout()
    for li in range(len(layout) - 1, -1, -1):
        ws, shape, bs = layout[li]
        h, W, da = cache[li]
        dz = g * da
        dtheta[:, ws] = (dz.transpose(0, 2, 1) @ h).reshape(B, -1)
        dtheta[:, bs] = dz.sum(axis=1)
        if li > 0 or need_input:
            g = dz @ W
    return dtheta, (g if need_input else None)


def main_forward(theta, state, spec: MainNetSpec) -> float:
    """Network output at one normalized state."""
    theta = _check_theta(theta, spec)
    out, _ = forward_batch(theta[None], np.asarray(state, dtype=float)[None, None], spec)
    return float(out[0, 0])


def main_forward_many(theta, states, spec: MainNetSpec) -> np.ndarray:
    """Output at normalized states (M, 3) for one parameter vector."""
    theta = _check_theta(theta, spec)
    out, _ = forward_batch(theta[None], np.asarray(states, dtype=float)[None], spec)
    return out[0]


def main_value_and_grad(theta, state, spec: MainNetSpec, normalizer: StateNormalizer):
    """Output and its gradient w.r.t. the raw (un-normalized) state."""
    theta = _check_theta(theta, spec)
    x = normalizer(np.asarray(state, dtype=float))[None, None]
    out, cache = forward_batch(theta[None], x, spec)
    _, dx = backward_batch(np.ones((1, 1)), cache, spec, need_input=True)
    return float(out[0, 0]), dx[0, 0] * normalizer.scale


def main_grad_input(theta, state, spec: MainNetSpec, normalizer: StateNormalizer) -> np.ndarray:
    return main_value_and_grad(theta, state, spec, normalizer)[1]
