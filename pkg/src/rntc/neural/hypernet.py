"""CNN hypernetwork: SDF pair -> main-network parameter vector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rntc.geometry import F_MAX
from rntc.neural.layers import (activation, conv2d_backward, conv2d_forward, maxpool2_backward,
                                maxpool2_forward)


@dataclass(frozen=True)
class HyperNetSpec:
    in_size: int = 100
    in_channels: int = 2
    convs: tuple[tuple[int, int], ...] = ((16, 5), (32, 5), (64, 3), (128, 3))
    padding: str = "valid"
    out_dim: int = 4519

    def __post_init__(self):
        if self.padding not in ("valid", "same"):
            raise ValueError("padding must be 'valid' or 'same'")
        if self.flat_dim() < 1:
            raise ValueError(f"input size {self.in_size} collapses under the conv stack")

    @classmethod
    def canonical(cls, out_dim: int = 4519) -> "HyperNetSpec":
        return cls(out_dim=out_dim)

    @classmethod
    def desk(cls, out_dim: int) -> "HyperNetSpec":
        return cls(32, 2, ((8, 5), (16, 5), (32, 3), (32, 3)), "same", out_dim)

    def pad(self, k: int) -> int:
        return k // 2 if self.padding == "same" else 0

    def shape_trace(self) -> list[int]:
        """Spatial size after every conv and pool."""
        s, trace = self.in_size, [self.in_size]
        for _, k in self.convs:
            s = s + 2 * self.pad(k) - k + 1
            trace.append(s)
            s //= 2
            trace.append(s)
        return trace

    def flat_dim(self) -> int:
        s = self.shape_trace()[-1]
        return self.convs[-1][0] * s * s if s > 0 else 0

    def shapes(self) -> list[tuple[int, ...]]:
        """Parameter tensor shapes in storage order."""
        out, c = [], self.in_channels
        for o, k in self.convs:
            out += [(o, c, k, k), (o,)]
            c = o
        out += [(self.out_dim, self.flat_dim()), (self.out_dim,)]
        return out

    @property
    def n_params(self) -> int:
        return int(sum(np.prod(s) for s in self.shapes()))


class HyperNet:
    """Weights live in one flat float64 vector; ``tensors`` are views into it."""

    def __init__(self, spec: HyperNetSpec, params: np.ndarray | None = None, seed: int = 0,
                 head_bias: np.ndarray | None = None, head_scale: np.ndarray | None = None):
        self.spec = spec
        if params is None:
            params = self.init_params(spec, seed, head_bias, head_scale)
        params = np.asarray(params, dtype=float)
        if params.shape != (spec.n_params,):
            raise ValueError(f"expected {spec.n_params} parameters, got {params.shape}")
        self.params = params.copy()
        self.tensors = self._views(self.params)

    def _views(self, flat):
        views, pos = [], 0
        for s in self.spec.shapes():
            n = int(np.prod(s))
            views.append(flat[pos:pos + n].reshape(s))
            pos += n
        return views

    @staticmethod
    def init_params(spec: HyperNetSpec, seed: int, head_bias: np.ndarray | None = None,
                    head_scale: np.ndarray | None = None) -> np.ndarray:
        """He-uniform conv weights with zero biases, so ReLU features stay O(1).

        The linear head defaults to U(+-1/sqrt(fan_in)). ``head_bias`` replaces its
        bias so generated parameters start at a properly scaled main-network init;
        ``head_scale`` (one std per output) sizes head row r so that output r varies
        with the input at roughly that std, assuming unit-scale features.
        """
        rng = np.random.default_rng(seed)
        chunks = []
        shapes = spec.shapes()
        n_layers = len(shapes) // 2
        for li, (w_shape, b_shape) in enumerate(zip(shapes[::2], shapes[1::2])):
            fan_in = int(np.prod(w_shape[1:]))
            if li < n_layers - 1:
                bound = np.sqrt(6.0 / fan_in)
                chunks.append(rng.uniform(-bound, bound, w_shape).ravel())
                chunks.append(np.zeros(b_shape))
                continue
            bound = 1.0 / np.sqrt(fan_in)
            if head_scale is None:
                chunks.append(rng.uniform(-bound, bound, w_shape).ravel())
            else:
                rows = np.sqrt(3.0) * np.asarray(head_scale, dtype=float)[:, None] / np.sqrt(fan_in)
                chunks.append((rng.uniform(-1.0, 1.0, w_shape) * rows).ravel())
            if head_bias is None:
                chunks.append(rng.uniform(-bound, bound, b_shape))
            else:
                chunks.append(np.asarray(head_bias, dtype=float).reshape(b_shape))
        return np.concatenate(chunks)

    def forward(self, x):
        """x (B, C, S, S), already normalized -> (Theta (B, out_dim), cache)."""
        x = np.asarray(x, dtype=float)
        sp = self.spec
        if x.shape[1:] != (sp.in_channels, sp.in_size, sp.in_size):
            raise ValueError(f"hypernetwork input must be (B, {sp.in_channels}, {sp.in_size}, "
                             f"{sp.in_size}), got {x.shape}")
        caches = []
        h = x
        for i, (_, k) in enumerate(sp.convs):
            W, b = self.tensors[2 * i], self.tensors[2 * i + 1]
            h, c_conv = conv2d_forward(h, W, b, sp.pad(k))
            h, dact = activation("relu", h)
            h, c_pool = maxpool2_forward(h)
            caches.append((c_conv, dact, c_pool))
        feat = h.reshape(h.shape[0], -1)
        W, b = self.tensors[-2], self.tensors[-1]
        theta = feat @ W.T + b
        return theta, (caches, feat, h.shape)

    def backward(self, dtheta, cache) -> np.ndarray:
        caches, feat, hshape = cache
        grad = np.zeros_like(self.params)
        gviews = self._views(grad)
        gviews[-2][...] = dtheta.T @ feat
        gviews[-1][...] = dtheta.sum(axis=0)
        g = (dtheta @ self.tensors[-2]).reshape(hshape)
        for i in range(len(self.spec.convs) - 1, -1, -1):
            c_conv, dact, c_pool = caches[i]
            g = maxpool2_backward(g, c_pool) * dact
            g, dW, db = conv2d_backward(g, c_conv)
            gviews[2 * i][...] = dW
            gviews[2 * i + 1][...] = db
        return grad

    def __call__(self, sdf_pair) -> np.ndarray:
        """Theta for one SDF pair given in meters (normalized here by F_MAX)."""
        return hyper_forward(self, sdf_pair)


def normalize_sdf(sdf) -> np.ndarray:
    return np.asarray(sdf, dtype=float) / F_MAX


def hyper_forward(net: HyperNet, sdf_pair) -> np.ndarray:
    x = np.asarray(sdf_pair, dtype=float)
    sp = net.spec
    if x.shape != (sp.in_channels, sp.in_size, sp.in_size):
        raise ValueError(f"SDF pair must have shape ({sp.in_channels}, {sp.in_size}, "
                         f"{sp.in_size}), got {x.shape}")
    theta, _ = net.forward(normalize_sdf(x)[None])
    return theta[0]
