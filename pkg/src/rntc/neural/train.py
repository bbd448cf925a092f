"""Supervised training of the hypernetwork against HJ ground truth.

Per batch: Theta = hypernet(SDF pair); the main network is evaluated at grid
states; the value estimate is F - R (residual mode) or the raw output (NTC
mode); the CME loss is back-propagated into the hypernetwork weights only.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from rntc.errors import NumericalError
from rntc.hj import StateGrid
from rntc.neural.hypernet import HyperNet, HyperNetSpec, normalize_sdf
from rntc.neural.loss import cme_loss, cme_loss_grad, iou
from rntc.neural.mainnet import (RNTC, MainNetSpec, StateNormalizer, backward_batch, forward_batch,
                                 init_main_params, main_param_scale)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = RNTC
    gamma: float = 0.1
    epochs: int = 100
    batch_size: int = 40
    lr: float = 1e-4
    milestones: tuple[int, ...] = (85, 95)
    lr_drop: float = 0.1
    seed: int = 0
    mse_warmup_epochs: int = 1
    points_per_sample: int | None = None  # None: every grid node each step
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    K: int = 2
    scale: str = "paper"
    head_gain: float = 0.5  # input-dependent spread of Theta at init, relative to its init scale
    clip_norm: float | None = 1.0  # global gradient-norm clip; 0 or None disables

    @classmethod
    def desk(cls, epochs: int = 30, **kw) -> "TrainConfig":
        base = dict(epochs=epochs, lr=1e-4, milestones=scaled_milestones(epochs),
                    points_per_sample=2048, scale="desk")
        base.update(kw)
        return cls(**base)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        return self.lr * self.lr_drop ** sum(epoch >= m for m in self.milestones)


def scaled_milestones(epochs: int) -> tuple[int, int]:
    return (max(1, round(0.85 * epochs)), max(1, round(0.95 * epochs)))


class TrainingArrays:
    """Stacked float64 views of a list of TrainingPair."""

    def __init__(self, pairs: Sequence, grid: StateGrid):
        self.n = len(pairs)
        self.grid = grid
        self.x = normalize_sdf(np.stack([p.sdf_pair for p in pairs])) if pairs else None
        nx, ny, nth = grid.shape
        self.failure = (np.stack([p.failure for p in pairs]).reshape(self.n, nx * ny).astype(float)
                        if pairs else None)
        self.value = (np.stack([p.value for p in pairs]).reshape(self.n, -1).astype(float)
                      if pairs else None)
        self.states = StateNormalizer(grid.center, grid.size)(grid.states().reshape(-1, 3))
        self.xy_index = np.arange(nx * ny * nth) // nth

    @property
    def n_nodes(self) -> int:
        return len(self.states)


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def step(self, params: np.ndarray, grad: np.ndarray):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def loss_and_grad(net: HyperNet, spec: MainNetSpec, x, states, F, V, gamma: float):
    """x (B, 2, S, S) normalized; states (B, M, 3) normalized; F, V (B, M)."""
    theta, hcache = net.forward(x)
    out, mcache = forward_batch(theta, states, spec)
    V_hat = F - out if spec.mode == RNTC else out
    loss, g = cme_loss_grad(V_hat, V, gamma)
    dout = -g if spec.mode == RNTC else g
    dtheta, _ = backward_batch(dout, mcache, spec)
    return loss, net.backward(dtheta, hcache)


def predict_values(net: HyperNet, spec: MainNetSpec, arrays: TrainingArrays, idx,
                   chunk: int = 8) -> np.ndarray:
    """Value estimate on the full grid for samples ``idx`` -> (len(idx), n_nodes)."""
    idx = np.asarray(idx)
    out = np.empty((len(idx), arrays.n_nodes))
    for s in range(0, len(idx), chunk):
        sel = idx[s:s + chunk]
        theta, _ = net.forward(arrays.x[sel])
        states = np.broadcast_to(arrays.states, (len(sel),) + arrays.states.shape)
        r, _ = forward_batch(theta, states, spec)
        if spec.mode == RNTC:
            r = arrays.failure[sel][:, arrays.xy_index] - r
        out[s:s + chunk] = r
    return out


def evaluate(net: HyperNet, spec: MainNetSpec, arrays: TrainingArrays, gamma: float) -> dict:
    """Per-pair IoU, CME loss and dominance-violation counts on the full grid."""
    ious, losses, violations = [], [], []
    for s in range(0, arrays.n, 8):
        idx = np.arange(s, min(s + 8, arrays.n))
        V_hat = predict_values(net, spec, arrays, idx)
        F = arrays.failure[idx][:, arrays.xy_index]
        for k, i in enumerate(idx):
            ious.append(iou(V_hat[k], arrays.value[i]))
            losses.append(cme_loss(V_hat[k], arrays.value[i], gamma))
            violations.append(int(np.count_nonzero((V_hat[k] >= 0) & (F[k] < 0))))
    return {"iou": np.array(ious), "loss": np.array(losses), "violations": np.array(violations)}


@dataclass
class TrainResult:
    net: HyperNet
    main_spec: MainNetSpec
    config: TrainConfig
    history: list[dict] = field(default_factory=list)


def train(train_pairs, val_pairs, grid: StateGrid, hyper_spec: HyperNetSpec,
          main_spec: MainNetSpec, config: TrainConfig,
          on_epoch: Callable[[dict], None] | None = None,
          checkpoint_path: str | Path | None = None) -> TrainResult:
    if main_spec.mode != config.mode:
        raise ValueError("main network mode and training mode disagree")
    tr = TrainingArrays(train_pairs, grid)
    va = TrainingArrays(val_pairs, grid) if val_pairs else None
    rng = np.random.default_rng(config.seed)
    net = HyperNet(hyper_spec, seed=config.seed, head_bias=init_main_params(main_spec, config.seed),
                   head_scale=config.head_gain * main_param_scale(main_spec))
    opt = Adam(config.lr, config.beta1, config.beta2, config.eps)
    result = TrainResult(net, main_spec, config)
    G = tr.n_nodes
    for epoch in range(1, config.epochs + 1):
        opt.lr = config.lr_at(epoch)
        gamma = 1.0 if epoch <= config.mse_warmup_epochs else config.gamma
        perm = rng.permutation(tr.n)
        losses = []
        for s in range(0, tr.n, config.batch_size):
            b = perm[s:s + config.batch_size]
            if config.points_per_sample:
                nodes = rng.integers(0, G, (len(b), config.points_per_sample))
            else:
                nodes = np.broadcast_to(np.arange(G), (len(b), G))
            states = tr.states[nodes]
            F = np.take_along_axis(tr.failure[b], tr.xy_index[nodes], axis=1)
            V = np.take_along_axis(tr.value[b], nodes, axis=1)
            loss, grad = loss_and_grad(net, main_spec, tr.x[b], states, F, V, gamma)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                if checkpoint_path is not None:
                    from rntc.neural.checkpoint import save_checkpoint
                    save_checkpoint(checkpoint_path, net, main_spec, config, result.history)
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            if config.clip_norm:
                norm = float(np.linalg.norm(grad))
                if norm > config.clip_norm:
                    grad = grad * (config.clip_norm / norm)
            opt.step(net.params, grad)
            losses.append(loss)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if va is not None:
            ev = evaluate(net, main_spec, va, config.gamma)
            row.update(val_loss=float(ev["loss"].mean()), val_iou=float(ev["iou"].mean()))
        else:
            row.update(val_loss=float("nan"), val_iou=float("nan"))
        result.history.append(row)
        log.info("epoch %d loss %.5f val_iou %.4f", epoch, row["train_loss"], row["val_iou"])
        if on_epoch:
            on_epoch(row)
    return result


def write_history(path, history: list[dict], config_hash: str = ""):
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_iou"])
        for r in history:
            w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["val_loss"]), repr(r["val_iou"])])


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["milestones"] = list(config.milestones)
    return d
