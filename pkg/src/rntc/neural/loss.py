"""Combined MSE + exponential loss, its single-sample optimum, and the IoU metric."""
from __future__ import annotations

import math

import numpy as np

from rntc.errors import NumericalError

# exp(z) is continued linearly above this exponent (C1 join). exp(30) ~ 1e13 is far
# beyond any useful loss value, so only grossly wrong-signed predictions on
# large-magnitude targets see the difference, and they no longer overflow.
EXP_CAP = 30.0


def _exp_capped(z):
    """exp(z) for z <= EXP_CAP, tangent line beyond; returns (value, derivative)."""
    zc = np.minimum(z, EXP_CAP)
    e = np.exp(zc)
    return e * (1.0 + (z - zc)), e


def _check(V_hat, V):
    V_hat = np.asarray(V_hat, dtype=float)
    V = np.asarray(V, dtype=float)
    if V_hat.shape != V.shape:
        raise ValueError(f"shape mismatch {V_hat.shape} vs {V.shape}")
    if np.isnan(V_hat).any() or np.isnan(V).any():
        raise NumericalError("NaN in loss inputs")
    return V_hat, V


def cme_loss(V_hat, V, gamma: float) -> float:
    """mean( gamma (V - V_hat)^2 + (1 - gamma) exp(-V V_hat) ), exp capped as above."""
    V_hat, V = _check(V_hat, V)
    terms = gamma * (V - V_hat) ** 2
    if gamma < 1:
        terms = terms + (1 - gamma) * _exp_capped(-V * V_hat)[0]
    return float(terms.mean())


def cme_loss_grad(V_hat, V, gamma: float) -> tuple[float, np.ndarray]:
    """Loss and its gradient w.r.t. V_hat."""
    V_hat, V = _check(V_hat, V)
    n = V.size
    diff = V - V_hat
    loss = gamma * diff ** 2
    grad = -2 * gamma * diff
    if gamma < 1:
        e, de = _exp_capped(-V * V_hat)
        loss = loss + (1 - gamma) * e
        grad = grad - (1 - gamma) * V * de
    return float(loss.mean()), grad / n


def lambert_w(z: float, tol: float = 1e-12, max_iter: int = 100) -> float:
    """Principal branch of W on z >= 0 by Halley iteration from log(1 + z)."""
    z = float(z)
    if z < 0 or math.isnan(z):
        raise ValueError(f"lambert_w defined here for z >= 0, got {z}")
    if z == 0:
        return 0.0
    if math.isinf(z):
        return math.inf
    w = math.log1p(z)
    for _ in range(max_iter):
        ew = math.exp(w)
        f = w * ew - z
        wp1 = w + 1
        step = f / (ew * wp1 - (w + 2) * f / (2 * wp1))
        w -= step
        if abs(step) <= 1e-16 * (1 + abs(w)):
            break
    if abs(w * math.exp(w) - z) > tol * max(1.0, z):
        raise ArithmeticError(f"lambert_w did not converge for z={z}")
    return w


def cme_optimal_prediction(y: float, gamma: float) -> float:
    """Minimizer over y_hat of gamma (y - y_hat)^2 + (1 - gamma) exp(-y y_hat)."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    y = float(y)
    if y == 0:
        return 0.0
    if gamma == 1:
        return y
    # argument (1-g) y^2 / (2 g e^{y^2}), assembled in log space to avoid overflow
    log_arg = math.log1p(-gamma) + 2 * math.log(abs(y)) - math.log(2 * gamma) - y * y
    return y + lambert_w(math.exp(log_arg)) / y


def iou(V_a, V_b) -> float:
    """IoU of the zero-superlevel (safe) sets; 1.0 when both are empty."""
    a = np.asarray(getattr(V_a, "values", V_a)) >= 0
    b = np.asarray(getattr(V_b, "values", V_b)) >= 0
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union
