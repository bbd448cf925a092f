"""Numpy hypernetwork / main-network stack, CME loss and training."""
from rntc.neural.hypernet import HyperNet, HyperNetSpec, hyper_forward
from rntc.neural.loss import cme_loss, cme_optimal_prediction, iou, lambert_w
from rntc.neural.mainnet import (NTC, RNTC, MainNetSpec, StateNormalizer, main_forward,
                                 main_grad_input, main_value_and_grad)

__all__ = [
    "HyperNet", "HyperNetSpec", "hyper_forward", "cme_loss", "cme_optimal_prediction", "iou",
    "lambert_w", "NTC", "RNTC", "MainNetSpec", "StateNormalizer", "main_forward",
    "main_grad_input", "main_value_and_grad",
]
