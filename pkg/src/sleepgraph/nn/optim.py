"""ADAM updates, early stopping, and the training hyperparameter bundle."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .layers import Parameter


@dataclass
class TrainConfig:
    lr: float = 0.001
    patience: int = 30
    min_delta: float = 0.01
    max_epochs: int = 200
    seed: int = 0
    dropout_rate: float = 0.2
    loss: str = "bce"  # or "l2" for squared error on probabilities
    batch_size: int | None = None  # None = full batch

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.loss not in ("bce", "l2"):
            raise ValueError(f"loss must be 'bce' or 'l2', got {self.loss!r}")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


def adam_step(params: Iterable[Parameter], t: int, lr: float = 0.001,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected ADAM update over parameters carrying their grads."""
    if t < 1:
        raise ValueError("ADAM step index starts at 1")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p in params:
        p.m *= beta1
        p.m += (1.0 - beta1) * p.grad
        p.v *= beta2
        p.v += (1.0 - beta2) * p.grad * p.grad
        p.value -= lr * (p.m / bc1) / (np.sqrt(p.v / bc2) + eps)


class AdamOptimizer:
    def __init__(self, params: list[Parameter], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

    def step(self):
        self.t += 1
        adam_step(self.params, self.t, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class EarlyStopper:
    """Stop after `patience` consecutive epochs improving by less than `min_delta`.

    The first epoch sets the baseline. An epoch counts as an improvement only
    when it beats the stored best by at least min_delta, which is also when
    callers should snapshot parameters for later restoration.
    """

    def __init__(self, patience: int = 30, min_delta: float = 0.01):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.min_delta = min_delta
        self.best_loss = np.inf
        self.best_epoch = 0
        self.epoch = 0
        self.stopped_epoch: int | None = None
        self._stale = 0

    def update(self, loss: float) -> tuple[bool, bool]:
        """Feed one epoch's validation loss; returns (improved, should_stop)."""
        self.epoch += 1
        improved = self.epoch == 1 or (self.best_loss - loss) >= self.min_delta
        if improved:
            self.best_loss = loss
            self.best_epoch = self.epoch
            self._stale = 0
        else:
            self._stale += 1
        stop = self._stale >= self.patience
        if stop and self.stopped_epoch is None:
            self.stopped_epoch = self.epoch
        return improved, stop
