"""Mini-batch training of the autoencoder on (low-view, high-view) patch pairs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import Architecture, backward, forward, init_weights, mse_grad, mse_loss
from .optim import AdadeltaState, adadelta_step

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    rho: float = 0.95
    eps: float = 1e-6
    batch_size: int = 8
    seed: int = 0
    arch: Architecture = field(default_factory=Architecture)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _stack_pairs(pairs):
    if isinstance(pairs, tuple) and len(pairs) == 2 and np.ndim(pairs[0]) == 4:
        x, y = pairs
    else:
        pairs = list(pairs)
        if not pairs:
            raise ValueError("training set is empty")
        x = np.stack([p[0] for p in pairs])
        y = np.stack([p[1] for p in pairs])
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.float32)
    if len(x) == 0:
        raise ValueError("training set is empty")
    if x.shape != y.shape:
        raise ValueError(f"input/target shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def train(pairs, config=None, callback=None):
    """Fit a fresh model.  Returns ``(weights, epoch_losses)``.

    ``pairs`` is a list of ``(input, target)`` patches or a tuple of two
    ``(K, n, n, n)`` arrays.  Initialisation and per-epoch shuffling draw from
    one generator seeded with ``config.seed``; batches are processed in a fixed
    order, so equal inputs give bit-identical weights and loss curves.
    """
    config = config or TrainConfig()
    x, y = _stack_pairs(pairs)
    arch = config.arch
    if x.shape[1:] != (arch.patch_size,) * 3:
        raise ValueError(f"patches are {x.shape[1:]}, architecture expects {arch.patch_size}^3")
    rng = np.random.default_rng(config.seed)
    model = init_weights(arch, rng)
    state = AdadeltaState.fresh(model.params)
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            idx = order[s : s + config.batch_size]
            out, tape = forward(model, x[idx])
            loss = mse_loss(out, y[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}, batch starting {s}")
            grads = backward(model, tape, mse_grad(out, y[idx]))
            adadelta_step(model.params, grads, state, config.rho, config.eps)
            total += loss * len(idx)
        losses.append(total / len(x))
        log.info("epoch %d/%d loss %.6g", epoch + 1, config.epochs, losses[-1])
        if callback is not None:
            callback(epoch, losses[-1], model)
    return model, losses
