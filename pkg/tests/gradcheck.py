"""Central finite-difference oracle for the autoencoder gradients."""

import numpy as np

from hullforge.net import ModelWeights, forward, mse_loss
from hullforge.net.model import param_shapes


def kink_free_model(arch, seed=0):
    """float64 weights whose ReLU pattern is fixed per unit.

    Even-indexed output units get positive weights and biases (always active
    on non-negative inputs); odd-indexed ones get negative weights and biases
    (always inactive).  The final layer is all-positive.  Small parameter
    perturbations cannot flip any ReLU, so finite differences see a smooth
    function while both gradient branches of every ReLU are exercised.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(arch).items():
        sign = np.where(np.arange(shape[0]) % 2 == 0, 1.0, -1.0).reshape((-1,) + (1,) * (len(shape) - 1))
        if name.startswith("out"):
            sign = np.ones_like(sign)
        if name.endswith(".b"):
            params[name] = sign.ravel() * rng.uniform(0.3, 0.6, shape)
        else:
            params[name] = sign * rng.uniform(0.01, 0.3, shape)
    return ModelWeights(arch, params)


def relu_masks(tape):
    pres = [tape.z_pre, tape.h_pre] + list(tape.enc_pre) + list(tape.dec_pre)
    return [p > 0 for p in pres]


def finite_difference_check(model, x, target, grads, h=1e-3):
    """Worst relative error between ``grads`` and central differences of the MSE loss.

    Returns ``(worst, per_param, masks_stable)``; ``masks_stable`` is False if any
    perturbation flipped a ReLU (the difference quotient then straddles a kink).
    """
    _, tape = forward(model, x)
    base = relu_masks(tape)
    stable = True
    per_param = {}
    for name, v in model.params.items():
        fd = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            old = v[idx]
            v[idx] = old + h
            yp, tp = forward(model, x)
            v[idx] = old - h
            ym, tm = forward(model, x)
            v[idx] = old
            for a, b, c in zip(relu_masks(tp), relu_masks(tm), base):
                stable &= bool(np.array_equal(a, c) and np.array_equal(b, c))
            fd[idx] = (mse_loss(yp, target) - mse_loss(ym, target)) / (2 * h)
        g = grads[name]
        den = np.maximum(np.abs(fd), np.abs(g))
        rel = np.where(den > 0, np.abs(fd - g) / np.where(den > 0, den, 1.0), 0.0)
        per_param[name] = float(rel.max())
    return max(per_param.values()), per_param, stable
