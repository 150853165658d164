"""Parameter initialization and the Adam update rule."""
from __future__ import annotations

import numpy as np

from pixelens.autodiff import Parameter


def xavier_init(shape, seed, dtype=np.float32):
    """Uniform Xavier/Glorot draw over [-b, b], b = sqrt(6 / (fan_in + fan_out)).

    2-D shapes are (fan_in, fan_out); 4-D shapes are (k, k, Cin, Cout) with
    receptive-field scaling. Other ranks have no derivable fans and are
    rejected (biases are zero-initialized at network build instead).
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) == 2:
        fan_in, fan_out = shape
    elif len(shape) == 4:
        rf = shape[0] * shape[1]
        fan_in, fan_out = rf * shape[2], rf * shape[3]
    else:
        raise ValueError(
            f"xavier_init: fan-in/fan-out not derivable from shape {shape}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, shape).astype(dtype)


def adam_step(param: Parameter, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update in place; clears the gradient.

    A zero gradient is a legitimate update: moments decay and the step count
    still advances. A missing or non-finite gradient is an error.
    """
    if param.grad is None:
        raise ValueError(f"adam_step: parameter '{param.name}' has no gradient")
    g = param.grad
    if not np.isfinite(g).all():
        raise ValueError(f"adam_step: non-finite gradient for parameter '{param.name}'")
    param.step += 1
    param.m = beta1 * param.m + (1.0 - beta1) * g
    param.v = beta2 * param.v + (1.0 - beta2) * (g * g)
    mhat = param.m / (1.0 - beta1 ** param.step)
    vhat = param.v / (1.0 - beta2 ** param.step)
    param.data = param.data - lr * mhat / (np.sqrt(vhat) + eps)
    param.grad = None
