"""Parameter dictionaries and small ELU perceptrons built on the autodiff graph."""

import numpy as np

from .diffcore import constant, ops, parameter


def bind(arrays, trainable=True):
    """Wrap a name -> array dict as graph leaves (trainable parameters or constants)."""
    make = parameter if trainable else constant
    return {k: make(a, name=k) for k, a in arrays.items()}


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def dense_params(rng, prefix, fan_in, fan_out):
    return {f"{prefix}/w": glorot(rng, fan_in, fan_out), f"{prefix}/b": np.zeros(fan_out)}


def mlp_params(rng, prefix, sizes):
    out = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        out.update(dense_params(rng, f"{prefix}/{i}", a, b))
    return out


def dense(p, prefix, x):
    return ops.linear(x, p[f"{prefix}/w"], p[f"{prefix}/b"])


def mlp(p, prefix, x, layers):
    """ELU between layers, linear output."""
    for i in range(layers):
        x = dense(p, f"{prefix}/{i}", x)
        if i < layers - 1:
            x = ops.elu(x)
    return x


def zero_like(params):
    return {k: np.zeros_like(a) for k, a in params.items()}


def copy_params(params):
    return {k: a.copy() for k, a in params.items()}
