"""Central finite-difference oracle for reverse-mode gradients."""

import numpy as np

from .graph import constant, grad, parameter


def finite_difference_check(f, point, eps=1e-5, coords=None):
    """Max relative error between ``grad`` and central differences.

    ``f`` maps a list of Nodes (one per array in ``point``) to a scalar Node.
    The error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    ``coords`` optionally restricts the check to ``[(array_index, flat_index), ...]``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    point = [np.array(p, dtype=np.float64) for p in point]
    nodes = [parameter(p) for p in point]
    loss = f(nodes)
    if not np.all(np.isfinite(loss.value)):
        raise FloatingPointError("f is not finite at the base point")
    g = grad(loss, nodes)
    analytic = [g[n.id] for n in nodes]

    def evaluate(arrays):
        out = float(np.asarray(f([constant(a) for a in arrays]).value))
        if not np.isfinite(out):
            raise FloatingPointError("f is not finite at a perturbed point")
        return out

    if coords is None:
        coords = [(i, j) for i, p in enumerate(point) for j in range(p.size)]
    worst = 0.0
    for i, j in coords:
        base = point[i].reshape(-1)[j]
        shifted = [p.copy() for p in point]
        flat = shifted[i].reshape(-1)
        flat[j] = base + eps
        up = evaluate(shifted)
        flat[j] = base - eps
        down = evaluate(shifted)
        numeric = (up - down) / (2.0 * eps)
        a = analytic[i].reshape(-1)[j]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
