"""Eager reverse-mode automatic differentiation over float64 arrays.

Every primitive evaluates its value immediately and, when any input needs a
gradient, records a closure that maps the output cotangent to input
cotangents. The parent links form the tape; ``grad`` sweeps it in reverse
topological order and then the whole graph can be dropped.
"""

import itertools

import numpy as np

from .. import kernels

__all__ = [
    "Node", "ShapeError", "GraphError", "constant", "parameter", "as_node",
    "add", "sub", "mul", "neg", "matmul", "linear", "tanh", "sigmoid", "softplus",
    "elu", "exp", "log", "square", "sum", "mean", "concat", "slice_", "reshape",
    "transpose", "stack", "stop_gradient", "gaussian_sample", "gaussian_logpdf", "gaussian_kl",
    "gru_cell", "lambda_return", "grad", "PRIMITIVES",
]

_ids = itertools.count()


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible input shapes."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes " + ", ".join(str(s) for s in self.shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class GraphError(ValueError):
    pass


class Node:
    """One value in the computation graph."""

    __slots__ = ("id", "value", "op", "parents", "requires_grad", "backward", "name")
    __array_ufunc__ = None  # make ``ndarray <op> Node`` defer to Node

    def __init__(self, value, op="const", parents=(), requires_grad=False, backward=None, name=None):
        self.id = next(_ids)
        self.value = value
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad
        self.backward = backward
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.value.shape}, id={self.id})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def constant(value, name=None):
    return Node(np.asarray(value, dtype=np.float64), name=name)


def parameter(value, name=None):
    return Node(np.asarray(value, dtype=np.float64), "param", (), True, None, name)


def as_node(x):
    return x if isinstance(x, Node) else constant(x)


def _result(op, value, parents, backward):
    if any(p.requires_grad for p in parents):
        return Node(value, op, parents, True, backward)
    return Node(value, op, parents)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# elementwise binary ------------------------------------------------------------

def add(a, b):
    a, b = as_node(a), as_node(b)
    _broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", a.value + b.value, (a, b), backward)


def sub(a, b):
    a, b = as_node(a), as_node(b)
    _broadcast("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result("sub", a.value - b.value, (a, b), backward)


def mul(a, b):
    a, b = as_node(a), as_node(b)
    _broadcast("mul", a, b)

    def backward(g):
        ga = _unbroadcast(g * b.value, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.value, b.shape) if b.requires_grad else None
        return ga, gb

    return _result("mul", a.value * b.value, (a, b), backward)


def neg(a):
    a = as_node(a)
    return _result("neg", -a.value, (a,), lambda g: (-g,))


def matmul(a, b):
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape, "expects (n, k) @ (k, m)")

    def backward(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = a.value.T @ g if b.requires_grad else None
        return ga, gb

    return _result("matmul", a.value @ b.value, (a, b), backward)


def linear(x, w, b):
    """Affine map ``x @ w + b`` as a single node."""
    x, w, b = as_node(x), as_node(w), as_node(b)
    if (x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0]
            or b.shape != (w.shape[1],)):
        raise ShapeError("linear", x.shape, w.shape, b.shape)

    def backward(g):
        gx = g @ w.value.T if x.requires_grad else None
        gw = x.value.T @ g if w.requires_grad else None
        gb = g.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _result("linear", x.value @ w.value + b.value, (x, w, b), backward)


# elementwise unary -------------------------------------------------------------

def tanh(a):
    a = as_node(a)
    out = np.tanh(a.value)
    return _result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a):
    a = as_node(a)
    out = _sigmoid(a.value)
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def _rowwise(kernel, x):
    # kernels take C-contiguous 2-D input
    flat = np.ascontiguousarray(x, dtype=np.float64).reshape(-1, x.shape[-1] if x.ndim else 1)
    out, slope = kernel(flat)
    return out.reshape(x.shape), slope.reshape(x.shape)


def softplus(a):
    a = as_node(a)
    out, slope = _rowwise(kernels.softplus, a.value)
    return _result("softplus", out, (a,), lambda g: (g * slope,))


def elu(a):
    a = as_node(a)
    out, slope = _rowwise(kernels.elu, a.value)
    return _result("elu", out, (a,), lambda g: (g * slope,))


def exp(a):
    a = as_node(a)
    out = np.exp(a.value)
    return _result("exp", out, (a,), lambda g: (g * out,))


def log(a):
    a = as_node(a)
    return _result("log", np.log(a.value), (a,), lambda g: (g / a.value,))


def square(a):
    a = as_node(a)
    return _result("square", a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


# reductions and structure ------------------------------------------------------

def _norm_axis(op, axis, ndim, shape):
    if axis is None:
        return None
    ax = axis + ndim if axis < 0 else axis
    if not 0 <= ax < ndim:
        raise ShapeError(op, shape, detail=f"axis {axis} out of range")
    return ax


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    a = as_node(a)
    ax = _norm_axis("sum", axis, a.value.ndim, a.shape)
    shape = a.shape

    def backward(g):
        if ax is not None:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return _result("sum", np.sum(a.value, axis=ax), (a,), backward)


def mean(a, axis=None):
    a = as_node(a)
    ax = _norm_axis("mean", axis, a.value.ndim, a.shape)
    shape = a.shape
    count = a.value.size if ax is None else shape[ax]

    def backward(g):
        if ax is not None:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _result("mean", np.mean(a.value, axis=ax), (a,), backward)


def concat(nodes, axis=-1):
    nodes = tuple(as_node(n) for n in nodes)
    try:
        value = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(n.shape for n in nodes)) from None
    bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result("concat", value, nodes, backward)


def slice_(a, index):
    a = as_node(a)
    try:
        value = a.value[index]
    except IndexError:
        raise ShapeError("slice", a.shape, detail=f"index {index!r}") from None
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _result("slice", np.ascontiguousarray(value), (a,), backward)


def reshape(a, shape):
    a = as_node(a)
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    old = a.shape
    return _result("reshape", value, (a,), lambda g: (g.reshape(old),))


def transpose(a):
    a = as_node(a)
    if a.value.ndim != 2:
        raise ShapeError("transpose", a.shape, detail="expects a matrix")
    return _result("transpose", np.ascontiguousarray(a.value.T), (a,), lambda g: (g.T,))


def stack(nodes, axis=0):
    nodes = tuple(as_node(n) for n in nodes)
    try:
        value = np.stack([n.value for n in nodes], axis=axis)
    except ValueError:
        raise ShapeError("stack", *(n.shape for n in nodes)) from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(nodes)))

    return _result("stack", value, nodes, backward)


def stop_gradient(a):
    """Pass the value through; no cotangent flows back."""
    a = as_node(a)
    return Node(a.value, "stop_gradient", (a,))


# distributions -----------------------------------------------------------------

def gaussian_sample(mean_, std, noise):
    """Reparameterized draw ``mean + std * noise`` with ``noise`` held constant."""
    mean_, std = as_node(mean_), as_node(std)
    noise = np.asarray(noise, dtype=np.float64)
    if mean_.shape != std.shape or noise.shape != mean_.shape:
        raise ShapeError("gaussian_sample", mean_.shape, std.shape, noise.shape)

    def backward(g):
        return g, (g * noise if std.requires_grad else None)

    return _result("gaussian_sample", mean_.value + std.value * noise, (mean_, std), backward)


def _check_rows(op, *nodes):
    first = nodes[0].shape
    if len(first) != 2 or any(n.shape != first for n in nodes):
        raise ShapeError(op, *(n.shape for n in nodes), detail="expects equal (n, d) shapes")


def gaussian_logpdf(x, mean_, std):
    """Diagonal-Gaussian log-density summed over the last axis: (n, d) -> (n,)."""
    x, mean_, std = as_node(x), as_node(mean_), as_node(std)
    _check_rows("gaussian_logpdf", x, mean_, std)
    xv, mv, sv = (np.ascontiguousarray(n.value) for n in (x, mean_, std))

    def backward(g):
        return kernels.gauss_logpdf_backward(np.ascontiguousarray(g), xv, mv, sv)

    return _result("gaussian_logpdf", kernels.gauss_logpdf(xv, mv, sv), (x, mean_, std), backward)


def gaussian_kl(mean_q, std_q, mean_p, std_p):
    """KL(q || p) between diagonal Gaussians, summed over the last axis."""
    nodes = tuple(as_node(n) for n in (mean_q, std_q, mean_p, std_p))
    _check_rows("gaussian_kl", *nodes)
    vals = tuple(np.ascontiguousarray(n.value) for n in nodes)

    def backward(g):
        return kernels.gauss_kl_backward(np.ascontiguousarray(g), *vals)

    return _result("gaussian_kl", kernels.gauss_kl(*vals), nodes, backward)


# recurrent and return primitives -------------------------------------------------

def gru_cell(x, h, w_x, w_h, b):
    """Gated recurrent cell, gate order [reset, update, candidate].

    x: (n, k), h: (n, d), w_x: (k, 3d), w_h: (d, 3d), b: (3d,).
    """
    x, h, w_x, w_h, b = (as_node(n) for n in (x, h, w_x, w_h, b))
    n_, d = h.shape if h.value.ndim == 2 else (None, None)
    if (d is None or x.value.ndim != 2 or x.shape[0] != n_ or w_x.shape != (x.shape[1], 3 * d)
            or w_h.shape != (d, 3 * d) or b.shape != (3 * d,)):
        raise ShapeError("gru_cell", x.shape, h.shape, w_x.shape, w_h.shape, b.shape)
    hv = np.ascontiguousarray(h.value)
    px = x.value @ w_x.value + b.value
    ph = hv @ w_h.value
    h_new, r, z, c = kernels.gru_forward(px, ph, hv)

    def backward(g):
        dpx, dph, dh = kernels.gru_backward(np.ascontiguousarray(g), hv, r, z, c, ph)
        gx = dpx @ w_x.value.T if x.requires_grad else None
        gwx = x.value.T @ dpx if w_x.requires_grad else None
        gb = dpx.sum(axis=0) if b.requires_grad else None
        gh = dh + dph @ w_h.value.T if h.requires_grad else None
        gwh = hv.T @ dph if w_h.requires_grad else None
        return gx, gh, gwx, gwh, gb

    return _result("gru_cell", h_new, (x, h, w_x, w_h, b), backward)


def lambda_return(rewards, values, gamma, lam):
    """Batched lambda-returns: rewards (n, H), values (n, H+1) -> (n, H)."""
    rewards, values = as_node(rewards), as_node(values)
    if (rewards.value.ndim != 2 or values.value.ndim != 2 or rewards.shape[0] != values.shape[0]
            or values.shape[1] != rewards.shape[1] + 1 or rewards.shape[1] < 1):
        raise ShapeError("lambda_return", rewards.shape, values.shape, detail="expects (n, H) and (n, H+1)")
    gamma, lam = float(gamma), float(lam)
    out = kernels.lambda_return(np.ascontiguousarray(rewards.value), np.ascontiguousarray(values.value), gamma, lam)

    def backward(g):
        return kernels.lambda_return_backward(np.ascontiguousarray(g), gamma, lam)

    return _result("lambda_return", out, (rewards, values), backward)


PRIMITIVES = (
    "add", "sub", "mul", "neg", "matmul", "linear", "tanh", "sigmoid", "softplus", "elu",
    "exp", "log", "square", "sum", "mean", "concat", "slice", "reshape", "transpose", "stack",
    "stop_gradient", "gaussian_sample", "gaussian_logpdf", "gaussian_kl", "gru_cell",
    "lambda_return",
)


# reverse sweep -------------------------------------------------------------------

def _topo_order(root):
    order = []
    state = {}  # id -> 1 while on the DFS stack, 2 once finished
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            state[node.id] = 2
            order.append(node)
            continue
        mark = state.get(node.id)
        if mark == 2:
            continue
        if mark == 1:
            raise GraphError(f"cycle detected at {node!r}")
        state[node.id] = 1
        stack_.append((node, True))
        for p in node.parents:
            if not p.requires_grad:
                continue
            pm = state.get(p.id)
            if pm == 1:
                raise GraphError(f"cycle detected at {p!r}")
            if pm is None:
                stack_.append((p, False))
    return order


def grad(loss, params):
    """Gradients of a scalar ``loss`` with respect to each node in ``params``.

    Returns ``{param.id: array}``; parameters the loss does not reach get zeros.
    """
    if not isinstance(loss, Node):
        raise GraphError("loss must be a Node")
    if loss.value.size != 1 or loss.value.ndim > 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    wanted = {p.id for p in params}
    result = {p.id: None for p in params}
    if loss.requires_grad:
        grads = {loss.id: np.ones_like(loss.value)}
        for node in reversed(_topo_order(loss)):
            g = grads.pop(node.id, None)
            if g is None:
                continue
            if node.id in wanted:
                result[node.id] = g
            if node.backward is None:
                continue
            for p, pg in zip(node.parents, node.backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(p.id)
                grads[p.id] = pg if prev is None else prev + pg
    for p in params:
        g = result[p.id]
        if g is None:
            result[p.id] = np.zeros_like(p.value)
        elif g.shape != p.shape:
            result[p.id] = np.broadcast_to(g, p.shape).copy()
    return result

