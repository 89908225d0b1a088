"""Reverse-mode autodiff over dense numpy tensors.

Define-by-run: calling an op computes its value immediately and records the
node so `backward` can replay the chain rule in reverse topological order.
Graphs are rebuilt per batch, which keeps variable-length behavior sequences
simple. A graph and its nodes belong to one worker at a time; the module-level
grad/NaN flags are part of that single-worker state.

Only the shapes this model needs are supported: 2-D matmul, row/column/scalar
broadcasting for add and mul, row-wise softmax. No general broadcasting.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

DEFAULT_DTYPE = np.float32

# Floor for log arguments; saturated discriminators and near-0/1 predictions
# would otherwise produce -inf.
LOG_FLOOR = 1e-12


class AutodiffError(RuntimeError):
    pass


class ShapeMismatch(AutodiffError):
    pass


class NumericsError(AutodiffError):
    pass


_grad_enabled = True
_nan_guard = True
_next_id = itertools.count()


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_nan_guard(enabled: bool) -> None:
    global _nan_guard
    _nan_guard = bool(enabled)


def nan_guard_enabled() -> bool:
    return _nan_guard


class Node:
    """One vertex of the expression DAG.

    `value` is set on construction (forward), `grad` by `backward`. Leaves are
    created with `parameter` / `constant`; everything else through the ops
    below.
    """

    __slots__ = ("id", "op", "value", "grad", "parents", "requires_grad", "_backward")

    def __init__(self, value, op, parents=(), requires_grad=False, backward=None):
        self.id = next(_next_id)
        self.op = op
        self.value = value
        self.grad = None
        self.parents = parents
        self.requires_grad = requires_grad
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op}, shape={self.value.shape})"

    # Small amount of sugar; model code mostly calls the named ops.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


def parameter(data, dtype=None) -> Node:
    return Node(_as_array(data, dtype), "parameter", requires_grad=True)


def constant(data, dtype=None) -> Node:
    return Node(_as_array(data, dtype), "input")


def _check_finite(value, op):
    if _nan_guard and not np.all(np.isfinite(value)):
        raise NumericsError(f"non-finite value produced by op '{op}'")


def _make(op, value, parents, backward_fn) -> Node:
    _check_finite(value, op)
    if not _grad_enabled:
        return Node(value, op)
    requires = any(p.requires_grad for p in parents)
    return Node(
        value,
        op,
        parents=tuple(parents),
        requires_grad=requires,
        backward=backward_fn if requires else None,
    )


def _accum(node: Node, g) -> None:
    if node.grad is None:
        node.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        node.grad = node.grad + g


# ---------------------------------------------------------------------------
# ops


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeMismatch(
            f"matmul: incompatible shapes {a.value.shape} x {b.value.shape}"
        )
    out_val = a.value @ b.value

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ b.value.T)
        if b.requires_grad:
            _accum(b, a.value.T @ g)

    return _make("matmul", out_val, (a, b), backward)


def _broadcast_kind(x_shape, y_shape):
    """Classify the (x, y) broadcast: 'same', 'row' (y is a (d,) or (1,d) vector
    over x's rows), 'col' (y is (n,1) over x's columns) or 'scalar'."""
    if x_shape == y_shape:
        return "same"
    if len(y_shape) == 0 or y_shape in ((1,), (1, 1)):
        return "scalar"
    if len(x_shape) == 2:
        if y_shape == (x_shape[1],) or y_shape == (1, x_shape[1]):
            return "row"
        if y_shape == (x_shape[0], 1):
            return "col"
    return None


def _reduce_broadcast(g, kind, y_shape):
    if kind == "same":
        return g
    if kind == "scalar":
        return np.sum(g).reshape(y_shape)
    if kind == "row":
        return np.sum(g, axis=0).reshape(y_shape)
    if kind == "col":
        return np.sum(g, axis=1, keepdims=True)
    raise AssertionError(kind)


def _binary_elementwise(op, a: Node, b: Node, fwd, da, db) -> Node:
    kind = _broadcast_kind(a.value.shape, b.value.shape)
    if kind is None:
        raise ShapeMismatch(
            f"{op}: incompatible shapes {a.value.shape} and {b.value.shape}"
        )
    out_val = fwd(a.value, b.value)

    def backward(g):
        if a.requires_grad:
            _accum(a, da(g, a.value, b.value))
        if b.requires_grad:
            _accum(b, _reduce_broadcast(db(g, a.value, b.value), kind, b.value.shape))

    return _make(op, out_val, (a, b), backward)


def add(a: Node, b: Node) -> Node:
    return _binary_elementwise(
        "add", a, b,
        lambda x, y: x + y,
        lambda g, x, y: g,
        lambda g, x, y: g,
    )


def mul(a: Node, b: Node) -> Node:
    return _binary_elementwise(
        "mul_elementwise", a, b,
        lambda x, y: x * y,
        lambda g, x, y: g * y,
        lambda g, x, y: g * x,
    )


def max_elementwise(a: Node, b: Node) -> Node:
    """Elementwise max of two same-shape tensors; ties route gradient to `a`."""
    if a.value.shape != b.value.shape:
        raise ShapeMismatch(
            f"max_elementwise: shapes {a.value.shape} != {b.value.shape}"
        )
    out_val = np.maximum(a.value, b.value)
    a_wins = a.value >= b.value

    def backward(g):
        if a.requires_grad:
            _accum(a, g * a_wins)
        if b.requires_grad:
            _accum(b, g * ~a_wins)

    return _make("max_elementwise", out_val, (a, b), backward)


def scale(a: Node, k: float) -> Node:
    k = float(k)
    out_val = a.value * k

    def backward(g):
        if a.requires_grad:
            _accum(a, g * k)

    return _make("scale", out_val, (a,), backward)


def add_const(a: Node, k: float) -> Node:
    out_val = a.value + float(k)

    def backward(g):
        if a.requires_grad:
            _accum(a, g)

    return _make("add_const", out_val, (a,), backward)


def sigmoid(a: Node) -> Node:
    # Split by sign to avoid overflow in exp.
    x = a.value
    out_val = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_val = out_val.astype(x.dtype)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * out_val * (1.0 - out_val))

    return _make("sigmoid", out_val, (a,), backward)


def tanh(a: Node) -> Node:
    out_val = np.tanh(a.value)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * (1.0 - out_val * out_val))

    return _make("tanh", out_val, (a,), backward)


def relu(a: Node) -> Node:
    out_val = np.maximum(a.value, 0)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * (a.value > 0))

    return _make("relu", out_val, (a,), backward)


def log(a: Node) -> Node:
    """Natural log with the argument floored at LOG_FLOOR."""
    clipped = np.maximum(a.value, LOG_FLOOR)
    out_val = np.log(clipped)

    def backward(g):
        if a.requires_grad:
            # Zero slope where the floor is active.
            _accum(a, g * np.where(a.value > LOG_FLOOR, 1.0 / clipped, 0.0))

    return _make("log", out_val, (a,), backward)


def softmax(a: Node) -> Node:
    """Row-wise softmax, computed with max-subtraction."""
    if a.value.ndim != 2:
        raise ShapeMismatch(f"softmax expects a matrix, got shape {a.value.shape}")
    shifted = a.value - np.max(a.value, axis=1, keepdims=True)
    ex = np.exp(shifted)
    out_val = ex / np.sum(ex, axis=1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = np.sum(g * out_val, axis=1, keepdims=True)
            _accum(a, out_val * (g - dot))

    return _make("softmax", out_val, (a,), backward)


def _sum_like(op, a: Node, axis, np_fn, grad_fn):
    out_val = np_fn(a.value, axis)
    if axis is None:
        out_val = np.asarray(out_val).reshape(())

    def backward(g):
        if a.requires_grad:
            _accum(a, grad_fn(g, a.value))

    return _make(op, out_val, (a,), backward)


def tsum(a: Node, axis=None) -> Node:
    if axis is None:
        return _sum_like("sum", a, None, lambda v, ax: np.sum(v),
                         lambda g, v: np.broadcast_to(g, v.shape).astype(v.dtype))
    return _sum_like("sum", a, axis, lambda v, ax: np.sum(v, axis=ax, keepdims=True),
                     lambda g, v: np.broadcast_to(g, v.shape).astype(v.dtype))


def tmean(a: Node, axis=None) -> Node:
    n = a.value.size if axis is None else a.value.shape[axis]
    if axis is None:
        return _sum_like("mean", a, None, lambda v, ax: np.mean(v),
                         lambda g, v: np.broadcast_to(g / n, v.shape).astype(v.dtype))
    return _sum_like("mean", a, axis, lambda v, ax: np.mean(v, axis=ax, keepdims=True),
                     lambda g, v: np.broadcast_to(g / n, v.shape).astype(v.dtype))


def concat(nodes, axis: int = 1) -> Node:
    if not nodes:
        raise ShapeMismatch("concat of empty node list")
    out_val = np.concatenate([n.value for n in nodes], axis=axis)
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for i, n in enumerate(nodes):
            if n.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offsets[i], offsets[i + 1])
                _accum(n, g[tuple(sl)])

    return _make("concat", out_val, tuple(nodes), backward)


def gather_rows(table: Node, indices) -> Node:
    """Select rows of a matrix by integer index; gradients scatter-add back."""
    idx = np.asarray(indices)
    if idx.ndim != 1:
        raise ShapeMismatch(f"gather_rows expects 1-D indices, got shape {idx.shape}")
    if table.value.ndim != 2:
        raise ShapeMismatch("gather_rows expects a matrix table")
    if idx.size and (idx.min() < 0 or idx.max() >= table.value.shape[0]):
        raise ShapeMismatch(
            f"gather_rows: index out of range for table with "
            f"{table.value.shape[0]} rows"
        )
    out_val = table.value[idx]

    def backward(g):
        if table.requires_grad:
            acc = np.zeros_like(table.value)
            np.add.at(acc, idx, g)
            _accum(table, acc)

    return _make("gather_rows", out_val, (table,), backward)


def grad_reverse(a: Node, reversal_scale: float = 1.0) -> Node:
    """Identity forward; backward multiplies the incoming gradient by -scale."""
    if reversal_scale < 0:
        raise ValueError("grad_reverse scale must be nonnegative")
    k = float(reversal_scale)
    out_val = a.value

    def backward(g):
        if a.requires_grad:
            _accum(a, g * (-k))

    return _make("grad_reverse", out_val, (a,), backward)


def stop_gradient(a: Node) -> Node:
    """Identity forward; no gradient propagates to the input."""
    return Node(a.value, "stop_gradient")


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root: Node):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.id not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Populate `.grad` on every node the scalar `loss` depends on."""
    if loss.value.size != 1:
        raise ShapeMismatch(f"backward requires a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.value)
    for node in reversed(_topo_order(loss)):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grads_for(loss: Node, leaves: dict) -> dict:
    """Backward pass returning {name: grad} with zeros for unused leaves."""
    backward(loss)
    return {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
        for name, leaf in leaves.items()
    }


# ---------------------------------------------------------------------------
# finite-difference oracle


def finite_diff_check(build, params: dict, epsilon: float = 1e-4) -> dict:
    """Compare backward gradients against central finite differences.

    `build` takes {name: Node} leaves and returns a scalar loss node; it is
    re-invoked for every perturbation. All arithmetic runs in float64 so the
    oracle stays sharp regardless of the production dtype. Returns the max
    relative error per parameter, with max(|a|, |b|, 1e-8) in the denominator.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    base = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    leaves = {k: parameter(v.copy(), dtype=np.float64) for k, v in base.items()}
    analytic = grads_for(build(leaves), leaves)

    def eval_loss(values):
        with no_grad():
            nodes = {k: constant(v, dtype=np.float64) for k, v in values.items()}
            return float(build(nodes).value)

    errors = {}
    for name, value in base.items():
        flat = value.reshape(-1)
        grad_flat = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = eval_loss(base)
            flat[i] = orig - epsilon
            down = eval_loss(base)
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(abs(numeric), abs(grad_flat[i]), 1e-8)
            worst = max(worst, abs(numeric - grad_flat[i]) / denom)
        errors[name] = worst
    return errors
