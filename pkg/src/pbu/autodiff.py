"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Operations accept :class:`Tensor` objects or plain array-likes. A result is
recorded on a :class:`GradTape` only when at least one operand lives on that
tape; with untaped operands every op degrades to ordinary numpy evaluation,
which is what finite-difference probes use.

    >>> tape = GradTape()
    >>> theta = tape.leaf([3.0])
    >>> y = reduce_sum(square(theta))
    >>> backward(y, tape)[0]
    array([6.])
"""

import numpy as np

from .errors import ContractError, ProbeError, ShapeError


class Tensor:
    __slots__ = ("data", "tape", "index", "parents")

    def __init__(self, data, tape=None, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.parents = parents  # tuple of (Tensor, vjp)
        self.index = None
        if tape is not None:
            tape._record(self)

    @property
    def shape(self):
        return list(self.data.shape)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, taped={self.tape is not None})"

    def item(self):
        return float(self.data)


class GradTape:
    """Ordered record of every taped tensor.

    ``visit_order`` holds the node indices touched by the most recent
    :func:`backward` call, in the order they were processed.
    """

    def __init__(self):
        self.nodes = []
        self.leaves = []
        self.visit_order = []

    def _record(self, tensor):
        tensor.index = len(self.nodes)
        self.nodes.append(tensor)

    def leaf(self, value):
        t = Tensor(np.array(value, dtype=np.float64), tape=self)
        self.leaves.append(t)
        return t

    def __len__(self):
        return len(self.nodes)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*operands):
    tape = None
    for t in operands:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("operands recorded on different tapes")
            tape = t.tape
    return tape


def _result(value, operands, vjps):
    tape = _tape_of(*operands)
    if tape is None:
        return Tensor(value)
    parents = tuple((t, f) for t, f in zip(operands, vjps) if t.tape is not None)
    return Tensor(value, tape=tape, parents=parents)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, name):
    try:
        return np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast {a.shape} with {b.shape}") from None


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    A, B = a.data, b.data
    return _result(A @ B, (a, b), (lambda g: g @ B.T, lambda g: A.T @ g))


def add(a, b):
    """Elementwise sum with numpy broadcasting (row-vector bias onto a batch)."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.data.shape, b.data.shape
    return _result(
        a.data + b.data,
        (a, b),
        (lambda g: _unbroadcast(g, sa), lambda g: _unbroadcast(g, sb)),
    )


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.data.shape, b.data.shape
    return _result(
        a.data - b.data,
        (a, b),
        (lambda g: _unbroadcast(g, sa), lambda g: -_unbroadcast(g, sb)),
    )


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    A, B = a.data, b.data
    return _result(
        A * B,
        (a, b),
        (lambda g: _unbroadcast(g * B, A.shape), lambda g: _unbroadcast(g * A, B.shape)),
    )


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), (lambda g: g * c,))


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), (lambda g: g * mask,))


def square(a):
    a = _as_tensor(a)
    A = a.data
    return _result(A * A, (a,), (lambda g: 2.0 * A * g,))


def reduce_sum(a):
    a = _as_tensor(a)
    shape = a.data.shape
    return _result(np.sum(a.data), (a,), (lambda g: np.broadcast_to(g, shape).copy(),))


def log_softmax(a):
    """Log-softmax along the last axis, stabilised by max subtraction."""
    a = _as_tensor(a)
    if a.data.ndim == 0 or a.data.shape[-1] == 0:
        raise ShapeError(f"log_softmax: empty or scalar input of shape {a.shape}")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    probs = np.exp(out)
    return _result(
        out, (a,), (lambda g: g - probs * g.sum(axis=-1, keepdims=True),)
    )


def take_block(theta, offset, shape):
    """Reshape ``theta[offset:offset+prod(shape)]`` into ``shape``."""
    theta = _as_tensor(theta)
    if theta.data.ndim != 1:
        raise ShapeError(f"take_block: expected a flat vector, got {theta.shape}")
    size = int(np.prod(shape))
    if offset < 0 or offset + size > theta.data.shape[0]:
        raise ShapeError(
            f"take_block: block {list(shape)} at {offset} exceeds {theta.shape}"
        )
    m = theta.data.shape[0]

    def vjp(g):
        out = np.zeros(m)
        out[offset:offset + size] = g.reshape(-1)
        return out

    return _result(theta.data[offset:offset + size].reshape(shape), (theta,), (vjp,))


# --------------------------------------------------------------------------
# reverse sweep
# --------------------------------------------------------------------------

def backward(root, tape):
    """Gradients of scalar ``root`` w.r.t. every leaf of ``tape``, in leaf order.

    Leaves with no path to ``root`` get exact zeros.
    """
    if root.data.size != 1 or root.data.ndim != 0:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if root.tape is None:
        tape.visit_order = []
        return [np.zeros_like(leaf.data) for leaf in tape.leaves]
    if root.tape is not tape:
        raise ContractError("root was not recorded on this tape")
    adjoints = {root.index: np.ones_like(root.data)}
    visited = []
    for node in reversed(tape.nodes[: root.index + 1]):
        g = adjoints.pop(node.index, None)
        if g is None:
            continue
        visited.append(node.index)
        if not node.parents:
            adjoints[node.index] = g  # leaf: keep for collection
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            prev = adjoints.get(parent.index)
            adjoints[parent.index] = contrib if prev is None else prev + contrib
    tape.visit_order = visited
    return [adjoints.get(leaf.index, np.zeros_like(leaf.data)) for leaf in tape.leaves]


def value_and_grad(fn, theta):
    """Evaluate scalar ``fn(theta_tensor)`` and its gradient w.r.t. flat ``theta``."""
    tape = GradTape()
    t = tape.leaf(np.asarray(theta, dtype=np.float64))
    out = fn(t)
    return out.item(), backward(out, tape)[0]


def grad_check(loss_fn, theta, h=1e-5, analytic=None):
    """Max over coordinates of ``|analytic - central| / max(1, |analytic|)``.

    ``loss_fn`` maps a Tensor (taped or not) to a scalar Tensor. ``analytic``
    overrides the reverse-mode gradient, e.g. to check a hand-written one.
    """
    if h <= 0:
        raise ContractError("grad_check step h must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    if analytic is None:
        _, analytic = value_and_grad(loss_fn, theta)
    analytic = np.asarray(analytic, dtype=np.float64)
    worst = 0.0
    for j in range(theta.size):
        probe = theta.copy()
        probe[j] = theta[j] + h
        fp = loss_fn(Tensor(probe)).item()
        probe[j] = theta[j] - h
        fm = loss_fn(Tensor(probe)).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ProbeError(f"non-finite loss when probing coordinate {j}", j)
        central = (fp - fm) / (2.0 * h)
        err = abs(analytic[j] - central) / max(1.0, abs(analytic[j]))
        worst = max(worst, err)
    return worst
