"""Tape-based reverse-mode differentiation over numpy float64 arrays.

Forward values are computed eagerly; every recorded node keeps references
to its parents so a single reversed sweep over the creation order (a valid
topological order) accumulates gradients.  The op set is the minimum the
surrogate model, the multi-step rollout losses, and the conditional-
Gaussian filter recursion need, including a differentiable SPD solve for
the gain.  Batched variants (leading batch axes) exist so minibatches are
one graph, not one graph per sample.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, ShapeError


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _swap(a):
    return np.swapaxes(a, -1, -2)


class Node:
    """One tape entry: an eagerly computed value plus its backward rule."""

    __slots__ = ("value", "parents", "kind", "aux", "param", "name", "_tape")

    def __init__(self, value, parents, kind, tape, aux=None, param=False, name=None):
        self.value = value
        self.parents = parents
        self.kind = kind
        self.aux = aux
        self.param = param
        self.name = name
        self._tape = tape

    @property
    def shape(self):
        return self.value.shape

    # light operator sugar used throughout the model code
    def __add__(self, other):
        return self._tape.record("add", self, other)

    def __sub__(self, other):
        return self._tape.record("sub", self, other)

    def __matmul__(self, other):
        return self._tape.record("matmul", self, other)


class Tape:
    """Ordered record of nodes; confined to one execution context."""

    def __init__(self):
        self.nodes = []

    def leaf(self, value, param=False, name=None):
        node = Node(np.asarray(value, dtype=np.float64), (), "leaf", self,
                    param=param, name=name)
        self.nodes.append(node)
        return node

    def param(self, value, name=None):
        return self.leaf(value, param=True, name=name)

    def const(self, value):
        return self.leaf(value, param=False)

    def record(self, kind, *inputs, **attrs):
        try:
            fwd = _FORWARD[kind]
        except KeyError:
            raise ShapeError(f"unknown op kind {kind!r}") from None
        values = [n.value for n in inputs]
        value, aux = fwd(values, attrs)
        node = Node(value, tuple(inputs), kind, self, aux=(aux, attrs))
        self.nodes.append(node)
        return node

    def backward(self, root):
        """Reverse sweep from scalar ``root``; returns {node: gradient}.

        Every node marked ``param`` appears in the result, with a zero
        gradient when the root does not depend on it.
        """
        if root.value.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
        grads = {id(root): np.ones_like(root.value)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None or node.kind == "leaf":
                if g is not None and node.kind == "leaf":
                    grads[id(node)] = g  # keep leaf grads
                continue
            aux, attrs = node.aux
            parent_grads = _BACKWARD[node.kind](
                g, node.value, [p.value for p in node.parents], aux, attrs)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        out = {}
        for node in self.nodes:
            if node.param:
                out[node] = grads.get(id(node), np.zeros_like(node.value))
            elif id(node) in grads and node.kind == "leaf":
                out[node] = grads[id(node)]
        return out


# ---------------------------------------------------------------------------
# op table: forward(values, attrs) -> (value, aux)
#           backward(g, out, values, aux, attrs) -> per-parent grads


def _fwd_add(v, a):
    return v[0] + v[1], None


def _bwd_add(g, out, v, aux, a):
    return (_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape))


def _fwd_sub(v, a):
    return v[0] - v[1], None


def _bwd_sub(g, out, v, aux, a):
    return (_unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape))


def _fwd_mul(v, a):
    return v[0] * v[1], None


def _bwd_mul(g, out, v, aux, a):
    return (_unbroadcast(g * v[1], v[0].shape), _unbroadcast(g * v[0], v[1].shape))


def _fwd_smul(v, a):
    return v[0] * a["c"], None


def _bwd_smul(g, out, v, aux, a):
    return (g * a["c"],)


def _fwd_matmul(v, a):
    x, y = v
    if x.ndim < 2 or y.ndim < 2:
        raise ShapeError(f"matmul needs rank>=2 operands, got {x.shape} and {y.shape}")
    if x.shape[-1] != y.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {x.shape} vs {y.shape}")
    return x @ y, None


def _bwd_matmul(g, out, v, aux, a):
    x, y = v
    return (_unbroadcast(g @ _swap(y), x.shape), _unbroadcast(_swap(x) @ g, y.shape))


def _fwd_bmatvec(v, a):
    m, x = v
    if m.shape[-1] != x.shape[-1]:
        raise ShapeError(f"bmatvec dims differ: {m.shape} vs {x.shape}")
    return np.einsum("...ij,...j->...i", m, x), None


def _bwd_bmatvec(g, out, v, aux, a):
    m, x = v
    gm = np.einsum("...i,...j->...ij", g, x)
    gx = np.einsum("...ij,...i->...j", m, g)
    return (_unbroadcast(gm, m.shape), _unbroadcast(gx, x.shape))


def _fwd_tanh(v, a):
    return np.tanh(v[0]), None


def _bwd_tanh(g, out, v, aux, a):
    return (g * (1.0 - out * out),)


def _fwd_square(v, a):
    return v[0] * v[0], None


def _bwd_square(g, out, v, aux, a):
    return (2.0 * g * v[0],)


def _fwd_softplus(v, a):
    return np.logaddexp(0.0, v[0]), None


def _bwd_softplus(g, out, v, aux, a):
    return (g / (1.0 + np.exp(-v[0])),)


def _fwd_sum(v, a):
    return np.asarray(v[0].sum()), None


def _bwd_sum(g, out, v, aux, a):
    return (np.broadcast_to(g, v[0].shape).copy(),)


def _fwd_mean(v, a):
    return np.asarray(v[0].mean()), None


def _bwd_mean(g, out, v, aux, a):
    return (np.broadcast_to(g / v[0].size, v[0].shape).copy(),)


def _fwd_slice(v, a):
    x = v[0]
    axis, start, length = a["axis"], a["start"], a["length"]
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + length)
    return np.ascontiguousarray(x[tuple(sl)]), None


def _bwd_slice(g, out, v, aux, a):
    x = v[0]
    axis, start, length = a["axis"], a["start"], a["length"]
    gx = np.zeros_like(x)
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + length)
    gx[tuple(sl)] = g
    return (gx,)


def _fwd_concat(v, a):
    return np.concatenate(v, axis=a["axis"]), [x.shape[a["axis"]] for x in v]


def _bwd_concat(g, out, v, aux, a):
    splits = np.cumsum(aux[:-1])
    return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=a["axis"]))


def _fwd_transpose(v, a):
    if v[0].ndim < 2:
        raise ShapeError("transpose needs rank >= 2")
    return _swap(v[0]).copy(), None


def _bwd_transpose(g, out, v, aux, a):
    return (_swap(g).copy(),)


def _fwd_reshape(v, a):
    return v[0].reshape(a["shape"]).copy(), None


def _bwd_reshape(g, out, v, aux, a):
    return (g.reshape(v[0].shape),)


def _fwd_diag(v, a):
    x = v[0]
    n = x.shape[-1]
    out = np.zeros(x.shape + (n,))
    idx = np.arange(n)
    out[..., idx, idx] = x
    return out, None


def _bwd_diag(g, out, v, aux, a):
    return (np.ascontiguousarray(np.diagonal(g, axis1=-2, axis2=-1)),)


def _fwd_solve_spd(v, a):
    m, b = v
    if m.shape[-1] != m.shape[-2]:
        raise ShapeError(f"solve_spd needs square matrices, got {m.shape}")
    if b.shape[-2] != m.shape[-1]:
        raise ShapeError(f"solve_spd rhs rows {b.shape} mismatch {m.shape}")
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"solve_spd: matrix not SPD ({e})") from None
    x = np.linalg.solve(_swap(chol), np.linalg.solve(chol, b))
    return x, chol


def _bwd_solve_spd(g, out, v, aux, a):
    chol = aux
    grad_b = np.linalg.solve(_swap(chol), np.linalg.solve(chol, g))
    gm = -grad_b @ _swap(out)
    gm = 0.5 * (gm + _swap(gm))
    return (_unbroadcast(gm, v[0].shape), _unbroadcast(grad_b, v[1].shape))


_FORWARD = {
    "add": _fwd_add, "sub": _fwd_sub, "mul": _fwd_mul, "smul": _fwd_smul,
    "matmul": _fwd_matmul, "bmatvec": _fwd_bmatvec, "tanh": _fwd_tanh,
    "square": _fwd_square, "softplus": _fwd_softplus, "sum": _fwd_sum,
    "mean": _fwd_mean, "slice": _fwd_slice, "concat": _fwd_concat,
    "transpose": _fwd_transpose, "reshape": _fwd_reshape, "diag": _fwd_diag,
    "solve_spd": _fwd_solve_spd,
}

_BACKWARD = {
    "add": _bwd_add, "sub": _bwd_sub, "mul": _bwd_mul, "smul": _bwd_smul,
    "matmul": _bwd_matmul, "bmatvec": _bwd_bmatvec, "tanh": _bwd_tanh,
    "square": _bwd_square, "softplus": _bwd_softplus, "sum": _bwd_sum,
    "mean": _bwd_mean, "slice": _bwd_slice, "concat": _bwd_concat,
    "transpose": _bwd_transpose, "reshape": _bwd_reshape, "diag": _bwd_diag,
    "solve_spd": _bwd_solve_spd,
}

OP_KINDS = tuple(_FORWARD)


# functional helpers --------------------------------------------------------

def add(a, b):
    return a._tape.record("add", a, b)


def sub(a, b):
    return a._tape.record("sub", a, b)


def mul(a, b):
    return a._tape.record("mul", a, b)


def smul(a, c):
    return a._tape.record("smul", a, c=float(c))


def matmul(a, b):
    return a._tape.record("matmul", a, b)


def bmatvec(m, x):
    return m._tape.record("bmatvec", m, x)


def tanh(a):
    return a._tape.record("tanh", a)


def square(a):
    return a._tape.record("square", a)


def softplus(a):
    return a._tape.record("softplus", a)


def sum_all(a):
    return a._tape.record("sum", a)


def mean_all(a):
    return a._tape.record("mean", a)


def slice_axis(a, axis, start, length):
    return a._tape.record("slice", a, axis=axis, start=start, length=length)


def concat(nodes, axis):
    return nodes[0]._tape.record("concat", *nodes, axis=axis)


def transpose(a):
    return a._tape.record("transpose", a)


def reshape(a, shape):
    return a._tape.record("reshape", a, shape=tuple(shape))


def diag(a):
    return a._tape.record("diag", a)


def solve_spd(a, b):
    return a._tape.record("solve_spd", a, b)


def symmetrize(a):
    return smul(add(a, transpose(a)), 0.5)


def global_norm(grads):
    """L2 norm over a collection of gradient arrays."""
    total = 0.0
    for g in grads:
        total += float((g * g).sum())
    return float(np.sqrt(total))


def clip_by_global_norm(grads, max_norm):
    """Scale all grads down so the global norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm
