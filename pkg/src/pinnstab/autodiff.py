"""Reverse-mode automatic differentiation on an explicit, eagerly evaluated tape.

A :class:`Tape` is an append-only list of nodes. Each primitive computes its
value as soon as it is recorded; :meth:`Tape.backward` then walks the nodes in
decreasing id order and applies each primitive's adjoint rule. Node ids are
plain ints. :class:`Var` wraps an id with arithmetic operators for writing
PDE residuals.

Values are numpy arrays in the tape's precision (``"f32"`` or ``"f64"``).
Constants are non-differentiable leaves: subgraphs built only from constants
are skipped by ``backward`` and report a zero adjoint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend

PRECISIONS = {"f32": np.float32, "f64": np.float64}

PRIMITIVES = (
    "constant",
    "parameter",
    "add",
    "subtract",
    "multiply",
    "matmul",
    "scale",
    "broadcast_add",
    "tanh",
    "square",
    "sum",
    "mean",
    "negate",
)


class ShapeError(ValueError):
    """Operand shapes do not satisfy a primitive's shape rule."""


class TapeError(RuntimeError):
    """Misuse of a tape (unknown primitive, bad root, gradient before backward)."""


def resolve_dtype(precision):
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise ValueError(f"precision must be one of {sorted(PRECISIONS)}, got {precision!r}") from None


@dataclass
class Node:
    id: int
    op: str
    parents: tuple
    value: np.ndarray
    attr: object = None
    requires_grad: bool = False


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


def _fwd_add(vals, attr):
    _same_shape("add", *vals)
    return vals[0] + vals[1]


def _fwd_subtract(vals, attr):
    _same_shape("subtract", *vals)
    return vals[0] - vals[1]


def _fwd_multiply(vals, attr):
    _same_shape("multiply", *vals)
    return vals[0] * vals[1]


def _fwd_matmul(vals, attr):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: operands must be 2-D, got {a.shape} and {b.shape}")
    if attr:  # a @ b.T
        if a.shape[1] != b.shape[1]:
            raise ShapeError(f"matmul: inner dims differ for {a.shape} @ {b.shape}^T")
        return a @ b.T
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")
    return a @ b


def _fwd_scale(vals, attr):
    return vals[0] * vals[0].dtype.type(attr)


def _fwd_broadcast_add(vals, attr):
    a, b = vals
    if a.ndim != 2 or b.ndim != 1 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"broadcast_add: bias {b.shape} does not match row width of {a.shape}")
    return a + b


def _fwd_tanh(vals, attr):
    return np.tanh(vals[0])


def _fwd_square(vals, attr):
    return vals[0] * vals[0]


def _fwd_sum(vals, attr):
    return np.asarray(vals[0].sum(), dtype=vals[0].dtype)


def _fwd_mean(vals, attr):
    if vals[0].size == 0:
        raise ShapeError("mean: empty operand")
    return np.asarray(vals[0].mean(), dtype=vals[0].dtype)


def _fwd_negate(vals, attr):
    return -vals[0]


_FORWARD = {
    "add": (2, _fwd_add),
    "subtract": (2, _fwd_subtract),
    "multiply": (2, _fwd_multiply),
    "matmul": (2, _fwd_matmul),
    "scale": (1, _fwd_scale),
    "broadcast_add": (2, _fwd_broadcast_add),
    "tanh": (1, _fwd_tanh),
    "square": (1, _fwd_square),
    "sum": (1, _fwd_sum),
    "mean": (1, _fwd_mean),
    "negate": (1, _fwd_negate),
}


class Tape:
    """Append-only record of primitive applications.

    Parameters
    ----------
    precision : {"f64", "f32"}
        Dtype of every value and adjoint on this tape.
    """

    def __init__(self, precision="f64"):
        self.precision = precision
        self.dtype = resolve_dtype(precision)
        self.nodes = []
        self.parameter_ids = set()
        self._adjoints = None
        self._owned = None
        self._ones = {}
        self._bindings = []

    def __len__(self):
        return len(self.nodes)

    # -- recording ---------------------------------------------------------

    def _append(self, op, parents, value, attr=None, requires_grad=False):
        node = Node(len(self.nodes), op, parents, value, attr, requires_grad)
        self.nodes.append(node)
        self._adjoints = None
        return node.id

    def _leaf_value(self, value):
        arr = np.array(value, dtype=self.dtype, copy=True, order="C")
        return arr

    def constant(self, value):
        return self._append("constant", (), self._leaf_value(value))

    def parameter(self, value):
        nid = self._append("parameter", (), self._leaf_value(value), requires_grad=True)
        self.parameter_ids.add(nid)
        return nid

    def apply(self, op, inputs, attr=None):
        """Record primitive ``op`` on node ids ``inputs``; returns the new id."""
        if op == "constant":
            return self.constant(attr)
        if op == "parameter":
            return self.parameter(attr)
        try:
            arity, fwd = _FORWARD[op]
        except KeyError:
            raise TapeError(f"unknown primitive {op!r}") from None
        inputs = tuple(int(i) for i in inputs)
        if len(inputs) != arity:
            raise TapeError(f"{op} takes {arity} inputs, got {len(inputs)}")
        n = len(self.nodes)
        for i in inputs:
            if not 0 <= i < n:
                raise TapeError(f"{op}: node id {i} not on this tape")
        if op == "scale" and attr is None:
            raise TapeError("scale needs a constant factor")
        parents = [self.nodes[i] for i in inputs]
        value = fwd([p.value for p in parents], attr)
        grad = any(p.requires_grad for p in parents)
        return self._append(op, inputs, value, attr, grad)

    def add(self, a, b):
        return self.apply("add", (a, b))

    def subtract(self, a, b):
        return self.apply("subtract", (a, b))

    def multiply(self, a, b):
        return self.apply("multiply", (a, b))

    def matmul(self, a, b, trans_b=False):
        return self.apply("matmul", (a, b), bool(trans_b))

    def scale(self, a, factor):
        return self.apply("scale", (a,), float(factor))

    def broadcast_add(self, a, bias):
        return self.apply("broadcast_add", (a, bias))

    def tanh(self, a):
        return self.apply("tanh", (a,))

    def square(self, a):
        return self.apply("square", (a,))

    def sum(self, a):
        return self.apply("sum", (a,))

    def mean(self, a):
        return self.apply("mean", (a,))

    def negate(self, a):
        return self.apply("negate", (a,))

    def ones(self, shape):
        """Shared all-ones constant of ``shape`` (one node per shape per tape)."""
        shape = tuple(shape)
        nid = self._ones.get(shape)
        if nid is None:
            nid = self.constant(np.ones(shape))
            self._ones[shape] = nid
        return nid

    def value(self, nid):
        return self.nodes[nid].value

    def var(self, nid):
        return Var(self, nid)

    # -- reverse pass ------------------------------------------------------

    def _slot(self, j):
        """Writable adjoint buffer for node j and whether it already holds data."""
        buf = self._adjoints[j]
        if buf is None:
            buf = np.empty_like(self.nodes[j].value)
            self._adjoints[j] = buf
            self._owned[j] = True
            return buf, False
        if not self._owned[j]:
            buf = buf.copy()
            self._adjoints[j] = buf
            self._owned[j] = True
        return buf, True

    def _give(self, j, g):
        """Add ``g`` to node j's adjoint, aliasing it when j has none yet."""
        if self._adjoints[j] is None:
            self._adjoints[j] = g
            self._owned[j] = False
        else:
            buf, _ = self._slot(j)
            buf += g

    def _kernel(self, j, kernel, g, other):
        buf, acc = self._slot(j)
        kernel(g.reshape(-1), other.reshape(-1), buf.reshape(-1), acc)

    def backward(self, root):
        """Fill every node's adjoint with d(root)/d(node).

        Adjoints are reset first, so calling this twice on one tape is safe
        but recomputes everything.
        """
        nodes = self.nodes
        if not 0 <= root < len(nodes):
            raise TapeError(f"root {root} not on this tape")
        rv = nodes[root].value
        if rv.size != 1:
            raise TapeError(f"backward root must be scalar-valued, got shape {rv.shape}")
        self._adjoints = [None] * len(nodes)
        self._owned = [False] * len(nodes)
        self._adjoints[root] = np.ones_like(rv)
        self._owned[root] = True
        k = _backend.kernels
        adj = self._adjoints
        for i in range(root, -1, -1):
            g = adj[i]
            node = nodes[i]
            if g is None or not node.requires_grad or not node.parents:
                continue
            op = node.op
            ps = node.parents
            pn = [nodes[p] for p in ps]
            if op == "add":
                for p, n_ in zip(ps, pn):
                    if n_.requires_grad:
                        self._give(p, g)
            elif op == "subtract":
                a, b = ps
                if pn[0].requires_grad:
                    self._give(a, g)
                if pn[1].requires_grad:
                    buf, acc = self._slot(b)
                    k.axpy(-1.0, g.reshape(-1), buf.reshape(-1), acc)
            elif op == "multiply":
                a, b = ps
                if pn[0].requires_grad:
                    self._kernel(a, k.mul_backward, g, pn[1].value)
                if pn[1].requires_grad:
                    self._kernel(b, k.mul_backward, g, pn[0].value)
            elif op == "matmul":
                a, b = ps
                A, B = pn[0].value, pn[1].value
                if pn[0].requires_grad:
                    contrib = g @ B if node.attr else g @ B.T
                    self._give(a, contrib)
                if pn[1].requires_grad:
                    contrib = g.T @ A if node.attr else A.T @ g
                    self._give(b, contrib)
            elif op == "scale":
                buf, acc = self._slot(ps[0])
                k.axpy(node.attr, g.reshape(-1), buf.reshape(-1), acc)
            elif op == "broadcast_add":
                a, b = ps
                if pn[0].requires_grad:
                    self._give(a, g)
                if pn[1].requires_grad:
                    self._give(b, g.sum(axis=0))
            elif op == "tanh":
                self._kernel(ps[0], k.tanh_backward, g, node.value)
            elif op == "square":
                self._kernel(ps[0], k.square_backward, g, pn[0].value)
            elif op in ("sum", "mean"):
                s = g.reshape(()).item()
                if op == "mean":
                    s /= pn[0].value.size
                buf, acc = self._slot(ps[0])
                if acc:
                    buf += buf.dtype.type(s)
                else:
                    buf.fill(s)
            elif op == "negate":
                buf, acc = self._slot(ps[0])
                k.axpy(-1.0, g.reshape(-1), buf.reshape(-1), acc)
            else:  # pragma: no cover - guarded at record time
                raise TapeError(f"no adjoint rule for {op!r}")

    def adjoint(self, nid):
        if self._adjoints is None:
            raise TapeError("backward has not run on this tape")
        g = self._adjoints[nid]
        if g is None:
            return np.zeros_like(self.nodes[nid].value)
        return g

    def grad_of(self, param):
        """Adjoint of a registered parameter node (dL/dW or dL/db)."""
        if param not in self.parameter_ids:
            raise TapeError(f"node {param} is not a registered parameter")
        return self.adjoint(param)


def primitive_apply(tape, op, inputs, attr=None):
    return tape.apply(op, inputs, attr)


def backward(tape, root):
    tape.backward(root)


def grad_of(tape, param):
    return tape.grad_of(param)


class Var:
    """Operator-overloading handle on a tape node.

    Mixing with floats or arrays records the foreign operand as a constant.
    """

    __slots__ = ("tape", "id")
    __array_ufunc__ = None  # make ndarray <op> Var defer to Var's reflected ops

    def __init__(self, tape, nid):
        self.tape = tape
        self.id = nid

    @property
    def value(self):
        return self.tape.nodes[self.id].value

    @property
    def shape(self):
        return self.value.shape

    def _lift(self, other):
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise TapeError("operands live on different tapes")
            return other.id
        arr = np.asarray(other, dtype=self.tape.dtype)
        if arr.shape != self.shape:
            arr = np.broadcast_to(arr, self.shape)
        return self.tape.constant(arr)

    def _new(self, nid):
        return Var(self.tape, nid)

    def __add__(self, other):
        return self._new(self.tape.add(self.id, self._lift(other)))

    __radd__ = __add__

    def __sub__(self, other):
        return self._new(self.tape.subtract(self.id, self._lift(other)))

    def __rsub__(self, other):
        return self._new(self.tape.subtract(self._lift(other), self.id))

    def __mul__(self, other):
        if np.isscalar(other):
            return self._new(self.tape.scale(self.id, other))
        return self._new(self.tape.multiply(self.id, self._lift(other)))

    __rmul__ = __mul__

    def __neg__(self):
        return self._new(self.tape.negate(self.id))

    def square(self):
        return self._new(self.tape.square(self.id))

    def mean(self):
        return self._new(self.tape.mean(self.id))

    def sum(self):
        return self._new(self.tape.sum(self.id))

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"


def analytic_backprop_2layer(params, x, r, arch="plain"):
    """Hand-derived gradients of ``sum ||r - N(x)||^2`` for a one-hidden-layer net.

    Test oracle for the tape: seeds the output error with ``-2 (r - q2)``,
    multiplies by the tanh derivative on the hidden layer, and forms each
    weight gradient as the (batch-summed) outer product of the layer's
    pre-activation gradient with the layer input. The output layer is
    affine, so its derivative factor is the identity.

    Returns ``[(dW1, db1), (dW2, db2)]``.
    """
    if str(getattr(arch, "value", arch)) != "plain":
        raise ValueError(f"two-layer oracle covers the plain architecture only, got {arch!r}")
    layers = params.layers
    if len(layers) != 2:
        raise ValueError(f"two-layer oracle needs exactly 2 layers, got {len(layers)}")
    (W1, b1), (W2, b2) = ((ly.W, ly.b) for ly in layers)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    h1 = x @ W1.T + b1
    q1 = np.tanh(h1)
    q2 = q1 @ W2.T + b2
    dh2 = -2.0 * (r - q2)
    dW2 = dh2.T @ q1
    db2 = dh2.sum(axis=0)
    dh1 = (1.0 - q1 * q1) * (dh2 @ W2)
    dW1 = dh1.T @ x
    db1 = dh1.sum(axis=0)
    return [(dW1, db1), (dW2, db2)]
