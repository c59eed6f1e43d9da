"""Reverse-mode automatic differentiation over batched numpy arrays.

The engine is a define-by-run tape: every operation on a ``Var`` records its
inputs and a backward closure, and ``backward`` replays the tape in reverse
topological order to accumulate gradients into the leaves. Values are plain
float64 numpy arrays, batched over evaluation points, so a single recorded
op covers the whole batch.

All operations also accept plain numbers / ndarrays and fall through to
numpy when no ``Var`` is involved. Code written against these ops therefore
runs in two modes with one implementation: a fast constant path (no tape)
and a differentiable path (tape). That is what lets the physics residual be
evaluated both on analytic test fields and inside the training loss.

Input derivatives (the jets consumed by the residual) are produced by
forward propagation of first and second directional derivatives through the
network layers; see ``network.forward_jet``. Because that propagation is
itself written in these ops, reverse accumulation differentiates *through*
the jet computation, which is required since the training loss contains
second spatial derivatives of the network output.

Reductions use a sorted pairwise summation so loss values are bit-identical
under permutation of the point set, and every accumulation here happens in
a fixed order, which makes whole-loss evaluation reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Var", "Jet", "backward", "grad", "tanh", "where", "narrow", "row",
    "pairwise_mean", "pairwise_sum", "as_value",
]


class Var:
    """A node on the tape: a float64 value plus gradient plumbing."""

    __slots__ = ("value", "grad", "_parents", "_bw")
    # keep numpy from consuming Var operands elementwise; arithmetic then
    # falls back to the reflected methods below
    __array_ufunc__ = None

    def __init__(self, value, parents=(), bw=None):
        self.value = value
        self.grad = None
        self._parents = parents
        self._bw = bw

    def __repr__(self):
        return f"Var(value={self.value!r})"

    # arithmetic delegates to the module-level ops so constants fold
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, exponent):
        return powc(self, exponent)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def _isvar(x):
    return type(x) is Var


def as_value(x):
    """Underlying ndarray/scalar of ``x`` whether or not it is on the tape."""
    return x.value if _isvar(x) else x


def _unbroadcast(g, shape):
    # reduce a broadcasted gradient back to the operand's shape
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _acc(var, g):
    g = _unbroadcast(np.asarray(g), np.shape(var.value))
    if var.grad is None:
        var.grad = g
    else:
        var.grad = var.grad + g


def add(a, b):
    if not (_isvar(a) or _isvar(b)):
        return a + b
    av, bv = as_value(a), as_value(b)
    out = Var(av + bv)

    def bw():
        g = out.grad
        if _isvar(a):
            _acc(a, g)
        if _isvar(b):
            _acc(b, g)

    out._parents = tuple(x for x in (a, b) if _isvar(x))
    out._bw = bw
    return out


def sub(a, b):
    if not (_isvar(a) or _isvar(b)):
        return a - b
    av, bv = as_value(a), as_value(b)
    out = Var(av - bv)

    def bw():
        g = out.grad
        if _isvar(a):
            _acc(a, g)
        if _isvar(b):
            _acc(b, -g)

    out._parents = tuple(x for x in (a, b) if _isvar(x))
    out._bw = bw
    return out


def mul(a, b):
    if not (_isvar(a) or _isvar(b)):
        return a * b
    av, bv = as_value(a), as_value(b)
    out = Var(av * bv)

    def bw():
        g = out.grad
        if _isvar(a):
            _acc(a, g * bv)
        if _isvar(b):
            _acc(b, g * av)

    out._parents = tuple(x for x in (a, b) if _isvar(x))
    out._bw = bw
    return out


def div(a, b):
    if not (_isvar(a) or _isvar(b)):
        return a / b
    av, bv = as_value(a), as_value(b)
    out = Var(av / bv)

    def bw():
        g = out.grad
        if _isvar(a):
            _acc(a, g / bv)
        if _isvar(b):
            _acc(b, -g * out.value / bv)

    out._parents = tuple(x for x in (a, b) if _isvar(x))
    out._bw = bw
    return out


def neg(a):
    if not _isvar(a):
        return -a
    out = Var(-a.value, (a,))

    def bw():
        _acc(a, -out.grad)

    out._bw = bw
    return out


def powc(a, c):
    """``a ** c`` for a constant real exponent ``c``."""
    if not _isvar(a):
        return a ** c
    av = a.value
    out = Var(av ** c, (a,))
    if c == 2.0:
        def bw():
            _acc(a, out.grad * (2.0 * av))
    else:
        def bw():
            _acc(a, out.grad * (c * av ** (c - 1.0)))

    out._bw = bw
    return out


def matmul(a, b):
    """Matrix product; operands may carry leading stack axes, in which case
    numpy's batched matmul semantics apply and gradients sum the extra
    leading axes back out."""
    if not (_isvar(a) or _isvar(b)):
        return a @ b
    av, bv = as_value(a), as_value(b)
    out = Var(av @ bv)

    def bw():
        g = out.grad
        if _isvar(a):
            ga = g @ np.swapaxes(bv, -1, -2)
            if ga.ndim > av.ndim:
                ga = ga.sum(axis=tuple(range(ga.ndim - av.ndim)))
            _acc(a, ga)
        if _isvar(b):
            gb = np.swapaxes(av, -1, -2) @ g
            if gb.ndim > bv.ndim:
                gb = gb.sum(axis=tuple(range(gb.ndim - bv.ndim)))
            _acc(b, gb)

    out._parents = tuple(x for x in (a, b) if _isvar(x))
    out._bw = bw
    return out


def tanh(a):
    if not _isvar(a):
        return np.tanh(a)
    t = np.tanh(a.value)
    out = Var(t, (a,))

    def bw():
        _acc(a, out.grad * (1.0 - t * t))

    out._bw = bw
    return out


def where(mask, a, b):
    """Branch select. ``mask`` is a plain boolean array; gradients route to
    the branch that was taken, the other side sees zero."""
    if not (_isvar(a) or _isvar(b)):
        return np.where(mask, a, b)
    av, bv = as_value(a), as_value(b)
    out = Var(np.where(mask, av, bv))

    def bw():
        g = out.grad
        if _isvar(a):
            _acc(a, np.where(mask, g, 0.0))
        if _isvar(b):
            _acc(b, np.where(mask, 0.0, g))

    out._parents = tuple(x for x in (a, b) if _isvar(x))
    out._bw = bw
    return out


def narrow(a, n):
    """First ``n`` slices of ``a`` along axis 0; backward zero-pads."""
    if not _isvar(a):
        return a[:n]
    av = a.value
    out = Var(av[:n], (a,))

    def bw():
        g = np.zeros_like(av)
        g[:n] = out.grad
        _acc(a, g)

    out._bw = bw
    return out


def row(a, i):
    """Slice ``a[i]`` along axis 0; backward scatters into a zero array."""
    if not _isvar(a):
        return a[i]
    av = a.value
    out = Var(av[i], (a,))

    def bw():
        g = np.zeros_like(av)
        g[i] = out.grad
        _acc(a, g)

    out._bw = bw
    return out


def pairwise_sum(values):
    """Sum of all elements, computed by sorting and pairwise folding.

    The sort makes the result a function of the multiset of values only, so
    the sum is bit-identical under any permutation of the input; the
    pairwise fold keeps rounding error at the level of numpy's own
    summation.
    """
    v = np.sort(np.asarray(values, dtype=np.float64), axis=None)
    n = v.size
    if n == 0:
        return 0.0
    width = 1 << (n - 1).bit_length()
    buf = np.zeros(width, dtype=np.float64)
    buf[:n] = v
    while buf.size > 1:
        buf = buf[0::2] + buf[1::2]
    return float(buf[0])


def pairwise_mean(a):
    """Permutation-invariant mean over all elements of ``a``."""
    if not _isvar(a):
        a = np.asarray(a)
        return pairwise_sum(a) / a.size
    av = np.asarray(a.value)
    n = av.size
    out = Var(pairwise_sum(av) / n, (a,))

    def bw():
        _acc(a, np.full(av.shape, out.grad / n))

    out._bw = bw
    return out


def backward(root):
    """Accumulate d(root)/d(leaf) into ``.grad`` of every tape node.

    ``root`` must hold a scalar value. Traversal is an iterative post-order
    so deep tapes cannot hit the recursion limit, and the replay order is a
    pure function of the recorded graph, which keeps gradient bits
    reproducible across identical runs.
    """
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.float64(1.0)
    for node in reversed(order):
        if node._bw is not None:
            node._bw()


def grad(f, arrays):
    """Gradient of a tape-evaluable scalar function of a list of arrays.

    ``f`` receives a list of leaf Vars (same order as ``arrays``) and must
    return a scalar built from the ops in this module. Returns
    ``(value, grads)`` where grads align with the inputs; an input the
    output does not depend on gets a zero gradient of matching shape.
    """
    leaves = [Var(np.asarray(a, dtype=np.float64)) for a in arrays]
    out = f(leaves)
    if not _isvar(out):
        # output independent of every input
        return out, [np.zeros_like(v.value) for v in leaves]
    backward(out)
    grads = [v.grad if v.grad is not None else np.zeros_like(v.value)
             for v in leaves]
    return out.value, grads


@dataclass
class Jet:
    """Value and input derivatives of a scalar field at a batch of points.

    ``value``: psi
    ``d1``:    (psi_x, psi_y, psi_z, psi_t)
    ``d2``:    (psi_xx, psi_yy, psi_zz)  -- pure second derivatives only

    Entries are floats, arrays, or Vars depending on how the jet was built.
    """

    value: object
    d1: tuple
    d2: tuple
