"""Computational-graph engine with graph-to-graph differentiation.

Nodes form an immutable DAG over a small closed operation set: constants,
assignable leaves, +, -, negation, *, /, non-negative integer powers, fused
affine maps (sum_i w_i x_i + b), and a lane-reduction sum. Differentiation
w.r.t. a leaf returns a NEW graph built from the same leaves, so derivatives
nest to arbitrary order; parameter gradients of a scalar output use
reverse-mode accumulation over the cached topological order.

Values are float64 throughout: a leaf holds either a python float or an
(N,)-shaped numpy array, which batches one expression over N evaluation
points ("lanes"). All arithmetic is elementwise over lanes except
reduction-sum, which contracts them. Reverse mode is lane-aware: a
scalar-valued node that receives an array adjoint sums it. Symbolic
differentiation through a reduction-sum is valid only when the summand's
derivative keeps its lane structure (true for every loss built here, which
are all residual-weighted sums); coordinate derivatives are always taken
below any reduction.

Evaluation caches node values under a global generation counter bumped by
leaf assignment, so evaluating twice without touching leaves is free and
bit-identical, and several roots sharing subgraphs share work within one
generation.
"""

from __future__ import annotations

import numpy as np

from .errors import EvalDomainError

CONST = 0
LEAF = 1
ADD = 2
SUB = 3
NEG = 4
MUL = 5
DIV = 6
POW = 7
AFFINE = 8
SUM = 9

_KIND_NAMES = ("const", "leaf", "add", "sub", "neg", "mul", "div",
               "intpow", "affine", "sum")

_generation = [0]


class Node:
    """One vertex of the computation graph.

    Construct through the module-level helpers (const, leaf, add, mul, ...)
    which fold constants and collapse zero/one operands; the raw constructor
    performs no simplification.
    """

    __slots__ = ("kind", "children", "n", "label", "val", "_gen",
                 "_adj", "_adj_gen", "_topo", "_dcache",
                 "_xs", "_ws", "_b")

    def __init__(self, kind, children=(), n=0, label=None, val=None):
        self.kind = kind
        self.children = children
        self.n = n
        self.label = label
        self.val = val
        self._gen = -1
        self._adj = None
        self._adj_gen = -1
        self._topo = None
        self._dcache = None
        self._xs = None
        self._ws = None
        self._b = None

    def set_value(self, value):
        if self.kind != LEAF:
            raise ValueError(f"can only assign leaves, not {self!r}")
        if isinstance(value, (int, float)):
            self.val = float(value)
        else:
            value = np.asarray(value, dtype=np.float64)
            if value.ndim != 1:
                raise ValueError("leaf arrays must be one-dimensional")
            self.val = value
        _generation[0] += 1
        self._gen = _generation[0]

    # operator sugar; constants auto-wrap
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __pow__(self, n):
        return intpow(self, n)

    def __repr__(self):
        tag = self.label if self.label else f"@{id(self):#x}"
        return f"<{_KIND_NAMES[self.kind]} {tag}>"


def _wrap(x):
    if isinstance(x, Node):
        return x
    return const(x)


def const(value):
    return Node(CONST, val=float(value))


def leaf(label=None):
    return Node(LEAF, label=label)


_ZERO = const(0.0)
_ONE = const(1.0)


def _is_const(node, value=None):
    if node.kind != CONST:
        return False
    return value is None or node.val == value


def add(a, b):
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if a.kind == CONST and b.kind == CONST:
        return const(a.val + b.val)
    return Node(ADD, (a, b))


def sub(a, b):
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if a is b:
        return _ZERO
    if a.kind == CONST and b.kind == CONST:
        return const(a.val - b.val)
    return Node(SUB, (a, b))


def neg(a):
    if a.kind == CONST:
        return const(-a.val)
    if a.kind == NEG:
        return a.children[0]
    return Node(NEG, (a,))


def mul(a, b):
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return _ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if a.kind == CONST and b.kind == CONST:
        return const(a.val * b.val)
    return Node(MUL, (a, b))


def div(a, b):
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0):
        return _ZERO
    if a.kind == CONST and b.kind == CONST:
        if b.val == 0.0:
            raise EvalDomainError("division by constant zero")
        return const(a.val / b.val)
    return Node(DIV, (a, b))


def intpow(base, n):
    if not isinstance(n, int) or n < 0:
        raise ValueError(f"integer-power exponent must be an int >= 0, got {n!r}")
    if n == 0:
        return _ONE
    if n == 1:
        return base
    if base.kind == CONST:
        return const(base.val ** n)
    return Node(POW, (base,), n=n)


def affine(inputs, weights, bias):
    """sum_i weights[i]*inputs[i] + bias as one fused node."""
    if len(inputs) != len(weights):
        raise ValueError("affine needs one weight per input")
    xs, ws = [], []
    for x, w in zip(inputs, weights):
        if _is_const(w, 0.0) or _is_const(x, 0.0):
            continue
        xs.append(x)
        ws.append(w)
    if not xs:
        return bias
    node = Node(AFFINE, (*xs, *ws, bias))
    node.n = len(xs)
    node._xs = tuple(xs)
    node._ws = tuple(ws)
    node._b = bias
    return node


def vsum(a):
    """Reduce an (N,)-valued node to the scalar sum of its lanes."""
    if a.kind == CONST:
        return a
    return Node(SUM, (a,))


def _build_topo(root):
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for c in node.children:
            stack.append((c, False))
    root._topo = topo
    return topo


def evaluate(root):
    """Forward pass; returns the root's value (float or (N,) array)."""
    topo = root._topo
    if topo is None:
        topo = _build_topo(root)
    gen = _generation[0]
    for node in topo:
        if node._gen == gen:
            continue
        k = node.kind
        if k == MUL:
            ch = node.children
            node.val = ch[0].val * ch[1].val
        elif k == ADD:
            ch = node.children
            node.val = ch[0].val + ch[1].val
        elif k == AFFINE:
            acc = node._b.val
            for w, x in zip(node._ws, node._xs):
                acc = acc + w.val * x.val
            node.val = acc
        elif k == DIV:
            ch = node.children
            d = ch[1].val
            if (d == 0.0) if isinstance(d, float) else not d.all():
                raise EvalDomainError(f"division by zero evaluating {node!r}")
            node.val = ch[0].val / d
        elif k == POW:
            node.val = node.children[0].val ** node.n
        elif k == SUB:
            ch = node.children
            node.val = ch[0].val - ch[1].val
        elif k == NEG:
            node.val = -node.children[0].val
        elif k == SUM:
            node.val = float(np.sum(node.children[0].val))
        elif k == LEAF:
            if node.val is None:
                raise ValueError(f"unassigned leaf {node!r}")
        # CONST carries its value from construction
        node._gen = gen
    return root.val


class ParamSet:
    """Ordered, duplicate-free collection of trainable leaves."""

    __slots__ = ("leaves",)

    def __init__(self, leaves=()):
        seen = set()
        out = []
        for p in leaves:
            if p.kind != LEAF:
                raise ValueError(f"parameters must be leaves, got {p!r}")
            if id(p) in seen:
                raise ValueError(f"duplicate parameter {p!r}")
            seen.add(id(p))
            out.append(p)
        self.leaves = tuple(out)

    def __iter__(self):
        return iter(self.leaves)

    def __len__(self):
        return len(self.leaves)

    def __getitem__(self, i):
        return self.leaves[i]

    def __add__(self, other):
        return ParamSet((*self.leaves, *other.leaves))

    def values(self):
        return np.array([p.val for p in self.leaves], dtype=np.float64)

    def assign(self, values):
        if len(values) != len(self.leaves):
            raise ValueError("value count does not match parameter count")
        for p, v in zip(self.leaves, values):
            p.set_value(float(v))


_adj_generation = [0]


def _accumulate(node, g, agen):
    if node._adj_gen != agen:
        node._adj = 0.0 if isinstance(node.val, float) else np.zeros_like(node.val)
        node._adj_gen = agen
    if isinstance(node.val, float) and isinstance(g, np.ndarray):
        g = float(np.sum(g))
    node._adj = node._adj + g


def gradient(root, params):
    """Reverse-mode d(root)/d(p) for each leaf in params, as floats.

    root must evaluate to a scalar. Equivalent to evaluating
    differentiate(root, p) for every p, at the cost of one backward pass.
    """
    if len(params) == 0:
        return []
    evaluate(root)
    if not isinstance(root.val, float):
        raise ValueError("gradient requires a scalar-valued root")
    topo = root._topo
    _adj_generation[0] += 1
    agen = _adj_generation[0]
    root._adj = 1.0
    root._adj_gen = agen
    for node in reversed(topo):
        if node._adj_gen != agen:
            continue
        a = node._adj
        k = node.kind
        if k == MUL:
            u, v = node.children
            _accumulate(u, a * v.val, agen)
            _accumulate(v, a * u.val, agen)
        elif k == ADD:
            u, v = node.children
            _accumulate(u, a, agen)
            _accumulate(v, a, agen)
        elif k == AFFINE:
            for w, x in zip(node._ws, node._xs):
                _accumulate(x, a * w.val, agen)
                _accumulate(w, a * x.val, agen)
            _accumulate(node._b, a, agen)
        elif k == DIV:
            u, v = node.children
            _accumulate(u, a / v.val, agen)
            _accumulate(v, -a * node.val / v.val, agen)
        elif k == POW:
            u = node.children[0]
            _accumulate(u, a * (node.n * u.val ** (node.n - 1)), agen)
        elif k == SUB:
            u, v = node.children
            _accumulate(u, a, agen)
            _accumulate(v, -a, agen)
        elif k == NEG:
            _accumulate(node.children[0], -a, agen)
        elif k == SUM:
            _accumulate(node.children[0], a, agen)
    out = []
    for p in params:
        if p._adj_gen == agen:
            g = p._adj
            out.append(float(np.sum(g)) if isinstance(g, np.ndarray) else g)
        else:
            out.append(0.0)
    return out


def differentiate(root, wrt):
    """Return a new graph computing d(root)/d(wrt) for a leaf wrt.

    The result shares leaves (and untouched subgraphs) with the original and
    is itself differentiable, so nesting builds higher-order derivatives. A
    root that never touches wrt yields the constant-zero graph.
    """
    if wrt.kind != LEAF:
        raise ValueError(f"derivatives are taken w.r.t. leaves, got {wrt!r}")
    return _diff(root, wrt)


def _diff(node, wrt):
    if node is wrt:
        return _ONE
    k = node.kind
    if k == CONST or k == LEAF:
        return _ZERO
    cache = node._dcache
    if cache is None:
        cache = node._dcache = {}
    hit = cache.get(wrt)
    if hit is not None:
        return hit
    ch = node.children
    if k == ADD:
        d = add(_diff(ch[0], wrt), _diff(ch[1], wrt))
    elif k == SUB:
        d = sub(_diff(ch[0], wrt), _diff(ch[1], wrt))
    elif k == NEG:
        d = neg(_diff(ch[0], wrt))
    elif k == MUL:
        u, v = ch
        d = add(mul(_diff(u, wrt), v), mul(u, _diff(v, wrt)))
    elif k == DIV:
        u, v = ch
        du, dv = _diff(u, wrt), _diff(v, wrt)
        d = sub(div(du, v), div(mul(u, dv), mul(v, v)))
    elif k == POW:
        u = ch[0]
        d = mul(mul(const(float(node.n)), intpow(u, node.n - 1)), _diff(u, wrt))
    elif k == AFFINE:
        xs, ws = [], []
        for x, w in zip(node._xs, node._ws):
            dx = _diff(x, wrt)
            if not _is_const(dx, 0.0):
                xs.append(dx)
                ws.append(w)
        d = affine(xs, ws, _ZERO) if xs else _ZERO
        for x, w in zip(node._xs, node._ws):
            dw = _diff(w, wrt)
            if not _is_const(dw, 0.0):
                d = add(d, mul(dw, x))
        d = add(d, _diff(node._b, wrt))
    elif k == SUM:
        d = vsum(_diff(ch[0], wrt))
    else:  # pragma: no cover
        raise AssertionError(f"unhandled kind {k}")
    cache[wrt] = d
    return d
