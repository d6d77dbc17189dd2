"""Derivative operators, monomial library terms, parsing, and evaluation plans.

A DerivativeOp is a multi-index over (t, x, y, z); a LibraryTerm is a
monomial over such operators applied to the surrogate, e.g. (D_x U)^2 * U.
Terms render in descending multi-index order (highest derivative first,
plain U last), matching the reported-equation style, and parse back to the
identical canonical object.

Grammar (whitespace-insensitive):
    term   :=  factor (("*" | nothing) factor)*
    factor :=  "(" term ")" ["^" power]  |  atom ["^" power]
    atom   :=  ("D" "_" var ["^" power])*  "U"
    var    :=  t | x | y | z
Chained prefixes denote mixed partials ("D_t D_x^2 U" is one operator);
juxtaposed parenthesized factors multiply ("(D_x U)(U)").

An EvalPlan orders every operator a library needs so each one is obtained by
differentiating a predecessor of total order exactly one less; shared
operators are computed once no matter how many terms use them.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, FormatError

VARIABLES = "txyz"


def _trim(orders):
    orders = tuple(int(o) for o in orders)
    while orders and orders[-1] == 0:
        orders = orders[:-1]
    return orders


@dataclass(frozen=True)
class DerivativeOp:
    """Multi-index (order in t, order in x, order in y, order in z).

    Trailing zeros are trimmed so the same operator compares equal however
    many spatial dimensions the surrounding problem has; the empty tuple is
    the identity map (plain U).
    """

    orders: tuple

    def __init__(self, orders):
        orders = _trim(orders)
        if any(o < 0 for o in orders):
            raise ConfigError(f"negative derivative order in {orders}")
        if len(orders) > len(VARIABLES):
            raise ConfigError("at most 3 spatial dimensions (t, x, y, z)")
        object.__setattr__(self, "orders", orders)

    @property
    def total_order(self):
        return sum(self.orders)

    @property
    def n_vars(self):
        return len(self.orders)

    def order_in(self, coord):
        return self.orders[coord] if coord < len(self.orders) else 0

    def decremented(self, coord):
        padded = list(self.orders)
        if coord >= len(padded) or padded[coord] == 0:
            raise ValueError(f"{self} has no {VARIABLES[coord]}-derivative to remove")
        padded[coord] -= 1
        return DerivativeOp(tuple(padded))

    def render(self):
        if not self.orders:
            return "U"
        parts = []
        for idx, o in enumerate(self.orders):
            if o == 0:
                continue
            parts.append(f"D_{VARIABLES[idx]}" + (f"^{o}" if o > 1 else ""))
        return " ".join(parts) + " U"

    def __repr__(self):
        return f"DerivativeOp({self.render()!r})"


IDENTITY_OP = DerivativeOp(())


@dataclass(frozen=True)
class LibraryTerm:
    """Product of (DerivativeOp, power) factors, canonically sorted."""

    factors: tuple

    def __init__(self, factors):
        merged = {}
        for op, power in factors:
            power = int(power)
            if power < 1:
                raise ConfigError(f"factor power must be >= 1, got {power}")
            merged[op] = merged.get(op, 0) + power
        canon = tuple(sorted(merged.items(),
                             key=lambda f: f[0].orders, reverse=True))
        if not canon:
            raise ConfigError("a library term needs at least one factor")
        object.__setattr__(self, "factors", canon)

    @property
    def degree(self):
        return sum(p for _, p in self.factors)

    @property
    def ops(self):
        return tuple(op for op, _ in self.factors)

    @property
    def max_order(self):
        return max(op.total_order for op in self.ops)

    @property
    def n_vars(self):
        return max(op.n_vars for op in self.ops)

    def render(self):
        parts = []
        for op, power in self.factors:
            s = op.render()
            parts.append(s if power == 1 else f"({s})^{power}")
        return "*".join(parts)

    def render_grouped(self):
        """Juxtaposed parenthesized factors, reported-equation style."""
        return "".join(f"({op.render()})" + (f"^{p}" if p > 1 else "")
                       for op, p in self.factors)

    def _sort_key(self):
        expanded = []
        for op, power in sorted(self.factors, key=lambda f: f[0].orders):
            expanded.extend([op.orders] * power)
        return (self.degree, tuple(expanded))

    def __repr__(self):
        return f"LibraryTerm({self.render()!r})"


class _Parser:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def error(self, message):
        raise FormatError(f"column {self.pos + 1}: {message} "
                          f"(parsing {self.text!r})")

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch):
        if self.peek() != ch:
            self.error(f"expected {ch!r}")
        self.pos += 1

    def parse_int(self):
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos == start:
            self.error("expected an integer")
        value = int(self.text[start:self.pos])
        if value < 1:
            self.error(f"power must be >= 1, got {value}")
        return value

    def maybe_power(self):
        if self.peek() == "^":
            self.pos += 1
            return self.parse_int()
        return 1

    def parse_atom(self):
        orders = [0] * len(VARIABLES)
        while True:
            ch = self.peek()
            if ch == "U":
                self.pos += 1
                return DerivativeOp(orders)
            if ch != "D":
                self.error("expected 'U' or 'D_<var>'")
            self.pos += 1
            self.expect("_")
            var = self.peek()
            idx = VARIABLES.find(var)
            if idx < 0:
                self.error(f"unknown variable {var!r} (use t, x, y, z)")
            self.pos += 1
            orders[idx] += self.maybe_power()

    def parse_factor(self):
        if self.peek() == "(":
            self.pos += 1
            inner = self.parse_term()
            self.expect(")")
            power = self.maybe_power()
            return [(op, p * power) for op, p in inner]
        op = self.parse_atom()
        return [(op, self.maybe_power())]

    def parse_term(self):
        factors = list(self.parse_factor())
        while True:
            ch = self.peek()
            if ch == "*":
                self.pos += 1
                factors.extend(self.parse_factor())
            elif ch and ch in "(DU":
                factors.extend(self.parse_factor())
            else:
                return factors

    def parse(self):
        factors = self.parse_term()
        self.skip_ws()
        if self.pos != len(self.text):
            self.error("unexpected trailing input")
        return LibraryTerm(factors)


def parse_term(text):
    """Parse a term expression into its canonical LibraryTerm."""
    if not isinstance(text, str) or not text.strip():
        raise FormatError("empty term expression")
    return _Parser(text).parse()


def enumerate_terms(derivs, max_degree):
    """All multisets of size 1..max_degree over the given operators,
    ordered by (degree, ascending multi-index multiset)."""
    if max_degree < 1:
        raise ConfigError("max_degree must be >= 1")
    derivs = sorted(set(derivs), key=lambda op: op.orders)
    if not derivs:
        raise ConfigError("no derivative operators to enumerate over")
    out = []
    for degree in range(1, max_degree + 1):
        for combo in combinations_with_replacement(derivs, degree):
            out.append(LibraryTerm([(op, 1) for op in combo]))
    return out


class Library:
    """LHS term f0 plus ordered RHS terms f1..fK."""

    def __init__(self, lhs, rhs, n_d=None, max_order=None, max_degree=None,
                 name=None):
        rhs = tuple(rhs)
        if len(rhs) < 1:
            raise ConfigError("library needs at least one RHS term")
        if len(set(rhs)) != len(rhs):
            raise ConfigError("duplicate RHS terms")
        if lhs in rhs:
            raise ConfigError(f"LHS term {lhs.render()} also appears on the RHS")
        used = max(t.max_order for t in (lhs, *rhs))
        if max_order is None:
            max_order = used
        elif used > max_order:
            raise ConfigError(f"library uses order-{used} derivatives but "
                              f"declares max order {max_order}")
        self.lhs = lhs
        self.rhs = rhs
        self.max_order = max_order
        self.max_degree = max_degree
        self.name = name
        self.n_vars = max(t.n_vars for t in (lhs, *rhs))
        inferred_nd = max(0, self.n_vars - 1)
        if n_d is None:
            n_d = inferred_nd
        elif n_d < inferred_nd:
            raise ConfigError(f"library uses {inferred_nd} spatial "
                              f"dimension(s) but declares n_d={n_d}")
        self.n_d = n_d

    @property
    def n_rhs(self):
        return len(self.rhs)

    def all_ops(self):
        ops = set(self.lhs.ops)
        for term in self.rhs:
            ops.update(term.ops)
        return ops

    def __repr__(self):
        return (f"Library({self.name or 'unnamed'}: {self.lhs.render()} ~ "
                f"{self.n_rhs} terms)")


@dataclass(frozen=True)
class PlanStep:
    op: DerivativeOp
    predecessor: object   # DerivativeOp or None for the identity
    coord: object         # coordinate index differentiated, None for identity


def _chain_predecessor(op):
    """Derive op from the operator with its highest-indexed nonzero
    coordinate decremented; deterministic and always total-order minus one."""
    last = max(i for i, o in enumerate(op.orders) if o > 0)
    return op.decremented(last), last


def build_eval_plan(lib):
    """Cover every operator the library needs, each derived from a
    predecessor of total order exactly one less, ordered by total order."""
    closure = set()
    for op in lib.all_ops():
        while op not in closure:
            closure.add(op)
            if op.total_order == 0:
                break
            op, _ = _chain_predecessor(op)
    steps = []
    for op in sorted(closure, key=lambda o: (o.total_order, o.orders)):
        if op.total_order == 0:
            steps.append(PlanStep(op, None, None))
        else:
            pred, coord = _chain_predecessor(op)
            steps.append(PlanStep(op, pred, coord))
    return steps


def build_derivative_nodes(output, coord_leaves, plan):
    """Graphs for every planned operator applied to a network output node."""
    nodes = {}
    for step in plan:
        if step.predecessor is None:
            nodes[step.op] = output
        else:
            if step.coord >= len(coord_leaves):
                raise ConfigError(f"plan needs coordinate "
                                  f"{VARIABLES[step.coord]!r} but the problem "
                                  f"has {len(coord_leaves)} coordinates")
            nodes[step.op] = ad.differentiate(nodes[step.predecessor],
                                              coord_leaves[step.coord])
    return nodes


def build_term_node(term, deriv_nodes):
    """Product graph over a term's factors (canonical order, left fold)."""
    node = None
    for op, power in term.factors:
        factor = ad.intpow(deriv_nodes[op], power)
        node = factor if node is None else ad.mul(node, factor)
    return node


def evaluate_terms(net, points, plan, lib):
    """Evaluate f0..fK at an (N, 1+n_D) array of points.

    Returns the list of term nodes [f0, f1, ..., fK]; each node's value is
    the (N,) vector over the points and stays differentiable w.r.t. the
    network parameters.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != net.arch.n_inputs:
        raise ConfigError(f"points have shape {points.shape} but the network "
                          f"takes {net.arch.n_inputs} coordinates")
    coords = [ad.leaf(f"c{d}") for d in range(net.arch.n_inputs)]
    out = net.forward(coords)
    deriv_nodes = build_derivative_nodes(out, coords, plan)
    term_nodes = [build_term_node(t, deriv_nodes) for t in (lib.lhs, *lib.rhs)]
    for d, c in enumerate(coords):
        c.set_value(points[:, d])
    for node in term_nodes:
        ad.evaluate(node)
    return term_nodes


def load_library(path):
    """Read a library file: TOML with lhs = "<term>" and rhs = ["<term>", ...]."""
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    for key in ("lhs", "rhs"):
        if key not in doc:
            raise FormatError(f"{path}: missing {key!r}")
    lhs = parse_term(doc["lhs"])
    rhs = [parse_term(t) for t in doc["rhs"]]
    return Library(lhs, rhs,
                   max_order=doc.get("max_order"),
                   max_degree=doc.get("max_degree"),
                   name=doc.get("name"))


def save_library(lib, path):
    lines = []
    if lib.name:
        lines.append(f'name = "{lib.name}"')
    lines.append(f'lhs = "{lib.lhs.render()}"')
    lines.append("rhs = [")
    for term in lib.rhs:
        lines.append(f'    "{term.render()}",')
    lines.append("]")
    if lib.max_degree is not None:
        lines.append(f"max_degree = {lib.max_degree}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
