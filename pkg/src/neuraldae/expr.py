"""Scalar expression graphs with sparse first and second derivatives.

Expressions are built from variables and constants through operator
overloading.  Nodes are hash-consed, so structurally identical
subexpressions are shared, and operations whose children are all constants
are folded at construction time.

A list of output expressions is frozen into an :class:`ExprFunction`, which
fixes the variable count, computes Jacobian and Hessian sparsity patterns
and generates straight-line numpy code for

* values,
* Jacobian entries (reverse mode, one sweep per output),
* Hessian-of-Lagrangian entries (forward-over-reverse, tangents restricted
  to the variables that take part in a nonlinear interaction).

Every generated routine works on a batch of ``P`` evaluation points at once:
inputs are arrays of shape ``(P, n_vars)`` and the results have a leading
axis of length ``P``.  This lets one template (for instance the right-hand
side of an ODE) be evaluated at all collocation points with a single call.
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DomainError",
    "Expr",
    "ExprFunction",
    "Graph",
    "constant",
    "exp",
    "hessian_of_lagrangian",
    "log",
    "sigmoid",
    "softplus",
    "sqrt",
    "swish",
    "tanh",
]

# Arguments of log, sqrt-derivatives and divisors closer to zero than this are
# reported as domain errors instead of producing inf/nan.
DOMAIN_EPS = 1e-300

CONST, VAR, ADD, MUL, POW, DIV, NEG, EXP, LOG, SQRT, TANH = range(11)
OP_NAMES = ("const", "var", "add", "mul", "pow", "div", "neg", "exp", "log", "sqrt", "tanh")
_UNARY = {EXP: math.exp, LOG: math.log, SQRT: math.sqrt, TANH: math.tanh}


class DomainError(ValueError):
    """Evaluation outside the domain of log, sqrt or division."""

    def __init__(self, node, op, message=None):
        self.node = node
        self.op = op
        super().__init__(message or f"{op} argument outside its domain at node {node}")


class Graph:
    """Container owning expression nodes.

    Parameters
    ----------
    n_vars : int
        Number of variables the graph may reference.
    """

    def __init__(self, n_vars):
        self.n_vars = int(n_vars)
        self.ops = []
        self.children = []
        self.payload = []
        self._table = {}

    # node construction -------------------------------------------------
    def _node(self, op, children=(), payload=None):
        key = (op, children, payload)
        idx = self._table.get(key)
        if idx is None:
            idx = len(self.ops)
            self.ops.append(op)
            self.children.append(children)
            self.payload.append(payload)
            self._table[key] = idx
        return Expr(self, idx)

    def var(self, i):
        i = int(i)
        if not 0 <= i < self.n_vars:
            raise IndexError(f"variable index {i} outside [0, {self.n_vars})")
        return self._node(VAR, (), i)

    def vars(self):
        return [self.var(i) for i in range(self.n_vars)]

    def const(self, value):
        value = float(value)
        if value == 0.0:
            value = 0.0  # drop the sign of -0.0 so both share one node
        return self._node(CONST, (), value)

    def __len__(self):
        return len(self.ops)

    # helpers used by Expr ----------------------------------------------
    def _is_const(self, i):
        return self.ops[i] == CONST

    def _value(self, i):
        return self.payload[i]

    def add(self, terms):
        flat = []
        c = 0.0
        for t in terms:
            t = self._lift(t)
            if self.ops[t.id] == CONST:
                c += self.payload[t.id]
            elif self.ops[t.id] == ADD:
                for ch in self.children[t.id]:
                    if self.ops[ch] == CONST:
                        c += self.payload[ch]
                    else:
                        flat.append(ch)
            else:
                flat.append(t.id)
        if c != 0.0:
            flat.append(self.const(c).id)
        if not flat:
            return self.const(0.0)
        if len(flat) == 1:
            return Expr(self, flat[0])
        return self._node(ADD, tuple(sorted(flat)))

    def mul(self, a, b):
        a, b = self._lift(a), self._lift(b)
        ca, cb = self.ops[a.id] == CONST, self.ops[b.id] == CONST
        if ca and cb:
            return self.const(self.payload[a.id] * self.payload[b.id])
        if ca or cb:
            k, e = (a, b) if ca else (b, a)
            kv = self.payload[k.id]
            if kv == 0.0:
                return self.const(0.0)
            if kv == 1.0:
                return e
            if kv == -1.0:
                return self.neg(e)
        return self._node(MUL, tuple(sorted((a.id, b.id))))

    def div(self, a, b):
        a, b = self._lift(a), self._lift(b)
        if self.ops[b.id] == CONST:
            bv = self.payload[b.id]
            if abs(bv) <= DOMAIN_EPS:
                raise DomainError(b.id, "div", "division by a zero constant")
            if self.ops[a.id] == CONST:
                return self.const(self.payload[a.id] / bv)
            return self.mul(a, 1.0 / bv)
        if self.ops[a.id] == CONST and self.payload[a.id] == 0.0:
            return self.const(0.0)
        return self._node(DIV, (a.id, b.id))

    def neg(self, a):
        a = self._lift(a)
        if self.ops[a.id] == CONST:
            return self.const(-self.payload[a.id])
        if self.ops[a.id] == NEG:
            return Expr(self, self.children[a.id][0])
        return self._node(NEG, (a.id,))

    def pow(self, a, n):
        a = self._lift(a)
        if n == 0.5:
            return self.unary(SQRT, a)
        if not float(n).is_integer():
            raise TypeError("only integer exponents and 0.5 are supported")
        n = int(n)
        if n == 0:
            return self.const(1.0)
        if n == 1:
            return a
        if self.ops[a.id] == CONST:
            return self.const(self.payload[a.id] ** n)
        if n < 0:
            return self.div(1.0, self.pow(a, -n))
        return self._node(POW, (a.id,), n)

    def unary(self, op, a):
        a = self._lift(a)
        if self.ops[a.id] == CONST:
            v = self.payload[a.id]
            if op == LOG and v <= DOMAIN_EPS:
                raise DomainError(a.id, "log", "log of a nonpositive constant")
            if op == SQRT and v < 0.0:
                raise DomainError(a.id, "sqrt", "sqrt of a negative constant")
            return self.const(_UNARY[op](v))
        return self._node(op, (a.id,))

    def _lift(self, x):
        if isinstance(x, Expr):
            if x.graph is not self:
                raise ValueError("cannot combine expressions from different graphs")
            return x
        if isinstance(x, numbers.Real):
            return self.const(x)
        raise TypeError(f"cannot use {type(x).__name__} in an expression")


class Expr:
    """Handle to a node of a :class:`Graph`."""

    __slots__ = ("graph", "id")
    __array_priority__ = 1000  # let numpy scalars defer to Expr operators

    def __init__(self, graph, idx):
        self.graph = graph
        self.id = idx

    @property
    def op(self):
        return OP_NAMES[self.graph.ops[self.id]]

    def is_constant(self):
        return self.graph.ops[self.id] == CONST

    def value(self):
        """Value of a constant node."""
        if not self.is_constant():
            raise ValueError("expression is not constant")
        return self.graph.payload[self.id]

    def __add__(self, o):
        return self.graph.add((self, o))

    __radd__ = __add__

    def __sub__(self, o):
        return self.graph.add((self, self.graph.neg(o)))

    def __rsub__(self, o):
        return self.graph.add((o, self.graph.neg(self)))

    def __mul__(self, o):
        return self.graph.mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return self.graph.div(self, o)

    def __rtruediv__(self, o):
        return self.graph.div(o, self)

    def __neg__(self):
        return self.graph.neg(self)

    def __pos__(self):
        return self

    def __pow__(self, n):
        return self.graph.pow(self, n)

    def __repr__(self):
        return f"Expr({self.op}#{self.id})"

    # hash-consing makes node identity structural identity
    def same(self, other):
        return isinstance(other, Expr) and other.graph is self.graph and other.id == self.id


def _graph_of(args):
    for a in args:
        if isinstance(a, Expr):
            return a.graph
    return None


def _unary(op, fn):
    def apply(a):
        if isinstance(a, Expr):
            return a.graph.unary(op, a)
        return fn(float(a))

    return apply


exp = _unary(EXP, math.exp)
log = _unary(LOG, math.log)
sqrt = _unary(SQRT, math.sqrt)
tanh = _unary(TANH, math.tanh)


def constant(graph, value):
    return graph.const(value)


def softplus(a):
    """``log(1 + exp(a))``."""
    return log(1.0 + exp(a))


def swish(a):
    """``a * sigmoid(a)`` written as ``a/2 * tanh(a/2) + a/2``."""
    return 0.5 * a * tanh(0.5 * a) + 0.5 * a


def sigmoid(a):
    return 0.5 * tanh(0.5 * a) + 0.5


# --------------------------------------------------------------------------
# frozen functions
# --------------------------------------------------------------------------


def _bits(mask):
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


@dataclass(frozen=True)
class _Node:
    op: int
    children: tuple
    payload: object


class ExprFunction:
    """Vector function ``R^n_vars -> R^n_out`` frozen from a graph.

    Parameters
    ----------
    outputs : sequence of Expr or float
        Output expressions.  Plain numbers become constant outputs.
    n_vars : int, optional
        Number of variables; defaults to the graph's declared count.
    graph : Graph, optional
        Required only when every output is a plain number.

    Attributes
    ----------
    jac_rows, jac_cols : ndarray
        Structural nonzeros of the Jacobian, sorted row-major.
    hess_rows, hess_cols : ndarray
        Structural nonzeros of the lower triangle (``row >= col``) of the
        Hessian of any weighted sum of the outputs, sorted row-major.
    """

    def __init__(self, outputs, n_vars=None, graph=None):
        outputs = list(outputs)
        graph = graph or _graph_of(outputs)
        if graph is None:
            graph = Graph(n_vars or 0)
        self.graph = graph
        self.n_vars = graph.n_vars if n_vars is None else int(n_vars)
        if self.n_vars < graph.n_vars:
            used = [graph.payload[i] for i, o in enumerate(graph.ops) if o == VAR]
            if used and max(used) >= self.n_vars:
                raise IndexError("graph references variables beyond n_vars")
        roots = [graph._lift(o).id for o in outputs]
        self.n_out = len(roots)
        self._build(roots)
        self._compile()

    # structure -----------------------------------------------------------
    def _build(self, roots):
        g = self.graph
        seen = set()
        stack = list(roots)
        while stack:
            k = stack.pop()
            if k in seen:
                continue
            seen.add(k)
            stack.extend(g.children[k])
        order = sorted(seen)
        local = {k: i for i, k in enumerate(order)}
        self.nodes = [
            _Node(g.ops[k], tuple(local[c] for c in g.children[k]), g.payload[k]) for k in order
        ]
        self.roots = [local[r] for r in roots]

        nn = len(self.nodes)
        deps = [0] * nn
        partners = {}

        def link(a, b):
            for i in _bits(a):
                partners[i] = partners.get(i, 0) | b
            for j in _bits(b):
                partners[j] = partners.get(j, 0) | a

        for k, nd in enumerate(self.nodes):
            if nd.op == VAR:
                deps[k] = 1 << nd.payload
                continue
            d = 0
            for c in nd.children:
                d |= deps[c]
            deps[k] = d
            if nd.op in (EXP, LOG, SQRT, TANH, POW):
                link(deps[nd.children[0]], deps[nd.children[0]])
            elif nd.op == MUL:
                link(deps[nd.children[0]], deps[nd.children[1]])
            elif nd.op == DIV:
                u, w = nd.children
                link(deps[u], deps[w])
                link(deps[w], deps[w])
        self._deps = deps

        jr, jc = [], []
        for r, k in enumerate(self.roots):
            for v in _bits(deps[k]):
                jr.append(r)
                jc.append(v)
        self.jac_rows = np.asarray(jr, dtype=np.int64)
        self.jac_cols = np.asarray(jc, dtype=np.int64)

        hr, hc = [], []
        for i in sorted(partners):
            for j in _bits(partners[i]):
                if j <= i:
                    hr.append(i)
                    hc.append(j)
        self.hess_rows = np.asarray(hr, dtype=np.int64)
        self.hess_cols = np.asarray(hc, dtype=np.int64)
        # variables whose Hessian column may be nonzero
        self._hvars = sorted(partners)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def nnz_jac(self):
        return len(self.jac_rows)

    @property
    def nnz_hess(self):
        return len(self.hess_rows)

    # code generation -----------------------------------------------------
    def _forward_lines(self, check_derivative_domain=False):
        """Lines computing ``v{k}`` for every node plus domain checks."""
        lines = []
        for k, nd in enumerate(self.nodes):
            ch = nd.children
            if nd.op == CONST:
                lines.append(f"v{k} = {nd.payload!r}")
            elif nd.op == VAR:
                lines.append(f"v{k} = X[:, {nd.payload}]")
            elif nd.op == ADD:
                lines.append(f"v{k} = " + " + ".join(f"v{c}" for c in ch))
            elif nd.op == MUL:
                lines.append(f"v{k} = v{ch[0]} * v{ch[1]}")
            elif nd.op == NEG:
                lines.append(f"v{k} = -v{ch[0]}")
            elif nd.op == POW:
                lines.append(f"v{k} = v{ch[0]} ** {nd.payload}")
                if nd.payload < 0:
                    lines.append(f"_chk(np.abs(v{ch[0]}) > {DOMAIN_EPS!r}, {k}, 'pow')")
            elif nd.op == DIV:
                lines.append(f"_chk(np.abs(v{ch[1]}) > {DOMAIN_EPS!r}, {k}, 'div')")
                lines.append(f"v{k} = v{ch[0]} / v{ch[1]}")
            elif nd.op == EXP:
                lines.append(f"v{k} = np.exp(v{ch[0]})")
            elif nd.op == LOG:
                lines.append(f"_chk(v{ch[0]} > {DOMAIN_EPS!r}, {k}, 'log')")
                lines.append(f"v{k} = np.log(v{ch[0]})")
            elif nd.op == SQRT:
                if check_derivative_domain:
                    lines.append(f"_chk(v{ch[0]} > {DOMAIN_EPS!r}, {k}, 'sqrt')")
                else:
                    lines.append(f"_chk(v{ch[0]} >= 0.0, {k}, 'sqrt')")
                lines.append(f"v{k} = np.sqrt(v{ch[0]})")
            elif nd.op == TANH:
                lines.append(f"v{k} = np.tanh(v{ch[0]})")
            else:  # pragma: no cover
                raise AssertionError(nd.op)
        return lines

    def _ref(self, c):
        nd = self.nodes[c]
        return repr(nd.payload) if nd.op == CONST else f"v{c}"

    def _local_partials(self, k):
        """First partials of node ``k`` w.r.t. each child as code strings."""
        nd = self.nodes[k]
        ch = nd.children
        if nd.op == ADD:
            return [(c, None) for c in ch]  # None marks a unit partial
        if nd.op == NEG:
            return [(ch[0], "-1")]
        if nd.op == MUL:
            a, b = ch
            if a == b:
                return [(a, f"(2.0 * v{a})")]
            return [(a, self._ref(b)), (b, self._ref(a))]
        if nd.op == DIV:
            u, w = ch
            if u == w:
                return []
            return [(u, f"(1.0 / v{w})"), (w, f"(-v{k} / v{w})")]
        if nd.op == POW:
            n = nd.payload
            return [(ch[0], f"({n} * v{ch[0]} ** {n - 1})")]
        if nd.op == EXP:
            return [(ch[0], f"v{k}")]
        if nd.op == LOG:
            return [(ch[0], f"(1.0 / v{ch[0]})")]
        if nd.op == SQRT:
            return [(ch[0], f"(0.5 / v{k})")]
        if nd.op == TANH:
            return [(ch[0], f"(1.0 - v{k} * v{k})")]
        return []

    def _compile(self):
        ns = {"np": np, "_chk": _check}
        nodes = self.nodes
        # values
        body = self._forward_lines()
        body.append("out = np.empty((X.shape[0], %d))" % self.n_out)
        for r, k in enumerate(self.roots):
            body.append(f"out[:, {r}] = v{k}")
        body.append("return out")
        self._src_eval = _wrap("_eval", "X", body)

        # Jacobian, one reverse sweep per output
        body = self._forward_lines(check_derivative_domain=True)
        body.append("J = np.empty((X.shape[0], %d))" % self.nnz_jac)
        pos = 0
        for r, root in enumerate(self.roots):
            cone = self._cone(root)
            assigned = set()
            body.append(f"a{root} = 1.0")
            assigned.add(root)
            for k in sorted(cone, reverse=True):
                if k not in assigned or nodes[k].op in (VAR, CONST):
                    continue
                for c, d in self._local_partials(k):
                    if nodes[c].op == CONST:
                        continue
                    term = f"a{k}" if d is None else f"a{k} * {d}"
                    if c in assigned:
                        body.append(f"a{c} = a{c} + {term}")
                    else:
                        body.append(f"a{c} = {term}")
                        assigned.add(c)
            var_nodes = {nodes[k].payload: k for k in cone if nodes[k].op == VAR}
            for v in _bits(self._deps[root]):
                k = var_nodes[v]
                body.append(f"J[:, {pos}] = a{k}" if k in assigned else f"J[:, {pos}] = 0.0")
                pos += 1
        body.append("return J")
        self._src_jac = _wrap("_jac", "X", body)

        # Hessian of the weighted sum of outputs
        self._src_hess = self._hessian_source()

        for src in (self._src_eval, self._src_jac, self._src_hess):
            exec(compile(src, "<expr>", "exec"), ns)
        self._eval = ns["_eval"]
        self._jac = ns["_jac"]
        self._hess = ns["_hess"]

    def _cone(self, root):
        seen = set()
        stack = [root]
        while stack:
            k = stack.pop()
            if k in seen:
                continue
            seen.add(k)
            stack.extend(self.nodes[k].children)
        return seen

    def _hessian_source(self):
        nodes = self.nodes
        hv = self._hvars
        q = len(hv)
        col = {v: i for i, v in enumerate(hv)}
        hmask = 0
        for v in hv:
            hmask |= 1 << v
        body = self._forward_lines(check_derivative_domain=True)
        body.append("P = X.shape[0]")
        body.append("H = np.zeros((P, %d))" % self.nnz_hess)
        if q == 0:
            body.append("return H")
            return _wrap("_hess", "X, Wt", body)
        body.append(f"E = np.eye({q})")

        # forward tangents, only for nodes depending on a Hessian variable
        has_t = [False] * len(nodes)

        for k, nd in enumerate(nodes):
            if not (self._deps[k] & hmask) or nd.op == CONST:
                continue
            ch = nd.children
            if nd.op == VAR:
                body.append(f"t{k} = E[{col[nd.payload]}]")
                has_t[k] = True
                continue
            terms = []
            if nd.op == ADD:
                terms = [f"t{c}" for c in ch if has_t[c]]
            elif nd.op == NEG:
                terms = [f"-t{ch[0]}"]
            else:
                for c, d in self._local_partials(k):
                    if has_t[c]:
                        terms.append(f"t{c} * {_col(d)}")
            if terms:
                body.append(f"t{k} = " + " + ".join(terms))
                has_t[k] = True

        # reverse sweep seeded with the weights, carrying adjoint tangents
        assigned = set()
        has_at = set()
        for r, root in enumerate(self.roots):
            if nodes[root].op == CONST:
                continue
            if root in assigned:
                body.append(f"a{root} = a{root} + Wt[:, {r}]")
            else:
                body.append(f"a{root} = Wt[:, {r}]")
                assigned.add(root)

        def acc(name, c, expr, store):
            if c in store:
                body.append(f"{name}{c} = {name}{c} + {expr}")
            else:
                body.append(f"{name}{c} = {expr}")
                store.add(c)

        for k in range(len(nodes) - 1, -1, -1):
            nd = nodes[k]
            if k not in assigned or nd.op in (VAR, CONST):
                continue
            ch = nd.children
            at = k in has_at
            # first-order adjoints
            for c, d in self._local_partials(k):
                if nodes[c].op == CONST:
                    continue
                acc("a", c, f"a{k}" if d is None else f"a{k} * {d}", assigned)
            # adjoint tangents: d/dt (a_k * partial) = at_k * partial + a_k * d(partial)/dt
            for c, d in self._local_partials(k):
                if nodes[c].op == CONST:
                    continue
                terms = []
                if at:
                    terms.append(f"at{k}" if d is None else f"at{k} * {_col(d)}")
                for coef, t in self._second_terms(k, c):
                    if has_t[t]:
                        terms.append(f"(a{k} * {coef})[:, None] * t{t}")
                if terms:
                    acc("at", c, " + ".join(terms), has_at)

        var_nodes = {nd.payload: k for k, nd in enumerate(nodes) if nd.op == VAR}
        for p, (i, j) in enumerate(zip(self.hess_rows, self.hess_cols)):
            k = var_nodes.get(int(i))
            if k is not None and k in has_at:
                body.append(f"H[:, {p}] = at{k}[:, {col[int(j)]}]")
        body.append("return H")
        return _wrap("_hess", "X, Wt", body)

    def _second_terms(self, k, c):
        """Terms of d(partial_k/partial_c)/dt as (coefficient, tangent node)."""
        nd = self.nodes[k]
        ch = nd.children
        if nd.op in (ADD, NEG):
            return []
        if nd.op == MUL:
            a, b = ch
            if a == b:
                return [("2.0", a)]
            other = b if c == a else a
            return [("1.0", other)]
        if nd.op == DIV:
            u, w = ch
            if u == w:
                return []
            if c == u:  # partial = 1/w
                return [(f"(-1.0 / (v{w} * v{w}))", w)]
            # partial = -u/w^2
            return [(f"(-1.0 / (v{w} * v{w}))", u), (f"(2.0 * v{u} / (v{w} * v{w} * v{w}))", w)]
        u = ch[0]
        if nd.op == POW:
            n = nd.payload
            return [(f"({n * (n - 1)} * v{u} ** {n - 2})", u)]
        if nd.op == EXP:
            return [(f"v{k}", u)]
        if nd.op == LOG:
            return [(f"(-1.0 / (v{u} * v{u}))", u)]
        if nd.op == SQRT:
            return [(f"(-0.25 / (v{k} * v{u}))", u)]
        if nd.op == TANH:
            return [(f"(-2.0 * v{k} * (1.0 - v{k} * v{k}))", u)]
        return []

    # batched evaluation --------------------------------------------------
    def _as_batch(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_vars:
            raise ValueError(f"expected shape (P, {self.n_vars}), got {X.shape}")
        return X

    def eval_batch(self, X):
        """Values at every row of ``X``; shape ``(P, n_out)``."""
        return self._eval(self._as_batch(X))

    def jac_batch(self, X):
        """Jacobian entries in ``(jac_rows, jac_cols)`` order; ``(P, nnz_jac)``."""
        return self._jac(self._as_batch(X))

    def hess_batch(self, X, weights):
        """Lower-triangle entries of ``sum_r weights[:, r] * hess(out_r)``."""
        X = self._as_batch(X)
        W = np.asarray(weights, dtype=float)
        if W.ndim == 1:
            W = np.broadcast_to(W, (X.shape[0], self.n_out))
        return self._hess(X, W)

    # single-point API ----------------------------------------------------
    def eval(self, w):
        return self.eval_batch(np.asarray(w, dtype=float)[None, :])[0]

    def gradient(self, w):
        """Sparse gradient of a scalar function as ``{index: value}``."""
        if self.n_out != 1:
            raise ValueError("gradient requires a scalar function")
        vals = self.jac_batch(np.asarray(w, dtype=float)[None, :])[0]
        return {int(c): float(v) for c, v in zip(self.jac_cols, vals)}

    def jacobian(self, w):
        """Sparse Jacobian with every structural entry stored."""
        vals = self.jac_batch(np.asarray(w, dtype=float)[None, :])[0]
        return sp.csr_matrix((vals, (self.jac_rows, self.jac_cols)), shape=(self.n_out, self.n_vars))

    def hessian(self, w, weights=None):
        """Lower triangle of ``sum_r weights_r * hess(out_r)`` as COO."""
        if weights is None:
            weights = np.ones(self.n_out)
        vals = self.hess_batch(np.asarray(w, dtype=float)[None, :], np.asarray(weights, float)[None, :])[0]
        return sp.coo_matrix((vals, (self.hess_rows, self.hess_cols)), shape=(self.n_vars, self.n_vars))

    # serialization -------------------------------------------------------
    def to_dict(self):
        nodes = []
        for nd in self.nodes:
            nodes.append([OP_NAMES[nd.op], list(nd.children), nd.payload])
        return {"n_vars": self.n_vars, "nodes": nodes, "outputs": list(self.roots)}

    @classmethod
    def from_dict(cls, data):
        g = Graph(data["n_vars"])
        handles = []
        for name, children, payload in data["nodes"]:
            op = OP_NAMES.index(name)
            ch = [handles[c] for c in children]
            if op == CONST:
                h = g.const(payload)
            elif op == VAR:
                h = g.var(payload)
            elif op == ADD:
                h = g.add(ch)
            elif op == MUL:
                h = g.mul(*ch)
            elif op == DIV:
                h = g.div(*ch)
            elif op == NEG:
                h = g.neg(ch[0])
            elif op == POW:
                h = g.pow(ch[0], payload)
            else:
                h = g.unary(op, ch[0])
            handles.append(h)
        outs = [handles[r] for r in data["outputs"]]
        return cls(outs, n_vars=data["n_vars"], graph=g)

    def structure_key(self):
        """Hashable description of the node structure."""
        return tuple((nd.op, nd.children, nd.payload) for nd in self.nodes), tuple(self.roots)


def _col(d):
    if d is None:
        return "1.0"
    if d == "-1":
        return "-1.0"
    return f"{d}[:, None]" if not _is_literal(d) else d


def _is_literal(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def _check(ok, node, op):
    if not np.all(ok):
        raise DomainError(node, op)


def _wrap(name, args, body):
    return f"def {name}({args}):\n" + "\n".join("    " + ln for ln in body) + "\n"


def hessian_of_lagrangian(objective, constraints, w, obj_factor=1.0, multipliers=None):
    """Lower triangle of ``obj_factor * hess(f) + sum_i mult_i * hess(c_i)``.

    Parameters
    ----------
    objective : ExprFunction or None
        Scalar objective.
    constraints : ExprFunction or None
        Constraint vector function over the same variables.
    w : array_like
        Evaluation point.
    obj_factor : float
    multipliers : array_like, optional
        One multiplier per constraint.

    Returns
    -------
    scipy.sparse.coo_matrix
        Lower-triangular matrix (duplicates already summed).
    """
    parts = []
    n = None
    if objective is not None:
        n = objective.n_vars
        parts.append(objective.hessian(w, [obj_factor]))
    if constraints is not None and constraints.n_out:
        n = constraints.n_vars
        if multipliers is None:
            raise ValueError("multipliers required with constraints")
        parts.append(constraints.hessian(w, multipliers))
    if n is None:
        raise ValueError("nothing to differentiate")
    H = sp.coo_matrix((n, n))
    for p in parts:
        H = H + p
    return sp.coo_matrix(sp.tril(H))
