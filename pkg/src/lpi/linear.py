"""Exact linear arithmetic: variables, linear expressions, atoms and formulas.

Formulas are immutable trees.  Disjunctions are binary and may carry a boolean
marker variable; a formula without ``Or`` nodes is said to be in policy form.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, reduce
from math import gcd
from typing import Callable, Iterable, Iterator, Mapping

Rational = Fraction


class Role(enum.IntEnum):
    INPUT = 0
    OUTPUT = 1
    AUX = 2
    MARKER = 3


class MissingAssignment(KeyError):
    pass


class NamespaceCollision(ValueError):
    pass


@dataclass(frozen=True, order=False)
class Var:
    name: str
    ns: str | None = None
    role: Role = Role.INPUT

    @property
    def key(self) -> tuple:
        return (self.name, self.ns or "", int(self.role))

    def __lt__(self, other: "Var") -> bool:
        return self.key < other.key

    def primed(self) -> "Var":
        return Var(self.name, self.ns, Role.OUTPUT)

    def unprimed(self) -> "Var":
        return Var(self.name, self.ns, Role.INPUT)

    def __str__(self) -> str:
        s = self.name
        if self.ns:
            s = f"{s}@{self.ns}"
        if self.role is Role.OUTPUT:
            s += "'"
        return s


def inp(name: str) -> Var:
    return Var(name)


def out(name: str) -> Var:
    return Var(name, None, Role.OUTPUT)


# ---------------------------------------------------------------------------
# Extended rationals


class ExtRational:
    """A rational number extended with -oo and +oo.

    ``ExtRational.NEG_INF`` stands for an unreachable bound and
    ``ExtRational.POS_INF`` for an unbounded one.
    """

    __slots__ = ("kind", "value")

    def __init__(self, kind: int, value: Fraction | None = None):
        self.kind = kind  # -1, 0, +1
        self.value = value

    @classmethod
    def of(cls, q) -> "ExtRational":
        return cls(0, Fraction(q))

    def _k(self):
        return (self.kind, self.value if self.kind == 0 else 0)

    def __eq__(self, other):
        return isinstance(other, ExtRational) and self._k() == other._k()

    def __hash__(self):
        return hash(self._k())

    def __lt__(self, other: "ExtRational"):
        return self._k() < other._k()

    def __le__(self, other: "ExtRational"):
        return self._k() <= other._k()

    def is_finite(self) -> bool:
        return self.kind == 0

    def __repr__(self):
        if self.kind < 0:
            return "-oo"
        if self.kind > 0:
            return "+oo"
        return str(self.value)


ExtRational.NEG_INF = ExtRational(-1)
ExtRational.POS_INF = ExtRational(1)


# ---------------------------------------------------------------------------
# Linear expressions


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


@dataclass(frozen=True)
class LinearExpr:
    terms: tuple[tuple[Var, Fraction], ...] = ()
    const: Fraction = Fraction(0)

    @staticmethod
    def build(coeffs: Mapping[Var, object] | Iterable[tuple[Var, object]] = (), const=0) -> "LinearExpr":
        acc: dict[Var, Fraction] = {}
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        for v, c in items:
            if v.role is Role.MARKER:
                raise ValueError(f"marker {v} cannot occur in a linear expression")
            acc[v] = acc.get(v, Fraction(0)) + _frac(c)
        terms = tuple(sorted(((v, c) for v, c in acc.items() if c != 0), key=lambda t: t[0].key))
        return LinearExpr(terms, _frac(const))

    @staticmethod
    def var(v: Var, coeff=1) -> "LinearExpr":
        return LinearExpr.build({v: coeff})

    @staticmethod
    def constant(c) -> "LinearExpr":
        return LinearExpr((), _frac(c))

    @cached_property
    def coeffs(self) -> dict[Var, Fraction]:
        return dict(self.terms)

    def __hash__(self):
        return self._hash

    @cached_property
    def _hash(self):
        return hash((self.terms, self.const))

    @property
    def vars(self) -> frozenset[Var]:
        return frozenset(v for v, _ in self.terms)

    def is_constant(self) -> bool:
        return not self.terms

    def __add__(self, other) -> "LinearExpr":
        if not isinstance(other, LinearExpr):
            return LinearExpr(self.terms, self.const + _frac(other))
        return LinearExpr.build(itertools.chain(self.terms, other.terms), self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> "LinearExpr":
        return LinearExpr(tuple((v, -c) for v, c in self.terms), -self.const)

    def __sub__(self, other) -> "LinearExpr":
        if not isinstance(other, LinearExpr):
            return self + (-_frac(other))
        return self + (-other)

    def __rsub__(self, other) -> "LinearExpr":
        return (-self) + other

    def __mul__(self, k) -> "LinearExpr":
        k = _frac(k)
        if k == 0:
            return LinearExpr()
        return LinearExpr(tuple((v, c * k) for v, c in self.terms), self.const * k)

    __rmul__ = __mul__

    def coeff(self, v: Var) -> Fraction:
        return self.coeffs.get(v, Fraction(0))

    def evaluate(self, values: Mapping[Var, object]) -> Fraction:
        total = self.const
        for v, c in self.terms:
            try:
                total += c * values[v]
            except KeyError:
                raise MissingAssignment(v) from None
        return total

    def rename(self, fn: Callable[[Var], Var]) -> "LinearExpr":
        return LinearExpr.build(((fn(v), c) for v, c in self.terms), self.const)

    def substitute(self, v: Var, e: "LinearExpr") -> "LinearExpr":
        c = self.coeffs.get(v)
        if c is None:
            return self
        rest = LinearExpr(tuple(t for t in self.terms if t[0] != v), self.const)
        return rest + e * c

    def is_integral(self) -> bool:
        return self.const.denominator == 1 and all(c.denominator == 1 for _, c in self.terms)

    def canonical(self) -> "LinearExpr":
        """Positive rescaling of the variable part to coprime integer coefficients.

        The constant is dropped; only the direction matters for templates.
        """
        if not self.terms:
            raise ValueError("zero expression has no canonical form")
        den = reduce(lambda a, b: a * b // gcd(a, b), (c.denominator for _, c in self.terms), 1)
        ints = [int(c * den) for _, c in self.terms]
        g = reduce(gcd, (abs(i) for i in ints))
        return LinearExpr(tuple((v, Fraction(i // g)) for (v, _), i in zip(self.terms, ints)))

    def __str__(self) -> str:
        return format_terms(self.terms, self.const)

    def __repr__(self) -> str:
        return f"LinearExpr({self})"


def format_terms(terms, const=Fraction(0)) -> str:
    parts: list[str] = []
    for v, c in terms:
        mag = abs(c)
        body = str(v) if mag == 1 else f"{mag}*{v}"
        if not parts:
            parts.append(body if c > 0 else f"-{body}")
        else:
            parts.append(("+ " if c > 0 else "- ") + body)
    if const != 0 or not parts:
        if not parts:
            parts.append(str(const))
        else:
            parts.append(("+ " if const > 0 else "- ") + str(abs(const)))
    return " ".join(parts)


# ---------------------------------------------------------------------------
# Atoms


class Rel(enum.Enum):
    LEQ = "<="
    EQ = "=="


@dataclass(frozen=True)
class Atom:
    """``expr <= 0`` or ``expr == 0``.

    ``frame`` marks the copy equalities ``x' = x`` that an edge adds for
    variables it leaves alone; it does not take part in equality.
    """

    expr: LinearExpr
    rel: Rel = Rel.LEQ
    frame: bool = field(default=False, compare=False)

    @staticmethod
    def leq(lhs, rhs=0) -> "Atom":
        return Atom(_as_expr(lhs) - _as_expr(rhs), Rel.LEQ)

    @staticmethod
    def lt(lhs, rhs=0) -> "Atom":
        # integer semantics: a < b  <=>  a <= b - 1
        return Atom(_as_expr(lhs) - _as_expr(rhs) + 1, Rel.LEQ)

    @staticmethod
    def geq(lhs, rhs=0) -> "Atom":
        return Atom.leq(rhs, lhs)

    @staticmethod
    def gt(lhs, rhs=0) -> "Atom":
        return Atom.lt(rhs, lhs)

    @staticmethod
    def eq(lhs, rhs=0, frame: bool = False) -> "Atom":
        return Atom(_as_expr(lhs) - _as_expr(rhs), Rel.EQ, frame)

    @property
    def vars(self) -> frozenset[Var]:
        return self.expr.vars

    def holds(self, values: Mapping[Var, object]) -> bool:
        v = self.expr.evaluate(values)
        return v <= 0 if self.rel is Rel.LEQ else v == 0

    def rename(self, fn: Callable[[Var], Var]) -> "Atom":
        return Atom(self.expr.rename(fn), self.rel, self.frame)

    def __str__(self) -> str:
        # move the constant to the right-hand side for readability
        lhs = LinearExpr(self.expr.terms)
        rhs = -self.expr.const
        op = "<=" if self.rel is Rel.LEQ else "=="
        return f"{format_terms(lhs.terms)} {op} {rhs}" if lhs.terms else f"0 {op} {rhs}"


def _as_expr(x) -> LinearExpr:
    if isinstance(x, LinearExpr):
        return x
    if isinstance(x, Var):
        return LinearExpr.var(x)
    return LinearExpr.constant(x)


# ---------------------------------------------------------------------------
# Formulas


class Formula:
    __slots__ = ()

    def __and__(self, other: "Formula") -> "Formula":
        return conj(self, other)

    def __or__(self, other: "Formula") -> "Formula":
        return disj(self, other)


@dataclass(frozen=True, eq=True)
class _Const(Formula):
    value: bool

    def __str__(self):
        return "true" if self.value else "false"


TRUE = _Const(True)
FALSE = _Const(False)


@dataclass(frozen=True, eq=True)
class Leaf(Formula):
    atom: Atom

    def __str__(self):
        return str(self.atom)


@dataclass(frozen=True, eq=True)
class And(Formula):
    children: tuple[Formula, ...]

    def __hash__(self):
        return self._hash

    @cached_property
    def _hash(self):
        return hash(("and", self.children))

    def __str__(self):
        return " & ".join(_paren(c) for c in self.children)


@dataclass(frozen=True, eq=True)
class Or(Formula):
    left: Formula
    right: Formula
    marker: Var | None = None

    def __hash__(self):
        return self._hash

    @cached_property
    def _hash(self):
        return hash(("or", self.left, self.right, self.marker))

    def __str__(self):
        if self.marker is None:
            return f"{_paren(self.left)} | {_paren(self.right)}"
        m = self.marker
        return f"({m} & {_paren(self.left)}) | (!{m} & {_paren(self.right)})"


def _paren(f: Formula) -> str:
    return f"({f})" if isinstance(f, (And, Or)) else str(f)


def atom(a: Atom) -> Formula:
    e = a.expr
    if e.is_constant():
        ok = e.const <= 0 if a.rel is Rel.LEQ else e.const == 0
        return TRUE if ok else FALSE
    return Leaf(a)


def conj(*fs: Formula | Atom) -> Formula:
    out: list[Formula] = []
    for f in fs:
        if isinstance(f, Atom):
            f = atom(f)
        if f is FALSE or f == FALSE:
            return FALSE
        if f == TRUE:
            continue
        if isinstance(f, And):
            out.extend(f.children)
        else:
            out.append(f)
    if not out:
        return TRUE
    if len(out) == 1:
        return out[0]
    return And(tuple(out))


def disj(*fs: Formula | Atom) -> Formula:
    items = [atom(f) if isinstance(f, Atom) else f for f in fs]
    items = [f for f in items if f != FALSE]
    if not items:
        return FALSE
    if any(f == TRUE for f in items):
        return TRUE
    return reduce(lambda a, b: Or(a, b), items)


def iter_atoms(f: Formula) -> Iterator[Atom]:
    stack = [f]
    while stack:
        g = stack.pop()
        if isinstance(g, Leaf):
            yield g.atom
        elif isinstance(g, And):
            stack.extend(reversed(g.children))
        elif isinstance(g, Or):
            stack.append(g.right)
            stack.append(g.left)


def variables(f: Formula) -> frozenset[Var]:
    acc: set[Var] = set()
    for a in iter_atoms(f):
        acc |= a.vars
    return frozenset(acc)


def markers(f: Formula) -> list[Var]:
    """Markers in syntactic (left-to-right, pre-order) order."""
    found: list[Var] = []

    def walk(g):
        if isinstance(g, Or):
            if g.marker is not None:
                found.append(g.marker)
            walk(g.left)
            walk(g.right)
        elif isinstance(g, And):
            for c in g.children:
                walk(c)

    walk(f)
    return found


def has_or(f: Formula) -> bool:
    if isinstance(f, Or):
        return True
    if isinstance(f, And):
        return any(has_or(c) for c in f.children)
    return False


def is_policy_form(f: Formula) -> bool:
    return not has_or(f)


def evaluate(f: Formula, m: "Model | Mapping[Var, object]") -> bool:
    values = m.numeric if isinstance(m, Model) else m
    if isinstance(f, _Const):
        return f.value
    if isinstance(f, Leaf):
        return f.atom.holds(values)
    if isinstance(f, And):
        return all(evaluate(c, values) for c in f.children)
    if isinstance(f, Or):
        return evaluate(f.left, values) or evaluate(f.right, values)
    raise TypeError(f)


def rename(f: Formula, fn: Callable[[Var], Var]) -> Formula:
    memo: dict[int, Formula] = {}

    def go(g):
        key = id(g)
        if key in memo:
            return memo[key]
        if isinstance(g, _Const):
            r = g
        elif isinstance(g, Leaf):
            r = atom(g.atom.rename(fn))
        elif isinstance(g, And):
            r = conj(*(go(c) for c in g.children))
        else:
            r = Or(go(g.left), go(g.right), g.marker)
        memo[key] = r
        return r

    return go(f)


class MarkerFactory:
    def __init__(self, prefix: str = "m"):
        self.prefix = prefix
        self.counter = itertools.count(1)

    def __call__(self) -> Var:
        return Var(f"{self.prefix}{next(self.counter)}", None, Role.MARKER)


def annotate_markers(f: Formula, fresh: Callable[[], Var] | None = None) -> tuple[Formula, list[Var]]:
    """Tag every disjunction with a fresh marker, in syntactic order."""
    fresh = fresh or MarkerFactory()
    made: list[Var] = []

    def go(g):
        if isinstance(g, Or):
            if g.marker is not None:
                raise ValueError("formula is already annotated")
            m = fresh()
            made.append(m)
            return Or(go(g.left), go(g.right), m)
        if isinstance(g, And):
            return And(tuple(go(c) for c in g.children))
        return g

    return go(f), made


def substitute_markers(f: Formula, vals: Mapping[Var, bool]) -> Formula:
    """Collapse each marked disjunction to the disjunct chosen by ``vals``.

    Only markers on the selected branches are looked up.
    """

    def go(g):
        if isinstance(g, Or):
            if g.marker is None:
                return Or(go(g.left), go(g.right))
            try:
                pick = vals[g.marker]
            except KeyError:
                raise MissingAssignment(g.marker) from None
            return go(g.left if pick else g.right)
        if isinstance(g, And):
            return conj(*(go(c) for c in g.children))
        return g

    return go(f)


def strip_markers(f: Formula) -> Formula:
    def go(g):
        if isinstance(g, Or):
            return Or(go(g.left), go(g.right))
        if isinstance(g, And):
            return And(tuple(go(c) for c in g.children))
        return g

    return go(f)


def namespace(f: Formula, prefix: str, which: Callable[[Var], bool] | None = None) -> Formula:
    """Prefix the namespace of every selected (by default: every non-marker) variable."""
    which = which or (lambda v: v.role is not Role.MARKER)
    for v in variables(f):
        if v.ns is not None and (v.ns == prefix or v.ns.startswith(prefix + "/")):
            raise NamespaceCollision(prefix)
    return rename(f, lambda v: namespace_var(v, prefix) if which(v) else v)


def namespace_var(v: Var, prefix: str) -> Var:
    return Var(v.name, prefix if v.ns is None else f"{prefix}/{v.ns}", v.role)


def conjunction_atoms(f: Formula) -> list[Atom]:
    """Atoms of a policy-form formula; raises on disjunctions."""
    if f == FALSE:
        raise ValueError("false has no atom list")
    acc = []
    for g in _flatten_and(f):
        if isinstance(g, Leaf):
            acc.append(g.atom)
        elif isinstance(g, _Const):
            continue
        else:
            raise ValueError("formula is not in policy form")
    return acc


def _flatten_and(f):
    if isinstance(f, And):
        for c in f.children:
            yield from _flatten_and(c)
    else:
        yield f


def dnf(f: Formula, limit: int = 4096) -> list[list[Atom]]:
    """Disjunctive normal form as a list of atom conjunctions."""
    if isinstance(f, _Const):
        return [[]] if f.value else []
    if isinstance(f, Leaf):
        return [[f.atom]]
    if isinstance(f, Or):
        out = dnf(f.left, limit) + dnf(f.right, limit)
        if len(out) > limit:
            raise OverflowError("dnf too large")
        return out
    acc: list[list[Atom]] = [[]]
    for c in f.children:
        part = dnf(c, limit)
        acc = [a + b for a in acc for b in part]
        if len(acc) > limit:
            raise OverflowError("dnf too large")
    return acc


# ---------------------------------------------------------------------------
# Models


@dataclass(frozen=True)
class Model:
    numeric: Mapping[Var, Fraction] = field(default_factory=dict)
    boolean: Mapping[Var, bool] = field(default_factory=dict)

    def __getitem__(self, v: Var):
        if v.role is Role.MARKER:
            return self.boolean[v]
        return self.numeric[v]

    def get(self, v: Var, default=None):
        try:
            return self[v]
        except KeyError:
            return default
