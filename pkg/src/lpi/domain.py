"""Template constraint domain: abstracted, intermediate and bottom states."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping

from .congruence import join_states
from .linear import TRUE, Atom, Formula, LinearExpr, Role, Var, conj, disj, format_terms

_ids = itertools.count()


class NodeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Template:
    """Direction ``t`` of a tracked bound ``t.X <= d``; stored canonically."""

    expr: LinearExpr

    @staticmethod
    def of(e: LinearExpr | Var | str | Mapping[str, int]) -> "Template":
        if isinstance(e, str):
            e = LinearExpr.var(Var(e))
        elif isinstance(e, Var):
            e = LinearExpr.var(e)
        elif isinstance(e, Mapping):
            e = LinearExpr.build({Var(k): c for k, c in e.items()})
        if any(v.role is not Role.INPUT or v.ns is not None for v in e.vars):
            raise ValueError(f"template {e} must range over program variables")
        return Template(e.canonical())

    @cached_property
    def names(self) -> frozenset[str]:
        return frozenset(v.name for v in self.expr.vars)

    @cached_property
    def output(self) -> LinearExpr:
        return self.expr.rename(lambda v: Var(v.name, None, Role.OUTPUT))

    def over(self, fn) -> LinearExpr:
        return self.expr.rename(fn)

    def sort_key(self):
        return (len(self.expr.terms), tuple(sorted(self.names)), str(self))

    def atom(self, bound) -> Atom:
        return Atom.leq(self.expr, bound)

    def __str__(self) -> str:
        return format_terms(self.expr.terms)


@dataclass(frozen=True, eq=False)
class PolicyBound:
    bound: Fraction
    policy: Formula
    backpointer: "AbstractedState | None"
    input_independent: bool = False


@dataclass(eq=False)
class AbstractedState:
    """Bounds per template at an abstraction point.  Identity-compared."""

    node: int
    entries: dict[Template, PolicyBound] = field(default_factory=dict)
    congruence: object = None  # CongruenceState or None when congruence is off
    sid: int = field(default_factory=lambda: next(_ids))

    def bounds(self) -> dict[Template, Fraction]:
        return {t: pb.bound for t, pb in self.entries.items()}

    def constraints(self) -> list[Atom]:
        return [t.atom(pb.bound) for t, pb in sorted(self.entries.items(), key=lambda kv: kv[0].sort_key())]

    def same_value(self, other: "AbstractedState") -> bool:
        return self.bounds() == other.bounds() and self.congruence == other.congruence

    def format(self) -> list[str]:
        return [f"{t} <= {pb.bound}" for t, pb in sorted(self.entries.items(), key=lambda kv: kv[0].sort_key())]

    def __repr__(self):
        body = ", ".join(self.format())
        return f"a{self.sid}@n{self.node}{{{body}}}"


@dataclass(frozen=True, eq=False)
class IntermediateState:
    """Path formula from a starting abstracted state.

    The path is kept in single-assignment form: ``ssa`` maps each program
    variable to the term currently holding its value, so the represented
    relation is ``formula & x' = ssa[x]`` for every ``x``.  ``touched`` lists
    the program variables read or written along the path.
    """

    node: int
    start: AbstractedState
    formula: Formula
    ssa: tuple[tuple[str, Var], ...]
    touched: frozenset[str] = frozenset()

    @cached_property
    def ssa_map(self) -> dict[str, Var]:
        return dict(self.ssa)

    def path_formula(self) -> Formula:
        """``formula`` plus the output equalities over ``X'``."""
        eqs = [Atom.eq(Var(x, None, Role.OUTPUT), v) for x, v in self.ssa]
        return conj(self.formula, *eqs)

    @staticmethod
    def lift(a: AbstractedState, names: Iterable[str]) -> "IntermediateState":
        return IntermediateState(a.node, a, TRUE, tuple((x, Var(x)) for x in names))


@dataclass(frozen=True)
class BottomState:
    node: int


def _check(a, b):
    if a.node != b.node:
        raise NodeMismatch(f"states at n{a.node} and n{b.node}")


def leq(a: AbstractedState, b: AbstractedState) -> bool:
    """Component-wise bound comparison; a missing template is unbounded."""
    _check(a, b)
    for t, pb in b.entries.items():
        mine = a.entries.get(t)
        if mine is None or mine.bound > pb.bound:
            return False
    return True


def join(a: AbstractedState, b: AbstractedState) -> AbstractedState:
    """Per-template larger bound, keeping its policy and backpointer.

    On equal bounds the entry of ``b`` is kept, so ``join(new, reached)``
    leaves the reached state's metadata in place when nothing grows.
    """
    _check(a, b)
    out: dict[Template, PolicyBound] = {}
    for t, pb in b.entries.items():
        other = a.entries.get(t)
        if other is None:
            continue
        out[t] = other if other.bound > pb.bound else pb
    cong = None
    if a.congruence is not None and b.congruence is not None:
        cong = join_states(a.congruence, b.congruence)
    return AbstractedState(a.node, out, cong)


def stop(new, reached: Iterable[AbstractedState]) -> bool:
    if isinstance(new, BottomState):
        return True
    return any(r.node == new.node and leq(new, r) for r in reached)


def merge_intermediate(a: IntermediateState, b: IntermediateState, fresh=None) -> IntermediateState | None:
    """Disjunction of two paths with the same start; ``None`` means keep both.

    Where the two paths hold a variable in different terms, a fresh term is
    introduced and each side equates it with its own.
    """
    if a.node != b.node:
        raise NodeMismatch(f"states at n{a.node} and n{b.node}")
    if a.start is not b.start:
        return None
    if a.formula == b.formula and a.ssa == b.ssa:
        return a
    fresh = fresh or _default_fresh
    left, right, ssa = [a.formula], [b.formula], []
    ma, mb = a.ssa_map, b.ssa_map
    for x, va in a.ssa:
        vb = mb[x]
        if va == vb:
            ssa.append((x, va))
            continue
        v = fresh(x)
        left.append(Atom.eq(v, va))
        right.append(Atom.eq(v, vb))
        ssa.append((x, v))
    formula = disj(conj(*left), conj(*right))
    return IntermediateState(a.node, a.start, formula, tuple(ssa), a.touched | b.touched)


_merge_counter = itertools.count()


def _default_fresh(name: str) -> Var:
    return Var(name, f"j{next(_merge_counter)}", Role.AUX)
