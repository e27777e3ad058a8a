"""Parity (modulo 2) analysis that runs alongside the template domain."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping

from .linear import Atom, Formula, LinearExpr, Rel, Role, Var, dnf


class ModeMismatch(ValueError):
    """Parity atoms were requested while bounds are computed over the rationals."""


class Parity(enum.Enum):
    BOTTOM = "bottom"
    EVEN = "even"
    ODD = "odd"
    TOP = "top"

    def join(self, other: "Parity") -> "Parity":
        if self is other or other is Parity.BOTTOM:
            return self
        if self is Parity.BOTTOM:
            return other
        return Parity.TOP

    def meet(self, other: "Parity") -> "Parity":
        if self is other or other is Parity.TOP:
            return self
        if self is Parity.TOP:
            return other
        return Parity.BOTTOM

    def leq(self, other: "Parity") -> bool:
        return self.join(other) is other

    @property
    def definite(self) -> bool:
        return self in (Parity.EVEN, Parity.ODD)

    @staticmethod
    def of(n) -> "Parity":
        n = Fraction(n)
        if n.denominator != 1:
            return Parity.BOTTOM
        return Parity.EVEN if n.numerator % 2 == 0 else Parity.ODD


def _add(a: Parity, b: Parity) -> Parity:
    if Parity.BOTTOM in (a, b):
        return Parity.BOTTOM
    if Parity.TOP in (a, b):
        return Parity.TOP
    return Parity.EVEN if a is b else Parity.ODD


@dataclass(frozen=True)
class CongruenceState:
    """Parity per program variable; absent variables are unconstrained."""

    values: tuple[tuple[str, Parity], ...] = ()

    @staticmethod
    def of(mapping: Mapping[str, Parity]) -> "CongruenceState":
        return CongruenceState(tuple(sorted((k, v) for k, v in mapping.items() if v is not Parity.TOP)))

    def __getitem__(self, name: str) -> Parity:
        for k, v in self.values:
            if k == name:
                return v
        return Parity.TOP

    def as_dict(self) -> dict[str, Parity]:
        return dict(self.values)

    @property
    def is_bottom(self) -> bool:
        return any(v is Parity.BOTTOM for _, v in self.values)

    def __str__(self):
        return "{" + ", ".join(f"{k}: {v.value}" for k, v in self.values) + "}"


TOP_STATE = CongruenceState()


def join_states(a: CongruenceState, b: CongruenceState) -> CongruenceState:
    if a.is_bottom:
        return b
    if b.is_bottom:
        return a
    da, db = a.as_dict(), b.as_dict()
    return CongruenceState.of({k: da[k].join(db[k]) for k in da.keys() & db.keys()})


def leq_states(a: CongruenceState, b: CongruenceState) -> bool:
    return a.is_bottom or join_states(a, b) == b


def eval_parity(e: LinearExpr, env: Mapping[Var, Parity]) -> Parity:
    """Parity of ``e`` given the parity of its variables (missing means unconstrained)."""
    acc = Parity.of(e.const)
    for v, c in e.terms:
        if c.denominator != 1:
            return Parity.TOP
        if c.numerator % 2 == 0:
            term = Parity.EVEN
        else:
            term = env.get(v, Parity.TOP)
        acc = _add(acc, term)
    return acc


def _propagate(atoms: Iterable[Atom], env: dict[Var, Parity]) -> bool:
    """Deduce parities from equalities until stable; False on contradiction."""
    eqs = [a for a in atoms if a.rel is Rel.EQ and a.expr.is_integral()]
    changed = True
    while changed:
        changed = False
        for a in eqs:
            odd = [v for v, c in a.expr.terms if c.numerator % 2 != 0]
            if not odd:
                if Parity.of(a.expr.const) is Parity.ODD:
                    return False  # even sum equal to an odd constant
                continue
            unknown = [v for v in odd if not env.get(v, Parity.TOP).definite]
            if len(unknown) > 1:
                continue
            if unknown:
                target = unknown[0]
            else:
                target = odd[0]
            rest = LinearExpr(tuple(t for t in a.expr.terms if t[0] != target), a.expr.const)
            p = eval_parity(rest, env)  # target + rest == 0 (mod 2), so target has rest's parity
            if not p.definite:
                continue
            cur = env.get(target, Parity.TOP)
            new = cur.meet(p)
            if new is Parity.BOTTOM:
                return False
            if new is not cur:
                env[target] = new
                changed = True
    return True


def transfer_formula(s: CongruenceState, f: Formula, names: Iterable[str], limit: int = 256) -> CongruenceState:
    """Parity of every ``x'`` after a relation over ``X`` and ``X'``.

    Each disjunct is evaluated separately and the results joined.  Inputs
    start from ``s``; outputs and auxiliaries are unconstrained until an
    equality pins them.
    """
    names = list(names)
    if s.is_bottom:
        return s
    try:
        branches = dnf(f, limit)
    except OverflowError:
        return TOP_STATE
    result: CongruenceState | None = None
    for atoms in branches:
        env: dict[Var, Parity] = {Var(x): s[x] for x in names if s[x] is not Parity.TOP}
        if not _propagate(atoms, env):
            continue
        out = CongruenceState.of({x: env.get(Var(x, None, Role.OUTPUT), Parity.TOP) for x in names})
        result = out if result is None else join_states(result, out)
    if result is None:
        return CongruenceState.of({x: Parity.BOTTOM for x in names}) if names else TOP_STATE
    return result


def congruence_transfer(s: CongruenceState, f: Formula, names: Iterable[str]) -> CongruenceState:
    return transfer_formula(s, f, names)


def parity_constraints(
    s: CongruenceState, integer: bool = True, fresh: Callable[[str], Var] | None = None
) -> list[Atom]:
    """``x = 2k`` or ``x = 2k + 1`` with a fresh integer ``k`` per constrained variable."""
    if not integer:
        raise ModeMismatch("parity constraints need integer variables")
    counter = itertools.count()
    fresh = fresh or (lambda x: Var(f"k{next(counter)}", f"par_{x}", Role.AUX))
    out = []
    for x, p in s.values:
        if p.definite:
            k = fresh(x)
            out.append(Atom.eq(LinearExpr.var(Var(x)) - LinearExpr.var(k, 2), 0 if p is Parity.EVEN else 1))
    return out


def refine_from_bounds(s: CongruenceState, a) -> CongruenceState:
    """Pin the parity of variables whose upper and lower bound coincide."""
    from .domain import Template

    d = s.as_dict()
    bounds = a.bounds()
    names = {n for t in bounds for n in t.names if len(t.names) == 1}
    for x in sorted(names):
        hi = bounds.get(Template.of(x))
        lo = bounds.get(Template.of(LinearExpr.var(Var(x), -1)))
        if hi is None or lo is None:
            continue
        lo = -lo
        if lo > hi:
            d[x] = Parity.BOTTOM
        elif lo == hi:
            d[x] = d.get(x, Parity.TOP).meet(Parity.of(hi))
    return CongruenceState.of(d)


def round_bound(bound: Fraction, p: Parity) -> Fraction:
    """Largest integer ``<= bound`` with parity ``p`` (or any integer if ``p`` is not definite)."""
    n = bound.numerator // bound.denominator
    if p.definite and Parity.of(n) is not p:
        n -= 1
    return Fraction(n)
