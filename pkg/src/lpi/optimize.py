"""Maximization of a linear objective over marker-annotated formulas.

Branches over marker assignments in syntactic order (true first).  At a
partial assignment the undecided disjunctions are dropped, which gives a
relaxation; a branch is cut when that relaxation cannot beat the incumbent.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .linear import And, Atom, Formula, Leaf, LinearExpr, Model, Or, Var, _Const, annotate_markers, markers
from .simplex import (
    DEFAULT_NODE_BUDGET,
    INFEASIBLE,
    BudgetExceeded,
    Infeasible,
    LpProblem,
    Optimal,
    Unbounded,
    maximize,
)

DEFAULT_BRANCH_BUDGET = 10_000

OptResult = Infeasible | Unbounded | Optimal


@dataclass
class OptStats:
    queries: int = 0
    branches: int = 0
    lp_queries: int = 0
    lemma_cuts: int = 0


@dataclass
class Optimizer:
    """Stateful front end: carries the integer mode, budgets and counters."""

    integer: bool = True
    redundant_lemma: bool = True
    branch_budget: int = DEFAULT_BRANCH_BUDGET
    node_budget: int = DEFAULT_NODE_BUDGET

    def __post_init__(self):
        self.stats = OptStats()

    def _lp(self, objective: LinearExpr, atoms: Sequence[Atom]):
        self.stats.lp_queries += 1
        ints = frozenset(v for a in atoms for v in a.vars) | objective.vars if self.integer else frozenset()
        return maximize(LpProblem(objective, atoms, ints), self.node_budget)

    def maximize_formula(
        self, objective: LinearExpr, f: Formula, base: Sequence[Atom] = (), first: bool = False
    ) -> OptResult:
        if any(isinstance(g, Or) and g.marker is None for g in _walk(f)):
            f, _ = annotate_markers(f)
        self.stats.queries += 1
        base = list(base)
        incumbent: Optimal | None = None
        branches = 0
        # stack of partial assignments, explored depth-first with the true branch first
        stack: list[dict[Var, bool]] = [{}]
        while stack:
            assign = stack.pop()
            branches += 1
            self.stats.branches += 1
            if branches > self.branch_budget:
                raise BudgetExceeded(f"disjunctive search exceeded {self.branch_budget} branches")
            collected = _collect(f, assign)
            if collected is None:
                continue
            atoms, pending = collected
            cons = base + atoms
            if incumbent is not None and self.redundant_lemma:
                cons = cons + [_lemma(objective, incumbent.value, self.integer)]
            res = self._lp(objective, cons)
            if isinstance(res, Infeasible):
                if incumbent is not None and self.redundant_lemma:
                    self.stats.lemma_cuts += 1
                continue
            if isinstance(res, Optimal) and incumbent is not None and res.value <= incumbent.value:
                continue
            if pending is None:
                model = Model(res.model.numeric, _full_assignment(f, assign))
                if isinstance(res, Unbounded):
                    return Unbounded(res.ray, model)
                incumbent = Optimal(res.value, model)
                if first:
                    break
                continue
            stack.append({**assign, pending: False})
            stack.append({**assign, pending: True})
        return incumbent if incumbent is not None else INFEASIBLE

    def check_exceeds(self, f: Formula, base: Sequence[Atom], objective: LinearExpr, bound: Fraction) -> bool:
        """Is ``f & base & objective > bound`` satisfiable?

        In integer mode ``>`` is read as ``>= bound + 1``; over the rationals the
        objective is maximized and compared instead.
        """
        if self.integer and objective.is_integral():
            strict = _lemma(objective, bound, True)
            return self.satisfiable(f, list(base) + [strict])
        res = self.maximize_formula(objective, f, base)
        if isinstance(res, Infeasible):
            return False
        return isinstance(res, Unbounded) or res.value > bound

    def satisfiable(self, f: Formula, base: Sequence[Atom] = ()) -> bool:
        return not isinstance(self.maximize_formula(LinearExpr(), f, base, first=True), Infeasible)


def _lemma(objective: LinearExpr, value: Fraction, integer: bool) -> Atom:
    """``objective >= value + 1`` for integral objectives, ``objective >= value`` otherwise."""
    if integer and objective.is_integral():
        return Atom.geq(objective, value + 1)
    return Atom.geq(objective, value)


def _walk(f: Formula):
    stack = [f]
    while stack:
        g = stack.pop()
        yield g
        if isinstance(g, And):
            stack.extend(g.children)
        elif isinstance(g, Or):
            stack.extend((g.right, g.left))


def _collect(f: Formula, assign: Mapping[Var, bool]):
    """Atoms forced by ``assign`` and the first undecided reachable marker.

    Returns ``None`` when the decided part contains ``false``.
    """
    atoms: list[Atom] = []
    pending: list[Var] = []

    def go(g) -> bool:
        if isinstance(g, Leaf):
            atoms.append(g.atom)
            return True
        if isinstance(g, _Const):
            return g.value
        if isinstance(g, And):
            return all(go(c) for c in g.children)
        if isinstance(g, Or):
            val = assign.get(g.marker)
            if val is None:
                if not pending:
                    pending.append(g.marker)
                return True
            return go(g.left if val else g.right)
        raise TypeError(g)

    if not go(f):
        return None
    return atoms, (pending[0] if pending else None)


def _full_assignment(f: Formula, assign: Mapping[Var, bool]) -> dict[Var, bool]:
    out = dict(assign)
    for m in markers(f):
        out.setdefault(m, False)
    return out


def maximize_formula(objective: LinearExpr, f: Formula, base: Sequence[Atom] = (), integer: bool = True, **kw) -> OptResult:
    return Optimizer(integer=integer, **kw).maximize_formula(objective, f, base)


def check_exceeds(f: Formula, base: Sequence[Atom], objective: LinearExpr, bound, integer: bool = True) -> bool:
    return Optimizer(integer=integer).check_exceeds(f, base, objective, Fraction(bound))
