"""Ground truth for tests: bounded concrete execution and Kleene iteration.

Nothing here goes through the analysis engine or the disjunctive optimizer.
Path formulas are built by explicit path enumeration and solved one
disjunct at a time with the plain LP solver.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .cfa import Cfa, Edge, live_variables
from .domain import Template
from .frontend import (
    Assert,
    Assign,
    Assume,
    Block,
    BoolOp,
    Cmp,
    Cond,
    Expr,
    If,
    NondetCond,
    Not,
    Program,
    Stmt,
    While,
)
from .linear import FALSE, And, Atom, Formula, Leaf, LinearExpr, Rel, Role, Var, conj, dnf, evaluate, iter_atoms, rename
from .simplex import Infeasible, LpProblem, Optimal, Unbounded, maximize


@dataclass(frozen=True)
class Limits:
    lo: int = -4
    hi: int = 4
    max_states: int = 100_000
    max_steps: int = 100_000

    @property
    def values(self) -> range:
        return range(self.lo, self.hi + 1)


@dataclass
class ConcreteRun:
    """Concrete states per node, as tuples ordered like ``names``."""

    names: tuple[str, ...]
    reachable: dict[int, set[tuple[int, ...]]]
    truncated: bool
    limits: Limits

    def states(self, node: int) -> list[dict[str, int]]:
        return [dict(zip(self.names, s)) for s in sorted(self.reachable.get(node, ()))]

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.reachable.values())


# ---------------------------------------------------------------------------
# Concrete execution of a CFA


def _top_level(f: Formula) -> list[Atom]:
    if isinstance(f, Leaf):
        return [f.atom]
    if isinstance(f, And):
        return [a for c in f.children for a in _top_level(c)]
    return []


def edge_successors(e: Edge, names: Sequence[str], state: Mapping[str, int], values: range) -> list[tuple[int, ...]]:
    """Every post-state of ``e`` from ``state``, with unknowns drawn from ``values``.

    Unknowns pinned by a top-level equality are solved for; the rest are
    enumerated, auxiliaries first.  Each candidate is checked against the
    whole formula.
    """
    if e.formula == FALSE:
        return []
    env: dict[Var, Fraction] = {Var(x): Fraction(v) for x, v in state.items()}
    unknown: list[Var] = []
    for v in sorted({v for a in iter_atoms(e.formula) for v in a.vars}, key=lambda v: (v.role is not Role.AUX, v.key)):
        if v.role is Role.AUX and v not in unknown:
            unknown.append(v)
    for x in names:
        out = Var(x, None, Role.OUTPUT)
        if x in e.framed:
            env[out] = env[Var(x)]
        else:
            unknown.append(out)
    eqs = [a for a in _top_level(e.formula) if a.rel is Rel.EQ]
    results: list[tuple[int, ...]] = []

    def solve(env: dict[Var, Fraction], todo: list[Var]):
        while True:
            progress = False
            for a in eqs:
                free = [v for v in a.vars if v not in env]
                if len(free) == 1:
                    v = free[0]
                    c = a.expr.coeff(v)
                    rest = sum((k * env[u] for u, k in a.expr.terms if u != v), a.expr.const)
                    val = -rest / c
                    if val.denominator != 1:
                        return
                    env = {**env, v: val}
                    progress = True
            if not progress:
                break
        todo = [v for v in todo if v not in env]
        if todo:
            v = todo[0]
            for k in values:
                solve({**env, v: Fraction(k)}, todo[1:])
            return
        if evaluate(e.formula, env):
            results.append(tuple(int(env[Var(x, None, Role.OUTPUT)]) for x in names))

    solve(env, unknown)
    return sorted(set(results))


def interpret(cfa: Cfa, limits: Limits = Limits()) -> ConcreteRun:
    """Breadth-first enumeration of reachable (node, state) pairs.

    Variables read before being written start anywhere in the value range;
    the others start at 0, since no path can observe their initial value.
    """
    names = tuple(cfa.vars)
    live = live_variables(cfa).get(cfa.entry, frozenset())
    choices = [limits.values if x in live else (0,) for x in names]
    reach: dict[int, set[tuple[int, ...]]] = {}
    queue: deque = deque()
    truncated = False
    count = 0
    for init in itertools.product(*choices):
        reach.setdefault(cfa.entry, set()).add(init)
        queue.append((cfa.entry, init))
        count += 1
    steps = 0
    while queue:
        if steps >= limits.max_steps or count >= limits.max_states:
            truncated = True
            break
        node, st = queue.popleft()
        steps += 1
        env = dict(zip(names, st))
        for e in cfa.out_edges.get(node, ()):
            for nxt in edge_successors(e, names, env, limits.values):
                seen = reach.setdefault(e.dst, set())
                if nxt not in seen:
                    seen.add(nxt)
                    count += 1
                    queue.append((e.dst, nxt))
    return ConcreteRun(names, reach, truncated, limits)


# ---------------------------------------------------------------------------
# Direct execution of the syntax tree (cross-checks the lowering)


class _Budget(Exception):
    pass


@dataclass
class ProgramRun:
    finals: set[tuple[int, ...]]
    failed: set[int]  # lines of assertions that can fail
    truncated: bool


def interpret_program(p: Program, limits: Limits = Limits()) -> ProgramRun:
    """Set-based execution of ``p``: final states and failing assertion lines."""
    names = p.names
    steps = [0]
    failed: set[int] = set()

    def tick(n=1):
        steps[0] += n
        if steps[0] > limits.max_steps:
            raise _Budget

    def expr(e: Expr, env: dict[str, int]) -> list[int]:
        base = e.const + sum(k * env[x] for x, k in e.coeffs)
        return [base + v for v in limits.values] if e.nondet else [base]

    def cond(c: Cond, env: dict[str, int]) -> set[bool]:
        if isinstance(c, NondetCond):
            return {True, False}
        if isinstance(c, Not):
            return {not b for b in cond(c.arg, env)}
        if isinstance(c, BoolOp):
            acc = cond(c.args[0], env)
            for a in c.args[1:]:
                rhs = cond(a, env)
                if c.op == "&&":
                    acc = {x and y for x in acc for y in rhs}
                else:
                    acc = {x or y for x in acc for y in rhs}
            return acc
        out = set()
        for a in expr(c.lhs, env):
            for b in expr(c.rhs, env):
                out.add(_CMP[c.op](a, b))
        return out

    def freeze(env):
        return tuple(env[x] for x in names)

    def thaw(t):
        return dict(zip(names, t))

    def run(s: Stmt, envs: set) -> set:
        tick(len(envs))
        if isinstance(s, Block):
            for t in s.stmts:
                envs = run(t, envs)
            return envs
        if isinstance(s, Assign):
            out = set()
            for t in envs:
                env = thaw(t)
                for v in expr(s.expr, env):
                    out.add(freeze({**env, s.var: v}))
            return out
        if isinstance(s, Assume):
            return {t for t in envs if True in cond(s.cond, thaw(t))}
        if isinstance(s, Assert):
            for t in envs:
                if False in cond(s.cond, thaw(t)):
                    failed.add(s.line)
            return {t for t in envs if True in cond(s.cond, thaw(t))}
        if isinstance(s, If):
            yes = {t for t in envs if True in cond(s.cond, thaw(t))}
            no = {t for t in envs if False in cond(s.cond, thaw(t))}
            out = run(s.then, yes)
            return out | (run(s.orelse, no) if s.orelse else no)
        if isinstance(s, While):
            seen = set(envs)
            frontier = set(envs)
            exits = set()
            while frontier:
                exits |= {t for t in frontier if False in cond(s.cond, thaw(t))}
                body = run(s.body, {t for t in frontier if True in cond(s.cond, thaw(t))})
                frontier = body - seen
                seen |= frontier
                if len(seen) > limits.max_states:
                    raise _Budget
            return exits
        raise TypeError(s)

    inits = []
    for d in p.decls:
        inits.append(limits.values if d.init is None else (0,))
    envs = {tuple(v) for v in itertools.product(*inits)}
    body = [Assign(d.name, d.init, d.line) for d in p.decls if d.init is not None] + list(p.stmts)
    try:
        finals = run(Block(tuple(body)), envs)
        return ProgramRun(finals, failed, False)
    except _Budget:
        return ProgramRun(set(), failed, True)


_CMP = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


# ---------------------------------------------------------------------------
# Kleene iteration in the template domain


class DidNotConverge(Exception):
    def __init__(self, iterations: int, last):
        super().__init__(f"no fixpoint after {iterations} iterations")
        self.iterations = iterations
        self.last = last


Bounds = dict[Template, Fraction]  # a missing template is unbounded


def block_paths(cfa: Cfa, points: Iterable[int]) -> dict[tuple[int, int], list[list[Edge]]]:
    """Every edge sequence from one point to another that avoids points in between."""
    points = set(points)
    out: dict[tuple[int, int], list[list[Edge]]] = {}
    for p in sorted(points):
        stack = [(p, [])]
        while stack:
            n, path = stack.pop()
            for e in cfa.out_edges.get(n, ()):
                if e.dst == cfa.error:
                    continue
                nxt = path + [e]
                if e.dst in points:
                    out.setdefault((p, e.dst), []).append(nxt)
                else:
                    stack.append((e.dst, nxt))
    return out


def path_constraints(path: Sequence[Edge], names: Sequence[str]) -> tuple[list[list[Atom]], list[Var], list[Var]]:
    """DNF of the composed path over per-step copies of the variables.

    Returns the disjuncts, the step-0 variables and the final-step variables.
    """
    k = len(path)

    def at(step: int):
        return lambda v: (
            Var(v.name, f"t{step}") if v.role is Role.INPUT
            else Var(v.name, f"t{step + 1}") if v.role is Role.OUTPUT
            else Var(v.name, f"a{step}/{v.ns or ''}")
        )

    parts = [rename(e.formula, at(i)) for i, e in enumerate(path)]
    return dnf(conj(*parts)), [Var(x, "t0") for x in names], [Var(x, f"t{k}") for x in names]


def kleene_tcd(
    cfa: Cfa,
    templates: Mapping[int, Sequence[Template]],
    cap: int = 200,
    integer: bool = False,
) -> dict[int, Bounds | None]:
    """Value iteration from bottom on the given points (``None`` is unreachable).

    Each round recomputes every point from the previous round's values.
    Raises ``DidNotConverge`` after ``cap`` rounds.
    """
    names = tuple(cfa.vars)
    points = sorted(templates)
    paths = block_paths(cfa, points)
    compiled = {key: [path_constraints(p, names) for p in ps] for key, ps in paths.items()}
    state: dict[int, Bounds | None] = {p: None for p in points}
    state[cfa.entry] = {}
    for it in range(1, cap + 1):
        new: dict[int, Bounds | None] = {p: None for p in points}
        new[cfa.entry] = {}
        for (p, q), items in sorted(compiled.items()):
            src = state.get(p)
            if src is None:
                continue
            for disjuncts, first, last in items:
                pre = [
                    Atom.leq(t.expr.rename(lambda v, m=dict(zip(names, first)): m[v.name]), b)
                    for t, b in src.items()
                ]
                for atoms in disjuncts:
                    cons = pre + atoms
                    ints = frozenset(v for a in cons for v in a.vars) if integer else frozenset()
                    if isinstance(maximize(LpProblem(LinearExpr(), cons, ints)), Infeasible):
                        continue
                    got: Bounds = {}
                    m = dict(zip(names, last))
                    for t in templates[q]:
                        r = maximize(LpProblem(t.expr.rename(lambda v: m[v.name]), cons, ints))
                        if isinstance(r, Optimal):
                            got[t] = r.value
                    new[q] = got if new[q] is None else _hull(new[q], got)
        if new == state:
            return state
        state = new
    raise DidNotConverge(cap, state)


def _hull(a: Bounds, b: Bounds) -> Bounds:
    return {t: max(a[t], b[t]) for t in a.keys() & b.keys()}


# ---------------------------------------------------------------------------
# Soundness


@dataclass(frozen=True)
class Violation:
    node: int
    state: tuple[tuple[str, int], ...]
    reason: str


def check_soundness(run: ConcreteRun, result) -> list[Violation]:
    """Concrete states outside the reported invariant, plus failing proved assertions."""
    out: list[Violation] = []
    points = set(result.points)
    for node in sorted(run.reachable):
        if node == result.cfa.error:
            continue
        if node not in points:
            continue
        inv = result.invariants.get(node)
        for st in sorted(run.reachable[node]):
            env = dict(zip(run.names, st))
            if inv is None:
                out.append(Violation(node, tuple(env.items()), "reachable but no invariant"))
                continue
            for t, pb in inv.entries.items():
                val = sum(c * env[v.name] for v, c in t.expr.terms)
                if val > pb.bound:
                    out.append(Violation(node, tuple(env.items()), f"{t} = {val} > {pb.bound}"))
            if inv.congruence is not None:
                for x, par in inv.congruence.values:
                    if par.definite and (env[x] % 2 == 0) != (par.value == "even"):
                        out.append(Violation(node, tuple(env.items()), f"{x} is not {par.value}"))
    if result.cfa.error is not None:
        for e in result.cfa.in_edges.get(result.cfa.error, ()):
            for st in sorted(run.reachable.get(e.src, ())):
                env = dict(zip(run.names, st))
                if edge_successors(e, run.names, env, run.limits.values):
                    if result.verdicts.get(e.assertion) is not None and result.verdicts[e.assertion].value == "proved":
                        out.append(Violation(e.src, tuple(env.items()), f"assertion on line {e.assertion} fails"))
                    break
    return out
