"""Exact rational linear programming.

Primal simplex with Bland's rule on a sparse tableau, plus depth-first
branch-and-bound for integer variables.  Equalities with a unit coefficient
are eliminated by substitution before the tableau is built, which keeps the
problems produced by the analysis small.

The pivot step is the hot loop; it comes from the compiled extension
``lpi._kernel`` when that is importable and from :mod:`lpi._kernel_py`
otherwise (see ``KERNEL``).  Setting ``LPI_PURE_PYTHON=1`` forces the
fallback.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction
from math import floor, ceil, gcd
from functools import reduce
from typing import Iterable, Mapping, Sequence

from .linear import Atom, LinearExpr, Model, Rel, Var

try:  # pragma: no cover - depends on the build
    if os.environ.get("LPI_PURE_PYTHON"):
        raise ImportError("pure Python requested")
    from ._kernel import pivot as _pivot

    KERNEL = "compiled"
except ImportError:  # pragma: no cover
    from ._kernel_py import pivot as _pivot

    KERNEL = "python"

try:  # exact rationals in C; Fraction is the fallback
    from gmpy2 import mpq as _Q
except ImportError:  # pragma: no cover
    _Q = Fraction

log = logging.getLogger(__name__)


def _out(q) -> Fraction:
    return q if isinstance(q, Fraction) else Fraction(int(q.numerator), int(q.denominator))

DEFAULT_NODE_BUDGET = 100_000
DEGENERATE_LIMIT = 20


class BudgetExceeded(RuntimeError):
    """Branch-and-bound (or an enclosing search) ran out of nodes."""


@dataclass(frozen=True)
class Infeasible:
    def __bool__(self):
        return False


@dataclass(frozen=True)
class Unbounded:
    ray: Mapping[Var, Fraction] = field(default_factory=dict)
    model: Model | None = None


@dataclass(frozen=True)
class Optimal:
    value: Fraction
    model: Model


LpResult = Infeasible | Unbounded | Optimal
INFEASIBLE = Infeasible()


@dataclass
class LpProblem:
    objective: LinearExpr
    constraints: Sequence[Atom]
    integer_vars: frozenset[Var] = frozenset()


@dataclass
class LpStats:
    lp_calls: int = 0
    pivots: int = 0
    bb_nodes: int = 0


STATS = LpStats()


# ---------------------------------------------------------------------------
# Tableau simplex over free variables


class _Tableau:
    """Rows ``x_basis[i] + sum_j a[i][j] x_j = b[i]`` over non-negative columns."""

    def __init__(self, rows, rhs, basis, ncols):
        self.rows: list[dict[int, Fraction]] = rows
        self.rhs: list[Fraction] = rhs
        self.basis: list[int] = basis
        self.ncols = ncols

    def pivot(self, r: int, j: int, obj: dict[int, Fraction], zbox: list):
        STATS.pivots += 1
        _pivot(self.rows, self.rhs, self.basis, r, j, obj, zbox)

    def run(self, obj: dict[int, Fraction], zbox: list, forbid: set[int] = frozenset()):
        """Maximize ``zbox[0] + sum obj[j] x_j``; returns None or an unbounded column.

        The entering column has the largest reduced cost; after a run of
        degenerate pivots Bland's rule takes over until the objective moves,
        which rules out cycling.
        """
        stalled = 0
        while True:
            entering = None
            if stalled >= DEGENERATE_LIMIT:
                for j in sorted(obj):
                    if obj[j] > 0 and j not in forbid:
                        entering = j
                        break
            else:
                top = 0
                for j, c in obj.items():
                    if c > top and j not in forbid or (c == top and c > 0 and j < entering and j not in forbid):
                        top, entering = c, j
            if entering is None:
                return None
            best = None
            for i, row in enumerate(self.rows):
                a = row.get(entering)
                if a is not None and a > 0:
                    ratio = self.rhs[i] / a
                    key = (ratio, self.basis[i])
                    if best is None or key < best[0]:
                        best = (key, i)
            if best is None:
                return entering
            stalled = stalled + 1 if best[0][0] == 0 else 0
            self.pivot(best[1], entering, obj, zbox)

    def price(self, cost: Mapping[int, Fraction]) -> tuple[dict[int, Fraction], list]:
        """Express ``sum cost[k] x_k`` in terms of the non-basic columns."""
        obj: dict[int, Fraction] = {}
        z = _Q(0)
        where = {b: i for i, b in enumerate(self.basis)}
        for k, c in cost.items():
            if c == 0:
                continue
            i = where.get(k)
            if i is None:
                obj[k] = obj.get(k, 0) + c
            else:
                z += c * self.rhs[i]
                for j, a in self.rows[i].items():
                    obj[j] = obj.get(j, 0) - c * a
        return {j: c for j, c in obj.items() if c != 0}, [z]

    def values(self) -> dict[int, Fraction]:
        return {b: self.rhs[i] for i, b in enumerate(self.basis)}


@dataclass
class _Prepared:
    """A feasible tableau for one constraint set, ready for any objective.

    Every variable is free.  Each one that occurs in a constraint is pivoted
    into the basis once and its row is moved to ``defs``: such rows never
    take part in ratio tests, and the variable's value is read back from its
    row at the end.  ``loose`` lists variables left in no constraint.
    """

    index: dict[Var, int]
    tab: _Tableau
    defs: list[tuple[int, dict, object]]
    loose: set[int]
    art: int
    obj: dict | None = None  # reduced costs after the last phase 2
    zbox: list | None = None

    def copy(self) -> "_Prepared":
        tab = _Tableau([dict(r) for r in self.tab.rows], list(self.tab.rhs), list(self.tab.basis), self.tab.ncols)
        obj = None if self.obj is None else dict(self.obj)
        zbox = None if self.zbox is None else list(self.zbox)
        return _Prepared(self.index, tab, self.defs, self.loose, self.art, obj, zbox)

    def add_bound(self, v: Var, coeff: int, bound) -> None:
        """Append the row ``coeff * v <= bound``, written over the non-basic columns."""
        tab = self.tab
        expr = {self.index[v]: _Q(coeff)}
        const = _Q(0)
        where = {b: i for i, b in enumerate(tab.basis)}
        defs = {k: (row, b) for k, row, b in self.defs}
        while True:
            col = next((j for j in expr if j in where or j in defs), None)
            if col is None:
                break
            c = expr.pop(col)
            row, b = (tab.rows[where[col]], tab.rhs[where[col]]) if col in where else defs[col]
            const += c * b
            for j, a in row.items():
                x = expr.get(j, 0) - c * a
                if x:
                    expr[j] = x
                else:
                    expr.pop(j, None)
        tab.rows.append(expr)
        tab.rhs.append(_Q(bound) - const)
        tab.basis.append(tab.ncols)
        tab.ncols += 1

    def dual_simplex(self) -> bool:
        """Restore primal feasibility keeping the reduced costs optimal; False if infeasible."""
        tab, obj = self.tab, self.obj
        while True:
            bad = [i for i, b in enumerate(tab.rhs) if b < 0]
            if not bad:
                return True
            r = min(bad, key=lambda i: tab.basis[i])
            row = tab.rows[r]
            cands = [j for j, a in row.items() if a < 0]
            if not cands:
                return False
            j = min(cands, key=lambda j: (obj.get(j, 0) / row[j], j))
            tab.pivot(r, j, obj, self.zbox)


def _prepare(constraints: Sequence[Atom], extra_vars: Iterable[Var] = ()) -> "_Prepared | Infeasible":
    STATS.lp_calls += 1
    vars_ = sorted({v for a in constraints for v in a.vars} | set(extra_vars), key=lambda v: v.key)
    index = {v: k for k, v in enumerate(vars_)}
    n = len(vars_)
    rows: list[dict] = []
    rhs: list = []
    for a in constraints:
        coeffs = {index[v]: _Q(c) for v, c in a.expr.terms}
        b = _Q(-a.expr.const)
        rows.append(coeffs)
        rhs.append(b)
        if a.rel is Rel.EQ:
            rows.append({k: -c for k, c in coeffs.items()})
            rhs.append(-b)
    m = len(rows)
    tab = _Tableau(rows, rhs, [n + i for i in range(m)], n + m + 1)
    art = n + m
    defs: list[tuple[int, dict, object]] = []
    loose: set[int] = set()
    for k in range(n):
        cands = [i for i, row in enumerate(tab.rows) if k in row]
        if not cands:
            loose.add(k)
            continue
        r = min(cands, key=lambda i: (len(tab.rows[i]), i))
        tab.pivot(r, k, {}, [_Q(0)])
        defs.append((k, tab.rows.pop(r), tab.rhs.pop(r)))
        tab.basis.pop(r)
    if any(b < 0 for b in tab.rhs):
        for row in tab.rows:
            row[art] = _Q(-1)
        r = min(range(len(tab.rhs)), key=lambda i: (tab.rhs[i], i))
        obj, zbox = tab.price({art: _Q(-1)})
        tab.pivot(r, art, obj, zbox)
        tab.run(obj, zbox)
        if zbox[0] < 0:
            return INFEASIBLE
        if art in tab.basis:
            r = tab.basis.index(art)
            row = tab.rows[r]
            if row:
                tab.pivot(r, min(row), {}, [_Q(0)])
            else:
                del tab.rows[r], tab.rhs[r], tab.basis[r]
        for row in tab.rows:
            row.pop(art, None)
    return _Prepared(index, tab, defs, loose, art)


def _optimize(prep: _Prepared, objective: LinearExpr) -> LpResult:
    """Phase 2 on a prepared tableau (which it modifies)."""
    tab, index = prep.tab, prep.index
    cost: dict[int, object] = {}
    z0 = _Q(0)
    for v, c in objective.terms:
        cost[index[v]] = cost.get(index[v], 0) + _Q(c)
    for k, row, b in prep.defs:  # substitute basic free variables, earliest first
        c = cost.pop(k, None)
        if c:
            z0 += c * b
            for j, a in row.items():
                cost[j] = cost.get(j, 0) - c * a
    cost = {j: c for j, c in cost.items() if c}
    free_dir = next(((j, c) for j, c in sorted(cost.items()) if j in prep.loose), None)
    if free_dir is None:
        obj, zbox = tab.price(cost)
        zbox[0] += z0
        col = tab.run(obj, zbox, forbid={prep.art})
        if col is None:
            prep.obj, prep.zbox = obj, zbox
    else:
        col, zbox = free_dir[0], [z0]
    return _read(prep, objective, col, zbox, free_dir)


def _read(prep: _Prepared, objective: LinearExpr, col, zbox, free_dir=None) -> LpResult:
    tab = prep.tab
    vals = {b: tab.rhs[i] for i, b in enumerate(tab.basis)}
    model = Model(_structural(prep, vals))
    if col is not None:
        sign = 1 if free_dir is None or free_dir[1] > 0 else -1
        direction = {col: _Q(sign)}
        for i, b in enumerate(tab.basis):
            a = tab.rows[i].get(col)
            if a:
                direction[b] = -a * sign
        ray = {v: d for v, d in _structural(prep, direction, homogeneous=True).items() if d != 0}
        return Unbounded(ray, model)
    return Optimal(objective.const + _out(zbox[0]), model)


def _structural(prep: _Prepared, vals: dict, homogeneous: bool = False) -> dict[Var, Fraction]:
    vals = dict(vals)
    for k, row, b in reversed(prep.defs):
        acc = _Q(0) if homogeneous else b
        for j, a in row.items():
            x = vals.get(j)
            if x:
                acc -= a * x
        vals[k] = acc
    return {v: _out(vals.get(k, 0)) for v, k in prep.index.items()}


def _solve_lp(objective: LinearExpr, constraints: Sequence[Atom]) -> LpResult:
    """Rational LP with free variables; constraints are ``<=``/``==`` atoms."""
    prep = _prepare(constraints, objective.vars)
    if isinstance(prep, Infeasible):
        return prep
    return _optimize(prep, objective)


# ---------------------------------------------------------------------------
# Presolve: substitute out equalities with a unit coefficient


def _unit_pick(a: Atom, integer_vars: frozenset[Var]):
    """A variable with coefficient +-1 that ``a`` can be solved for without losing integrality."""
    for v, c in a.expr.terms:
        if abs(c) != 1:
            continue
        if v in integer_vars:
            others_ok = all(
                w in integer_vars and d.denominator == 1 for w, d in a.expr.terms if w != v
            ) and a.expr.const.denominator == 1
            if not others_ok:
                continue
        return v, c
    return None


def _substitute_defs(e: LinearExpr, defs) -> LinearExpr:
    for v, d in defs:
        if v in e.coeffs:
            e = e.substitute(v, d)
    return e


def _eliminate(objective: LinearExpr, constraints: Sequence[Atom], integer_vars: frozenset[Var]):
    atoms: list[Atom | None] = list(constraints)
    occ: dict[Var, set[int]] = {}
    for i, a in enumerate(atoms):
        for v in a.vars:
            occ.setdefault(v, set()).add(i)
    defs: list[tuple[Var, LinearExpr]] = []
    changed = True
    while changed:
        changed = False
        for idx in range(len(atoms)):
            a = atoms[idx]
            if a is None or a.rel is not Rel.EQ or not a.expr.terms:
                continue
            pick = _unit_pick(a, integer_vars)
            if pick is None:
                continue
            v, c = pick
            # v = -(expr - c v) / c
            rest = LinearExpr(tuple(t for t in a.expr.terms if t[0] != v), a.expr.const)
            definition = rest * (-1 / c)
            defs.append((v, definition))
            atoms[idx] = None
            for w in a.vars:
                occ[w].discard(idx)
            for j in sorted(occ.pop(v, ())):
                old = atoms[j]
                new = Atom(old.expr.substitute(v, definition), old.rel)
                atoms[j] = new
                for w in definition.vars:
                    if w in new.vars:
                        occ.setdefault(w, set()).add(j)
                    else:
                        occ.get(w, set()).discard(j)
            changed = True
    atoms = [a for a in atoms if a is not None]
    objective = _substitute_defs(objective, defs)
    kept = []
    for a in atoms:
        if a.expr.is_constant():
            ok = a.expr.const <= 0 if a.rel is Rel.LEQ else a.expr.const == 0
            if not ok:
                return None
            continue
        if a.rel is Rel.EQ and all(v in integer_vars for v in a.vars):
            cs = [c for _, c in a.expr.terms]
            if all(c.denominator == 1 for c in cs) and a.expr.const.denominator == 1:
                g = reduce(gcd, (int(abs(c)) for c in cs))
                if int(a.expr.const) % g:
                    return None
        if a.rel is Rel.LEQ and all(v in integer_vars for v in a.vars):
            a = _tighten(a)
        kept.append(a)
    return objective, _dedup(kept), defs


def _tighten(a: Atom) -> Atom:
    """Integer rounding of ``sum c_i x_i <= b`` with integral coefficients."""
    e = a.expr
    if not all(c.denominator == 1 for _, c in e.terms):
        return a
    g = reduce(gcd, (int(abs(c)) for _, c in e.terms))
    b = -e.const
    nb = Fraction(floor(b / g))
    if g == 1 and nb == b:
        return a
    return Atom(LinearExpr(tuple((v, c / g) for v, c in e.terms), -nb), Rel.LEQ)


def _dedup(atoms: list[Atom]) -> list[Atom]:
    """Keep only the tightest of parallel ``<=`` rows with identical left-hand sides."""
    best: dict = {}
    order = []
    for a in atoms:
        if a.rel is Rel.LEQ:
            key = ("le", a.expr.terms)
            cur = best.get(key)
            if cur is None:
                order.append(key)
                best[key] = a
            elif a.expr.const > cur.expr.const:
                best[key] = a
        else:
            key = ("eq", a.expr.terms, a.expr.const)
            if key not in best:
                order.append(key)
                best[key] = a
    return [best[k] for k in order]


def _complete_model(model: Model, defs, objective_vars: Iterable[Var]) -> Model:
    vals = dict(model.numeric)
    for v, e in reversed(defs):
        for w in e.vars:
            vals.setdefault(w, Fraction(0))
        vals[v] = e.evaluate(vals)
    for v in objective_vars:
        vals.setdefault(v, Fraction(0))
    return Model(vals)


# ---------------------------------------------------------------------------
# Public entry points


def maximize(problem: LpProblem, budget: int = DEFAULT_NODE_BUDGET) -> LpResult:
    """Exact maximum of ``problem.objective``.

    Over the rationals when ``integer_vars`` is empty, otherwise integral in the
    listed variables.  Raises :class:`BudgetExceeded` when branch-and-bound needs
    more than ``budget`` nodes.
    """
    ints = frozenset(problem.integer_vars)
    all_vars = {v for a in problem.constraints for v in a.vars} | problem.objective.vars
    pre = _eliminate(problem.objective, problem.constraints, ints)
    if pre is None:
        return INFEASIBLE
    objective, atoms, defs = pre
    remaining_ints = ints & ({v for a in atoms for v in a.vars} | objective.vars)
    prep = _prepare(atoms, objective.vars)
    if isinstance(prep, Infeasible):
        return prep
    res = _optimize(prep, objective)
    if remaining_ints:
        res = _branch_and_bound(objective, atoms, remaining_ints, budget, res, prep)
    return _finish(res, defs, all_vars)


def maximize_all(
    objectives: Sequence[LinearExpr],
    constraints: Sequence[Atom],
    integer_vars: Iterable[Var] = frozenset(),
    budget: int = DEFAULT_NODE_BUDGET,
) -> list[LpResult]:
    """``maximize`` for several objectives over one constraint set.

    Presolve and phase 1 run once; each objective then starts from the
    optimal basis of the one before.
    """
    ints = frozenset(integer_vars)
    all_vars = {v for a in constraints for v in a.vars}
    for o in objectives:
        all_vars |= o.vars
    pre = _eliminate(LinearExpr(), constraints, ints)
    if pre is None:
        return [INFEASIBLE for _ in objectives]
    _, atoms, defs = pre
    objs = [_substitute_defs(o, defs) for o in objectives]
    used = {v for a in atoms for v in a.vars}
    for o in objs:
        used |= o.vars
    remaining_ints = ints & used
    prep = _prepare(atoms, used)
    if isinstance(prep, Infeasible):
        return [INFEASIBLE for _ in objectives]
    out = []
    for o in objs:  # each phase 2 starts from the previous optimum
        root = _optimize(prep, o)
        if remaining_ints:
            root = _branch_and_bound(o, atoms, remaining_ints, budget, root, prep)
        out.append(_finish(root, defs, all_vars))
    return out


def _finish(res: LpResult, defs, all_vars) -> LpResult:
    """Restore the variables removed by presolve."""
    if isinstance(res, Infeasible):
        return res
    model = _complete_model(res.model, defs, all_vars)
    if isinstance(res, Unbounded):
        ray = dict(res.ray)
        for v, e in reversed(defs):
            d = sum((c * ray.get(w, 0) for w, c in e.terms), Fraction(0))
            if d:
                ray[v] = d
        return Unbounded(ray, model)
    return Optimal(res.value, model)


def is_satisfiable(constraints: Sequence[Atom], integer_vars: Iterable[Var] = (), budget: int = DEFAULT_NODE_BUDGET) -> bool:
    res = maximize(LpProblem(LinearExpr(), constraints, frozenset(integer_vars)), budget)
    return not isinstance(res, Infeasible)


def _branch_and_bound(objective, atoms, ints, budget, root: LpResult | None = None, prep: _Prepared | None = None) -> LpResult:
    """Depth-first search, floor branch first.

    ``root`` is the relaxation of ``atoms`` if already solved and ``prep`` its
    optimal tableau.  A child of a node with an optimal tableau adds its bound
    as a new row and is re-solved by dual simplex; other nodes are solved from
    scratch.
    """
    integral_obj = objective.is_integral() and objective.vars <= ints
    best: Optimal | None = None
    nodes = 0
    # entries: (constraints, parent tableau or None, bound to add or None)
    stack: list[tuple[list[Atom], _Prepared | None, tuple | None]] = [(list(atoms), None, None)]
    while stack:
        cons, parent, bound = stack.pop()
        nodes += 1
        STATS.bb_nodes += 1
        if nodes > budget:
            raise BudgetExceeded(f"branch-and-bound exceeded {budget} nodes")
        node = None
        if root is not None:
            res, node, root = root, prep, None
        elif parent is not None:
            STATS.lp_calls += 1
            node = parent.copy()
            node.add_bound(*bound)
            if not node.dual_simplex():
                continue
            col = node.tab.run(node.obj, node.zbox, forbid={node.art})
            res = _read(node, objective, col, node.zbox)
            if col is not None:
                node = None
        else:
            node = _prepare(cons, objective.vars)
            if isinstance(node, Infeasible):
                continue
            res = _optimize(node, objective)
        if isinstance(res, Unbounded) or node is None or node.obj is None:
            node = None
        if isinstance(res, Optimal) and best is not None:
            limit = floor(res.value) if integral_obj else res.value
            if limit <= best.value:
                continue
        point = res.model.numeric
        frac = [(v, point[v]) for v in sorted(ints, key=lambda v: v.key) if point.get(v, Fraction(0)).denominator != 1]
        if not frac:
            if isinstance(res, Unbounded):
                # an integral feasible point plus a rational ray: unbounded over the integers too
                return res
            best = res
            continue
        v, val = max(frac, key=lambda t: t[1].denominator)  # first maximal denominator wins
        lo, hi = floor(val), ceil(val)
        stack.append((cons + [Atom.geq(LinearExpr.var(v), hi)], node, (v, -1, -hi)))
        stack.append((cons + [Atom.leq(LinearExpr.var(v), lo)], node, (v, 1, lo)))
    return best if best is not None else INFEASIBLE
