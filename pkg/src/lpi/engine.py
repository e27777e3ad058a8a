"""Local policy iteration: the fixpoint loop, abstraction and value determination.

States live at two kinds of nodes.  The entry and the loop heads are
abstraction points and hold one ``AbstractedState`` each; every other node
holds path formulas (``IntermediateState``) grouped by their starting state.
The waitlist is ordered by position in the weak topological order, so inner
loops stabilise before control moves on.
"""

from __future__ import annotations

import enum
import math
import heapq
import itertools
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

from .cfa import Cfa, Edge, live_variables, strip_frames, unroll
from .congruence import (
    TOP_STATE,
    CongruenceState,
    Parity,
    parity_constraints,
    refine_from_bounds,
    round_bound,
    transfer_formula,
)
from .domain import (
    AbstractedState,
    BottomState,
    IntermediateState,
    PolicyBound,
    Template,
    join,
    merge_intermediate,
)
from .linear import (
    Atom,
    Formula,
    LinearExpr,
    MarkerFactory,
    Role,
    Var,
    annotate_markers,
    conj,
    conjunction_atoms,
    namespace,
    namespace_var,
    rename,
    substitute_markers,
    variables,
)
from .optimize import Optimizer
from .simplex import BudgetExceeded, Infeasible, Optimal, Unbounded, maximize_all
from .templates import Preset, TemplatePolicyConfig, synthesize


class AnalysisBudget(RuntimeError):
    pass


class InfluenceCollision(RuntimeError):
    pass


OPT_TOGGLES = ("input-independence", "syntactic-skip", "redundant-lemma")


@dataclass(frozen=True)
class AnalysisConfig:
    preset: Preset = Preset.INTERVALS
    templates: tuple[Template, ...] | None = None  # fixed set used at every abstraction point
    from_assertions: bool = True
    unroll: int = 0
    congruence: bool = False
    integer: bool = True
    input_independence: bool = True
    syntactic_skip: bool = True
    redundant_lemma: bool = True
    branch_budget: int = 10_000
    node_budget: int = 100_000
    max_abstractions: int = 20_000

    def without(self, toggles: Iterable[str]) -> "AnalysisConfig":
        names = {t.strip() for t in toggles if t.strip()}
        unknown = names - set(OPT_TOGGLES)
        if unknown:
            raise ValueError(f"unknown optimisation toggle(s): {', '.join(sorted(unknown))}")
        return replace(
            self,
            input_independence=self.input_independence and "input-independence" not in names,
            syntactic_skip=self.syntactic_skip and "syntactic-skip" not in names,
            redundant_lemma=self.redundant_lemma and "redundant-lemma" not in names,
        )

    def heuristics_off(self) -> "AnalysisConfig":
        return self.without(OPT_TOGGLES)

    def describe(self) -> dict:
        return {
            "domain": self.preset.value,
            "templates": None if self.templates is None else [str(t) for t in self.templates],
            "from_assertions": self.from_assertions,
            "unroll": self.unroll,
            "congruence": self.congruence,
            "integer_mode": "exact" if self.integer else "relaxed",
            "input_independence": self.input_independence,
            "syntactic_skip": self.syntactic_skip,
            "redundant_lemma": self.redundant_lemma,
        }


@dataclass
class Stats:
    """Counters for one run.

    ``opt_queries`` counts template maximizations: one per non-skipped
    template per abstraction plus one per maximized template per value
    determination.  Satisfiability checks on guard edges and the
    input-independence checks are counted separately.  ``lp_queries`` counts
    every linear program solved, including the ones inside the disjunctive
    search.
    """

    abstractions: int = 0
    value_determinations: int = 0
    lp_queries: int = 0
    opt_queries: int = 0
    opt_branches: int = 0
    skipped_by_syntactic_check: int = 0
    independence_checks: int = 0
    sat_checks: int = 0
    vd_infeasible: int = 0
    vd_clamped: int = 0
    stale_skipped: int = 0

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


class Verdict(enum.Enum):
    PROVED = "proved"
    UNKNOWN = "unknown"


@dataclass
class AnalysisResult:
    cfa: Cfa
    config: AnalysisConfig
    points: list[int]
    templates: dict[int, list[Template]]
    invariants: dict[int, AbstractedState]
    verdicts: dict[int, Verdict]
    stats: Stats
    error: str | None = None
    trace: list[tuple] = field(default_factory=list)
    ladder_step: int | None = None

    @property
    def all_proved(self) -> bool:
        return self.error is None and all(v is Verdict.PROVED for v in self.verdicts.values())

    def bounds(self, node: int) -> dict[str, Fraction]:
        st = self.invariants.get(node)
        return {} if st is None else {str(t): pb.bound for t, pb in st.entries.items()}

    @property
    def loop_heads(self) -> list[int]:
        return [n for n in self.points if n in self.cfa.loop_heads]


# ---------------------------------------------------------------------------
# Influence map


def compute_influencing(
    s: AbstractedState, latest: Callable[[AbstractedState], AbstractedState] | None = None
) -> dict[int, AbstractedState]:
    """Node -> state, following backpointers transitively from ``s``.

    Input-independent entries are not followed.  With ``latest`` each
    backpointer is replaced by the newest state at its node; without it two
    distinct states at one node are reported as a collision.
    """
    out = {s.node: s}
    work = [s]
    while work:
        cur = work.pop()
        for t in sorted(cur.entries, key=Template.sort_key):
            pb = cur.entries[t]
            if pb.input_independent or pb.backpointer is None:
                continue
            target = latest(pb.backpointer) if latest else pb.backpointer
            have = out.get(target.node)
            if have is None:
                out[target.node] = target
                work.append(target)
            elif have is not target and latest is None:
                raise InfluenceCollision(f"two states at n{target.node}")
    return out


# ---------------------------------------------------------------------------
# The analysis


class _Engine:
    def __init__(self, cfa: Cfa, cfg: AnalysisConfig, templates: dict[int, list[Template]]):
        self.cfa = cfa
        self.cfg = cfg
        self.names = tuple(cfa.vars)
        self.templates = templates
        self.points = {cfa.entry} | set(cfa.loop_heads)
        order = cfa.wto.flatten()
        self.pos = {n: i for i, n in enumerate(order)}
        for n in cfa.nodes:  # unreachable nodes go last
            self.pos.setdefault(n, len(self.pos))
        comps = cfa.wto.components()
        self.component = {h: frozenset(c.nodes()) for h, c in comps.items()}
        self.opt = Optimizer(
            integer=cfg.integer,
            redundant_lemma=cfg.redundant_lemma,
            branch_budget=cfg.branch_budget,
            node_budget=cfg.node_budget,
        )
        self.stats = Stats()
        self.abstracted: dict[int, AbstractedState] = {}
        self.inter: dict[int, dict[int, IntermediateState]] = {}
        self.heap: list = []
        self.seq = itertools.count()
        self.tags = itertools.count()
        self.trace: list[tuple] = []

    # -- helpers

    def fresh_tag(self) -> str:
        return f"s{next(self.tags)}"

    def push(self, node: int, item):
        heapq.heappush(self.heap, (self.pos[node], next(self.seq), item))

    def is_current(self, a: AbstractedState) -> bool:
        return self.abstracted.get(a.node) is a

    def parity_atoms(self, a: AbstractedState) -> list[Atom]:
        if not (self.cfg.congruence and self.cfg.integer) or a.congruence is None:
            return []
        tag = f"par{a.sid}"
        return parity_constraints(a.congruence, True, lambda x: Var(f"k_{x}", tag, Role.AUX))

    def lift(self, a: AbstractedState) -> IntermediateState:
        return IntermediateState.lift(a, self.names)

    # -- transfer

    def transfer(self, s: IntermediateState, e: Edge, check: bool = True) -> IntermediateState | BottomState:
        tag = self.fresh_tag()
        ssa = s.ssa_map
        framed = e.framed
        new = {x: (ssa[x] if x in framed else Var(x, tag, Role.AUX)) for x in self.names}

        def fn(v: Var) -> Var:
            if v.role is Role.INPUT:
                return ssa.get(v.name, v)
            if v.role is Role.OUTPUT:
                return new.get(v.name) or Var(v.name, tag, Role.AUX)
            if v.role is Role.AUX:
                return Var(v.name, tag if v.ns is None else f"{tag}/{v.ns}", Role.AUX)
            return v

        body = rename(strip_frames(e.formula), fn)
        formula = conj(s.formula, body)
        out = IntermediateState(
            e.dst, s.start, formula, tuple((x, new[x]) for x in self.names), s.touched | e.touched(self.names)
        )
        if check and self._is_guard(e):
            self.stats.sat_checks += 1
            base = s.start.constraints() + self.parity_atoms(s.start)
            if not self.opt.satisfiable(formula, base):
                return BottomState(e.dst)
        return out

    def _is_guard(self, e: Edge) -> bool:
        return not e.writes(self.names) and not any(v.role is Role.AUX for v in e.nonframe_vars)

    # -- abstraction

    def can_skip(self, t: Template, s: IntermediateState) -> bool:
        if not self.cfg.syntactic_skip or len(t.names) != 1:
            return False
        (x,) = t.names
        if x in s.touched:
            return False
        start = s.start
        if self.cfg.congruence and start.congruence is not None and start.congruence[x] is not Parity.TOP:
            return False
        return all(len(t0.names) == 1 for t0 in start.entries if x in t0.names)

    def abstraction(self, s: IntermediateState, templates: Sequence[Template]) -> AbstractedState | BottomState:
        self.stats.abstractions += 1
        if self.stats.abstractions > self.cfg.max_abstractions:
            raise AnalysisBudget(f"more than {self.cfg.max_abstractions} abstractions")
        start = s.start
        path = s.path_formula()
        annotated, _ = annotate_markers(path, MarkerFactory())
        parity = self.parity_atoms(start)
        base = start.constraints() + parity
        cong = None
        if self.cfg.congruence:
            cong = transfer_formula(start.congruence or TOP_STATE, path, self.names)
            if cong.is_bottom:
                return BottomState(s.node)
        entries: dict[Template, PolicyBound] = {}
        queried = False
        for t in templates:
            if self.can_skip(t, s):
                self.stats.skipped_by_syntactic_check += 1
                pb = start.entries.get(t)
                if pb is not None:
                    entries[t] = pb
                continue
            queried = True
            self.stats.opt_queries += 1
            res = self.opt.maximize_formula(t.output, annotated, base)
            if isinstance(res, Infeasible):
                return BottomState(s.node)
            if isinstance(res, Unbounded):
                continue
            policy = conj(*parity, substitute_markers(annotated, res.model.boolean))
            independent = False
            if self.cfg.input_independence:
                self.stats.independence_checks += 1
                independent = not self.opt.check_exceeds(annotated, [], t.output, res.value)
            entries[t] = PolicyBound(res.value, policy, start, independent)
            self.trace.append(("policy", s.node, str(t), res.value, {m.name: b for m, b in res.model.boolean.items()}))
        if not queried:
            self.stats.sat_checks += 1
            if not self.opt.satisfiable(annotated, base):
                return BottomState(s.node)
        state = AbstractedState(s.node, entries, cong)
        return self._finish(state)

    def _finish(self, state: AbstractedState) -> AbstractedState:
        """Exchange information between bounds and parities."""
        if state.congruence is None:
            return state
        cong = refine_from_bounds(state.congruence, state)
        entries = state.entries
        if not self.cfg.integer:
            entries = {}
            for t, pb in state.entries.items():
                if len(t.names) == 1 and cong[next(iter(t.names))].definite:
                    b = round_bound(pb.bound, cong[next(iter(t.names))])
                    if b != pb.bound:
                        pb = PolicyBound(b, pb.policy, pb.backpointer, pb.input_independent)
                entries[t] = pb
        return AbstractedState(state.node, entries, cong, state.sid)

    # -- value determination

    def value_determination(self, n: int, joined: AbstractedState) -> AbstractedState:
        self.stats.value_determinations += 1
        comp = self.component.get(n, frozenset({n}))

        def current(node: int) -> AbstractedState:
            return joined if node == n else self.abstracted[node]

        targets = [
            t
            for t in sorted(joined.entries, key=Template.sort_key)
            if joined.entries[t].backpointer is not None
            and joined.entries[t].backpointer.node in comp
            and not joined.entries[t].input_independent
        ]
        if not targets:
            return joined
        dvars: dict[tuple[int, Template], Var] = {}
        constraints: list[Atom] = []
        work: list[tuple[int, Template]] = []

        def dvar(node: int, t: Template) -> Var:
            key = (node, t)
            v = dvars.get(key)
            if v is None:
                v = Var(f"d{len(dvars)}", "vd", Role.AUX)
                dvars[key] = v
                work.append(key)
            return v

        for t in targets:
            dvar(n, t)
        while work:
            node, t = work.pop(0)
            pb = current(node).entries[t]
            ns = f"p{dvars[(node, t)].name}"
            to_ns = lambda u, ns=ns: namespace_var(u, ns)  # noqa: E731
            constraints.extend(conjunction_atoms(namespace(pb.policy, ns)))
            constraints.append(Atom.eq(dvars[(node, t)], t.output.rename(to_ns)))
            if pb.input_independent or pb.backpointer is None:
                continue
            used = {u.name for u in variables(pb.policy) if u.role is Role.INPUT and u.ns is None}
            bp = pb.backpointer
            if bp.node in comp:
                src = current(bp.node)
                for t0 in sorted(src.entries, key=Template.sort_key):
                    if t0.names & used:
                        constraints.append(Atom.leq(t0.expr.rename(to_ns), dvar(bp.node, t0)))
            else:
                for t0 in sorted(bp.entries, key=Template.sort_key):
                    if t0.names & used:
                        constraints.append(Atom.leq(t0.expr.rename(to_ns), bp.entries[t0].bound))
        entries = dict(joined.entries)
        objectives = [LinearExpr.var(dvars[(n, t)]) for t in targets]
        results = maximize_all(objectives, constraints, budget=self.cfg.node_budget)
        for t, res in zip(targets, results):
            self.stats.opt_queries += 1
            self.stats.lp_queries += 1
            old = joined.entries[t]
            if isinstance(res, Unbounded):
                del entries[t]
            elif isinstance(res, Infeasible):
                self.stats.vd_infeasible += 1
            else:
                value = res.value
                if self.cfg.integer and t.expr.is_integral():
                    value = Fraction(math.floor(value))
                if value < old.bound:
                    self.stats.vd_clamped += 1
                    value = old.bound
                entries[t] = PolicyBound(value, old.policy, old.backpointer, old.input_independent)
        out = AbstractedState(n, entries, joined.congruence)
        self.trace.append(("value_determination", n, _bounds(out), len(dvars)))
        return self._finish(out)

    # -- the fixpoint loop

    def run(self):
        entry = AbstractedState(self.cfa.entry, {}, TOP_STATE if self.cfg.congruence else None)
        self.abstracted[entry.node] = entry
        self.push(entry.node, entry)
        while self.heap:
            _, _, item = heapq.heappop(self.heap)
            if isinstance(item, AbstractedState):
                if not self.is_current(item):
                    continue
                src = self.lift(item)
            else:
                bucket = self.inter.get(item.node, {})
                if bucket.get(item.start.sid) is not item:
                    continue
                if not self.is_current(item.start):
                    del bucket[item.start.sid]
                    self.stats.stale_skipped += 1
                    continue
                if item.node in self.points:
                    del bucket[item.start.sid]
                    self.abstract_and_merge(item)
                    continue
                src = item
            for e in self.cfa.out_edges.get(src.node, ()):
                if e.dst == self.cfa.error:
                    continue  # assertions are checked once the fixpoint is reached
                nxt = self.transfer(src, e)
                if isinstance(nxt, BottomState):
                    continue
                self.add(nxt)

    def add(self, s: IntermediateState):
        bucket = self.inter.setdefault(s.node, {})
        for sid in [k for k, v in bucket.items() if not self.is_current(v.start)]:
            del bucket[sid]
        old = bucket.get(s.start.sid)
        if old is not None:
            merged = merge_intermediate(old, s, self._merge_var)
            if merged is old:
                return
            s = merged
        bucket[s.start.sid] = s
        self.push(s.node, s)

    def _merge_var(self, name: str) -> Var:
        return Var(name, self.fresh_tag(), Role.AUX)

    def abstract_and_merge(self, s: IntermediateState):
        n = s.node
        new = self.abstraction(s, self.templates.get(n, ()))
        if isinstance(new, BottomState):
            self.trace.append(("bottom", n))
            return
        self.trace.append(("abstraction", n, _bounds(new)))
        old = self.abstracted.get(n)
        if old is None:
            self.abstracted[n] = new
            self.push(n, new)
            return
        joined = join(new, old)
        if joined.same_value(old):
            return
        comp = self.component.get(n)
        if comp is not None:
            updated = [
                t
                for t, pb in joined.entries.items()
                if pb is new.entries.get(t) and pb is not old.entries.get(t)
            ]
            if any(
                joined.entries[t].backpointer is not None and joined.entries[t].backpointer.node in comp
                for t in updated
            ):
                joined = self.value_determination(n, joined)
        self.trace.append(("merge", n, _bounds(joined)))
        self.abstracted[n] = joined
        self.push(n, joined)

    # -- verdicts

    def states_at(self, node: int) -> list[IntermediateState]:
        if node in self.points:
            a = self.abstracted.get(node)
            return [] if a is None else [self.lift(a)]
        return [s for s in self.inter.get(node, {}).values() if self.is_current(s.start)]

    def verdicts(self) -> dict[int, Verdict]:
        out = {line: Verdict.PROVED for line in self.cfa.assertions}
        for e in self.cfa.edges:
            if e.assertion is None or out[e.assertion] is Verdict.UNKNOWN:
                continue
            for s in self.states_at(e.src):
                nxt = self.transfer(s, e, check=False)
                self.stats.sat_checks += 1
                if self.opt.satisfiable(nxt.formula, s.start.constraints() + self.parity_atoms(s.start)):
                    out[e.assertion] = Verdict.UNKNOWN
                    break
        return out


def _bounds(a: AbstractedState) -> dict[str, Fraction]:
    return {str(t): pb.bound for t, pb in sorted(a.entries.items(), key=lambda kv: kv[0].sort_key())}


def abstraction_points(cfa: Cfa) -> list[int]:
    pts = {cfa.entry} | set(cfa.loop_heads)
    return [n for n in cfa.wto.flatten() if n in pts]


def templates_for(cfa: Cfa, cfg: AnalysisConfig) -> dict[int, list[Template]]:
    points = abstraction_points(cfa)
    if cfg.templates is not None:
        fixed = sorted(set(cfg.templates), key=Template.sort_key)
        return {n: list(fixed) for n in points}
    return synthesize(cfa, live_variables(cfa), TemplatePolicyConfig(cfg.preset, cfg.from_assertions), points)


def run(cfa: Cfa, cfg: AnalysisConfig = AnalysisConfig()) -> AnalysisResult:
    """Analyze ``cfa``; on budget exhaustion the partial result has every assertion unknown."""
    analyzed = unroll(cfa, cfg.unroll) if cfg.unroll else cfa
    templates = templates_for(analyzed, cfg)
    eng = _Engine(analyzed, cfg, templates)
    error = None
    try:
        eng.run()
        verdicts = eng.verdicts()
    except (AnalysisBudget, BudgetExceeded) as exc:
        error = str(exc)
        verdicts = {line: Verdict.UNKNOWN for line in analyzed.assertions}
    eng.stats.lp_queries += eng.opt.stats.lp_queries
    eng.stats.opt_branches = eng.opt.stats.branches
    return AnalysisResult(
        analyzed,
        cfg,
        abstraction_points(analyzed),
        templates,
        dict(eng.abstracted),
        verdicts,
        eng.stats,
        error,
        eng.trace,
    )


# ---------------------------------------------------------------------------
# Certification


def block_successors(
    cfa: Cfa, points: Iterable[int], start: AbstractedState, transfer
) -> dict[int, IntermediateState]:
    """Merged path formulas from ``start`` to every abstraction point one block away."""
    points = set(points)
    order = {n: i for i, n in enumerate(cfa.wto.flatten())}
    heap = [(order.get(start.node, 0), 0, IntermediateState.lift(start, cfa.vars))]
    seq = itertools.count(1)
    pending: dict[int, IntermediateState] = {}
    out: dict[int, IntermediateState] = {}
    while heap:
        _, _, s = heapq.heappop(heap)
        if pending.get(s.node) is not s and s.node != start.node:
            continue
        for e in cfa.out_edges.get(s.node, ()):
            if e.dst == cfa.error:
                continue
            nxt = transfer(s, e)
            target = out if e.dst in points else pending
            old = target.get(e.dst)
            if old is not None:
                nxt = merge_intermediate(old, nxt, lambda x: Var(x, f"c{next(seq)}", Role.AUX))
            target[e.dst] = nxt
            if e.dst not in points:
                heapq.heappush(heap, (order.get(e.dst, 0), next(seq), nxt))
    return out


def check_inductive(result: AnalysisResult, cfa: Cfa | None = None) -> bool:
    """Re-check that the reported invariant is closed under every block."""
    cfa = cfa or result.cfa
    cfg = result.config
    eng = _Engine(cfa, cfg, result.templates)
    opt = Optimizer(integer=cfg.integer, branch_budget=cfg.branch_budget, node_budget=cfg.node_budget)
    inv = result.invariants
    entry = inv.get(cfa.entry)
    if entry is None or entry.entries:
        return False
    points = abstraction_points(cfa)
    for p in points:
        src = inv.get(p)
        if src is None:
            continue
        base = src.constraints() + eng.parity_atoms(src)
        for q, s in block_successors(cfa, points, src, lambda s, e: eng.transfer(s, e, check=False)).items():
            path, _ = annotate_markers(s.path_formula(), MarkerFactory())
            tgt = inv.get(q)
            if tgt is None:
                if opt.satisfiable(path, base):
                    return False
                continue
            for t, pb in tgt.entries.items():
                if opt.check_exceeds(path, base, t.output, pb.bound):
                    return False
            if cfg.integer and tgt.congruence is not None:
                for x, par in tgt.congruence.values:
                    if not par.definite:
                        continue
                    k = Var("k_chk", "chk", Role.AUX)
                    wrong = Atom.eq(LinearExpr.var(Var(x, None, Role.OUTPUT)) - LinearExpr.var(k, 2), 1 if par is Parity.EVEN else 0)
                    if opt.satisfiable(path, base + [wrong]):
                        return False
    return True


def abstract_block(
    cfa: Cfa, start: AbstractedState, target: int, templates: Sequence[Template], cfg: AnalysisConfig = AnalysisConfig()
) -> tuple[AbstractedState | BottomState, list[tuple]]:
    """Abstract the merged paths from ``start`` to ``target``; also returns the trace."""
    eng = _Engine(cfa, cfg, {})
    points = {start.node, target}
    succ = block_successors(cfa, points, start, lambda s, e: eng.transfer(s, e, check=False))
    if target not in succ:
        return BottomState(target), eng.trace
    return eng.abstraction(succ[target], templates), eng.trace


# ---------------------------------------------------------------------------
# Refinement


LADDER: tuple[dict, ...] = (
    {"preset": Preset.INTERVALS},
    {"preset": Preset.OCTAGONS},
    {"preset": Preset.OCTAGONS, "unroll": 2},
    {"preset": Preset.RICH, "unroll": 2},
    {"preset": Preset.RICH, "unroll": 2, "congruence": True},
)


def refine_ladder(cfa: Cfa, base: AnalysisConfig = AnalysisConfig()) -> AnalysisResult:
    """Try progressively richer configurations until every assertion is proved."""
    result = None
    for step, over in enumerate(LADDER, 1):
        result = run(cfa, replace(base, templates=None, **over))
        result.ladder_step = step
        if result.all_proved:
            break
    return result
