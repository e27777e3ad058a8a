"""Control flow automata and the structural analyses run on them."""

from __future__ import annotations

import sys
from collections import defaultdict
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Iterator, Union

from .linear import FALSE, And, Atom, Formula, Leaf, Rel, Role, Var, conj, iter_atoms, variables


class IrreducibleGraph(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Edge:
    src: int
    dst: int
    formula: Formula
    assertion: int | None = None  # source line of the assertion for edges into the error node
    label: str = ""

    @cached_property
    def framed(self) -> frozenset[str]:
        """Variables copied unchanged by a top-level frame equality."""
        names = set()
        for a in _top_atoms(self.formula):
            if a.frame:
                names.add(next(iter(a.vars)).name)
        return frozenset(names)

    @cached_property
    def nonframe_vars(self) -> frozenset[Var]:
        acc: set[Var] = set()
        for a in iter_atoms(self.formula):
            if not a.frame:
                acc |= a.vars
        return frozenset(acc)

    def reads(self) -> frozenset[str]:
        return frozenset(v.name for v in self.nonframe_vars if v.role is Role.INPUT)

    def writes(self, program_vars: Iterable[str]) -> frozenset[str]:
        return frozenset(x for x in program_vars if x not in self.framed)

    def touched(self, program_vars: Iterable[str]) -> frozenset[str]:
        """Program variables this edge reads or changes outside frame copies."""
        mentioned = {v.name for v in self.nonframe_vars if v.role in (Role.INPUT, Role.OUTPUT)}
        return frozenset(mentioned) | self.writes(program_vars)


def _top_atoms(f: Formula) -> Iterator[Atom]:
    if isinstance(f, Leaf):
        yield f.atom
    elif isinstance(f, And):
        for c in f.children:
            yield from _top_atoms(c)


def frame_atom(name: str) -> Atom:
    a = Atom.eq(Var(name, None, Role.OUTPUT), Var(name))
    return Atom(a.expr, Rel.EQ, frame=True)


def frames(names: Iterable[str]) -> list[Atom]:
    return [frame_atom(x) for x in sorted(names)]


@dataclass
class Cfa:
    nodes: list[int]
    entry: int
    edges: list[Edge]
    vars: tuple[str, ...]
    error: int | None = None
    lines: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self._index()

    def _index(self):
        self.out_edges: dict[int, list[Edge]] = defaultdict(list)
        self.in_edges: dict[int, list[Edge]] = defaultdict(list)
        for e in self.edges:
            self.out_edges[e.src].append(e)
            self.in_edges[e.dst].append(e)

    def successors(self, n: int) -> list[int]:
        seen, out = set(), []
        for e in self.out_edges.get(n, ()):
            if e.dst not in seen:
                seen.add(e.dst)
                out.append(e.dst)
        return out

    @cached_property
    def loop_heads(self) -> frozenset[int]:
        return loop_heads(self)

    @cached_property
    def wto(self) -> "Wto":
        return weak_topological_order(self)

    @property
    def exits(self) -> list[int]:
        return [n for n in self.nodes if n != self.error and not self.out_edges.get(n)]

    @property
    def assertions(self) -> list[int]:
        return sorted({e.assertion for e in self.edges if e.assertion is not None})

    def program_vars(self) -> list[Var]:
        return [Var(x) for x in self.vars]

    def label(self, n: int) -> str:
        return f"n{n}"

    def to_dot(self) -> str:
        lines = ["digraph cfa {"]
        for n in self.nodes:
            shape = "doublecircle" if n in self.loop_heads else "circle"
            if n == self.error:
                shape = "box"
            extra = f"\\nL{self.lines[n]}" if n in self.lines else ""
            lines.append(f'  n{n} [label="n{n}{extra}", shape={shape}];')
        for e in self.edges:
            text = str(strip_frames(e.formula)).replace('"', '\\"')
            lines.append(f'  n{e.src} -> n{e.dst} [label="{text}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def strip_frames(f: Formula) -> Formula:
    if isinstance(f, And):
        kept = [c for c in f.children if not (isinstance(c, Leaf) and c.atom.frame)]
        return conj(*kept)
    if isinstance(f, Leaf) and f.atom.frame:
        return conj()
    return f


# ---------------------------------------------------------------------------
# Loop heads


def _dfs_back_edges(cfa: Cfa) -> list[tuple[int, int]]:
    color: dict[int, int] = {}
    back = []
    stack = [(cfa.entry, iter(cfa.successors(cfa.entry)))]
    color[cfa.entry] = 1
    while stack:
        node, it = stack[-1]
        nxt = next(it, None)
        if nxt is None:
            color[node] = 2
            stack.pop()
            continue
        c = color.get(nxt, 0)
        if c == 1:
            back.append((node, nxt))
        elif c == 0:
            color[nxt] = 1
            stack.append((nxt, iter(cfa.successors(nxt))))
    return back


def dominators(cfa: Cfa) -> dict[int, set[int]]:
    order = reachable(cfa)
    dom = {n: set(order) for n in order}
    dom[cfa.entry] = {cfa.entry}
    changed = True
    while changed:
        changed = False
        for n in order:
            if n == cfa.entry:
                continue
            preds = [e.src for e in cfa.in_edges.get(n, ()) if e.src in dom]
            new = set.intersection(*(dom[p] for p in preds)) if preds else set()
            new = new | {n}
            if new != dom[n]:
                dom[n] = new
                changed = True
    return dom


def reachable(cfa: Cfa) -> list[int]:
    seen = {cfa.entry}
    order = [cfa.entry]
    for n in order:
        for m in cfa.successors(n):
            if m not in seen:
                seen.add(m)
                order.append(m)
    return order


def loop_heads(cfa: Cfa) -> frozenset[int]:
    """Targets of depth-first back edges; raises on irreducible flow."""
    back = _dfs_back_edges(cfa)
    if not back:
        return frozenset()
    dom = dominators(cfa)
    for src, dst in back:
        if dst not in dom.get(src, ()):
            raise IrreducibleGraph(f"back edge n{src} -> n{dst} does not target a dominator")
    return frozenset(dst for _, dst in back)


# ---------------------------------------------------------------------------
# Weak topological order


@dataclass(frozen=True)
class Component:
    head: int
    body: tuple["WtoElement", ...]

    def nodes(self) -> list[int]:
        return [self.head] + flatten(self.body)

    def __str__(self):
        inner = " ".join(str(x) if isinstance(x, Component) else f"n{x}" for x in self.body)
        return f"(n{self.head}{' ' + inner if inner else ''})"


WtoElement = Union[int, Component]


@dataclass(frozen=True)
class Wto:
    elements: tuple[WtoElement, ...]

    def flatten(self) -> list[int]:
        return flatten(self.elements)

    def heads(self) -> list[int]:
        out = []

        def walk(xs):
            for x in xs:
                if isinstance(x, Component):
                    out.append(x.head)
                    walk(x.body)

        walk(self.elements)
        return out

    def components(self) -> dict[int, Component]:
        out = {}

        def walk(xs):
            for x in xs:
                if isinstance(x, Component):
                    out[x.head] = x
                    walk(x.body)

        walk(self.elements)
        return out

    def __str__(self):
        return " ".join(str(x) if isinstance(x, Component) else f"n{x}" for x in self.elements)


def flatten(xs) -> list[int]:
    out = []
    for x in xs:
        if isinstance(x, Component):
            out.extend(x.nodes())
        else:
            out.append(x)
    return out


def weak_topological_order(cfa: Cfa) -> Wto:
    """Bourdoncle's recursive hierarchical ordering."""
    inf = float("inf")
    dfn: dict[int, float] = {}
    stack: list[int] = []
    counter = [0]

    def visit(v: int, partition: list) -> float:
        stack.append(v)
        counter[0] += 1
        dfn[v] = counter[0]
        head = dfn[v]
        loop = False
        for w in reversed(cfa.successors(v)):  # prepending below restores source order
            m = dfn[w] if dfn.get(w, 0) != 0 else visit(w, partition)
            if m <= head:
                head = m
                loop = True
        if head == dfn[v]:
            dfn[v] = inf
            element = stack.pop()
            if loop:
                while element != v:
                    dfn[element] = 0
                    element = stack.pop()
                partition.insert(0, component(v))
            else:
                partition.insert(0, v)
        return head

    def component(v: int) -> Component:
        partition: list = []
        for w in reversed(cfa.successors(v)):
            if dfn.get(w, 0) == 0:
                visit(w, partition)
        return Component(v, tuple(partition))

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 10 * len(cfa.nodes) + 1000))
    try:
        top: list = []
        visit(cfa.entry, top)
    finally:
        sys.setrecursionlimit(limit)
    return Wto(tuple(top))


# ---------------------------------------------------------------------------
# Liveness


def live_variables(cfa: Cfa) -> dict[int, frozenset[str]]:
    """Backward may-liveness.  Every variable is live at program exits."""
    allv = frozenset(cfa.vars)
    live: dict[int, frozenset[str]] = {n: frozenset() for n in cfa.nodes}
    for n in cfa.exits:
        live[n] = allv
    order = list(reversed(cfa.wto.flatten()))
    changed = True
    while changed:
        changed = False
        for n in order:
            if n in cfa.exits or n == cfa.error:
                continue
            acc: set[str] = set()
            for e in cfa.out_edges.get(n, ()):
                acc |= e.reads()
                acc |= live[e.dst] - e.writes(cfa.vars)
            new = frozenset(acc)
            if new != live[n]:
                live[n] = new
                changed = True
    return live


# ---------------------------------------------------------------------------
# Unrolling


def natural_loop(cfa: Cfa, head: int) -> set[int]:
    body = {head}
    work = [e.src for e in cfa.in_edges.get(head, ()) if _dominated(cfa, e.src, head)]
    while work:
        n = work.pop()
        if n in body:
            continue
        body.add(n)
        work.extend(e.src for e in cfa.in_edges.get(n, ()))
    return body


def _dominated(cfa: Cfa, n: int, head: int) -> bool:
    return head in dominators(cfa).get(n, ())


def unroll(cfa: Cfa, depth: int) -> Cfa:
    """Peel the first ``depth`` iterations of every loop, innermost loops first."""
    if depth <= 0 or not cfa.loop_heads:
        return cfa
    comps = cfa.wto.components()
    order = sorted(cfa.loop_heads, key=lambda h: -len(comps[h].nodes()) if h in comps else 0)
    order.reverse()  # smallest (innermost) first
    current = cfa
    for head in order:
        for _ in range(depth):
            current = _peel(current, head)
    return current


def _peel(cfa: Cfa, head: int) -> Cfa:
    body = natural_loop(cfa, head)
    next_id = max(cfa.nodes) + 1
    copy: dict[int, int] = {}
    for n in sorted(body):
        copy[n] = next_id
        next_id += 1
    edges: list[Edge] = []
    for e in cfa.edges:
        if e.dst == head and e.src not in body:
            edges.append(replace(e, dst=copy[head]))  # entering edges now reach the peeled copy
        else:
            edges.append(e)
    for e in cfa.edges:
        if e.src in body:
            # back edges of the copy continue into the original loop
            dst = head if e.dst == head else copy.get(e.dst, e.dst)
            edges.append(replace(e, src=copy[e.src], dst=dst))
    lines = dict(cfa.lines)
    for n, c in copy.items():
        if n in cfa.lines:
            lines[c] = cfa.lines[n]
    nodes = list(cfa.nodes) + [copy[n] for n in sorted(body)]
    return Cfa(nodes, cfa.entry, edges, cfa.vars, cfa.error, lines)
