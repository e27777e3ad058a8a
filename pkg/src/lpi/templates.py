"""Template generation from domain presets and assertions."""

from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping

from .cfa import Cfa
from .domain import Template
from .linear import LinearExpr, Role, Var, iter_atoms

log = logging.getLogger(__name__)

RICH_LIMIT = 8


class Preset(enum.Enum):
    INTERVALS = "intervals"
    OCTAGONS = "octagons"
    RICH = "rich"


@dataclass(frozen=True)
class TemplatePolicyConfig:
    preset: Preset = Preset.INTERVALS
    from_assertions: bool = True


def _t(coeffs: Mapping[str, int]) -> Template:
    return Template.of(LinearExpr.build({Var(k): c for k, c in coeffs.items()}))


def _signs(n: int):
    return itertools.product((1, -1), repeat=n)


def preset_templates(names: Iterable[str], preset: Preset) -> set[Template]:
    names = sorted(set(names))
    out: set[Template] = set()
    for x in names:
        for s in (1, -1):
            out.add(_t({x: s}))
    if preset is Preset.INTERVALS:
        return out
    for x, y in itertools.combinations(names, 2):
        for sx, sy in _signs(2):
            out.add(_t({x: sx, y: sy}))
    if preset is Preset.OCTAGONS:
        return out
    if len(names) > RICH_LIMIT:
        log.warning("%d live variables exceed the rich-template limit of %d; using octagons", len(names), RICH_LIMIT)
        return out
    for x, y in itertools.permutations(names, 2):
        for sx, sy in _signs(2):
            out.add(_t({x: 2 * sx, y: sy}))
    for x, y, z in itertools.combinations(names, 3):
        for sx, sy, sz in _signs(3):
            out.add(_t({x: sx, y: sy, z: sz}))
    for x in names:
        others = [n for n in names if n != x]
        for y, z in itertools.combinations(others, 2):
            for sx, sy, sz in _signs(3):
                out.add(_t({x: 2 * sx, y: sy, z: sz}))
    return out


def synthesize(
    cfa: Cfa,
    live: Mapping[int, frozenset[str]],
    cfg: TemplatePolicyConfig = TemplatePolicyConfig(),
    nodes: Iterable[int] | None = None,
) -> dict[int, list[Template]]:
    """Templates per node from the live variables there (plus assertions if enabled)."""
    nodes = list(cfa.nodes if nodes is None else nodes)
    extra = assertion_templates_by_node(cfa) if cfg.from_assertions else {}
    out = {}
    for n in nodes:
        here = live.get(n, frozenset())
        ts = preset_templates(here, cfg.preset)
        ts |= {t for t in extra.get(n, ()) if t.names <= here}
        out[n] = sorted(ts, key=Template.sort_key)
    return out


def templates_from_assertions(cfa: Cfa) -> set[Template]:
    """``+e`` and ``-e`` for every atom ``e <= 0`` / ``e == 0`` guarding an error edge."""
    out: set[Template] = set()
    for e in cfa.edges:
        if e.assertion is None:
            continue
        for a in iter_atoms(e.formula):
            if a.frame:
                continue
            prog = [v for v in a.vars if v.role is Role.INPUT and v.ns is None]
            if not prog or len(prog) != len(a.vars):
                continue
            body = LinearExpr(a.expr.terms)
            out.add(Template.of(body))
            out.add(Template.of(-body))
    return out


def assertion_templates_by_node(cfa: Cfa) -> dict[int, set[Template]]:
    """Attach each assertion's templates to the nodes from which it is reachable."""
    per_edge: list[tuple[int, set[Template]]] = []
    for e in cfa.edges:
        if e.assertion is None:
            continue
        ts = templates_from_assertions(_single(cfa, e))
        if ts:
            per_edge.append((e.src, ts))
    if not per_edge:
        return {}
    reaches = _reverse_reach(cfa)
    out: dict[int, set[Template]] = {}
    for src, ts in per_edge:
        for n in reaches[src]:
            out.setdefault(n, set()).update(ts)
    return out


def _single(cfa: Cfa, e) -> Cfa:
    return Cfa([e.src, e.dst], e.src, [e], cfa.vars, cfa.error)


def _reverse_reach(cfa: Cfa) -> dict[int, set[int]]:
    """For each node, the set of nodes that can reach it (itself included)."""
    out = {}
    for target in cfa.nodes:
        seen = {target}
        work = [target]
        while work:
            n = work.pop()
            for e in cfa.in_edges.get(n, ()):
                if e.src not in seen:
                    seen.add(e.src)
                    work.append(e.src)
        out[target] = seen
    return out
