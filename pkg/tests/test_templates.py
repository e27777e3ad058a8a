import logging

from hypothesis import given, settings
from hypothesis import strategies as st

from progs import random_program
from lpi.cfa import live_variables
from lpi.domain import Template
from lpi.frontend import compile_program
from lpi.templates import (
    RICH_LIMIT,
    Preset,
    TemplatePolicyConfig,
    assertion_templates_by_node,
    preset_templates,
    synthesize,
    templates_from_assertions,
)


def test_interval_count():
    assert len(preset_templates({"x", "y"}, Preset.INTERVALS)) == 4


def test_octagon_count():
    ts = preset_templates({"x", "y"}, Preset.OCTAGONS)
    assert len(ts) == 8
    assert Template.of({"x": 1, "y": -1}) in ts and Template.of({"x": -1, "y": -1}) in ts


def test_no_variables_no_templates():
    for p in Preset:
        assert preset_templates(set(), p) == set()


def test_rich_shapes():
    ts = preset_templates({"x", "y", "z"}, Preset.RICH)
    assert Template.of({"x": 2, "y": -1}) in ts
    assert Template.of({"x": 1, "y": 1, "z": -1}) in ts
    assert Template.of({"x": -2, "y": 1, "z": 1}) in ts
    # 6 intervals, 12 pairs, 24 of 2x+y, 8 triples, 24 of 2x+y+z
    assert len(ts) == 6 + 12 + 24 + 8 + 24


def test_rich_falls_back_to_octagons_over_the_limit(caplog):
    names = {f"v{i}" for i in range(RICH_LIMIT + 1)}
    with caplog.at_level(logging.WARNING):
        ts = preset_templates(names, Preset.RICH)
    assert ts == preset_templates(names, Preset.OCTAGONS)
    assert "rich-template limit" in caplog.text


def test_assertion_templates():
    cfa = compile_program("int x; int y; assert(x >= 2 * y);")
    assert templates_from_assertions(cfa) == {Template.of({"x": 1, "y": -2}), Template.of({"x": -1, "y": 2})}


def test_no_assertions_no_templates():
    assert templates_from_assertions(compile_program("int x = 1;")) == set()


def test_not_equal_assertion_gives_both_signs():
    cfa = compile_program("int x; assert(x != 0);")
    assert templates_from_assertions(cfa) == {Template.of("x"), Template.of({"x": -1})}


def test_assertion_templates_reach_the_loop_head():
    cfa = compile_program("int x = 0; int y = 0; while (x < 5) { x++; y = y + 2; } assert(y - 2 * x <= 0);")
    (head,) = cfa.loop_heads
    by_node = assertion_templates_by_node(cfa)
    assert Template.of({"x": -2, "y": 1}) in by_node[head]
    assert cfa.exits[0] not in by_node  # past the assertion nothing needs it


def _check_presets(cfa):
    live = live_variables(cfa)
    got = {p: synthesize(cfa, live, TemplatePolicyConfig(p)) for p in Preset}
    for n in cfa.nodes:
        assert set(got[Preset.INTERVALS][n]) <= set(got[Preset.OCTAGONS][n]) <= set(got[Preset.RICH][n])
        for t in got[Preset.RICH][n]:
            assert t.names <= live[n]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_presets_nest_and_use_live_variables(seed):
    _check_presets(compile_program(random_program(seed)))


def test_presets_on_corpus(programs):
    for src in programs.values():
        _check_presets(compile_program(src))
