from dataclasses import replace
from fractions import Fraction

import pytest

from conftest import TWO_LOOPS
from lpi.domain import AbstractedState, Template
from lpi.engine import AnalysisConfig, run
from lpi.frontend import compile_program
from lpi.oracle import DidNotConverge, Limits, check_soundness, edge_successors, interpret, kleene_tcd

TI, TJ = Template.of("i"), Template.of("j")


def test_two_loops_exit_states():
    cfa = compile_program(TWO_LOOPS)
    r = interpret(cfa)
    assert not r.truncated
    assert r.states(cfa.exits[0]) == [{"i": 10, "j": 10}]


def test_assume_false_has_no_successors():
    cfa = compile_program("int x = 0; assume(0 > 1); x = 1;")
    r = interpret(cfa)
    assert cfa.exits[0] not in r.reachable


def test_nondet_fans_out():
    cfa = compile_program("int x; x = nondet(); assume(x >= 0 && x <= 4);")
    r = interpret(cfa)
    assert sorted(s["x"] for s in r.states(cfa.exits[0])) == [0, 1, 2, 3, 4]
    (e,) = [e for e in cfa.edges if e.src == cfa.entry]
    assert len(edge_successors(e, cfa.vars, {"x": 0}, Limits(0, 4).values)) == 5


def test_kleene_two_loops():
    r = run(compile_program(TWO_LOOPS), AnalysisConfig(templates=(TI, TJ), integer=False))
    got = kleene_tcd(r.cfa, r.templates, cap=100)
    a, b = r.loop_heads
    assert got[a] == {TI: 10, TJ: 0}
    assert got[b] == {TI: 10, TJ: 10}


def test_kleene_gives_up(programs):
    r = run(compile_program(programs["million"]), AnalysisConfig(integer=False))
    with pytest.raises(DidNotConverge) as exc:
        kleene_tcd(r.cfa, r.templates, cap=50)
    assert exc.value.iterations == 50


def test_kleene_loop_free(programs):
    r = run(compile_program(programs["straight"]), AnalysisConfig(integer=False))
    got = kleene_tcd(r.cfa, r.templates)
    for p in r.points:
        assert got[p] == {t: pb.bound for t, pb in r.invariants[p].entries.items()}


def test_soundness_flags_corruption():
    r = run(compile_program(TWO_LOOPS), AnalysisConfig(templates=(TI, TJ)))
    conc = interpret(r.cfa)
    assert check_soundness(conc, r) == []
    a = r.loop_heads[0]
    st = r.invariants[a]
    bad = AbstractedState(a, {**st.entries, TI: replace(st.entries[TI], bound=Fraction(5))})
    v = check_soundness(conc, replace(r, invariants={**r.invariants, a: bad}))
    assert v and {dict(x.state)["i"] for x in v} == {6, 7, 8, 9, 10}


def test_soundness_trivial_when_unreachable():
    r = run(compile_program("int x = 0; assume(x > 0); while (x < 3) x++;"))
    assert check_soundness(interpret(r.cfa), r) == []
