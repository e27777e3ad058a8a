from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpi.congruence import (
    CongruenceState,
    ModeMismatch,
    Parity,
    congruence_transfer,
    join_states,
    leq_states,
    parity_constraints,
    refine_from_bounds,
    round_bound,
)
from lpi.domain import AbstractedState, PolicyBound, Template
from lpi.engine import AnalysisConfig, run
from lpi.frontend import compile_program
from lpi.linear import TRUE, Atom, LinearExpr, Role, Var, conj, disj
from lpi.oracle import check_soundness, interpret

E, O, T, B = Parity.EVEN, Parity.ODD, Parity.TOP, Parity.BOTTOM
x, y = Var("x"), Var("y")
xp = Var("x", None, Role.OUTPUT)


def cs(**kw):
    return CongruenceState.of(kw)


def test_lattice():
    assert E.join(O) is T and B.join(E) is E
    assert E.meet(O) is B and T.meet(O) is O
    assert B.leq(E) and E.leq(T) and not E.leq(O)


def test_double_is_even():
    f = conj(Atom.eq(xp, LinearExpr.var(y, 2)))
    assert congruence_transfer(cs(), f, ["x", "y"])["x"] is E


def test_increment_flips_parity():
    f = conj(Atom.eq(xp, LinearExpr.var(x) + 1))
    assert congruence_transfer(cs(x=E), f, ["x"])["x"] is O


def test_havoc_is_top():
    assert congruence_transfer(cs(x=E), TRUE, ["x"])["x"] is T


def test_assume_equal_constant_refines():
    f = conj(Atom.eq(x, 3), Atom.eq(xp, x, frame=True))
    assert congruence_transfer(cs(), f, ["x"])["x"] is O


def test_disjunction_joins_branches():
    f = disj(conj(Atom.eq(xp, 0)), conj(Atom.eq(xp, 1)))
    assert congruence_transfer(cs(), f, ["x"])["x"] is T
    g = disj(conj(Atom.eq(xp, 0)), conj(Atom.eq(xp, 4)))
    assert congruence_transfer(cs(), g, ["x"])["x"] is E


def test_parity_constraints():
    (a,) = parity_constraints(cs(x=E))
    k = next(v for v in a.vars if v != x)
    assert a.expr.coeffs == {x: 1, k: -2} and a.expr.const == 0
    assert parity_constraints(cs(x=T)) == []
    two = parity_constraints(cs(x=O, y=E))
    assert len(two) == 2
    ks = [next(v for v in a.vars if v.name.startswith("k")) for a in two]
    assert ks[0] != ks[1]


def test_parity_constraints_reject_rational_mode():
    with pytest.raises(ModeMismatch):
        parity_constraints(cs(x=E), integer=False)


def _state(**bounds):
    return AbstractedState(0, {Template.of(LinearExpr.var(Var(k[1:]), -1) if k.startswith("n") else Var(k)): PolicyBound(Fraction(v), TRUE, None) for k, v in bounds.items()})


def test_refine_from_singleton_interval():
    assert refine_from_bounds(cs(), _state(x=2, nx=-2))["x"] is E
    assert refine_from_bounds(cs(), _state(x=5))["x"] is T
    assert refine_from_bounds(cs(), _state(x=1, nx=-2))["x"] is B


def test_round_bound():
    assert round_bound(Fraction(11, 2), E) == 4
    assert round_bound(Fraction(11, 2), O) == 5
    assert round_bound(Fraction(11, 2), T) == 5


parities = st.sampled_from([E, O, T, B])


@settings(max_examples=200)
@given(parities, parities, st.integers(-3, 3), st.integers(-3, 3))
def test_transfer_is_monotone(p, q, a, k):
    # x' = a*x + k
    f = conj(Atom.eq(xp, LinearExpr.var(x, a) + k))
    lo, hi = (p, p.join(q))
    if lo is B or hi is B:
        return
    r1 = congruence_transfer(cs(x=lo), f, ["x"])["x"]
    r2 = congruence_transfer(cs(x=hi), f, ["x"])["x"]
    assert r1.leq(r2)
    assert leq_states(cs(x=lo), join_states(cs(x=lo), cs(x=q)) if q is not B else cs(x=lo))


PARITY_PROGRAMS = [
    "int x = 0; while (x != 10) { x = x + 2; }",
    "int x = 1; int y = 0; while (y < 6) { x = x + 2; y = y + 1; }",
    "int x = 0; int y; y = nondet(); x = 2 * y + 1; while (x < 7) x = x + 2;",
]


@pytest.mark.parametrize("src", PARITY_PROGRAMS)
def test_parity_verdicts_agree_with_execution(src):
    cfa = compile_program(src)
    r = run(cfa, AnalysisConfig(congruence=True))
    assert not check_soundness(interpret(r.cfa), r)
    heads = [r.invariants[h].congruence for h in r.loop_heads]
    assert any(c["x"].definite for c in heads)
