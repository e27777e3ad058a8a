from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpi.domain import (
    AbstractedState,
    BottomState,
    IntermediateState,
    NodeMismatch,
    PolicyBound,
    Template,
    join,
    leq,
    merge_intermediate,
    stop,
)
from lpi.linear import TRUE, Atom, LinearExpr, Var, conj, iter_atoms
from lpi.simplex import Infeasible, LpProblem, Optimal, Unbounded, maximize

TX, TY = Template.of("x"), Template.of("y")
TI, TJ = Template.of("i"), Template.of("j")


def state(node=0, **bounds):
    return AbstractedState(node, {Template.of(k): PolicyBound(Fraction(v), TRUE, None) for k, v in bounds.items()})


def test_leq_examples():
    assert leq(state(x=5), state(x=7))
    assert leq(state(x=5), state())
    assert not leq(state(), state(x=5))


def test_leq_node_mismatch():
    with pytest.raises(NodeMismatch):
        leq(state(0), state(1))


def test_join_keeps_policy_of_larger_bound():
    a0 = AbstractedState(1, {})
    a1 = AbstractedState(1, {TI: PolicyBound(Fraction(0), TRUE, a0), TJ: PolicyBound(Fraction(0), TRUE, a0)})
    a2 = AbstractedState(1, {TI: PolicyBound(Fraction(1), TRUE, a1), TJ: PolicyBound(Fraction(0), TRUE, a1)})
    a3 = join(a2, a1)
    assert a3.bounds() == {TI: 1, TJ: 0}
    assert a3.entries[TI].backpointer is a1
    assert a3.entries[TJ].backpointer is a0


def test_join_idempotent_and_absorbing():
    s = state(x=3, y=-1)
    assert join(s, s).bounds() == s.bounds()
    assert join(state(x=5), state()).bounds() == {}


def test_join_node_mismatch():
    with pytest.raises(NodeMismatch):
        join(state(0), state(1))


def test_stop_examples():
    assert stop(state(x=5), [state(x=7)])
    assert not stop(state(x=5), [])
    assert stop(BottomState(0), [])
    assert not stop(state(0, x=5), [state(1, x=7)])


def _inter(start, f, tag="a"):
    return IntermediateState(2, start, f, (("x", Var("x", tag)),))


def test_merge_same_start_is_disjunction():
    a = state(x=1)
    f1, f2 = conj(Atom.leq(Var("x", "a"), 0)), conj(Atom.leq(Var("x", "b"), 5))
    m = merge_intermediate(_inter(a, f1, "a"), _inter(a, f2, "b"))
    assert m is not None and m.start is a
    assert set(iter_atoms(m.formula)) >= {Atom.leq(Var("x", "a"), 0), Atom.leq(Var("x", "b"), 5)}
    assert len(m.ssa) == 1


def test_merge_different_starts_stay_separate():
    f = conj(Atom.leq(Var("x", "a"), 0))
    assert merge_intermediate(_inter(state(x=1), f), _inter(state(x=1), f)) is None


def test_merge_identical_is_dedup():
    a = state(x=1)
    s = _inter(a, conj(Atom.leq(Var("x", "a"), 0)))
    assert merge_intermediate(s, _inter(a, conj(Atom.leq(Var("x", "a"), 0)))) is s


def test_template_validation_and_canonical_form():
    assert Template.of({"x": 2, "y": -4}) == Template.of({"x": 1, "y": -2})
    assert Template.of({"x": -3}) != Template.of("x")
    with pytest.raises(ValueError):
        Template.of(LinearExpr.var(Var("x", "ns")))


# -- properties

POOL = [Template.of(t) for t in ("x", "y", {"x": 1, "y": 1}, {"x": 1, "y": -1}, {"x": -1})]
states = st.dictionaries(st.sampled_from(POOL), st.integers(-5, 5), max_size=5).map(
    lambda d: AbstractedState(0, {t: PolicyBound(Fraction(b), TRUE, None) for t, b in d.items()})
)


@settings(max_examples=200)
@given(states, states, states)
def test_leq_is_a_preorder(a, b, c):
    assert leq(a, a)
    if leq(a, b) and leq(b, c):
        assert leq(a, c)


@settings(max_examples=200)
@given(states, states, states)
def test_join_is_least_upper_bound(a, b, c):
    j = join(a, b)
    assert leq(a, j) and leq(b, j)
    # any upper bound built from the entries of a and b sits above the join
    if leq(a, c) and leq(b, c) and set(c.entries) <= set(a.entries) | set(b.entries):
        assert leq(j, c)


def _contained(a, b):
    """Every model of a's constraints satisfies b's (one LP per template of b)."""
    cons = a.constraints()
    if isinstance(maximize(LpProblem(LinearExpr(), cons)), Infeasible):
        return True
    for t, pb in b.entries.items():
        r = maximize(LpProblem(t.expr, cons))
        if isinstance(r, Unbounded) or (isinstance(r, Optimal) and r.value > pb.bound):
            return False
    return True


@settings(max_examples=100, deadline=None)
@given(states, states)
def test_leq_implies_concrete_inclusion(a, b):
    if leq(a, b):
        assert _contained(a, b)
