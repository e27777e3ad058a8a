from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpi.linear import (
    FALSE,
    TRUE,
    Atom,
    ExtRational,
    LinearExpr,
    MissingAssignment,
    Model,
    NamespaceCollision,
    Or,
    Role,
    Var,
    annotate_markers,
    conj,
    disj,
    dnf,
    evaluate,
    is_policy_form,
    iter_atoms,
    markers,
    namespace,
    substitute_markers,
    variables,
)
from lpi.simplex import is_satisfiable

x, y = Var("x"), Var("y")
xp = Var("x", None, Role.OUTPUT)


def ex2_formula():
    # (x <= 10 & x' = x + 1) | (x > 10 & x' = 0)
    return disj(conj(Atom.leq(x, 10), Atom.eq(xp, LinearExpr.var(x) + 1)), conj(Atom.gt(x, 10), Atom.eq(xp, 0)))


def test_evaluate_true_on_empty_model():
    assert evaluate(TRUE, {})


def test_evaluate_atom():
    assert not evaluate(conj(Atom.leq(x, 10)), {x: 11})


def test_evaluate_policy_of_ex2():
    f = conj(Atom.leq(x, 10), Atom.eq(xp, LinearExpr.var(x) + 1))
    assert evaluate(f, Model({x: Fraction(10), xp: Fraction(11)}))


def test_evaluate_missing_assignment():
    with pytest.raises(MissingAssignment):
        evaluate(conj(Atom.leq(x, y)), {x: 1})


def test_strict_atoms_are_rewritten():
    a = Atom.lt(x, 10)
    assert str(a) == "x <= 9"
    assert Atom.gt(x, 10) == Atom.leq(-LinearExpr.var(x), -11)


def test_ext_rational_order():
    lo, hi = ExtRational.NEG_INF, ExtRational.POS_INF
    assert lo < ExtRational.of(-10**9) < ExtRational.of(Fraction(1, 3)) < hi
    assert ExtRational.of(Fraction(2, 4)) == ExtRational.of(Fraction(1, 2))
    assert not hi.is_finite()


def test_annotate_single_disjunction():
    f, made = annotate_markers(ex2_formula())
    assert len(made) == 1
    assert isinstance(f, Or) and f.marker == made[0]
    assert made[0].role is Role.MARKER


def test_annotate_atom_only_is_identity():
    f = conj(Atom.leq(x, 1))
    g, made = annotate_markers(f)
    assert g == f and made == []


def test_annotate_nested_gets_distinct_markers():
    f = conj(disj(Atom.leq(x, 0), Atom.leq(y, 0)), disj(Atom.geq(x, 1), Atom.geq(y, 1)))
    g, made = annotate_markers(f)
    assert len(made) == 2 and len(set(made)) == 2
    assert markers(g) == made


def test_substitute_true_picks_then_branch():
    f, (m,) = annotate_markers(ex2_formula())
    p = substitute_markers(f, {m: True})
    assert is_policy_form(p)
    assert p == conj(Atom.leq(x, 10), Atom.eq(xp, LinearExpr.var(x) + 1))


def test_substitute_false_picks_else_branch():
    f, (m,) = annotate_markers(ex2_formula())
    p = substitute_markers(f, {m: False})
    assert set(iter_atoms(p)) == {Atom.leq(-LinearExpr.var(x), -11), Atom.eq(xp, 0)}
    assert str(Atom.gt(x, 10)) == "-x <= -11"


def test_substitute_without_markers_is_identity():
    f = conj(Atom.leq(x, 3))
    assert substitute_markers(f, {}) == f


def test_substitute_missing_marker():
    f, _ = annotate_markers(ex2_formula())
    with pytest.raises(MissingAssignment):
        substitute_markers(f, {})


def test_namespace_prefixes_every_variable():
    f = conj(Atom.eq(xp, LinearExpr.var(x) + 1))
    g = namespace(f, "p1")
    assert {v.ns for v in variables(g)} == {"p1"}
    assert {(v.name, v.role) for v in variables(g)} == {("x", Role.INPUT), ("x", Role.OUTPUT)}


def test_namespace_true():
    assert namespace(TRUE, "p") == TRUE


def test_namespace_copies_are_disjoint():
    f = ex2_formula()
    assert not variables(namespace(f, "a")) & variables(namespace(f, "b"))


def test_namespace_collision():
    with pytest.raises(NamespaceCollision):
        namespace(namespace(conj(Atom.leq(x, 1)), "p"), "p")


def test_canonical_template_form():
    e = LinearExpr.build({x: Fraction(2, 3), y: Fraction(-4, 3)})
    c = e.canonical()
    assert c.coeffs == {x: 1, y: -2}
    assert (e * 6).canonical() == c


def test_dnf_counts():
    f = conj(disj(Atom.leq(x, 0), Atom.leq(y, 0)), disj(Atom.geq(x, 1), Atom.geq(y, 1)))
    assert len(dnf(f)) == 4
    assert dnf(FALSE) == [] and dnf(TRUE) == [[]]


# -- properties

small = st.integers(-6, 6)
fracs = st.fractions(min_value=-50, max_value=50, max_denominator=30)


@given(fracs, fracs, fracs, fracs)
def test_rational_arithmetic_is_exact(a, b, c, d):
    e = LinearExpr.build({x: a, y: b}, c) * d - LinearExpr.build({x: a * d})
    assert e.coeff(x) == 0
    assert e.coeff(y) == b * d
    assert e.const == c * d
    total = e.evaluate({x: Fraction(7), y: Fraction(-3)})
    assert total == Fraction(-3) * b * d + c * d


@st.composite
def formulas(draw, depth=3):
    if depth == 0 or draw(st.booleans()):
        v = draw(st.sampled_from([x, y]))
        return conj(Atom.leq(LinearExpr.var(v, draw(st.sampled_from([1, -1]))), draw(small)))
    left = draw(formulas(depth=depth - 1))
    right = draw(formulas(depth=depth - 1))
    return disj(left, right) if draw(st.booleans()) else conj(left, right)


@settings(max_examples=150, deadline=None)
@given(formulas(), st.lists(st.booleans(), min_size=8, max_size=8), small, small)
def test_selected_policy_implies_formula(f, picks, vx, vy):
    g, made = annotate_markers(f)
    choice = {m: picks[i % len(picks)] for i, m in enumerate(made)}
    p = substitute_markers(g, choice)
    assert is_policy_form(p)
    env = {x: Fraction(vx), y: Fraction(vy)}
    if evaluate(p, env):
        assert evaluate(f, env)


@settings(max_examples=80, deadline=None)
@given(formulas())
def test_all_true_selects_left_disjuncts(f):
    g, made = annotate_markers(f)
    p = substitute_markers(g, {m: True for m in made})

    def leftmost(h):
        if isinstance(h, Or):
            return leftmost(h.left)
        return h

    if isinstance(f, Or):
        assert p == substitute_markers(leftmost(g), {m: True for m in made})


@settings(max_examples=80, deadline=None)
@given(formulas())
def test_namespace_preserves_satisfiability(f):
    def sat(h):
        return any(is_satisfiable(atoms) for atoms in dnf(h))

    assert sat(f) == sat(namespace(f, "p7"))
