import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metron import expr as ex
from oracles import central_difference


def test_parse_polynomial_arithmetic():
    e = ex.parse("x1^2 + 3*x2")
    assert ex.evaluate(e, (2.0, 1.0)) == pytest.approx(7.0)


def test_parse_exp_identity():
    assert ex.evaluate(ex.parse("exp(0)"), (0.3,)) == pytest.approx(1.0)
    assert ex.evaluate(ex.parse("exp(x1)"), (0.0,)) == pytest.approx(1.0)


def test_division_by_zero_reports_subtree():
    e = ex.parse("x1/x2")
    with pytest.raises(ex.DomainError) as err:
        ex.evaluate(e, (1.0, 0.0))
    assert "division by zero" in str(err.value)
    assert "x1/x2" in str(err.value)


def test_evaluate_examples():
    assert ex.evaluate(ex.parse("sin(x1)"), (0.0,)) == pytest.approx(0.0)
    assert ex.evaluate(ex.parse("x1*x2 + x2"), (2.0, 3.0)) == pytest.approx(9.0)
    with pytest.raises(ex.DomainError):
        ex.evaluate(ex.parse("log(x1)"), (-1.0,))
    with pytest.raises(ex.DomainError):
        ex.evaluate(ex.parse("sqrt(x1)"), (-4.0,))


def test_differentiate_examples():
    d = ex.differentiate(ex.parse("x1*x2"), 1)
    assert ex.evaluate(d, (5.0, 7.0)) == pytest.approx(7.0)
    d = ex.differentiate(ex.parse("exp(2*x1)"), 1)
    assert ex.evaluate(d, (0.0,)) == pytest.approx(2.0)
    d = ex.differentiate(ex.parse("x1^2"), 2)
    assert d is ex.ZERO


def test_unary_minus_binds_at_base_level():
    # per the grammar, -x1^2 is (-x1)^2
    assert ex.evaluate(ex.parse("-x1^2"), (3.0,)) == pytest.approx(9.0)
    assert ex.evaluate(ex.parse("-(x1^2)"), (3.0,)) == pytest.approx(-9.0)
    assert ex.evaluate(ex.parse("2*-x1"), (3.0,)) == pytest.approx(-6.0)


def test_power_right_associative():
    assert ex.evaluate(ex.parse("2^3^2"), ()) == pytest.approx(512.0)


def test_parse_errors_carry_offsets():
    with pytest.raises(ex.ParseError) as err:
        ex.parse("x1 + ")
    assert err.value.offset == 5
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse("y1 + 2")
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse("x10")
    with pytest.raises(ex.ArityError):
        ex.parse("exp + 1")
    with pytest.raises(ex.ParseError):
        ex.parse("exp()")
    with pytest.raises(ex.ParseError):
        ex.parse("(x1")


def test_domain_errors():
    with pytest.raises(ex.DomainError):
        ex.evaluate(ex.parse("x1^0.5"), (-2.0,))
    with pytest.raises(ex.DomainError):
        ex.evaluate(ex.parse("x1^(0-1)"), (0.0,))
    with pytest.raises(ex.DomainError):
        ex.evaluate(ex.parse("exp(x1)"), (1.0e4,))
    # integer powers of negative numbers are fine
    assert ex.evaluate(ex.parse("x1^3"), (-2.0,)) == pytest.approx(-8.0)


def test_compiled_matches_walker():
    source = "exp(x1*x2) - sin(x2)/(1 + x1^2) + sqrt(x2 + 2)"
    e = ex.parse(source)
    f = ex.compile_expr(e)
    rng = np.random.default_rng(5)
    for _ in range(50):
        p = tuple(rng.uniform(-1, 1, size=2))
        assert f(p) == pytest.approx(ex.evaluate(e, p), abs=1e-15)


def test_variables():
    assert ex.variables(ex.parse("x1*x3 + exp(x2)")) == {1, 2, 3}
    assert ex.variables(ex.parse("4")) == set()


# ---------------------------------------------------------------------------
# random-AST corpus: derivative vs central difference, print round-trip
# ---------------------------------------------------------------------------


def _random_ast(rng: np.random.Generator, m: int, depth: int):
    if depth == 0 or rng.uniform() < 0.25:
        if rng.uniform() < 0.5:
            return ex.const(round(float(rng.uniform(-3, 3)), 3))
        return ex.var(int(rng.integers(1, m + 1)))
    kind = rng.choice(
        ["add", "sub", "mul", "div", "neg", "pow", "exp", "log", "sin", "cos", "sqrt"]
    )
    a = _random_ast(rng, m, depth - 1)
    if kind == "neg":
        return ex.neg(a)
    if kind == "pow":
        return ex.pow_(a, ex.const(int(rng.integers(1, 4))))
    if kind in ("exp", "log", "sin", "cos", "sqrt"):
        if kind == "exp":
            # keep magnitudes sane
            return ex.func("exp", ex.mul(ex.const(0.3), a))
        if kind in ("log", "sqrt"):
            return ex.func(kind, ex.add(ex.const(4.0), ex.mul(a, a)))
        return ex.func(kind, a)
    b = _random_ast(rng, m, depth - 1)
    if kind == "add":
        return ex.add(a, b)
    if kind == "sub":
        return ex.sub(a, b)
    if kind == "mul":
        return ex.mul(a, b)
    return ex.div(a, ex.add(ex.const(3.0), ex.mul(b, b)))


def test_derivative_matches_central_difference_on_random_corpus():
    """100 random ASTs of depth <= 6 at random interior points."""
    rng = np.random.default_rng(42)
    checked = 0
    attempts = 0
    while checked < 100 and attempts < 400:
        attempts += 1
        m = int(rng.integers(1, 4))
        e = _random_ast(rng, m, int(rng.integers(2, 7)))
        x = tuple(rng.uniform(-0.9, 0.9, size=m))
        i = int(rng.integers(1, m + 1))
        try:
            value = ex.evaluate(e, x)
            d_sym = ex.evaluate(ex.differentiate(e, i), x)
            d_num = central_difference(e, i, x, h=1e-5)
        except ex.DomainError:
            continue
        if abs(value) > 1e3 or abs(d_sym) > 1e3:
            continue
        assert abs(d_sym - d_num) <= 1e-6 * (1.0 + abs(value)) + 1e-6 * abs(d_sym), (
            f"derivative mismatch for {ex.to_string(e)} at {x}"
        )
        checked += 1
    assert checked == 100


def test_print_parse_round_trip_random_corpus():
    rng = np.random.default_rng(7)
    for _ in range(100):
        m = int(rng.integers(1, 4))
        e = _random_ast(rng, m, int(rng.integers(1, 6)))
        text = ex.to_string(e)
        e2 = ex.parse(text)
        for _ in range(5):
            x = tuple(rng.uniform(-0.9, 0.9, size=m))
            try:
                v1 = ex.evaluate(e, x)
            except ex.DomainError:
                continue
            v2 = ex.evaluate(e2, x)
            assert abs(v1 - v2) <= 1e-12 * (1.0 + abs(v1))


# ---------------------------------------------------------------------------
# hypothesis properties
# ---------------------------------------------------------------------------

_leaf = st.one_of(
    st.integers(min_value=1, max_value=3).map(ex.var),
    st.floats(min_value=-2.0, max_value=2.0, allow_nan=False).map(
        lambda v: ex.const(round(v, 4))
    ),
)


def _combine(children):
    a = children
    return st.one_of(
        st.tuples(a, a).map(lambda t: ex.add(*t)),
        st.tuples(a, a).map(lambda t: ex.sub(*t)),
        st.tuples(a, a).map(lambda t: ex.mul(*t)),
        a.map(ex.neg),
        a.map(lambda e: ex.func("sin", e)),
        a.map(lambda e: ex.func("cos", e)),
        st.tuples(a, st.integers(min_value=1, max_value=3)).map(
            lambda t: ex.pow_(t[0], ex.const(t[1]))
        ),
    )


_ast = st.recursive(_leaf, _combine, max_leaves=12)


@given(_ast, st.tuples(*[st.floats(-0.9, 0.9) for _ in range(3)]))
def test_round_trip_evaluates_identically(e, point):
    text = ex.to_string(e)
    reparsed = ex.parse(text)
    v1 = ex.evaluate(e, point)
    v2 = ex.evaluate(reparsed, point)
    assert v2 == pytest.approx(v1, abs=1e-12, rel=1e-12)


@given(_ast, st.tuples(*[st.floats(-0.9, 0.9) for _ in range(3)]), st.integers(1, 3))
def test_derivative_linearity_in_sum(e, point, i):
    doubled = ex.add(e, e)
    d1 = ex.evaluate(ex.differentiate(e, i), point)
    d2 = ex.evaluate(ex.differentiate(doubled, i), point)
    assert d2 == pytest.approx(2.0 * d1, abs=1e-10, rel=1e-9)
