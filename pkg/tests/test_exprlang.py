import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _corpus import EXTRA, corpus, fd_gradient, fd_hessian
from gscreen.errors import DomainError, ExprSyntaxError, NonFinite, UnknownVariable
from gscreen.exprlang import canonical_variables, eval_deriv_fd, eval_jet2, fd_step, hessian_slope, parse
from gscreen.model import sample_box


def test_parse_bilinear_has_three_variables():
    e = parse("x1*y1 - z")
    assert tuple(e.variables) == ("x1", "y1", "z")


def test_print_parse_roundtrip():
    e = parse("x1*y1 - z^2")
    assert parse(str(e)) == e


def test_unbalanced_parenthesis_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse("x1*(y1 -")
    assert info.value.offset == 8


def test_unknown_variable_rejected():
    with pytest.raises(UnknownVariable):
        parse("x1 + w")
    with pytest.raises(UnknownVariable):
        parse("x2 + y1", ["x1", "y1", "z"])


def test_unknown_function_and_trailing_input():
    with pytest.raises(ExprSyntaxError):
        parse("tan(x1)")
    with pytest.raises(ExprSyntaxError):
        parse("x1 y1")
    with pytest.raises(ExprSyntaxError):
        parse("   ")


def test_power_is_right_associative_and_binds_tighter_than_unary_minus():
    e = parse("2^3^2", [])
    assert e.evaluate(np.zeros(0)) == 512.0
    assert parse("-z^2").evaluate([3.0]) == -9.0


def test_jet_bilinear():
    j = eval_jet2(parse("x1*y1 - z"), [2.0, 3.0, 1.0])
    assert j.value == 5.0
    np.testing.assert_array_equal(j.gradient, [3.0, 2.0, -1.0])
    expected = np.zeros((3, 3))
    expected[0, 1] = expected[1, 0] = 1.0
    np.testing.assert_array_equal(j.hessian, expected)


def test_jet_monomial():
    j = eval_jet2(parse("z^2"), [1.5])
    assert j.value == 2.25
    np.testing.assert_array_equal(j.gradient, [3.0])
    np.testing.assert_array_equal(j.hessian, [[2.0]])


def test_jet_exp_against_finite_differences():
    e = parse("exp(x1*z)")
    j = eval_jet2(e, [1.0, 0.0])
    assert j.value == 1.0
    h = np.finfo(float).eps ** (1 / 3)
    fd = [(e.evaluate([1 + h, 0]) - e.evaluate([1 - h, 0])) / (2 * h), (e.evaluate([1, h]) - e.evaluate([1, -h])) / (2 * h)]
    np.testing.assert_allclose(j.gradient, fd, atol=1e-9)
    np.testing.assert_allclose(j.gradient, [0.0, 1.0], atol=0)
    # d2/dz2 exp(x1*z) = x1^2 exp(x1*z) = 1 at (1, 0)
    np.testing.assert_allclose(j.hessian, [[0.0, 1.0], [1.0, 1.0]], atol=0)
    np.testing.assert_allclose(j.hessian, fd_hessian(e.evaluate, [1.0, 0.0]), atol=1e-8)


def test_domain_errors():
    with pytest.raises(DomainError):
        parse("log(z)").jet([0.0])
    with pytest.raises(DomainError):
        parse("sqrt(z)").jet([-1.0])
    with pytest.raises(DomainError):
        parse("1/z").jet([0.0])
    with pytest.raises((DomainError, NonFinite)):
        parse("log(z)").evaluate([-1.0])


def test_nonfinite_overflow():
    with pytest.raises(NonFinite):
        parse("exp(z)").evaluate([1000.0])


def test_third_derivative_of_bilinear_is_zero():
    e = parse("x1*y1 - z")
    for idx in [("x1", "y1", "z"), ("z", "z", "z"), ("x1", "x1", "y1")]:
        assert abs(eval_deriv_fd(e, [0.3, 0.4, 0.5], idx)) < 1e-12


def test_third_derivative_hand_value():
    # d^3/dz^3 of x1*z^3 is 6*x1
    assert abs(eval_deriv_fd(parse("x1*z^3"), [1.0, 1.0], ("z", "z", "z")) - 6.0) < 1e-6


def test_fourth_derivative_hand_value():
    assert abs(eval_deriv_fd(parse("z^4"), [1.0], ("z", "z", "z", "z")) - 24.0) < 1e-4


def test_mixed_fourth_derivative_hand_value():
    # d^4/(dx1^2 dz^2) of x1^2*z^2 is 4
    assert abs(eval_deriv_fd(parse("x1^2*z^2"), [0.7, 0.3], ("x1", "x1", "z", "z")) - 4.0) < 1e-4
    # d^4/(dx1 dy1 dz dz) of x1*y1*z^2 is 2
    assert abs(eval_deriv_fd(parse("x1*y1*z^2"), [0.7, 0.2, 0.3], (0, 1, 2, 2)) - 2.0) < 1e-4


def test_fd_step_floor():
    assert fd_step(4, 0.0) == pytest.approx(np.finfo(float).eps ** 0.25)
    assert fd_step(6, 0.0) == pytest.approx(np.finfo(float).eps ** (1 / 6))
    assert fd_step(100, 0.0) <= 1.0
    assert fd_step(2, 0.0) == 1e-4
    assert fd_step(3, 10.0) == pytest.approx(max(1e-4, np.finfo(float).eps ** (1 / 3)) * 10.0)


def test_hessian_slope_cubic():
    e = parse("x1*y1^2*z")
    pts = np.array([[0.5, 0.25, 0.75], [1.0, 2.0, 3.0]])
    s = hessian_slope(e, pts, 0)  # d/dx1 Hess = Hess(y1^2*z)
    for p, sl in zip(pts, s):
        y, z = p[1], p[2]
        expected = np.array([[0, 0, 0], [0, 2 * z, 2 * y], [0, 2 * y, 0]])
        np.testing.assert_allclose(sl, expected, atol=1e-7)


def test_canonical_variables():
    assert tuple(canonical_variables(2, 1)) == ("x1", "x2", "y1", "z")


def test_batch_evaluation_matches_pointwise():
    e = parse("exp(x1*y1) - z^2 + sin(x1)")
    pts = sample_box([0, 0, 0], [1, 1, 1], 16, seed=3)
    batch = e.evaluate(pts)
    jet = e.jet(pts)
    for i, p in enumerate(pts):
        assert batch[i] == e.evaluate(p)
        single = e.jet(p)
        np.testing.assert_allclose(jet.gradient[i], single.gradient, rtol=0, atol=0)
        np.testing.assert_allclose(jet.hessian[i], single.hessian, rtol=0, atol=0)


@pytest.mark.parametrize("label,expr", corpus(), ids=lambda v: v if isinstance(v, str) else "")
def test_jet_matches_finite_differences(label, expr):
    k = len(expr.variables)
    hi = np.ones(k) - 0.05
    if label.startswith("cross_curved"):
        hi[-1] = 2.95
    pts = sample_box(np.full(k, 0.05), hi, 40, seed=11)
    jet = expr.jet(pts)
    for i, p in enumerate(pts):
        g = fd_gradient(expr.evaluate, p)
        H = fd_hessian(expr.evaluate, p)
        assert np.all(np.abs(g - jet.gradient[i]) <= 1e-6 * np.maximum(1.0, np.abs(g)))
        assert np.all(np.abs(H - jet.hessian[i]) <= 1e-6 * np.maximum(1.0, np.abs(H)))
        np.testing.assert_array_equal(jet.hessian[i], jet.hessian[i].T)


# ---------------------------------------------------------------------------
# property tests

_names = st.sampled_from(["x1", "y1", "z"])
_nums = st.floats(min_value=0.0, max_value=9.0, allow_nan=False).map(lambda v: round(v, 3))


def _exprs():
    leaf = st.one_of(_names, _nums.map(lambda v: repr(v)))

    def extend(children):
        return st.one_of(
            st.tuples(children, st.sampled_from(["+", "-", "*", "/", "^"]), children).map(lambda t: f"({t[0]}) {t[1]} ({t[2]})"),
            children.map(lambda c: f"-({c})"),
            st.tuples(st.sampled_from(["exp", "sin", "cos", "abs"]), children).map(lambda t: f"{t[0]}({t[1]})"),
        )

    return st.recursive(leaf, extend, max_leaves=8)


@settings(max_examples=200, deadline=None)
@given(_exprs())
def test_print_is_idempotent(src):
    e = parse(src, ["x1", "y1", "z"])
    printed = str(e)
    again = parse(printed, ["x1", "y1", "z"])
    assert again == e
    assert str(again) == printed


@settings(max_examples=100, deadline=None)
@given(_exprs(), st.tuples(*[st.floats(0.1, 0.9)] * 3))
def test_printed_expression_evaluates_identically(src, point):
    e = parse(src, ["x1", "y1", "z"])
    try:
        v = e.evaluate(point)
    except (DomainError, NonFinite):
        return
    assert parse(str(e), ["x1", "y1", "z"]).evaluate(point) == v


def test_extra_corpus_roundtrip():
    for src in EXTRA:
        e = parse(src)
        assert parse(str(e)) == e
