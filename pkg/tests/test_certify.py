import numpy as np
import pytest

from _corpus import family, make_spec, sign_varying_families
from gscreen.certify import (
    certify,
    certify_lemma49,
    classify_signs,
    closed_form_matrices,
    criterion_example1,
    criterion_example2,
    criterion_example3,
    criterion_matrices,
    criterion_matrix,
    example1_matrices,
    fourth_order_test,
    gbar_transform,
    gbar_transform_check,
    local_gbar_star_test,
)
from gscreen.errors import FamilyMismatch
from gscreen.model import builtin, sample_points, spec_from_dict


_FAMILIES = sign_varying_families()
PRICE_SENSITIVE = _FAMILIES["price_sensitive"]
INHOMOGENEOUS = _FAMILIES["inhomogeneous"]
INHOMOGENEOUS_A = _FAMILIES["inhomogeneous_a"]


def _sym_eigs(A):
    e = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, 1, 2)))
    return e[:, 0], e[:, -1]


def test_zero_sum_criterion_vanishes():
    spec = builtin("zero_sum")
    A = criterion_matrices(spec, sample_points(spec, 512))
    assert np.abs(A).max() < 1e-8
    assert certify_lemma49(spec, samples=512).verdict == "linear"


def test_type_only_payoff_gives_zero_matrix():
    spec = make_spec("x1*y1 - z", "x1^2")
    A = criterion_matrices(spec, sample_points(spec, 64))
    assert np.abs(A).max() < 1e-8


def test_quasilinear_criterion_hand_value():
    spec = builtin("quasilinear")
    pts = sample_points(spec, 100, seed=1)
    A = criterion_matrices(spec, pts)
    # a'' = 1 and every third derivative of b vanishes: A = diag(-1, 0)
    np.testing.assert_allclose(A[:, 0, 0], -1.0, rtol=1e-6)
    np.testing.assert_allclose(A[:, 1, 1], 0.0, atol=1e-8)
    np.testing.assert_allclose(A[:, 0, 1], 0.0, atol=1e-8)
    for p in pts[:5]:
        assert criterion_example1(spec, p, [1.0]) == pytest.approx(1.0, abs=1e-12)
        assert criterion_example1(spec, p, [0.0]) == 0.0


def test_single_point_criterion_sample():
    spec = builtin("quasilinear")
    s = criterion_matrix(spec, [0.5, 0.5, 0.5])
    assert s.eig_min == pytest.approx(-1.0, rel=1e-6)
    assert abs(s.eig_max) < 1e-8
    assert s.asymmetry < 1e-8


def test_quasilinear_verdict_is_concave_with_flat_price_direction():
    rep = certify_lemma49(builtin("quasilinear"), samples=512)
    # diag(-1, 0): concave, the price direction is flat
    assert rep.verdict == "concave"
    assert rep.epsilon == pytest.approx(0.0, abs=1e-8)
    assert rep.max_eig <= 1e-8 and rep.min_eig == pytest.approx(-1.0, rel=1e-6)


def test_flipped_payoff_gives_convex_verdict():
    spec = builtin("quasilinear_flipped")
    assert certify_lemma49(spec, samples=512).verdict == "convex"
    for p in sample_points(spec, 10):
        assert criterion_example1(spec, p, [1.0]) == pytest.approx(-1.0, abs=1e-12)


def test_price_sensitive_builtin_uniformly_concave():
    rep = certify_lemma49(builtin("price_sensitive"), samples=512)
    assert rep.verdict == "uniformly_concave"
    assert rep.lam > 0 and rep.max_eig <= -rep.lam + 1e-15
    # A = -diag(1, f''/f') with f = z + z^2/2: eigenvalues -1 and -1/(1+z); max -1/2 at z = 1
    assert rep.lam == pytest.approx(0.5, rel=1e-6)


def test_indefinite_construction_has_witnesses():
    spec = family("quasilinear", {"b": "x1*y1", "a": "y1^3"}, Y=(-1.0, 1.0))
    rep = certify_lemma49(spec, samples=512)
    assert rep.verdict == "indefinite"
    assert len(rep.counterexamples) == 2
    assert max(c.eig_max for c in rep.counterexamples) > 0
    assert min(c.eig_min for c in rep.counterexamples) < 0
    # the closed form agrees: a'' = 6y changes sign
    Q = example1_matrices(spec, sample_points(spec, 512))[:, 0, 0]
    assert Q.min() < 0 < Q.max()


def test_example1_agrees_with_generic_product_block():
    for spec in (builtin("quasilinear"), builtin("price_sensitive"), PRICE_SENSITIVE):
        pts = sample_points(spec, 100, seed=2)
        A = criterion_matrices(spec, pts)
        Q = example1_matrices(spec, pts)
        rel = np.abs(-Q[:, 0, 0] - A[:, 0, 0]) / np.maximum(np.abs(A[:, 0, 0]), 1e-12)
        assert rel.max() < 1e-6


def test_example2_examples():
    bil = family("inhomogeneous", {"b": "x1*y1", "f": "(1 + x1)*z"})
    for p in sample_points(bil, 5):
        assert criterion_example2(bil, p, [1.0])["form"] == pytest.approx(0.0, abs=1e-9)
    ql = family("quasilinear", {"b": "x1*y1"})
    r = criterion_example2(ql, [0.3, 0.6, 0.2], [1.0])
    assert r["h_z"] == pytest.approx(1.0) and r["h_zz"] == pytest.approx(0.0, abs=1e-9)
    assert r["h_increasing"] and r["h_convex"]
    with pytest.raises(FamilyMismatch):
        criterion_example2(builtin("quasilinear"), [0.3, 0.6, 0.2], [1.0])


def test_example3_examples():
    spec = builtin("quasilinear")
    r = criterion_example3(spec, [0.3, 0.6, 0.2], [1.0])
    assert r["h"] == pytest.approx(0.0, abs=1e-9)
    assert r["form"] == pytest.approx(1.0, abs=1e-9)
    # a = 0 reduces to the price-only payoff criterion (up to the positive factor 1/h_z)
    pts = sample_points(INHOMOGENEOUS, 50)
    for p in pts:
        e2 = criterion_example2(INHOMOGENEOUS, p, [1.0])
        e3 = criterion_example3(INHOMOGENEOUS, p, [1.0])
        assert e3["form"] == pytest.approx(e2["form"] / e2["h_z"], rel=1e-8, abs=1e-12)
        assert e3["h"] == pytest.approx(e2["h_zz"] / e2["h_z"], rel=1e-8, abs=1e-12)


@pytest.mark.parametrize("spec", [PRICE_SENSITIVE, INHOMOGENEOUS, INHOMOGENEOUS_A], ids=["price_sensitive", "inhomogeneous", "inhomogeneous_a"])
def test_closed_form_matches_generic(spec):
    pts = sample_points(spec, 1000, seed=4)
    closed = closed_form_matrices(spec, pts)
    generic = criterion_matrices(spec, pts)
    np.testing.assert_allclose(closed, generic, atol=1e-6 * max(1.0, np.abs(generic).max()))
    lc = classify_signs(*_sym_eigs(closed), 1e-8)
    lg = classify_signs(*_sym_eigs(generic), 1e-8)
    assert np.mean(lc == lg) >= 0.99
    # the instances really vary in sign
    assert len(set(lg.tolist())) > 1


def test_classify_signs():
    lab = classify_signs(np.array([-1.0, 0.0, -1.0, 0.0]), np.array([-0.5, 1.0, 1.0, 0.0]), 1e-8)
    np.testing.assert_array_equal(lab, [-1, 1, 0, -1])


def test_fourth_order_quasilinear_is_zero():
    rep = fourth_order_test(builtin("quasilinear"), samples=64)
    assert np.abs(rep.values).max() < 1e-6
    assert rep.agreement == 1.0


def test_fourth_order_detects_segment_concavity():
    rep = fourth_order_test(builtin("segment_concave"), samples=128)
    assert rep.max > rep.tol
    assert rep.witnesses and rep.witnesses[0]["direct"] < 0
    assert rep.agreement >= 0.99


def test_local_test_quasilinear_pass():
    rep = local_gbar_star_test(builtin("quasilinear"), samples=64)
    assert rep.verdict == "pass" and rep.coverage == 1.0
    # pi + G = x y - y^2/2: Hessian in (y, z) is diag(-1, 0)
    assert rep.worst_eig == pytest.approx(0.0, abs=1e-8)
    assert rep.b_star_convex is True


def test_local_test_flipped_fails_with_witness():
    rep = local_gbar_star_test(builtin("quasilinear_flipped"), samples=64)
    assert rep.verdict == "fail" and rep.witnesses
    assert rep.witnesses[0]["eig_max"] == pytest.approx(1.0, abs=1e-8)
    assert rep.b_star_convex is False


def test_local_test_requires_type_independent_payoff():
    with pytest.raises(FamilyMismatch):
        local_gbar_star_test(builtin("zero_sum"))


def _grids(spec):
    agents = np.linspace(spec.X[0, 0], spec.X[0, 1], 41)[:, None]
    products = np.linspace(spec.Y[0, 0], spec.Y[0, 1], 11)[:, None]
    prices = np.linspace(spec.Z[0], spec.Z[1], 11)
    return agents, products, prices


def test_transform_one_point_envelope_has_zero_gap():
    spec = builtin("quasilinear")
    agents, products, prices = _grids(spec)
    x_hat = agents[13]
    doc = spec.to_dict()
    doc["expressions"] = {"G": str(spec.G), "pi": str(spec.G).replace("x1", f"({float(x_hat[0])!r})")}
    doc["expressions"]["pi"] = f"-({doc['expressions']['pi']})"
    doc.pop("family", None)
    env = spec_from_dict(doc)
    chk = gbar_transform_check(env, products, agents, [-1.0], prices)
    assert chk.max_gap < 1e-12 and chk.is_gbar_star_concave


def test_transform_is_idempotent():
    spec = builtin("quasilinear")
    agents, products, prices = _grids(spec)
    chk = gbar_transform_check(spec, products, agents, [-1.2, -1.0, -0.8], prices)
    _, again = gbar_transform(spec, chk.double_transform, chk.contracts, agents, [-1.2, -1.0, -0.8])
    assert np.max(np.abs(again - chk.double_transform)) < 1e-12


def test_transform_quasilinear_within_grid_tolerance():
    spec = builtin("quasilinear")
    agents, products, prices = _grids(spec)
    chk = gbar_transform_check(spec, products, agents, [-1.0], prices)
    assert chk.is_gbar_star_concave and chk.max_gap < chk.tol


def test_certify_merges_methods():
    out = certify(builtin("zero_sum"), samples=256)
    assert out["verdict"] == "linear" and not out["disagreements"]
    out = certify(builtin("segment_concave"), ("lemma49", "fourth_order"), samples=256)
    assert out["methods"]["lemma49"]["verdict"] == "concave"
    assert out["verdict"] == "inconclusive" and out["disagreements"]


def test_uniform_modulus_postcondition():
    for name in ("price_sensitive", "quasilinear", "inhomogeneous"):
        rep = certify_lemma49(builtin(name), samples=256)
        if rep.verdict == "uniformly_concave":
            assert rep.lam > 0 and rep.max_eig <= -rep.lam
