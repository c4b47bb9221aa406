import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _corpus import make_spec
from gscreen.errors import ExprSyntaxError, ModelError, OutOfRange, UnknownVariable
from gscreen.model import (
    augmented_mixed,
    builtin,
    builtin_names,
    check_G1_twist,
    check_G4,
    check_G5,
    check_G6_rank,
    check_G7,
    check_hypotheses,
    family_expressions,
    invert_price,
    invert_price_clamped,
    load_model,
    sample_box,
    sample_points,
    spec_from_dict,
)

BUILTINS = builtin_names()


def test_builtins_shipped():
    assert {"quasilinear", "price_sensitive", "inhomogeneous", "zero_sum"} <= set(BUILTINS)


@pytest.mark.parametrize("name", BUILTINS)
def test_builtin_hypotheses_pass(name):
    report = check_hypotheses(builtin(name), samples=128)
    assert report.ok, report.to_dict()


def test_G4_examples():
    assert check_G4(make_spec("x1*y1 - z")).status == "pass"
    assert check_G4(make_spec("x1*y1 - z^2", Z=(0.1, 2.0), outside=(0.0, 0.1))).status == "pass"
    bad = check_G4(make_spec("x1*y1 + z"))
    assert bad.status == "fail" and bad.witness is not None


def test_G1_examples():
    assert check_G1_twist(make_spec("x1*y1 - z"), samples=16).status == "pass"
    assert check_G1_twist(make_spec("x1*y1"), samples=16).status == "fail"
    assert check_G1_twist(make_spec("x1*y1 - z^2", Z=(0.1, 2.0), outside=(0.0, 0.1)), samples=32).status == "pass"


def test_G1_detects_folded_twist():
    # (G_x, G) = (y^2, x y^2 - z) identifies y and -y
    entry = check_G1_twist(make_spec("x1*y1^2 - z", Y=(-1.0, 1.0)), samples=32)
    assert entry.status == "fail"


def test_G6_examples():
    pts = sample_points(make_spec("x1*y1 - z"), 8)
    M = augmented_mixed(make_spec("x1*y1 - z"), pts)
    # rows (-G_xy, -G_xz) and (G_y, G_z) = (-1, 0), (x, -1): determinant 1
    np.testing.assert_allclose(np.linalg.det(M), 1.0)
    assert check_G6_rank(make_spec("x1*y1 - z")).status == "pass"
    assert check_G6_rank(make_spec("0")).status == "fail"
    assert check_G6_rank(make_spec("x1*y1 - z", Y=(1.0, 2.0), outside=(1.0, 0.0))).status == "pass"


def test_G7_examples():
    assert check_G7(make_spec("x1*y1 - z")).status == "pass"
    # G_y / G_z = -x^2 is not injective on X = (-1, 1)
    assert check_G7(make_spec("x1^2*y1 - z", X=(-1.0, 1.0))).status == "fail"


def test_G5_warning_only():
    entry = check_G5(make_spec("x1*y1 - z", Z=(0.0, 0.5)))
    assert entry.status == "warn"
    report = check_hypotheses(make_spec("x1*y1 - z", Z=(0.0, 0.5)), samples=32)
    assert report.ok


def test_report_lookup_and_wording():
    report = check_hypotheses(builtin("quasilinear"), samples=32)
    assert report["G4"].detail == "no violation found at 32 samples"
    with pytest.raises(KeyError):
        report["G9"]


def test_invert_price_examples():
    spec = make_spec("x1*y1 - z")
    assert invert_price(spec, [0.5], [1.0], 0.2) == pytest.approx(0.3, abs=1e-14)
    sq = make_spec("x1*y1 - z^2", Z=(0.1, 2.0), outside=(0.0, 0.1))
    assert invert_price(sq, [1.0], [1.0], 0.0) == pytest.approx(1.0, abs=1e-12)


def test_invert_price_out_of_range():
    spec = make_spec("x1*y1 - z")
    with pytest.raises(OutOfRange):
        invert_price(spec, [0.5], [1.0], 0.9)
    z, side = invert_price_clamped(spec, [[0.5], [0.5]], [[1.0], [1.0]], [0.9, -5.0])
    np.testing.assert_array_equal(side, [-1, 1])
    np.testing.assert_array_equal(z, [0.0, 1.0])


@pytest.mark.parametrize("name", BUILTINS)
def test_invert_price_roundtrip(name):
    spec = builtin(name)
    pts = sample_points(spec, 1000, seed=5, margin=1e-6)
    x, y, z = pts[:, spec.xs], pts[:, spec.ys], pts[:, spec.zi]
    back = invert_price(spec, x, y, spec.G_value(x, y, z))
    assert np.max(np.abs(back - z)) < 1e-10


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.12, 1.98))
def test_invert_price_roundtrip_property(x, y, z):
    spec = make_spec("exp(x1*y1) - z - z^3", Z=(0.1, 2.0), outside=(0.0, 0.1))
    u = spec.G_value([x], [y], [z])[0]
    assert abs(invert_price(spec, [x], [y], u) - z) < 1e-10


def test_family_templates():
    g, p, parts = family_expressions("quasilinear", {"b": "x1*y1", "a": "y1^2/2"})
    assert (g, p) == ("(x1*y1) - z", "z - (y1^2/2)")
    g, p, _ = family_expressions("price_sensitive", {"b": "x1*y1", "f": "z + z^2"})
    assert p == "z - (0)"
    g, p, _ = family_expressions("zero_sum_profit", {"b": "x1*y1"})
    spec = builtin("zero_sum")
    pts = sample_points(spec, 16)
    np.testing.assert_allclose(spec.pi.evaluate(pts), -spec.G.evaluate(pts), atol=0)
    with pytest.raises(ModelError):
        family_expressions("quasilinear", {"b": "x1*y1", "f": "z"})
    with pytest.raises(ModelError):
        family_expressions("nonsense", {})
    with pytest.raises(ModelError):
        family_expressions("price_sensitive", {"b": "x1*y1"})


def _doc(**over):
    doc = {
        "dimensions": {"m": 1, "n": 1},
        "domains": {"X": [[0, 1]], "Y": [[0, 1]], "Z": [0, 1]},
        "expressions": {"G": "x1*y1 - z", "pi": "z"},
        "outside_option": {"y": [0], "z": 0},
    }
    doc.update(over)
    return doc


def test_model_file_validation():
    spec_from_dict(_doc())
    with pytest.raises(ModelError):
        spec_from_dict(_doc(family={"name": "quasilinear", "parts": {"b": "x1*y1"}}))
    bad = _doc()
    del bad["outside_option"]
    with pytest.raises(ModelError):
        spec_from_dict(bad)
    with pytest.raises(UnknownVariable):
        spec_from_dict(_doc(expressions={"G": "x2*y1 - z", "pi": "z"}))
    with pytest.raises(ExprSyntaxError) as info:
        spec_from_dict(_doc(expressions={"G": "x1*(y1 -", "pi": "z"}))
    assert info.value.field == "G" and info.value.offset == 8
    with pytest.raises(ModelError):
        spec_from_dict(_doc(outside_option={"y": [2], "z": 0}))
    with pytest.raises(ModelError):
        spec_from_dict(_doc(domains={"X": [[1, 0]], "Y": [[0, 1]], "Z": [0, 1]}))
    with pytest.raises(ModelError):
        spec_from_dict(_doc(dimensions={"m": 1, "n": 2}, domains={"X": [[0, 1]], "Y": [[0, 1], [0, 1]], "Z": [0, 1]}))


def test_family_part_dependencies_checked():
    doc = _doc(family={"name": "price_sensitive", "parts": {"b": "x1*y1", "f": "x1*z"}})
    del doc["expressions"]
    with pytest.raises(ModelError):
        spec_from_dict(doc)


def test_load_model_file_and_builtin(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps(_doc()))
    spec = load_model(path)
    assert spec.name == "m"
    assert load_model("quasilinear").name == "quasilinear"
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ModelError):
        load_model(tmp_path / "bad.json")


def test_density_weights_normalized():
    spec = make_spec("x1*y1 - z", density="1 + x1")
    agents = np.array([[0.0], [1.0]])
    np.testing.assert_allclose(spec.weights(agents), [1 / 3, 2 / 3])
    np.testing.assert_allclose(builtin("quasilinear").weights(agents), [0.5, 0.5])


def test_sample_box_deterministic_and_inside():
    a = sample_box([0, -1], [1, 2], 100, seed=4)
    b = sample_box([0, -1], [1, 2], 100, seed=4)
    np.testing.assert_array_equal(a, b)
    assert np.all(a > [0, -1]) and np.all(a < [1, 2])
    assert not np.array_equal(a, sample_box([0, -1], [1, 2], 100, seed=5))


def test_to_dict_roundtrip():
    spec = builtin("price_sensitive")
    again = spec_from_dict(spec.to_dict())
    pts = sample_points(spec, 16)
    np.testing.assert_array_equal(again.G.evaluate(pts), spec.G.evaluate(pts))
    np.testing.assert_array_equal(again.pi.evaluate(pts), spec.pi.evaluate(pts))
