"""Concavity certificates for the principal's objective on the shipped models and on an indefinite construction."""

from gscreen.certify import certify, certify_lemma49, fourth_order_test
from gscreen.model import builtin, spec_from_dict

for name in ("quasilinear", "price_sensitive", "quasilinear_flipped", "zero_sum"):
    rep = certify_lemma49(builtin(name), samples=1024)
    modulus = f"  modulus {rep.lam:.3f}" if rep.verdict.startswith("uniformly") else ""
    print(f"{name:<20} verdict {rep.verdict:<18} eigenvalues in [{rep.min_eig:+.3f}, {rep.max_eig:+.3f}]{modulus}")

# a cubic cost changes sign across y = 0
doc = {
    "name": "cubic_cost",
    "dimensions": {"m": 1, "n": 1},
    "domains": {"X": [[0, 1]], "Y": [[-1, 1]], "Z": [0, 1]},
    "family": {"name": "quasilinear", "parts": {"b": "x1*y1", "a": "y1^3"}},
    "outside_option": {"y": [0], "z": 0},
}
rep = certify_lemma49(spec_from_dict(doc), samples=1024)
print(f"\ncubic cost: verdict {rep.verdict}")
for c in rep.counterexamples:
    print(f"  witness at {c.point.round(3).tolist()}: eigenvalues {c.eig_min:+.3f}, {c.eig_max:+.3f}")

# the criterion needs utility convex along G-segments; this model breaks that
fo = fourth_order_test(builtin("segment_concave"), samples=128)
print(f"\nsegment_concave: fourth-order value up to {fo.max:.3g} (> 0 breaks segment convexity)")
merged = certify(builtin("segment_concave"), ("lemma49", "fourth_order"), samples=512)
print(f"merged verdict {merged['verdict']}: {merged['disagreements'][0]}")
