"""Load the shipped models, run the sampled hypothesis checks, and see what a failing model looks like."""

from gscreen.exprlang import parse
from gscreen.model import builtin, builtin_names, check_hypotheses, spec_from_dict


def show(report):
    for e in report.entries:
        print(f"    {e.id:<4} {e.status:<8} {e.detail}")


print("Shipped models:")
for name in builtin_names():
    spec = builtin(name)
    print(f"  {name:<20} G = {spec.G}    pi = {spec.pi}")

print("\nHypothesis checks on the quasilinear model:")
show(check_hypotheses(builtin("quasilinear"), samples=128))

# utility that ignores the price: no inverse in z, so the twist and rank tests fail
doc = {
    "name": "price_blind",
    "dimensions": {"m": 1, "n": 1},
    "domains": {"X": [[0, 1]], "Y": [[0, 1]], "Z": [0, 1]},
    "expressions": {"G": "x1*y1", "pi": "z"},
    "outside_option": {"y": [0], "z": 0},
}
print("\nHypothesis checks when G ignores the price:")
show(check_hypotheses(spec_from_dict(doc), samples=64))

e = parse("exp(x1*z)")
jet = e.jet([1.0, 0.0])
print(f"\nForward-mode derivatives of {e} at (1, 0): gradient {jet.gradient}, Hessian {jet.hessian.tolist()}")
