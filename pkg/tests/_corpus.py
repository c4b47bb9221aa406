"""Shared expression corpus and a finite-difference derivative oracle for tests."""

import numpy as np

from gscreen.model import builtin, builtin_names

# expressions over (x1, y1, z) exercising every operator and function
EXTRA = [
    "x1*y1 - z",
    "x1*y1 - z^2",
    "exp(x1*z)",
    "log(1 + x1*y1) - z",
    "sqrt(1 + x1^2 + y1^2) - z^3/3",
    "sin(x1*y1) + cos(z) - z",
    "x1/(1 + y1^2) - z*(1 + x1)",
    "(1 + x1)^(1 + y1) - abs(z - 5)",
    "-(x1 - y1)^2/2 + 2^x1 - z",
    "x1*y1^3 - 3*z + z^4/4",
]


def corpus():
    """``(label, Expr)`` pairs: every builtin G and pi plus :data:`EXTRA`."""
    from gscreen.exprlang import parse

    out = []
    for name in builtin_names():
        spec = builtin(name)
        out.append((f"{name}.G", spec.G))
        out.append((f"{name}.pi", spec.pi))
    for src in EXTRA:
        out.append((src, parse(src, ["x1", "y1", "z"])))
    return out


def fd_gradient(f, p, h=1e-3):
    """Fourth-order central differences of a scalar function ``f``."""
    p = np.asarray(p, dtype=float)
    g = np.empty(p.size)
    for i in range(p.size):
        e = np.zeros(p.size)
        e[i] = h
        g[i] = (-f(p + 2 * e) + 8 * f(p + e) - 8 * f(p - e) + f(p - 2 * e)) / (12 * h)
    return g


def fd_hessian(f, p, h=1e-2):
    """Fourth-order central differences of values only (independent of any derivative code)."""
    p = np.asarray(p, dtype=float)
    k = p.size
    w = {-2: 1 / 12, -1: -8 / 12, 1: 8 / 12, 2: -1 / 12}
    H = np.empty((k, k))
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h
        H[i, i] = (-f(p + 2 * ei) + 16 * f(p + ei) - 30 * f(p) + 16 * f(p - ei) - f(p - 2 * ei)) / (12 * h * h)
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = h
            s = 0.0
            for a, wa in w.items():
                for b, wb in w.items():
                    s += wa * wb * f(p + a * ei + b * ej)
            H[i, j] = H[j, i] = s / (h * h)
    return H


def make_spec(G, pi="z", X=(0.0, 1.0), Y=(0.0, 1.0), Z=(0.0, 1.0), outside=(0.0, 0.0), name="test", density=None):
    """One-dimensional model built through the model-file loader."""
    from gscreen.model import spec_from_dict

    doc = {
        "name": name,
        "dimensions": {"m": 1, "n": 1},
        "domains": {"X": [list(X)], "Y": [list(Y)], "Z": list(Z)},
        "expressions": {"G": G, "pi": pi},
        "outside_option": {"y": [outside[0]], "z": outside[1]},
    }
    if density is not None:
        doc["measure"] = {"kind": "density", "density": density}
    return spec_from_dict(doc)


def family(name, parts, Y=(0.0, 1.0), Z=(0.0, 1.0), X=(0.0, 1.0), outside=(0.0, 0.0)):
    """One-dimensional model given by a family template and its parts."""
    from gscreen.model import spec_from_dict

    return spec_from_dict(
        {
            "name": name,
            "dimensions": {"m": 1, "n": 1},
            "domains": {"X": [list(X)], "Y": [list(Y)], "Z": list(Z)},
            "family": {"name": name, "parts": parts},
            "outside_option": {"y": [outside[0]], "z": outside[1]},
        }
    )


def sign_varying_families():
    """Closed-form family members whose criterion changes sign on the domain."""
    return {
        "price_sensitive": family("price_sensitive", {"b": "x1*y1 + x1^2*y1^2/2", "f": "z + z^3", "a": "y1^3"}, Y=(-1.0, 1.0)),
        "inhomogeneous": family("inhomogeneous", {"b": "x1*y1 + y1^3/3 + x1^2*y1^2/4", "f": "(1 + x1)*z + x1*z^2 - z^3/3"}),
        "inhomogeneous_a": family(
            "inhomogeneous",
            {"b": "x1*y1 + y1^3/3 + x1^2*y1^2/4", "f": "(1 + x1)*z + x1*z^2 - z^3/3", "a": "y1^2/2 - y1^4"},
        ),
    }
