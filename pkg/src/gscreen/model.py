"""Problem statement for the screening program and sampled hypothesis checks.

A :class:`ModelSpec` holds the agent utility ``G(x, y, z)``, the principal's
payoff ``pi(x, y, z)``, the boxes ``X``, ``Y``, the price interval ``Z``, the
outside option and the agent measure.  Models are usually read from a JSON
document (see :func:`spec_from_dict`) either spelled out with explicit
expressions or assembled from one of the named families:

========================  ==================  ==================
family                    G                   pi
========================  ==================  ==================
``quasilinear``           ``b - z``           ``z - a``
``price_sensitive``       ``b - f(z)``        ``z - a``
``inhomogeneous``         ``b - f(x, z)``     ``z - a``
``zero_sum_profit``       ``b - f``           ``-G``
========================  ==================  ==================

The hypothesis checks sample deterministically from the closed boxes shrunk by
``MARGIN`` and can only refute a hypothesis; a pass means "no violation found
at N samples".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .errors import ExprError, ModelError, NoConvergence, OutOfRange
from .exprlang import Expr, canonical_variables, parse

MARGIN = 1e-9
FAMILIES = ("quasilinear", "price_sensitive", "inhomogeneous", "zero_sum_profit")

# parts each family accepts, with defaults for the optional ones
_FAMILY_PARTS = {
    "quasilinear": {"b": None, "a": "0"},
    "price_sensitive": {"b": None, "f": None, "a": "0"},
    "inhomogeneous": {"b": None, "f": None, "a": "0"},
    "zero_sum_profit": {"b": None, "f": "z"},
}


@dataclass
class ModelSpec:
    """A screening problem over ``X`` (agents), ``Y`` (products) and ``Z`` (prices)."""

    m: int
    n: int
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    G: Expr
    pi: Expr
    outside_y: np.ndarray
    outside_z: float
    measure: str = "uniform"
    density: Optional[Expr] = None
    family: Optional[str] = None
    parts: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ModelError("dimensions m and n must be positive")
        try:
            self._coerce_shapes()
        except ValueError as exc:
            raise ModelError(f"domain or outside-option shape does not match m={self.m}, n={self.n} ({exc})") from None
        self._validate()

    def _coerce_shapes(self):
        self.X = np.asarray(self.X, dtype=float).reshape(self.m, 2)
        self.Y = np.asarray(self.Y, dtype=float).reshape(self.n, 2)
        self.Z = np.asarray(self.Z, dtype=float).reshape(2)
        self.outside_y = np.asarray(self.outside_y, dtype=float).reshape(self.n)
        self.outside_z = float(self.outside_z)

    def _validate(self):
        if self.m < self.n:
            raise ModelError(f"need m >= n, got m={self.m}, n={self.n}")
        for label, box in (("X", self.X), ("Y", self.Y), ("Z", self.Z[None, :])):
            if not np.all(np.isfinite(box)):
                raise ModelError(f"{label} bounds must be finite")
            if np.any(box[:, 0] >= box[:, 1]):
                raise ModelError(f"{label} needs lo < hi on every axis")
        if np.any(self.outside_y < self.Y[:, 0]) or np.any(self.outside_y > self.Y[:, 1]):
            raise ModelError("outside option product must lie in cl(Y)")
        if not self.Z[0] <= self.outside_z <= self.Z[1]:
            raise ModelError("outside option price must lie in cl(Z)")
        names = self.variables
        self.G = self.G.redeclare(names)
        self.pi = self.pi.redeclare(names)
        if self.measure not in ("uniform", "density"):
            raise ModelError(f"unknown measure kind {self.measure!r}")
        if self.measure == "density":
            if self.density is None:
                raise ModelError("density measure needs a density expression")
            self.density = self.density.redeclare(self.x_names)

    # -- naming ------------------------------------------------------------

    @property
    def variables(self):
        return canonical_variables(self.m, self.n)

    @property
    def x_names(self):
        return self.variables[: self.m]

    @property
    def k(self):
        return self.m + self.n + 1

    @property
    def xs(self):
        return slice(0, self.m)

    @property
    def ys(self):
        return slice(self.m, self.m + self.n)

    @property
    def zi(self):
        return self.m + self.n

    @property
    def ybar(self):
        """Index slice of the contract variables ``(y, z)`` in a packed point."""
        return slice(self.m, self.m + self.n + 1)

    def pack(self, x, y, z):
        """Stack agents, products and prices into points of shape ``(B, m+n+1)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        b = max(x.shape[0], y.shape[0], z.shape[0])
        x = np.broadcast_to(x, (b, self.m))
        y = np.broadcast_to(y, (b, self.n))
        z = np.broadcast_to(z, (b,))
        return np.column_stack([x, y, z])

    # -- convenience evaluators -------------------------------------------

    def G_value(self, x, y, z):
        return self.G.evaluate(self.pack(x, y, z))

    def pi_value(self, x, y, z):
        return self.pi.evaluate(self.pack(x, y, z))

    def u_outside(self, x):
        """Utility of the outside option, ``G(x, y_out, z_out)``, per agent."""
        return self.G_value(x, self.outside_y, self.outside_z)

    def weights(self, agents):
        """Normalized measure weights at the given agent points."""
        agents = np.atleast_2d(np.asarray(agents, dtype=float))
        if self.measure == "uniform":
            w = np.ones(agents.shape[0])
        else:
            w = np.broadcast_to(self.density.evaluate(agents), (agents.shape[0],)).astype(float)
            if np.any(w < 0):
                raise ModelError("density weights must be nonnegative")
        total = w.sum()
        if not total > 0:
            raise ModelError("measure weights are not normalizable")
        return w / total

    def to_dict(self):
        """JSON-ready description that :func:`spec_from_dict` reads back."""
        d = {
            "name": self.name,
            "dimensions": {"m": self.m, "n": self.n},
            "domains": {"X": self.X.tolist(), "Y": self.Y.tolist(), "Z": self.Z.tolist()},
            "outside_option": {"y": self.outside_y.tolist(), "z": self.outside_z},
            "measure": {"kind": self.measure},
        }
        if self.family:
            d["family"] = {"name": self.family, "parts": {k: str(v) for k, v in self.parts.items()}}
        else:
            d["expressions"] = {"G": str(self.G), "pi": str(self.pi)}
        if self.density is not None:
            d["measure"]["density"] = str(self.density)
        return d


# --------------------------------------------------------------------------
# construction


def family_expressions(family, parts):
    """Assemble ``(G, pi)`` source strings from a family template."""
    if family not in _FAMILY_PARTS:
        raise ModelError(f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}")
    allowed = _FAMILY_PARTS[family]
    extra = set(parts) - set(allowed)
    if extra:
        raise ModelError(f"family {family!r} does not take parts {sorted(extra)}")
    full = {}
    for key, default in allowed.items():
        value = parts.get(key, default)
        if value is None:
            raise ModelError(f"family {family!r} needs part {key!r}")
        full[key] = value
    if family == "quasilinear":
        g = f"({full['b']}) - z"
        p = f"z - ({full['a']})"
    elif family in ("price_sensitive", "inhomogeneous"):
        g = f"({full['b']}) - ({full['f']})"
        p = f"z - ({full['a']})"
    else:
        g = f"({full['b']}) - ({full['f']})"
        p = f"-(({full['b']}) - ({full['f']}))"
    return g, p, full


def _check_part_variables(family, parts, m, n):
    xs = set(canonical_variables(m, 0)[:-1])
    ys = {f"y{j + 1}" for j in range(n)}
    allowed = {
        "b": xs | ys,
        "a": ys,
        "f": {"z"} if family == "price_sensitive" else xs | {"z"},
    }
    if family == "zero_sum_profit":
        allowed["f"] = xs | ys | {"z"}
    for key, expr in parts.items():
        bad = expr.referenced() - allowed[key]
        if bad:
            raise ModelError(f"part {key!r} of family {family!r} may not depend on {sorted(bad)}")


def _parse_field(source, names, where):
    """Parse one model-file expression; errors carry ``field`` and ``source`` for diagnostics."""
    try:
        return parse(source, names)
    except ExprError as exc:
        exc.field, exc.source = where, source
        raise


def spec_from_dict(doc) -> ModelSpec:
    """Build a :class:`ModelSpec` from the JSON model-file structure."""
    try:
        dims = doc["dimensions"]
        m, n = int(dims["m"]), int(dims["n"])
        dom = doc["domains"]
        X, Y, Z = dom["X"], dom["Y"], dom["Z"]
        oo = doc["outside_option"]
    except (KeyError, TypeError) as exc:
        raise ModelError(f"model file is missing field {exc}") from None
    names = canonical_variables(m, n)
    has_expr, has_family = "expressions" in doc, "family" in doc
    if has_expr == has_family:
        raise ModelError("model file needs exactly one of 'expressions' or 'family'")
    family, parts = None, {}
    if has_expr:
        g_src, p_src = doc["expressions"]["G"], doc["expressions"]["pi"]
    else:
        family = doc["family"]["name"]
        g_src, p_src, raw = family_expressions(family, doc["family"].get("parts", {}))
        parts = {k: _parse_field(v, names, f"family.parts.{k}") for k, v in raw.items()}
        _check_part_variables(family, parts, m, n)
    measure = doc.get("measure", {"kind": "uniform"})
    kind = measure.get("kind", "uniform")
    density = _parse_field(measure["density"], names[:m], "measure.density") if kind == "density" else None
    return ModelSpec(
        m=m,
        n=n,
        X=X,
        Y=Y,
        Z=Z,
        G=_parse_field(g_src, names, "G"),
        pi=_parse_field(p_src, names, "pi"),
        outside_y=oo["y"],
        outside_z=oo["z"],
        measure=kind,
        density=density,
        family=family,
        parts=parts,
        name=doc.get("name", ""),
    )


def load_model(path) -> ModelSpec:
    """Read a model file; a bare builtin name is accepted too."""
    p = Path(path)
    if not p.exists() and str(path) in builtin_names():
        return builtin(str(path))
    with open(p) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{p}: invalid JSON ({exc})") from None
    spec = spec_from_dict(doc)
    if not spec.name:
        spec.name = p.stem
    return spec


def builtin_names():
    """Names of the model files shipped with the package."""
    files = resources.files("gscreen") / "models"
    return sorted(f.name[:-5] for f in files.iterdir() if f.name.endswith(".json"))


def builtin(name) -> ModelSpec:
    """Load a shipped model by name (same loader as user model files)."""
    path = resources.files("gscreen") / "models" / f"{name}.json"
    if not path.is_file():
        raise ModelError(f"no builtin model {name!r}; have {', '.join(builtin_names())}")
    spec = spec_from_dict(json.loads(path.read_text()))
    spec.name = spec.name or name
    return spec


# --------------------------------------------------------------------------
# sampling


def sample_box(lo, hi, count, seed=0, margin=MARGIN):
    """Deterministic scrambled-Halton points in the box ``[lo, hi]`` shrunk by ``margin``."""
    lo = np.asarray(lo, dtype=float) + margin
    hi = np.asarray(hi, dtype=float) - margin
    sampler = qmc.Halton(d=lo.size, scramble=True, seed=seed)
    return lo + (hi - lo) * sampler.random(count)


def sample_points(spec: ModelSpec, count, seed=0, margin=MARGIN):
    """Points of ``cl(X x Y x Z)`` shrunk by ``margin``, packed as ``(count, m+n+1)``."""
    box = np.vstack([spec.X, spec.Y, spec.Z[None, :]])
    return sample_box(box[:, 0], box[:, 1], count, seed, margin)


# --------------------------------------------------------------------------
# hypothesis report


@dataclass
class HypothesisEntry:
    id: str
    status: str
    detail: str
    witness: Optional[list] = None
    samples: int = 0
    seed: int = 0

    def to_dict(self):
        return {
            "id": self.id,
            "status": self.status,
            "detail": self.detail,
            "witness": self.witness,
            "samples": self.samples,
            "seed": self.seed,
        }


@dataclass
class HypothesisReport:
    entries: list

    @property
    def ok(self):
        return all(e.status != "fail" for e in self.entries)

    def __getitem__(self, key):
        for e in self.entries:
            if e.id == key:
                return e
        raise KeyError(key)

    def to_dict(self):
        return {"ok": self.ok, "entries": [e.to_dict() for e in self.entries]}


def _no_violation(count):
    return f"no violation found at {count} samples"


def _witness(point):
    return np.asarray(point, dtype=float).tolist()


def check_G0(spec: ModelSpec, samples=1024, seed=0) -> HypothesisEntry:
    """Finite values, gradients and Hessians of ``G`` and ``pi`` at sampled points."""
    pts = sample_points(spec, samples, seed)
    for label, expr in (("G", spec.G), ("pi", spec.pi)):
        for i in range(samples):
            try:
                expr.jet(pts[i])
            except Exception as exc:  # any evaluation failure refutes smoothness
                return HypothesisEntry("G0", "fail", f"{label} not evaluable: {exc}", _witness(pts[i]), samples, seed)
    return HypothesisEntry("G0", "pass", _no_violation(samples), None, samples, seed)


def check_G4(spec: ModelSpec, samples=1024, seed=0) -> HypothesisEntry:
    """``G_z < 0`` at every sampled point."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    pts = sample_points(spec, samples, seed)
    gz = spec.G.jet(pts).gradient[:, spec.zi]
    bad = np.flatnonzero(~(gz < 0))
    if bad.size:
        i = bad[0]
        return HypothesisEntry("G4", "fail", f"G_z = {gz[i]:.6g} >= 0", _witness(pts[i]), samples, seed)
    return HypothesisEntry("G4", "pass", _no_violation(samples), None, samples, seed)


def twist_map(spec: ModelSpec, x, ybar):
    """``(G_x, G)(x, y, z)`` for a batch of contracts ``ybar = (y, z)``; shape ``(B, m+1)``."""
    pts = spec.pack(x, ybar[..., : spec.n], ybar[..., spec.n])
    jet = spec.G.jet(pts, order=1)
    return np.column_stack([jet.gradient[:, spec.xs], jet.value])


def twist_jacobian(spec: ModelSpec, pts):
    """``D_(y,z) (G_x, G)`` at packed points; shape ``(B, m+1, n+1)``."""
    jet = spec.G.jet(pts)
    top = jet.hessian[:, spec.xs, spec.ybar]
    bottom = jet.gradient[:, None, spec.ybar]
    return np.concatenate([top, bottom], axis=1)


def augmented_mixed(spec: ModelSpec, pts, x0=-1.0):
    """``D_{xbar, ybar}`` of ``x0 * G`` at ``x0``: rows ``x0*G_{x,ybar}`` then ``G_ybar``."""
    jet = spec.G.jet(pts)
    top = x0 * jet.hessian[:, spec.xs, spec.ybar]
    bottom = jet.gradient[:, None, spec.ybar]
    return np.concatenate([top, bottom], axis=1)


def _rank_failures(mats, rel=1e-8):
    s = np.linalg.svd(mats, compute_uv=False)
    return np.flatnonzero(~(s[:, -1] > rel * s[:, 0]))


def check_G1_twist(spec: ModelSpec, samples=64, seed=0, starts=4) -> HypothesisEntry:
    """Sampled refutation of the twist condition.

    For each sampled agent ``x`` and contract ``p``, Gauss-Newton is started
    from ``starts`` other contracts to solve ``(G_x, G)(x, q) = (G_x, G)(x, p)``.
    Landing on some ``q`` more than ``1e-6`` away from ``p`` with image gap
    below ``1e-10`` is a witnessed failure of injectivity.  The Jacobian
    ``D_(y,z) (G_x, G)`` must also have rank ``n + 1`` at every sample.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    pts = sample_points(spec, samples, seed)
    bad = _rank_failures(twist_jacobian(spec, pts))
    if bad.size:
        i = bad[0]
        return HypothesisEntry("G1", "fail", "D_(y,z)(G_x, G) is rank deficient", _witness(pts[i]), samples, seed)
    box = np.vstack([spec.Y, spec.Z[None, :]])
    rng = np.random.default_rng(seed)
    for i in range(samples):
        x, p = pts[i, spec.xs], pts[i, spec.ybar]
        target = twist_map(spec, x, p[None, :])[0]
        for _ in range(starts):
            q0 = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random(box.shape[0])
            q, res = _newton_contract(spec, x, target, q0, box)
            if res < 1e-10 and np.linalg.norm(q - p) > 1e-6:
                return HypothesisEntry(
                    "G1",
                    "fail",
                    "two contracts share the same (G_x, G) image",
                    [_witness(np.concatenate([x, p])), _witness(np.concatenate([x, q]))],
                    samples,
                    seed,
                )
    return HypothesisEntry("G1", "pass", _no_violation(samples), None, samples, seed)


def _newton_contract(spec, x, target, q, box, iters=50):
    """Gauss-Newton for ``(G_x, G)(x, q) = target`` with ``q`` clipped to ``box``."""
    res = np.inf
    for _ in range(iters):
        pt = spec.pack(x, q[: spec.n], q[spec.n])
        r = twist_map(spec, x, q[None, :])[0] - target
        res = np.linalg.norm(r)
        if res < 1e-13:
            break
        J = twist_jacobian(spec, pt)[0]
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        q = np.clip(q + step, box[:, 0], box[:, 1])
    r = twist_map(spec, x, q[None, :])[0] - target
    return q, float(np.linalg.norm(r))


def check_G6_rank(spec: ModelSpec, samples=1024, seed=0) -> HypothesisEntry:
    """Full rank of the augmented mixed derivative at ``x0 = -1``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    pts = sample_points(spec, samples, seed)
    bad = _rank_failures(augmented_mixed(spec, pts))
    if bad.size:
        i = bad[0]
        return HypothesisEntry("G6", "fail", "augmented mixed derivative is rank deficient", _witness(pts[i]), samples, seed)
    return HypothesisEntry("G6", "pass", _no_violation(samples), None, samples, seed)


def price_ratio(spec: ModelSpec, pts):
    """``G_y / G_z`` at packed points, shape ``(B, n)``."""
    g = spec.G.jet(pts, order=1).gradient
    return g[:, spec.ys] / g[:, spec.zi, None]


def price_ratio_jacobian(spec: ModelSpec, pts):
    """``D_x (G_y / G_z)`` at packed points, shape ``(B, n, m)``."""
    jet = spec.G.jet(pts)
    gy, gz = jet.gradient[:, spec.ys], jet.gradient[:, spec.zi]
    gxy = np.swapaxes(jet.hessian[:, spec.xs, spec.ys], 1, 2)  # (B, n, m)
    gxz = jet.hessian[:, spec.xs, spec.zi]  # (B, m)
    return gxy / gz[:, None, None] - gy[:, :, None] * gxz[:, None, :] / (gz**2)[:, None, None]


def check_G7(spec: ModelSpec, samples=256, seed=0, starts=4) -> HypothesisEntry:
    """Sampled refutation of injectivity of ``x -> G_y/G_z(x, y, z)`` (needs ``m = n``).

    Checks that ``D_x (G_y/G_z)`` is nonsingular at every sample, then, for
    sampled agents and contracts, searches from ``starts`` random agents for
    a different agent with the same ratio.
    """
    if spec.m != spec.n:
        return HypothesisEntry("G7", "skipped", "defined only when m = n", None, 0, seed)
    pts = sample_points(spec, samples, seed)
    bad = _rank_failures(price_ratio_jacobian(spec, pts))
    if bad.size:
        i = bad[0]
        return HypothesisEntry("G7", "fail", "D_x(G_y/G_z) is singular", _witness(pts[i]), samples, seed)
    # second preimages: Gauss-Newton in x for the ratio of a sampled agent
    rng = np.random.default_rng(seed)
    for j in range(min(samples, 32)):
        x, c = pts[j, spec.xs], pts[j, spec.ybar]
        target = price_ratio(spec, pts[j : j + 1])[0]
        for _ in range(starts):
            x1 = spec.X[:, 0] + (spec.X[:, 1] - spec.X[:, 0]) * rng.random(spec.m)
            for _ in range(50):
                pt = spec.pack(x1, c[: spec.n], c[spec.n])
                r = price_ratio(spec, pt)[0] - target
                if np.linalg.norm(r) < 1e-13:
                    break
                step = np.linalg.lstsq(price_ratio_jacobian(spec, pt)[0], -r, rcond=None)[0]
                x1 = np.clip(x1 + step, spec.X[:, 0], spec.X[:, 1])
            r = price_ratio(spec, spec.pack(x1, c[: spec.n], c[spec.n]))[0] - target
            if np.linalg.norm(r) < 1e-10 and np.linalg.norm(x1 - x) > 1e-6:
                return HypothesisEntry(
                    "G7",
                    "fail",
                    "two agents share the same G_y/G_z",
                    [_witness(np.concatenate([x, c])), _witness(np.concatenate([x1, c]))],
                    samples,
                    seed,
                )
    return HypothesisEntry("G7", "pass", _no_violation(samples), None, samples, seed)


def check_G5(spec: ModelSpec, samples=1024, seed=0) -> HypothesisEntry:
    """``G(x, y, z_max) <= G(x, y_out, z_out)``; a violation is only a warning."""
    pts = sample_points(spec, samples, seed)
    x, y = pts[:, spec.xs], pts[:, spec.ys]
    top = spec.G_value(x, y, spec.Z[1])
    base = spec.u_outside(x)
    bad = np.flatnonzero(top > base + 1e-12)
    if bad.size:
        i = bad[0]
        return HypothesisEntry(
            "G5", "warn", "some product is worth more than the outside option at the price cap",
            _witness(np.concatenate([x[i], y[i], [spec.Z[1]]])), samples, seed,
        )
    return HypothesisEntry("G5", "pass", _no_violation(samples), None, samples, seed)


def check_G2_segments(spec: ModelSpec, samples=32, seed=0) -> HypothesisEntry:
    """Empirical G2 evidence: random G-segments must be solvable inside ``cl(Y x Z)``."""
    from . import geometry
    from .errors import LeftDomain

    pts = sample_points(spec, 2 * samples, seed)
    for i in range(samples):
        a, b = pts[2 * i], pts[2 * i + 1]
        try:
            geometry.solve_g_segment(spec, a[spec.xs], a[spec.ybar], b[spec.ybar], steps=16)
        except (NoConvergence, LeftDomain) as exc:
            return HypothesisEntry(
                "G2", "fail", f"G-segment not solvable: {exc}",
                [_witness(a), _witness(b[spec.ybar])], samples, seed,
            )
    return HypothesisEntry("G2", "pass", _no_violation(samples), None, samples, seed)


def check_hypotheses(spec: ModelSpec, samples=256, seed=0) -> HypothesisReport:
    """Run every sampled hypothesis check and collect the entries."""
    entries = [check_G0(spec, samples, seed)]
    if entries[0].status == "fail":
        return HypothesisReport(entries)
    entries.append(check_G4(spec, samples, seed))
    entries.append(check_G1_twist(spec, max(2, min(samples, 64)), seed))
    entries.append(check_G6_rank(spec, samples, seed))
    if entries[1].status == "fail":
        # the price ratio G_y / G_z is undefined without G_z < 0
        entries.append(HypothesisEntry("G7", "skipped", "requires G_z < 0", None, 0, seed))
    else:
        entries.append(check_G7(spec, samples, seed))
    if all(e.status != "fail" for e in entries):
        entries.append(check_G2_segments(spec, max(1, min(samples, 32)), seed))
    entries.append(check_G5(spec, samples, seed))
    return HypothesisReport(entries)


# --------------------------------------------------------------------------
# price inversion


def _invert(spec: ModelSpec, x, y, u, tol=1e-12):
    """Vectorized inverse of ``z -> G(x, y, z)``.

    Returns ``(z, side)`` where ``side`` is ``-1`` when ``u`` exceeds the
    attainable range (``z`` set to the lower price bound), ``+1`` when it is
    below it (``z`` set to the upper bound) and ``0`` otherwise.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    b = max(x.shape[0], y.shape[0], u.shape[0])
    x = np.broadcast_to(x, (b, spec.m))
    y = np.broadcast_to(y, (b, spec.n))
    u = np.broadcast_to(u, (b,))
    zlo, zhi = spec.Z
    g_lo = spec.G_value(x, y, np.full(b, zlo))
    g_hi = spec.G_value(x, y, np.full(b, zhi))
    scale = tol * (1.0 + np.abs(u))
    side = np.zeros(b, dtype=int)
    side[u > g_lo + scale] = -1
    side[u < g_hi - scale] = 1
    z = np.where(side == -1, zlo, zhi).astype(float)
    live = np.flatnonzero(side == 0)
    if live.size == 0:
        return z, side
    xl, yl, ul = x[live], y[live], u[live]
    lo = np.full(live.size, zlo)
    hi = np.full(live.size, zhi)
    zc = 0.5 * (lo + hi)
    # bracketed Newton: bisection whenever the Newton step leaves the bracket
    for _ in range(200):
        jet = spec.G.jet(spec.pack(xl, yl, zc), order=1)
        r = jet.value - ul
        done = np.abs(r) < tol * (1.0 + np.abs(ul))
        if np.all(done):
            break
        # G decreasing in z: r > 0 means z too small
        lo = np.where(r > 0, zc, lo)
        hi = np.where(r < 0, zc, hi)
        gz = jet.gradient[:, spec.zi]
        with np.errstate(all="ignore"):
            zn = zc - r / gz
        inside = np.isfinite(zn) & (zn > lo) & (zn < hi)
        zn = np.where(inside, zn, 0.5 * (lo + hi))
        zc = np.where(done, zc, zn)
    else:
        raise NoConvergence("price inversion did not converge", iterate=zc)
    z[live] = zc
    return z, side


def invert_price(spec: ModelSpec, x, y, u):
    """The price ``H(x, y, u)`` at which product ``y`` gives agent ``x`` utility ``u``.

    Vectorized over a leading batch axis.  Raises :class:`OutOfRange` when
    ``u`` lies outside ``[G(x, y, z_max), G(x, y, z_min)]``.
    """
    scalar = np.ndim(u) == 0 and np.ndim(x) <= 1 and np.ndim(y) <= 1
    z, side = _invert(spec, x, y, u)
    if np.any(side != 0):
        i = int(np.flatnonzero(side != 0)[0])
        raise OutOfRange(f"utility level not attainable with prices in {spec.Z.tolist()} (entry {i})")
    return float(z[0]) if scalar else z


def invert_price_clamped(spec: ModelSpec, x, y, u):
    """Like :func:`invert_price` but clamps to ``cl(Z)``; returns ``(z, side)``."""
    return _invert(spec, x, y, u)
