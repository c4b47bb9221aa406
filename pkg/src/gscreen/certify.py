"""Concavity and convexity certificates for the principal's objective.

The generic test builds, at sampled points, the symmetric matrix

    A = pi_{,kj} - pi_{,l} Gbar^{i,l} Gbar_{i,kj}

for the augmented utility ``Gbar(x, x0, y, z) = x0 * G(x, y, z)`` at
``x0 = -1``, where ``Gbar^{i,l}`` is the Moore-Penrose left inverse of the
mixed derivative ``Gbar_{i,k}`` and indices run over ``(y, z)`` (and over
``(x, x0)`` for ``i``).  Non-positive ``A`` everywhere certifies concavity of
the profit functional along G-segments; non-negative certifies convexity.

Closed-form versions of ``A`` for the ``b - f`` families, a fourth-order
re-expression of the segment-convexity hypothesis, a local test for payoffs
that do not depend on the agent's type and a discrete double-transform check
complete the toolbox.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DomainError,
    FamilyMismatch,
    GScreenError,
    NoConvergence,
    RankDeficient,
    SingularDenominator,
)
from .exprlang import hessian_slope
from .geometry import solve_g_segments
from .model import ModelSpec, augmented_mixed, price_ratio, price_ratio_jacobian, sample_box, sample_points

DEFAULT_TOL = 1e-8
RANK_REL = 1e-8


# --------------------------------------------------------------------------
# the generic criterion matrix


@dataclass
class CriterionSample:
    point: np.ndarray
    matrix: np.ndarray
    eig_min: float
    eig_max: float
    asymmetry: float

    def to_dict(self):
        return {
            "point": self.point.tolist(),
            "matrix": self.matrix.tolist(),
            "eig_min": self.eig_min,
            "eig_max": self.eig_max,
            "asymmetry": self.asymmetry,
        }


def _left_inverse(M, what):
    s = np.linalg.svd(M, compute_uv=False)
    bad = np.flatnonzero(~(s[:, -1] > RANK_REL * s[:, 0]))
    if bad.size:
        raise RankDeficient(f"{what} is rank deficient at sample {int(bad[0])}")
    return np.linalg.pinv(M)


def criterion_matrices(spec: ModelSpec, pts):
    """Raw criterion matrices at packed points, shape ``(B, n+1, n+1)`` (not symmetrized)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    yb = spec.ybar
    gj = spec.G.jet(pts)
    pj = spec.pi.jet(pts)
    M = augmented_mixed(spec, pts)  # (B, m+1, n+1)
    L = _left_inverse(M, "augmented mixed derivative")  # (B, n+1, m+1)
    b = pts.shape[0]
    T = np.empty((b, spec.m + 1, spec.n + 1, spec.n + 1))
    for i in range(spec.m):
        slope = hessian_slope(spec.G, pts, i)
        T[:, i] = -slope[:, yb, yb]
    T[:, spec.m] = gj.hessian[:, yb, yb]
    coef = np.einsum("bl,bli->bi", pj.gradient[:, yb], L)
    return pj.hessian[:, yb, yb] - np.einsum("bi,bikj->bkj", coef, T)


def _samples_from(pts, raw):
    sym = 0.5 * (raw + np.swapaxes(raw, 1, 2))
    asym = np.linalg.norm(raw - np.swapaxes(raw, 1, 2), axis=(1, 2))
    eig = np.linalg.eigvalsh(sym)
    return sym, asym, eig[:, 0], eig[:, -1]


def criterion_matrix(spec: ModelSpec, point) -> CriterionSample:
    """The symmetrized criterion matrix at one packed point ``(x, y, z)``."""
    p = np.asarray(point, dtype=float).reshape(1, spec.k)
    sym, asym, lo, hi = _samples_from(p, criterion_matrices(spec, p))
    return CriterionSample(p[0], sym[0], float(lo[0]), float(hi[0]), float(asym[0]))


@dataclass
class CertificationReport:
    verdict: str
    lam: Optional[float]
    epsilon: Optional[float]
    samples: int
    seed: int
    tol: float
    max_norm: float
    max_eig: float
    min_eig: float
    max_asymmetry: float
    counterexamples: list = field(default_factory=list)
    detail: str = ""
    left_inverse: str = "Moore-Penrose pseudoinverse"

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "lambda": self.lam,
            "epsilon": self.epsilon,
            "samples": self.samples,
            "seed": self.seed,
            "tol": self.tol,
            "max_norm": self.max_norm,
            "max_eig": self.max_eig,
            "min_eig": self.min_eig,
            "max_asymmetry": self.max_asymmetry,
            "left_inverse": self.left_inverse,
            "detail": self.detail,
            "counterexamples": [c.to_dict() for c in self.counterexamples],
        }


def face_points(spec: ModelSpec, per_face, seed=0):
    """Samples on every face of the shrunken closed box ``cl(X x Y x Z)``."""
    base = sample_points(spec, per_face, seed + 1)
    box = np.vstack([spec.X, spec.Y, spec.Z[None, :]])
    out = []
    for axis in range(spec.k):
        for end, value in ((0, box[axis, 0] + 1e-9), (1, box[axis, 1] - 1e-9)):
            p = base.copy()
            p[:, axis] = value
            out.append(p)
    return np.vstack(out)


def _evaluate_in_chunks(spec, pts, chunk=1024):
    parts = [criterion_matrices(spec, pts[i : i + chunk]) for i in range(0, pts.shape[0], chunk)]
    return np.concatenate(parts, axis=0)


def certify_lemma49(spec: ModelSpec, samples=4096, tol=DEFAULT_TOL, seed=0, face_samples=None) -> CertificationReport:
    """Verdict from the sign of the criterion matrix over sampled points.

    Interior points come from a scrambled Halton sequence; the faces of the
    shrunken box are sampled too (``face_samples`` per face, default
    ``max(16, samples // 32)``) because a uniform modulus is an infimum over
    the closure.  Eigenvalue tolerances are ``tol * max(1, ||A||)``.
    """
    interior = sample_points(spec, samples, seed)
    per_face = max(16, samples // 32) if face_samples is None else face_samples
    faces = face_points(spec, per_face, seed) if per_face > 0 else np.empty((0, spec.k))
    pts = np.vstack([interior, faces])
    try:
        raw = _evaluate_in_chunks(spec, pts)
    except GScreenError as exc:
        return CertificationReport("inconclusive", None, None, pts.shape[0], seed, tol, np.nan, np.nan, np.nan, np.nan, [], str(exc))
    sym, asym, lo, hi = _samples_from(pts, raw)
    norms = np.maximum(np.abs(lo), np.abs(hi))
    tol_eff = tol * np.maximum(1.0, norms)
    n_int = interior.shape[0]
    max_norm = float(norms.max())

    def sample(i):
        return CriterionSample(pts[i], sym[i], float(lo[i]), float(hi[i]), float(asym[i]))

    common = dict(
        samples=pts.shape[0],
        seed=seed,
        tol=tol,
        max_norm=max_norm,
        max_eig=float(hi.max()),
        min_eig=float(lo.min()),
        max_asymmetry=float(asym.max()),
    )
    eps = _closed_form_margin(spec, interior)
    if np.any(asym > 1e-6):
        i = int(np.argmax(asym))
        return CertificationReport("inconclusive", None, eps, counterexamples=[sample(i)], detail="criterion matrix asymmetry exceeds 1e-6", **common)
    if max_norm < tol:
        return CertificationReport("linear", 0.0, eps, detail="criterion matrix vanishes at every sample", **common)
    pos = hi > tol_eff
    neg = lo < -tol_eff
    if np.any(pos) and np.any(neg):
        ip, ineg = int(np.argmax(hi - tol_eff)), int(np.argmin(lo + tol_eff))
        ces = [sample(ip)] if ip == ineg else [sample(ip), sample(ineg)]
        return CertificationReport("indefinite", None, eps, counterexamples=ces, detail="criterion matrix takes both signs", **common)
    if not np.any(pos):
        strict = hi < -tol_eff
        if np.all(strict):
            return CertificationReport("uniformly_concave", float(-hi.max()), eps, **common)
        if np.all(strict[:n_int]):
            i = int(np.argmax(hi))
            return CertificationReport(
                "strictly_concave_sampled", None, eps, counterexamples=[sample(i)],
                detail="negative definite at interior samples, not on the boundary faces", **common,
            )
        return CertificationReport("concave", None, eps, detail="largest eigenvalue reaches zero within tolerance", **common)
    strict = lo > tol_eff
    if np.all(strict):
        return CertificationReport("uniformly_convex", float(lo.min()), eps, **common)
    if np.all(strict[:n_int]):
        i = int(np.argmin(lo))
        return CertificationReport(
            "strictly_convex_sampled", None, eps, counterexamples=[sample(i)],
            detail="positive definite at interior samples, not on the boundary faces", **common,
        )
    return CertificationReport("convex", None, eps, detail="smallest eigenvalue reaches zero within tolerance", **common)


# --------------------------------------------------------------------------
# closed-form criteria for the b - f families


@dataclass
class _Parts:
    b_y: np.ndarray
    b_yy: np.ndarray
    b_xy: np.ndarray
    b_xyy: np.ndarray
    a_y: np.ndarray
    a_yy: np.ndarray
    f_z: np.ndarray
    f_zz: np.ndarray
    f_xz: np.ndarray
    f_xzz: np.ndarray
    L: np.ndarray


def _part(spec, key):
    if key in spec.parts:
        return spec.parts[key]
    if key == "f" and spec.family == "quasilinear":
        return None  # f = z
    if key == "a":
        return None  # a = 0
    raise FamilyMismatch(f"model has no part {key!r}")


def _family_parts(spec: ModelSpec, pts) -> _Parts:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    b, m, n = pts.shape[0], spec.m, spec.n
    ys, zi = spec.ys, spec.zi
    bj = spec.parts["b"].jet(pts)
    b_xyy = np.empty((b, m, n, n))
    for i in range(m):
        b_xyy[:, i] = hessian_slope(spec.parts["b"], pts, i)[:, ys, ys]
    a = _part(spec, "a")
    if a is None:
        a_y, a_yy = np.zeros((b, n)), np.zeros((b, n, n))
    else:
        aj = a.jet(pts)
        a_y, a_yy = aj.gradient[:, ys], aj.hessian[:, ys, ys]
    f = _part(spec, "f")
    if f is None:
        f_z, f_zz = np.ones(b), np.zeros(b)
        f_xz, f_xzz = np.zeros((b, m)), np.zeros((b, m))
    else:
        fj = f.jet(pts)
        f_z, f_zz = fj.gradient[:, zi], fj.hessian[:, zi, zi]
        f_xz = fj.hessian[:, spec.xs, zi]
        f_xzz = np.column_stack([hessian_slope(f, pts, i)[:, zi, zi] for i in range(m)])
    b_xy = bj.hessian[:, spec.xs, ys]  # b_{i,l}: (B, m, n)
    L = _left_inverse(b_xy, "D_xy b")  # b^{i,l} stored as L[l, i]: (B, n, m)
    return _Parts(bj.gradient[:, ys], bj.hessian[:, ys, ys], b_xy, b_xyy, a_y, a_yy, f_z, f_zz, f_xz, f_xzz, L)


def _require_family(spec, allowed, what):
    if spec.family not in allowed:
        raise FamilyMismatch(f"{what} needs a model from families {allowed}, got {spec.family!r}")


def _contract(vec, L, tensor):
    """``vec_l L[l, i] tensor[i, ...]`` over a batch."""
    c = np.einsum("bl,bli->bi", vec, L)
    return np.einsum("bi,bi...->b...", c, tensor)


def example1_matrices(spec: ModelSpec, pts):
    """Product block of the homogeneous price-sensitivity criterion, shape ``(B, n, n)``.

    ``a_kj - b_kj / f' + (b_l / f' - a_l) b^{i,l} b_{i,kj}`` for ``G = b - f(z)``
    and ``pi = z - a(y)``; together with ``f''/f'`` it is minus the criterion matrix.
    """
    _require_family(spec, ("quasilinear", "price_sensitive"), "the homogeneous price-sensitivity criterion")
    p = _family_parts(spec, pts)
    if np.any(p.f_z <= 0):
        raise SingularDenominator("f'(z) must be positive")
    fz = p.f_z[:, None]
    return p.a_yy - p.b_yy / fz[:, :, None] + _contract(p.b_y / fz - p.a_y, p.L, p.b_xyy)


def criterion_example1(spec: ModelSpec, point, xi) -> float:
    """Quadratic form of :func:`example1_matrices` at one point in direction ``xi``."""
    Q = example1_matrices(spec, np.asarray(point, dtype=float).reshape(1, spec.k))[0]
    xi = np.asarray(xi, dtype=float).reshape(spec.n)
    return float(xi @ Q @ xi)


def _pi_is_z(spec):
    a = spec.parts.get("a")
    return a is None or (not a.referenced() and a.evaluate(np.zeros(spec.k)) == 0.0)


def example2_terms(spec: ModelSpec, pts):
    """``(form, h_z, h_zz)`` for ``G = b - f(x, z)``, ``pi = z`` at a batch of points.

    ``form = -b_kj + b_l b^{i,l} b_{i,kj}`` (shape ``(B, n, n)``) and ``h`` is
    ``f - b_l b^{i,l} f_{i,}``; the criterion matrix equals
    ``-(1 / h_z) diag(form, h_zz)``.
    """
    _require_family(spec, ("quasilinear", "price_sensitive", "inhomogeneous"), "the price-only payoff criterion")
    if not _pi_is_z(spec):
        raise FamilyMismatch("the price-only payoff criterion needs pi = z (a = 0)")
    p = _family_parts(spec, pts)
    form = -p.b_yy + _contract(p.b_y, p.L, p.b_xyy)
    h_z = p.f_z - _contract(p.b_y, p.L, p.f_xz)
    h_zz = p.f_zz - _contract(p.b_y, p.L, p.f_xzz)
    return form, h_z, h_zz


def criterion_example2(spec: ModelSpec, point, xi) -> dict:
    """Form value in direction ``xi`` plus the monotonicity/convexity report of ``h`` in ``z``."""
    form, h_z, h_zz = example2_terms(spec, np.asarray(point, dtype=float).reshape(1, spec.k))
    xi = np.asarray(xi, dtype=float).reshape(spec.n)
    return {
        "form": float(xi @ form[0] @ xi),
        "h_z": float(h_z[0]),
        "h_zz": float(h_zz[0]),
        "h_increasing": bool(h_z[0] > 0),
        "h_convex": bool(h_zz[0] >= 0),
    }


def example3_terms(spec: ModelSpec, pts, min_denominator=1e-10):
    """``(form, h)`` for ``G = b - f(x, z)``, ``pi = z - a(y)``.

    The criterion matrix equals ``-diag(form, h)``.  Raises
    :class:`SingularDenominator` where ``1 - b_l b^{i,l} f_{i,z} / f_z``
    vanishes.
    """
    _require_family(spec, ("quasilinear", "price_sensitive", "inhomogeneous"), "the inhomogeneous criterion")
    p = _family_parts(spec, pts)
    bLfz = _contract(p.b_y, p.L, p.f_xz)
    aLfz = _contract(p.a_y, p.L, p.f_xz)
    denom = 1.0 - bLfz / p.f_z
    if np.any(~np.isfinite(denom)) or np.any(np.abs(denom) < min_denominator):
        raise SingularDenominator("1 - f_z^{-1} b_l b^{i,l} f_{i,z} vanishes")
    ratio = (1.0 - aLfz) / denom
    fz = p.f_z[:, None, None]
    inner = -p.b_yy / fz + _contract(p.b_y, p.L, p.b_xyy) / fz
    form = p.a_yy - _contract(p.a_y, p.L, p.b_xyy) + ratio[:, None, None] * inner
    h = _contract(p.a_y, p.L, p.f_xzz) + (aLfz - 1.0) * (_contract(p.b_y, p.L, p.f_xzz) - p.f_zz) / (p.f_z - bLfz)
    return form, h


def criterion_example3(spec: ModelSpec, point, xi) -> dict:
    """Form value in direction ``xi`` and the value of ``h``."""
    form, h = example3_terms(spec, np.asarray(point, dtype=float).reshape(1, spec.k))
    xi = np.asarray(xi, dtype=float).reshape(spec.n)
    return {"form": float(xi @ form[0] @ xi), "h": float(h[0])}


def closed_form_matrices(spec: ModelSpec, pts):
    """Criterion matrix assembled from the closed-form family expressions, ``(B, n+1, n+1)``."""
    form, h = example3_terms(spec, pts)
    b, n = form.shape[0], spec.n
    out = np.zeros((b, n + 1, n + 1))
    out[:, :n, :n] = -form
    out[:, n, n] = -h
    return out


def _closed_form_margin(spec, pts):
    """Smallest eigenvalue of ``diag(form, h)`` over the samples, for family models."""
    if spec.family not in ("quasilinear", "price_sensitive", "inhomogeneous"):
        return None
    try:
        A = closed_form_matrices(spec, pts)
    except GScreenError:
        return None
    return float(np.linalg.eigvalsh(-A)[:, 0].min())


def classify_signs(eig_min, eig_max, tol):
    """Per-sample label: ``-1`` negative semidefinite, ``1`` positive semidefinite, ``0`` both signs.

    Matrices within ``tol`` of zero count as ``-1``.
    """
    lab = np.zeros(eig_max.shape, dtype=int)
    lab[eig_max <= tol] = -1
    lab[(eig_min >= -tol) & (eig_max > tol)] = 1
    return lab


# --------------------------------------------------------------------------
# fourth-order re-expression of segment convexity


@dataclass
class FourthOrderReport:
    values: np.ndarray
    direct: np.ndarray
    min: float
    max: float
    tol: float
    agreement: float
    witnesses: list
    configs: list
    failures: int = 0

    def to_dict(self):
        return {
            "min": self.min,
            "max": self.max,
            "tol": self.tol,
            "agreement": self.agreement,
            "samples": int(self.values.size),
            "failures": self.failures,
            "witnesses": self.witnesses,
        }


def _solve_agent(spec, target, ybar, x, lo, hi, iters=50):
    """Newton for ``G_y/G_z(x, ybar) = target`` in ``x`` (batched, ``m = n``)."""
    x = x.copy()
    for _ in range(iters):
        pts = spec.pack(x, ybar[:, :-1], ybar[:, -1])
        r = price_ratio(spec, pts) - target
        if np.all(np.linalg.norm(r, axis=1) < 1e-14 * (1.0 + np.linalg.norm(target, axis=1))):
            break
        J = price_ratio_jacobian(spec, pts)
        x = x - np.linalg.solve(J, r[..., None])[..., 0]
    pts = spec.pack(x, ybar[:, :-1], ybar[:, -1])
    res = np.linalg.norm(price_ratio(spec, pts) - target, axis=1)
    ok = (res < 1e-11 * (1.0 + np.linalg.norm(target, axis=1))) & np.all((x >= lo) & (x <= hi), axis=1)
    return x, ok


def fourth_order_test(spec: ModelSpec, samples=512, seed=0, tol=1e-6, steps=64, sigma=1e-2, probe=0.1) -> FourthOrderReport:
    """Sampled sign of ``d^2/ds^2 [ (1/G_z) d^2/dt^2 G(x_s, y_t, z_t) ]`` at ``(s0, t0)``.

    For each configuration a G-segment is solved at agent ``x_hat`` between
    two sampled contracts and ``t0`` is a grid point of it.  The agent curve
    ``x_s`` makes ``G_y/G_z(x_s, y_t0, z_t0)`` affine in ``s`` with
    ``x_s0 = x_hat``.  The ``t`` derivative is a second difference on the
    segment grid, the ``s`` derivative a central second difference with step
    ``sigma`` (relative to the width of ``X``).  A value ``<= tol`` supports
    segment convexity.

    Independently, ``direct`` holds the second ``t`` difference of
    ``G(x, y_t, z_t)`` at ``t0`` for agents a distance ``probe`` (relative)
    away from ``x_hat`` on either side, scaled by the grid spacing; the two
    tests agree when ``value <= tol`` exactly where ``direct >= -tol``.
    """
    if spec.m != spec.n:
        raise DomainError("the fourth-order test needs m = n")
    rng = np.random.default_rng(seed)
    base = sample_points(spec, 2 * samples, seed)
    width = float(np.min(spec.X[:, 1] - spec.X[:, 0]))
    lo, hi = spec.X[:, 0], spec.X[:, 1]
    # keep the agent curve x_s inside X for |s - s0| <= sigma
    pad = 4.0 * sigma * width
    x_hat = sample_box(lo + pad, hi - pad, samples, seed + 3)
    start = base[:samples, spec.ybar]
    end = base[samples:, spec.ybar]
    t = np.linspace(0.0, 1.0, steps + 1)
    pts, res, failed = solve_g_segments(spec, x_hat, start, end, t=t, raise_on_failure=False)
    k0 = rng.integers(steps // 8, steps - steps // 8 + 1, size=samples)
    rows = np.arange(samples)
    ym, y0, yp = pts[rows, k0 - 1], pts[rows, k0], pts[rows, k0 + 1]
    dt = t[1] - t[0]

    # unit agent direction mapped to the ratio space
    e = rng.normal(size=(samples, spec.m))
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    q_hat = price_ratio(spec, spec.pack(x_hat, y0[:, :-1], y0[:, -1]))
    Jq = price_ratio_jacobian(spec, spec.pack(x_hat, y0[:, :-1], y0[:, -1]))
    w = np.einsum("bij,bj->bi", Jq, e)

    def g_of(x):
        # (1/G_z(x, y_t0)) * second t-difference of G(x, y_t) / dt^2
        gm = spec.G_value(x, ym[:, :-1], ym[:, -1])
        g0 = spec.G_value(x, y0[:, :-1], y0[:, -1])
        gp = spec.G_value(x, yp[:, :-1], yp[:, -1])
        gz = spec.G.jet(spec.pack(x, y0[:, :-1], y0[:, -1]), order=1).gradient[:, spec.zi]
        return (gp - 2.0 * g0 + gm) / (dt * dt) / gz

    s = sigma * width
    x_plus, ok_p = _solve_agent(spec, q_hat + s * w, y0, x_hat + s * e, lo, hi)
    x_minus, ok_m = _solve_agent(spec, q_hat - s * w, y0, x_hat - s * e, lo, hi)
    values = (g_of(x_plus) - 2.0 * g_of(x_hat) + g_of(x_minus)) / (s * s)

    # direct segment-convexity probes at finite distance
    d = probe * width
    direct = np.full(samples, np.inf)
    for sign in (1.0, -1.0):
        xp = np.clip(x_hat + sign * d * e, lo, hi)
        gm = spec.G_value(xp, ym[:, :-1], ym[:, -1])
        g0 = spec.G_value(xp, y0[:, :-1], y0[:, -1])
        gp = spec.G_value(xp, yp[:, :-1], yp[:, -1])
        direct = np.minimum(direct, (gp - 2.0 * g0 + gm) / (dt * dt))
    good = ~failed & ok_p & ok_m & np.isfinite(values)
    values, direct = values[good], direct[good]
    idx = np.flatnonzero(good)
    agree = (values <= tol) == (direct >= -tol)
    witnesses = []
    for j in np.flatnonzero(values > tol)[:10]:
        i = idx[j]
        witnesses.append({
            "x": x_hat[i].tolist(),
            "start": start[i].tolist(),
            "end": end[i].tolist(),
            "t0": float(t[k0[i]]),
            "value": float(values[j]),
            "direct": float(direct[j]),
        })
    configs = [
        {"x": x_hat[i].tolist(), "start": start[i].tolist(), "end": end[i].tolist(), "t0": float(t[k0[i]]), "direction": e[i].tolist()}
        for i in idx
    ]
    return FourthOrderReport(
        values,
        direct,
        float(values.min()) if values.size else np.nan,
        float(values.max()) if values.size else np.nan,
        tol,
        float(agree.mean()) if values.size else np.nan,
        witnesses,
        configs,
        failures=int(samples - good.sum()),
    )


# --------------------------------------------------------------------------
# local test for type-independent payoffs


@dataclass
class LocalTestReport:
    verdict: str
    uniform: bool
    coverage: float
    worst_eig: float
    solutions: int
    samples: int
    b_star_convex: Optional[bool]
    witnesses: list

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "uniform": self.uniform,
            "coverage": self.coverage,
            "worst_eig": self.worst_eig,
            "solutions": self.solutions,
            "samples": self.samples,
            "b_star_convex": self.b_star_convex,
            "witnesses": self.witnesses,
        }


def _require_type_independent(spec):
    if spec.pi.referenced() & set(spec.x_names):
        raise FamilyMismatch("the principal's payoff must not depend on the agent's type")


def local_gbar_star_test(spec: ModelSpec, samples=256, seed=0, tol=DEFAULT_TOL, starts=8, iters=60) -> LocalTestReport:
    """Hessian test of ``pi + G(x, .)`` at the agents where its contract gradient vanishes.

    For sampled contracts ``ybar`` the agents ``x`` in ``cl(X)`` solving
    ``pi_ybar(ybar) + G_ybar(x, ybar) = 0`` are found by Gauss-Newton from
    ``starts`` points; every solution must have ``pi_ybar,ybar + G_ybar,ybar``
    non-positive definite (within ``tol``).  ``coverage`` is the fraction of
    sampled contracts with at least one solution.
    """
    _require_type_independent(spec)
    box = np.vstack([spec.Y, spec.Z[None, :]])
    ybar = sample_box(box[:, 0], box[:, 1], samples, seed)
    x_starts = sample_box(spec.X[:, 0], spec.X[:, 1], starts, seed + 7, margin=0.0)
    yb = np.repeat(ybar, starts, axis=0)
    x = np.tile(x_starts, (samples, 1))
    lo, hi = spec.X[:, 0], spec.X[:, 1]
    sl = spec.ybar
    pj = spec.pi.jet(spec.pack(x, yb[:, :-1], yb[:, -1]))
    pi_g, pi_h = pj.gradient[:, sl], pj.hessian[:, sl, sl]
    scale = 1.0 + np.linalg.norm(pi_g, axis=1)
    for _ in range(iters):
        gj = spec.G.jet(spec.pack(x, yb[:, :-1], yb[:, -1]))
        r = pi_g + gj.gradient[:, sl]
        J = np.swapaxes(gj.hessian[:, spec.xs, sl], 1, 2)  # (B, n+1, m)
        step = -np.einsum("bij,bj->bi", np.linalg.pinv(J), r)
        x = np.clip(x + step, lo, hi)
    gj = spec.G.jet(spec.pack(x, yb[:, :-1], yb[:, -1]))
    r = np.linalg.norm(pi_g + gj.gradient[:, sl], axis=1)
    solved = r < 1e-10 * scale
    S = pi_h + gj.hessian[:, sl, sl]
    eig = np.linalg.eigvalsh(S)
    emax = eig[:, -1]
    tol_eff = tol * np.maximum(1.0, np.abs(eig).max(axis=1))
    fails = np.flatnonzero(solved & (emax > tol_eff))
    covered = solved.reshape(samples, starts).any(axis=1)
    coverage = float(covered.mean())
    witnesses = [
        {"x": x[i].tolist(), "ybar": yb[i].tolist(), "eig_max": float(emax[i])}
        for i in fails[np.argsort(-emax[fails])][:10]
    ]
    n_sol = int(solved.sum())
    worst = float(emax[solved].max()) if n_sol else np.nan
    if fails.size:
        verdict = "fail"
    elif n_sol == 0:
        verdict = "inconclusive"
    else:
        verdict = "pass"
    uniform = bool(verdict == "pass" and np.all(emax[solved] < -tol_eff[solved]))
    b_star = None
    if spec.family == "quasilinear":
        b_star = bool(verdict == "pass" and coverage == 1.0)
    return LocalTestReport(verdict, uniform, coverage, worst, n_sol, samples, b_star, witnesses)


# --------------------------------------------------------------------------
# double transform on grids


@dataclass
class TransformCheck:
    is_gbar_star_concave: bool
    max_gap: float
    tol: float
    double_transform: np.ndarray
    contracts: np.ndarray


def gbar_transform(spec: ModelSpec, psi, contracts, agents, x0s):
    """``psi^Gbar`` on the augmented agent grid and its transform back on ``contracts``."""
    contracts = np.atleast_2d(contracts)
    agents = np.atleast_2d(agents)
    x0s = np.asarray(x0s, dtype=float).ravel()
    n_a, n_c = agents.shape[0], contracts.shape[0]
    G = spec.G.evaluate(
        spec.pack(np.repeat(agents, n_c, axis=0), np.tile(contracts[:, :-1], (n_a, 1)), np.tile(contracts[:, -1], n_a))
    ).reshape(n_a, n_c)
    Gbar = (x0s[:, None, None] * G[None, :, :]).reshape(-1, n_c)  # rows (x0, x)
    phi = np.min(Gbar - psi[None, :], axis=1)
    back = np.min(Gbar - phi[:, None], axis=0)
    return phi, back


def gbar_transform_check(spec: ModelSpec, product_grid, agent_grid, X0, price_grid=None, tol=None) -> TransformCheck:
    """Grid version of the double-transform test ``pi == (pi^Gbar)^Gbar*``.

    ``product_grid`` holds products (``(P, n)``) combined with ``price_grid``
    into contracts, or full contracts (``(P, n+1)``) when ``price_grid`` is
    omitted.  ``X0`` is a grid of negative multipliers containing ``-1``.
    The default tolerance is the squared agent-grid spacing.
    """
    _require_type_independent(spec)
    X0 = np.asarray(X0, dtype=float).ravel()
    if np.any(X0 >= 0) or not np.any(np.isclose(X0, -1.0)):
        raise DomainError("X0 must be negative and contain -1")
    agents = np.atleast_2d(np.asarray(agent_grid, dtype=float)).reshape(-1, spec.m)
    prods = np.atleast_2d(np.asarray(product_grid, dtype=float))
    if price_grid is not None:
        prods = prods.reshape(-1, spec.n)
        prices = np.asarray(price_grid, dtype=float).ravel()
        contracts = np.column_stack([np.repeat(prods, prices.size, axis=0), np.tile(prices, prods.shape[0])])
    else:
        contracts = prods.reshape(-1, spec.n + 1)
    psi = spec.pi_value(np.zeros((contracts.shape[0], spec.m)), contracts[:, :-1], contracts[:, -1])
    _, back = gbar_transform(spec, psi, contracts, agents, X0)
    gap = float(np.max(np.abs(back - psi)))
    if tol is None:
        spacing = max(
            (np.max(np.diff(np.unique(agents[:, i]))) if np.unique(agents[:, i]).size > 1 else 0.0)
            for i in range(spec.m)
        )
        tol = spacing**2 + 1e-12
    return TransformCheck(gap < tol, gap, float(tol), back, contracts)


# --------------------------------------------------------------------------
# combined certification


METHODS = ("lemma49", "examples", "fourth_order", "local_b")


def certify(spec: ModelSpec, methods=METHODS, samples=4096, tol=DEFAULT_TOL, seed=0) -> dict:
    """Run the selected methods and merge them into one verdict with notes."""
    out = {"model": spec.name, "methods": {}, "disagreements": []}
    primary = certify_lemma49(spec, samples, tol, seed)
    out["methods"]["lemma49"] = primary.to_dict()
    verdict = primary.verdict
    if "examples" in methods:
        try:
            pts = sample_points(spec, min(samples, 1024), seed)
            closed = closed_form_matrices(spec, pts)
            generic = criterion_matrices(spec, pts)
            ce = np.linalg.eigvalsh(0.5 * (closed + np.swapaxes(closed, 1, 2)))
            ge = np.linalg.eigvalsh(0.5 * (generic + np.swapaxes(generic, 1, 2)))
            lab_c = classify_signs(ce[:, 0], ce[:, -1], tol)
            lab_g = classify_signs(ge[:, 0], ge[:, -1], tol)
            agree = float(np.mean(lab_c == lab_g))
            out["methods"]["examples"] = {
                "agreement": agree,
                "samples": int(pts.shape[0]),
                "max_abs_difference": float(np.max(np.abs(closed - generic))),
            }
            if agree < 1.0:
                out["disagreements"].append(f"closed-form and generic criteria disagree on {1 - agree:.2%} of samples")
        except GScreenError as exc:
            out["methods"]["examples"] = {"skipped": str(exc)}
    if "fourth_order" in methods:
        try:
            fo = fourth_order_test(spec, min(samples, 512), seed)
            out["methods"]["fourth_order"] = fo.to_dict()
            if fo.max > fo.tol and verdict not in ("linear", "indefinite"):
                out["disagreements"].append("segment convexity is violated, so the criterion cannot certify the profit functional")
                verdict = "inconclusive"
        except GScreenError as exc:
            out["methods"]["fourth_order"] = {"skipped": str(exc)}
    if "local_b" in methods:
        try:
            lb = local_gbar_star_test(spec, min(samples, 256), seed, tol)
            out["methods"]["local_b"] = lb.to_dict()
            if lb.verdict == "fail" and verdict in ("concave", "uniformly_concave", "strictly_concave_sampled", "linear"):
                out["disagreements"].append("local type-independent test fails while the criterion matrix is non-positive")
            if lb.verdict == "pass" and lb.coverage == 1.0 and verdict in ("indefinite", "convex", "uniformly_convex", "strictly_convex_sampled"):
                out["disagreements"].append("local type-independent test passes while the criterion matrix has positive directions")
        except GScreenError as exc:
            out["methods"]["local_b"] = {"skipped": str(exc)}
    out["verdict"] = verdict
    return out
