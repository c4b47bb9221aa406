"""G-segments, the menu/utility duality, incentive checks and the profit functional.

A G-segment at agent ``x0`` joins two contracts ``(y0, z0)`` and ``(y1, z1)``
along the curve on which ``(G_x, G)(x0, y_t, z_t)`` interpolates linearly::

    (G_x, G)(x0, y_t, z_t) = (1 - t) (G_x, G)(x0, y0, z0) + t (G_x, G)(x0, y1, z1)

Segments are solved by Gauss-Newton continuation in ``t``, batched over many
segments at once.  Menus and indirect utilities live on finite grids; the
G-subdifferential is represented implicitly by the argmax assignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import GridTooSmall, LeftDomain, ModelError, NoConvergence, OutOfRange
from .model import ModelSpec, invert_price_clamped, sample_box, twist_jacobian

SEGMENT_TOL = 1e-8
DOMAIN_MARGIN = 1e-9


# --------------------------------------------------------------------------
# G-segments


@dataclass
class GSegment:
    """A solved G-segment; ``points[k]`` is ``(y, z)`` at ``t[k]``."""

    x0: np.ndarray
    start: np.ndarray
    end: np.ndarray
    t: np.ndarray
    points: np.ndarray
    residuals: np.ndarray

    @property
    def y(self):
        return self.points[:, :-1]

    @property
    def z(self):
        return self.points[:, -1]

    @property
    def samples(self):
        """Rows ``(t, y_t, z_t, residual)``."""
        return [(float(t), p[:-1].copy(), float(p[-1]), float(r)) for t, p, r in zip(self.t, self.points, self.residuals)]


def _twist_and_jac(spec, x0, q):
    """``(G_x, G)`` and its ``(y, z)`` Jacobian for rows ``x0[b], q[b]``."""
    pts = spec.pack(x0, q[:, :-1], q[:, -1])
    jet = spec.G.jet(pts)
    img = np.column_stack([jet.gradient[:, spec.xs], jet.value])
    top = jet.hessian[:, spec.xs, spec.ybar]
    jac = np.concatenate([top, jet.gradient[:, None, spec.ybar]], axis=1)
    return img, jac


def _twist(spec, x0, q):
    pts = spec.pack(x0, q[:, :-1], q[:, -1])
    jet = spec.G.jet(pts, order=1)
    return np.column_stack([jet.gradient[:, spec.xs], jet.value])


def _gauss_newton(spec, x0, target, q, iters=50, damping=0.5, halvings=40):
    """Batched Gauss-Newton for ``(G_x, G)(x0, q) = target`` with backtracking.

    Steps are the least-squares (pseudoinverse) solutions; each row's step is
    scaled by ``damping`` until the residual norm decreases.  Returns the
    iterates and their residual norms.
    """
    q = q.copy()
    img, jac = _twist_and_jac(spec, x0, q)
    r = img - target
    res = np.linalg.norm(r, axis=1)
    scale = 1.0 + np.linalg.norm(target, axis=1)
    active = res > 1e-14 * scale
    for _ in range(iters):
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        step = -np.einsum("bij,bj->bi", np.linalg.pinv(jac[idx]), r[idx])
        alpha = np.ones(idx.size)
        pending = np.ones(idx.size, dtype=bool)
        new_q = q[idx].copy()
        new_r = r[idx].copy()
        new_res = res[idx].copy()
        for _ in range(halvings):
            if not np.any(pending):
                break
            sub = np.flatnonzero(pending)
            trial = q[idx[sub]] + alpha[sub, None] * step[sub]
            with np.errstate(all="ignore"):
                try:
                    tr = _twist(spec, x0[idx[sub]], trial) - target[idx[sub]]
                    tres = np.linalg.norm(tr, axis=1)
                except Exception:
                    tr = np.full((sub.size, target.shape[1]), np.nan)
                    tres = np.full(sub.size, np.inf)
            better = np.isfinite(tres) & (tres < res[idx[sub]])
            ok = sub[better]
            new_q[ok] = trial[better]
            new_r[ok] = tr[better]
            new_res[ok] = tres[better]
            pending[ok] = False
            alpha[sub[~better]] *= damping
        moved = ~pending
        # rows where no step decreases the residual have stalled
        stalled = idx[pending]
        active[stalled] = False
        upd = idx[moved]
        q[upd] = new_q[moved]
        r[upd] = new_r[moved]
        res[upd] = new_res[moved]
        if upd.size:
            _, jac_upd = _twist_and_jac(spec, x0[upd], q[upd])
            jac[upd] = jac_upd
        active &= res > 1e-14 * scale
    return q, res


def _box(spec):
    return np.vstack([spec.Y, spec.Z[None, :]])


def solve_g_segments(spec: ModelSpec, x0, start, end, t=None, steps=64, tol=SEGMENT_TOL, raise_on_failure=True):
    """Solve a batch of G-segments on a common ``t`` grid.

    ``x0`` has shape ``(B, m)``, ``start`` and ``end`` shape ``(B, n+1)``.
    Returns ``(points, residuals, failed)`` with ``points`` of shape
    ``(B, len(t), n+1)``.  With ``raise_on_failure`` the first failed row
    raises :class:`NoConvergence` or :class:`LeftDomain`.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    start = np.atleast_2d(np.asarray(start, dtype=float))
    end = np.atleast_2d(np.asarray(end, dtype=float))
    b = max(x0.shape[0], start.shape[0], end.shape[0])
    x0 = np.broadcast_to(x0, (b, spec.m)).copy()
    start = np.broadcast_to(start, (b, spec.n + 1)).copy()
    end = np.broadcast_to(end, (b, spec.n + 1)).copy()
    if t is None:
        if steps < 2:
            raise ValueError("steps must be >= 2")
        t = np.linspace(0.0, 1.0, steps + 1)
    t = np.asarray(t, dtype=float)
    box = _box(spec)
    width = box[:, 1] - box[:, 0]
    lo = box[:, 0] - DOMAIN_MARGIN * np.maximum(1.0, width)
    hi = box[:, 1] + DOMAIN_MARGIN * np.maximum(1.0, width)
    a = _twist(spec, x0, start)
    c = _twist(spec, x0, end)
    points = np.empty((b, t.size, spec.n + 1))
    residuals = np.zeros((b, t.size))
    failed = np.zeros(b, dtype=bool)
    failure = [None] * b
    prev = prev2 = None
    prev_t = prev2_t = None
    for k, tk in enumerate(t):
        if tk == 0.0:
            points[:, k] = start
            continue
        if tk == 1.0:
            points[:, k] = end
            residuals[:, k] = np.linalg.norm(_twist(spec, x0, end) - c, axis=1)
            continue
        target = (1.0 - tk) * a + tk * c
        if prev is None:
            guess = (1.0 - tk) * start + tk * end
        elif prev2 is None:
            guess = prev + (tk - prev_t) * (end - start)
        else:
            guess = prev + (prev - prev2) * (tk - prev_t) / (prev_t - prev2_t)
        q, res = _gauss_newton(spec, x0, target, guess)
        bad = res >= tol
        if np.any(bad) and prev is not None:
            # retry failed rows from the previous point without extrapolation
            rb = np.flatnonzero(bad)
            q2, res2 = _gauss_newton(spec, x0[rb], target[rb], prev[rb])
            better = res2 < res[rb]
            q[rb[better]] = q2[better]
            res[rb[better]] = res2[better]
            bad = res >= tol
        outside = np.any((q < lo) | (q > hi), axis=1)
        for i in np.flatnonzero((bad | outside) & ~failed):
            failed[i] = True
            if bad[i]:
                failure[i] = NoConvergence(
                    f"G-segment solve failed at t={tk:.6g} (residual {res[i]:.3g})", t=float(tk), iterate=q[i].copy()
                )
            else:
                failure[i] = LeftDomain(f"G-segment leaves cl(Y x Z) at t={tk:.6g}", t=float(tk), iterate=q[i].copy())
        points[:, k] = q
        residuals[:, k] = res
        prev2, prev2_t = prev, prev_t
        prev, prev_t = q, tk
    if raise_on_failure and np.any(failed):
        raise failure[int(np.flatnonzero(failed)[0])]
    return points, residuals, failed


def solve_g_segment(spec: ModelSpec, x0, start, end, steps=64, tol=SEGMENT_TOL) -> GSegment:
    """The G-segment at agent ``x0`` from contract ``start`` to ``end``."""
    x0 = np.asarray(x0, dtype=float).reshape(spec.m)
    start = np.asarray(start, dtype=float).reshape(spec.n + 1)
    end = np.asarray(end, dtype=float).reshape(spec.n + 1)
    t = np.linspace(0.0, 1.0, steps + 1)
    pts, res, _ = solve_g_segments(spec, x0, start, end, t=t, tol=tol)
    return GSegment(x0, start.copy(), end.copy(), t, pts[0], res[0])


def segment_points(spec: ModelSpec, x0, start, end, t, steps=64, tol=SEGMENT_TOL):
    """Points at parameter ``t`` on a batch of G-segments, by continuation from ``t = 0``."""
    t = float(t)
    if t == 0.0:
        return np.atleast_2d(np.asarray(start, dtype=float)).copy()
    grid = np.linspace(0.0, t, max(2, int(np.ceil(steps * abs(t)))) + 1)
    pts, _, _ = solve_g_segments(spec, x0, start, end, t=grid, tol=tol)
    return pts[:, -1]


@dataclass
class G3Check:
    convex: bool
    strictly: bool
    min_second_difference: float
    witness: Optional[dict] = None


def check_G3_along_segment(spec: ModelSpec, seg: GSegment, probes=16, seed=0, agents=None) -> G3Check:
    """Discrete convexity of ``t -> G(x, y_t, z_t)`` for sampled agents ``x``.

    Second differences on the segment's ``t`` grid must be ``>= -1e-8``;
    ``strictly`` requires ``> 1e-8`` for every probed ``x != x0``.
    """
    if agents is None:
        agents = sample_box(spec.X[:, 0], spec.X[:, 1], probes, seed)
    agents = np.atleast_2d(np.asarray(agents, dtype=float))
    nt = seg.t.size
    xs = np.repeat(agents, nt, axis=0)
    ys = np.tile(seg.points, (agents.shape[0], 1))
    vals = spec.G_value(xs, ys[:, :-1], ys[:, -1]).reshape(agents.shape[0], nt)
    d2 = vals[:, 2:] - 2.0 * vals[:, 1:-1] + vals[:, :-2]
    i, k = np.unravel_index(np.argmin(d2), d2.shape)
    worst = float(d2[i, k])
    convex = worst >= -1e-8
    away = np.linalg.norm(agents - seg.x0, axis=1) > 0
    strictly = bool(np.all(d2[away] > 1e-8)) and convex
    witness = None
    if not convex:
        witness = {"x": agents[i].tolist(), "t": float(seg.t[k + 1]), "second_difference": worst}
    return G3Check(bool(convex), strictly, worst, witness)


# --------------------------------------------------------------------------
# menus and indirect utilities


@dataclass
class Menu:
    """Finite price menu; ``grid`` always contains the outside-option product."""

    grid: np.ndarray
    prices: np.ndarray
    capped: Optional[np.ndarray] = None

    def __post_init__(self):
        self.grid = np.atleast_2d(np.asarray(self.grid, dtype=float))
        self.prices = np.asarray(self.prices, dtype=float).reshape(self.grid.shape[0])

    def outside_index(self, spec: ModelSpec):
        hits = np.flatnonzero(np.all(self.grid == spec.outside_y, axis=1))
        if hits.size == 0:
            raise ModelError("menu grid must contain the outside-option product")
        return hits

    def validate(self, spec: ModelSpec):
        idx = self.outside_index(spec)
        if np.any(self.prices[idx] > spec.outside_z):
            raise ModelError("outside-option product must be priced at most z_out")
        if np.any(self.prices < spec.Z[0]) or np.any(self.prices > spec.Z[1]):
            raise ModelError("menu prices must lie in cl(Z)")
        return self


def with_outside(spec: ModelSpec, grid, prices):
    """Menu over ``grid`` plus the outside option at price ``z_out`` (if not already present)."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float)).reshape(-1, spec.n)
    prices = np.asarray(prices, dtype=float).reshape(grid.shape[0])
    present = np.all(grid == spec.outside_y, axis=1)
    if np.any(present):
        prices = prices.copy()
        prices[present] = np.minimum(prices[present], spec.outside_z)
        return Menu(grid, prices)
    return Menu(np.vstack([spec.outside_y, grid]), np.concatenate([[spec.outside_z], prices]))


@dataclass
class IndirectUtility:
    """Utility values on an agent grid, optionally with the chosen contracts."""

    agents: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    y: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    choice: Optional[np.ndarray] = None
    grid_shape: Optional[tuple] = None

    def __post_init__(self):
        self.agents = np.atleast_2d(np.asarray(self.agents, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        self.values = np.asarray(self.values, dtype=float)

    @property
    def has_assignment(self):
        return self.y is not None and self.z is not None

    def with_values(self, values):
        return IndirectUtility(self.agents, self.weights, values, grid_shape=self.grid_shape)


def agent_grid(spec: ModelSpec, counts):
    """Tensor grid over ``cl(X)`` (C order, first axis slowest) with normalized weights."""
    counts = [int(c) for c in np.broadcast_to(np.atleast_1d(counts), (spec.m,))]
    axes = [np.linspace(lo, hi, c) if c > 1 else np.array([0.5 * (lo + hi)]) for (lo, hi), c in zip(spec.X, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    agents = np.column_stack([g.ravel() for g in mesh])
    return agents, spec.weights(agents), tuple(counts)


def _lex_order(grid):
    return np.lexsort(grid.T[::-1])


def utility_from_menu(spec: ModelSpec, menu: Menu, agents, weights=None, grid_shape=None, tie_tol=1e-12) -> IndirectUtility:
    """Best responses of the agents to ``menu``.

    Ties in utility (within ``tie_tol`` relative) go to the option with the
    larger principal payoff, then to the lexicographically smallest product.
    """
    menu.outside_index(spec)
    agents = np.atleast_2d(np.asarray(agents, dtype=float))
    if weights is None:
        weights = spec.weights(agents)
    order = _lex_order(menu.grid)
    grid, prices = menu.grid[order], menu.prices[order]
    n_a, n_p = agents.shape[0], grid.shape[0]
    pts = spec.pack(np.repeat(agents, n_p, axis=0), np.tile(grid, (n_a, 1)), np.tile(prices, n_a))
    U = spec.G.evaluate(pts).reshape(n_a, n_p)
    P = spec.pi.evaluate(pts).reshape(n_a, n_p)
    best = U.max(axis=1)
    cand = U >= (best - tie_tol * (1.0 + np.abs(best)))[:, None]
    Pm = np.where(cand, P, -np.inf)
    pbest = Pm.max(axis=1)
    cand &= Pm >= (pbest - tie_tol * (1.0 + np.abs(pbest)))[:, None]
    j = np.argmax(cand, axis=1)
    rows = np.arange(n_a)
    return IndirectUtility(
        agents,
        np.asarray(weights, dtype=float),
        U[rows, j],
        y=grid[j].copy(),
        z=prices[j].copy(),
        choice=order[j],
        grid_shape=grid_shape,
    )


def menu_from_utility(spec: ModelSpec, u: IndirectUtility, product_grid, strict=False) -> Menu:
    """Smallest menu on ``product_grid`` whose induced utility stays below ``u`` on the grid.

    ``v(y) = max_i H(x_i, y, u_i)`` clamped to ``cl(Z)``; the outside option
    is added if missing and priced at most ``z_out``.  Products whose price
    had to be capped at the upper bound are flagged in ``Menu.capped``; with
    ``strict=True`` they raise :class:`OutOfRange` instead.
    """
    grid = np.atleast_2d(np.asarray(product_grid, dtype=float)).reshape(-1, spec.n)
    if not np.any(np.all(grid == spec.outside_y, axis=1)):
        grid = np.vstack([spec.outside_y, grid])
    n_a, n_p = u.agents.shape[0], grid.shape[0]
    z, side = invert_price_clamped(spec, np.repeat(u.agents, n_p, axis=0), np.tile(grid, (n_a, 1)), np.repeat(u.values, n_p))
    z = z.reshape(n_a, n_p)
    side = side.reshape(n_a, n_p)
    v = z.max(axis=0)
    capped = np.any(side == 1, axis=0)
    if strict and np.any(capped):
        raise OutOfRange("some utility level is below G at the price cap; price capped at z_max")
    out = np.all(grid == spec.outside_y, axis=1)
    v[out] = np.minimum(v[out], spec.outside_z)
    return Menu(grid, v, capped)


# --------------------------------------------------------------------------
# incentive compatibility, participation, profit


@dataclass
class ICCheck:
    ok: bool
    worst_violation: float
    witness: Optional[tuple] = None


def ic_slacks(spec: ModelSpec, alloc: IndirectUtility):
    """Matrix ``S[i, j] = G(x_i, y_i, z_i) - G(x_i, y_j, z_j)``."""
    if not alloc.has_assignment:
        raise ModelError("allocation has no assignment")
    n_a = alloc.agents.shape[0]
    own = spec.G_value(alloc.agents, alloc.y, alloc.z)
    pts = spec.pack(np.repeat(alloc.agents, n_a, axis=0), np.tile(alloc.y, (n_a, 1)), np.tile(alloc.z, n_a))
    cross = spec.G.evaluate(pts).reshape(n_a, n_a)
    return own[:, None] - cross


def check_incentive_compatible(spec: ModelSpec, alloc: IndirectUtility, tol=1e-8) -> ICCheck:
    """No agent gains more than ``tol`` by taking another agent's contract."""
    S = ic_slacks(spec, alloc)
    i, j = np.unravel_index(np.argmin(S), S.shape)
    worst = float(S[i, j])
    ok = worst >= -tol
    return ICCheck(ok, worst, None if ok else (int(i), int(j)))


def ir_slacks(spec: ModelSpec, alloc: IndirectUtility):
    """``G(x_i, y_i, z_i) - G(x_i, y_out, z_out)`` per agent."""
    own = spec.G_value(alloc.agents, alloc.y, alloc.z)
    return own - spec.u_outside(alloc.agents)


def profit_functional(spec: ModelSpec, alloc: IndirectUtility) -> float:
    """Expected principal payoff with the weights normalized to total mass one."""
    if not alloc.has_assignment:
        raise ModelError("allocation has no assignment")
    w = alloc.weights / alloc.weights.sum()
    return float(np.dot(w, spec.pi_value(alloc.agents, alloc.y, alloc.z)))


def discrete_sobolev_distance(u1: IndirectUtility, u2: IndirectUtility) -> float:
    """Grid ``W^{1,2}(mu)`` distance with forward differences (backward on the upper face)."""
    if u1.agents.shape != u2.agents.shape or not np.array_equal(u1.agents, u2.agents):
        raise ModelError("utilities live on different agent grids")
    shape = u1.grid_shape or u2.grid_shape
    if shape is None:
        if u1.agents.shape[1] != 1:
            raise ModelError("grid shape unknown for a multi-dimensional agent grid")
        shape = (u1.agents.shape[0],)
    if any(c < 2 for c in shape):
        raise GridTooSmall("need at least 2 grid points per axis")
    w = u1.weights / u1.weights.sum()
    d = (u1.values - u2.values).reshape(shape)
    total = np.sum(w * (u1.values - u2.values) ** 2)
    coords = u1.agents.reshape(*shape, -1)
    for axis in range(len(shape)):
        diff = np.diff(d, axis=axis)
        h = np.diff(coords[..., axis], axis=axis)
        fwd = diff / h
        # backward difference on the upper boundary: reuse the last forward one
        last = np.take(fwd, [-1], axis=axis)
        grad = np.concatenate([fwd, last], axis=axis)
        total += np.sum(w * grad.ravel() ** 2)
    return float(np.sqrt(total))


def combined_allocation(spec: ModelSpec, u0: IndirectUtility, u1: IndirectUtility, t, product_grid, steps=64):
    """Allocation induced by the pointwise combination ``(1 - t) u0 + t u1``.

    The product grid is enlarged by the G-segment points at each agent
    between the contracts chosen under ``u0`` and ``u1``; these are the
    contracts supporting the combination at that agent.
    """
    ut = (1.0 - t) * u0.values + t * u1.values
    start = np.column_stack([u0.y, u0.z])
    end = np.column_stack([u1.y, u1.z])
    mids = segment_points(spec, u0.agents, start, end, t, steps=steps)
    grid = np.vstack([np.atleast_2d(product_grid).reshape(-1, spec.n), mids[:, :-1]])
    grid = np.unique(grid, axis=0)
    target = u0.with_values(ut)
    menu = menu_from_utility(spec, target, grid)
    return utility_from_menu(spec, menu, u0.agents, u0.weights, u0.grid_shape), menu
