"""Exhaustive search over price menus on small product and price grids.

Every assignment of grid prices to the non-outside products is evaluated;
the outside-option product keeps price ``z_out``.  Best responses use the
same tie-breaking as :func:`gscreen.geometry.utility_from_menu`, so the
result is exactly reproducible through the geometry module.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import TooLarge
from .geometry import IndirectUtility, Menu, profit_functional, utility_from_menu
from .model import ModelSpec

MAX_MENUS = 10**7


@dataclass
class OracleResult:
    menu: Menu
    profit: float
    menus_evaluated: int
    runtime: float
    allocation: IndirectUtility


def uniform_grid(lo, hi, count):
    """``count`` equally spaced points on ``[lo, hi]`` (tensor grid for boxes)."""
    lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
    axes = [np.linspace(a, b, count) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


def enumerate_menus(spec: ModelSpec, agents, product_grid, price_grid, weights=None, tie_tol=1e-12, chunk=None) -> OracleResult:
    """Best menu over all price assignments on ``product_grid`` x ``price_grid``.

    ``product_grid`` may or may not contain the outside-option product; it is
    added when missing.  Ties between menus go to the first in enumeration
    order (lexicographic in the price indices of the products, which are
    sorted lexicographically).
    """
    t0 = time.perf_counter()
    agents = np.atleast_2d(np.asarray(agents, dtype=float))
    if weights is None:
        weights = spec.weights(agents)
    weights = np.asarray(weights, dtype=float) / np.sum(weights)
    grid = np.atleast_2d(np.asarray(product_grid, dtype=float)).reshape(-1, spec.n)
    prices = np.asarray(price_grid, dtype=float).ravel()
    is_out = np.all(grid == spec.outside_y, axis=1)
    if not np.any(is_out):
        grid = np.vstack([spec.outside_y, grid])
        is_out = np.all(grid == spec.outside_y, axis=1)
    grid = np.unique(grid, axis=0)  # lexicographic order
    is_out = np.all(grid == spec.outside_y, axis=1)
    n_p, n_q, n_a = grid.shape[0], prices.size, agents.shape[0]
    if float(n_q) ** n_p > MAX_MENUS:
        raise TooLarge(f"{n_q}^{n_p} menus exceed the limit of {MAX_MENUS}")
    free = np.flatnonzero(~is_out)
    out_idx = int(np.flatnonzero(is_out)[0])

    # utility and payoff tables: (agent, product, price); outside column separately
    pts = spec.pack(
        np.repeat(agents, n_p * n_q, axis=0),
        np.tile(np.repeat(grid, n_q, axis=0), (n_a, 1)),
        np.tile(prices, n_a * n_p),
    )
    U = spec.G.evaluate(pts).reshape(n_a, n_p, n_q)
    P = spec.pi.evaluate(pts).reshape(n_a, n_p, n_q)
    u_out = spec.G_value(agents, spec.outside_y, spec.outside_z)
    p_out = spec.pi_value(agents, spec.outside_y, spec.outside_z)

    total = n_q ** free.size
    if chunk is None:
        chunk = max(1, min(total, 2_000_000 // max(1, n_a * n_p)))
    best_profit, best_code = -np.inf, 0
    rows = np.arange(n_a)
    for startc in range(0, total, chunk):
        codes = np.arange(startc, min(total, startc + chunk))
        digits = np.empty((codes.size, free.size), dtype=np.int64)
        rem = codes.copy()
        for k in range(free.size - 1, -1, -1):
            digits[:, k] = rem % n_q
            rem //= n_q
        Uc = np.empty((codes.size, n_a, n_p))
        Pc = np.empty((codes.size, n_a, n_p))
        Uc[:, :, out_idx] = u_out
        Pc[:, :, out_idx] = p_out
        for k, p in enumerate(free):
            Uc[:, :, p] = U[:, p, :][:, digits[:, k]].T
            Pc[:, :, p] = P[:, p, :][:, digits[:, k]].T
        best = Uc.max(axis=2, keepdims=True)
        cand = Uc >= best - tie_tol * (1.0 + np.abs(best))
        Pm = np.where(cand, Pc, -np.inf)
        pbest = Pm.max(axis=2, keepdims=True)
        cand &= Pm >= pbest - tie_tol * (1.0 + np.abs(pbest))
        choice = np.argmax(cand, axis=2)
        payoff = np.take_along_axis(Pc, choice[:, :, None], axis=2)[:, :, 0]
        profit = payoff @ weights
        i = int(np.argmax(profit))
        if profit[i] > best_profit:
            best_profit, best_code = float(profit[i]), int(codes[i])

    menu_prices = np.empty(n_p)
    menu_prices[out_idx] = spec.outside_z
    rem = best_code
    for k in range(free.size - 1, -1, -1):
        menu_prices[free[k]] = prices[rem % n_q]
        rem //= n_q
    menu = Menu(grid, menu_prices)
    alloc = utility_from_menu(spec, menu, agents, weights, tie_tol=tie_tol)
    profit = profit_functional(spec, alloc)
    return OracleResult(menu, profit, int(total), time.perf_counter() - t0, alloc)
