"""G-segments, agents responding to a price menu, and the menu/utility duality."""

import numpy as np

from gscreen.geometry import (
    Menu,
    agent_grid,
    check_G3_along_segment,
    menu_from_utility,
    solve_g_segment,
    utility_from_menu,
)
from gscreen.model import builtin

spec = builtin("price_sensitive")
seg = solve_g_segment(spec, [0.4], [0.1, 0.2], [0.9, 0.7], steps=8)
print("G-segment for the price-sensitive model at x0 = 0.4:")
print("     t        y        z   residual")
for t, (y, z), r in zip(seg.t, seg.points, seg.residuals):
    print(f"  {t:.3f}  {y:.5f}  {z:.5f}  {r:.1e}")
g3 = check_G3_along_segment(spec, seg)
print(f"utility along the segment is convex for sampled agents: {g3.convex} (min second difference {g3.min_second_difference:.3g})")

ql = builtin("quasilinear")
menu = Menu([[0.0], [0.5], [1.0]], [0.0, 0.25, 1.0])
agents, w, shape = agent_grid(ql, 6)
alloc = utility_from_menu(ql, menu, agents, w, shape)
print("\nQuasilinear agents facing the menu {0: 0, 0.5: 0.25, 1: 1}:")
for x, y, z, u in zip(agents[:, 0], alloc.y[:, 0], alloc.z, alloc.values):
    print(f"  x = {x:.2f} buys y = {y:.2f} at {z:.2f}, utility {u:.3f}")

# recover the cheapest menu supporting these utilities and respond again
back = menu_from_utility(ql, alloc, menu.grid)
again = utility_from_menu(ql, back, agents, w, shape)
print(f"recovered prices {back.prices.round(4).tolist()}, utility change {np.max(np.abs(again.values - alloc.values)):.1e}")
