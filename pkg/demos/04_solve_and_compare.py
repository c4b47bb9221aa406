"""Solve the discretized pricing problem and compare with exhaustive search over a small menu grid."""

import numpy as np

from gscreen.geometry import agent_grid
from gscreen.model import builtin
from gscreen.oracle import enumerate_menus, uniform_grid
from gscreen.solver import DiscreteInstance, SolverOptions, solve_principal, uniqueness_probe, verify_solution

spec = builtin("quasilinear")
agents, w, shape = agent_grid(spec, 6)
inst = DiscreteInstance(spec, agents, w, shape, SolverOptions(multistart=4, seed=0))
sol = solve_principal(inst)
check = verify_solution(inst, sol)
print(f"solver: profit {sol.profit:.6f}, feasible {check.feasible}, stationarity {check.stationarity:.1e}")
print("   type  product    price")
for x, y, z in zip(agents[:, 0], sol.y[:, 0], sol.z):
    print(f"   {x:.2f}   {y:.4f}   {z:.4f}")

oracle = enumerate_menus(spec, agents, uniform_grid(0, 1, 6), np.linspace(0, 1, 8), w)
print(f"\nexhaustive search over {oracle.menus_evaluated} menus: profit {oracle.profit:.6f} in {oracle.runtime:.2f} s")
print(f"the continuous solver gains {sol.profit - oracle.profit:.4f} from prices off the grid")

probe = uniqueness_probe(DiscreteInstance.on_grid(builtin("price_sensitive"), 6), runs=3)
print(f"\nprice-sensitive model, 3 random starts: largest utility distance {probe.max_distance:.1e}")
