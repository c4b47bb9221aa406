import numpy as np
import pytest

from _corpus import make_spec
from gscreen.geometry import agent_grid
from gscreen.model import builtin
from gscreen.solver import (
    DiscreteInstance,
    Solution,
    SolverOptions,
    kkt_residual,
    solve_principal,
    uniqueness_probe,
    verify_solution,
)

ONE = SolverOptions(multistart=1)


def test_single_agent_closed_form():
    # max z - y^2/2 subject to y - z >= 0: y = z = 1, profit 1/2
    spec = builtin("quasilinear")
    inst = DiscreteInstance(spec, [[1.0]], [1.0], options=ONE)
    sol = solve_principal(inst)
    assert sol.profit == pytest.approx(0.5, abs=1e-4)
    assert sol.y[0, 0] == pytest.approx(1.0, abs=1e-3)
    assert sol.converged


def test_zero_sum_pins_utilities_to_outside_option():
    spec = builtin("zero_sum")
    inst = DiscreteInstance.on_grid(spec, 5, ONE)
    sol = solve_principal(inst)
    bound = -np.dot(inst.weights, spec.u_outside(inst.agents))
    assert sol.profit == pytest.approx(bound, abs=1e-4)


def test_single_good_matches_posted_price_scan():
    # utility linear in y in [0, 1] and no cost: a posted price for y = 1 is optimal
    spec = make_spec("x1*y1 - z", "z")
    inst = DiscreteInstance.on_grid(spec, 5, SolverOptions(multistart=2))
    sol = solve_principal(inst)
    x = inst.agents[:, 0]
    scan = max(p * np.mean(x >= p) for p in x)
    assert scan == pytest.approx(0.3)
    assert sol.profit == pytest.approx(scan, abs=1e-4)


def test_quasilinear_allocation_is_monotone_and_feasible():
    spec = builtin("quasilinear")
    inst = DiscreteInstance.on_grid(spec, 6, ONE)
    sol = solve_principal(inst)
    assert np.all(np.diff(sol.y[:, 0]) >= -1e-6)
    assert sol.ic_residual >= -1e-6 and sol.ir_residual >= -1e-6
    check = verify_solution(inst, sol)
    assert check.feasible and check.stationarity < 1e-4
    assert check.profit == pytest.approx(sol.profit, abs=1e-12)


def test_best_feasible_profit_nondecreasing_in_trace():
    spec = builtin("price_sensitive")
    sol = solve_principal(DiscreteInstance.on_grid(spec, 5, ONE))
    best = [r["best_feasible"] for r in sol.trace]
    assert all(b >= a for a, b in zip(best, best[1:]))


def test_seeded_runs_are_bit_identical():
    spec = builtin("inhomogeneous")
    opts = SolverOptions(multistart=2, seed=5)
    a = solve_principal(DiscreteInstance.on_grid(spec, 4, opts))
    b = solve_principal(DiscreteInstance.on_grid(spec, 4, opts))
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.z, b.z)
    assert a.profit == b.profit and a.seed == b.seed


def test_thread_cap_does_not_change_result(monkeypatch):
    spec = builtin("quasilinear")
    serial = solve_principal(DiscreteInstance.on_grid(spec, 4, SolverOptions(multistart=3)))
    monkeypatch.setenv("GSCREEN_THREADS", "3")
    threaded = solve_principal(DiscreteInstance.on_grid(spec, 4, SolverOptions(multistart=3, threads=0)))
    np.testing.assert_array_equal(serial.z, threaded.z)


def test_pooling_allocation_verifies():
    spec = builtin("quasilinear")
    inst = DiscreteInstance.on_grid(spec, 5, ONE)
    n = inst.agents.shape[0]
    y = np.tile(spec.outside_y, (n, 1))
    z = np.full(n, spec.outside_z)
    pool = Solution(inst.agents, y, z, spec.G_value(inst.agents, y, z), 0.0, 0.0, 0.0, True, 0, 0, weights=inst.weights)
    check = verify_solution(inst, pool)
    assert check.feasible
    assert check.profit == pytest.approx(np.dot(inst.weights, spec.pi_value(inst.agents, y, z)))


def test_corrupted_solution_flagged():
    spec = builtin("quasilinear")
    inst = DiscreteInstance.on_grid(spec, 5, ONE)
    sol = solve_principal(inst)
    z = sol.z.copy()
    z[-1] += 0.2
    bad = Solution(sol.agents, sol.y, z, spec.G_value(sol.agents, sol.y, z), 0.0, 0.0, 0.0, True, 0, 0, weights=sol.weights)
    check = verify_solution(inst, bad)
    assert not check.feasible
    assert check.ic_residual < -0.1


def test_kkt_residual_zero_at_interior_unconstrained_optimum():
    # pi = z - (y - 1/2)^2 - z^2 has its maximum at (1/2, 1/2), interior and IC-free for one agent
    spec = make_spec("x1*y1 - z", "z - (y1 - 1/2)^2 - z^2")
    inst = DiscreteInstance(spec, [[1.0]], [1.0], options=ONE)
    assert kkt_residual(inst, [[0.5]], [0.5]) < 1e-12
    assert kkt_residual(inst, [[0.3]], [0.2]) > 0.1


@pytest.mark.parametrize("name", ["quasilinear", "price_sensitive", "inhomogeneous", "zero_sum"])
def test_builtin_solutions_verify(name):
    spec = builtin(name)
    inst = DiscreteInstance.on_grid(spec, 4, ONE)
    sol = solve_principal(inst)
    check = verify_solution(inst, sol)
    assert check.feasible
    assert check.stationarity < 1e-4


def test_uniqueness_probe_identical_seeds():
    spec = builtin("price_sensitive")
    inst = DiscreteInstance.on_grid(spec, 4, ONE)
    probe = uniqueness_probe(inst, runs=2, seeds=[3, 3])
    assert probe.max_distance == 0.0
    with pytest.raises(ValueError):
        uniqueness_probe(inst, runs=1)


def test_instance_weights_normalized():
    spec = builtin("quasilinear")
    agents, w, shape = agent_grid(spec, 3)
    inst = DiscreteInstance(spec, agents, 2 * w + 1, shape)
    assert inst.weights.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        DiscreteInstance(spec, agents, -w, shape)
