"""Discretized principal's program over per-agent contracts.

Variables are the contracts ``(y_i, z_i)`` of the grid agents.  The program

    maximize   sum_i w_i pi(x_i, y_i, z_i)
    subject to G(x_i, y_i, z_i) >= G(x_i, y_j, z_j)      (incentive compatibility)
               G(x_i, y_i, z_i) >= G(x_i, y_out, z_out)  (participation)
               (y_i, z_i) in cl(Y x Z)

is solved by a penalty method whose weight doubles every outer iteration.
First-order multiplier estimates are carried between outer iterations
(augmented Lagrangian form), so feasibility does not hinge on the weight
growing without bound.  Each subproblem is minimized over the box by a
spectral projected gradient method with a nonmonotone backtracking line
search.  Several starts are run and the best feasible result is kept.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import nnls

from .errors import Infeasible
from .geometry import (
    IndirectUtility,
    agent_grid,
    check_incentive_compatible,
    discrete_sobolev_distance,
    ir_slacks,
    profit_functional,
    utility_from_menu,
    with_outside,
)
from .model import ModelSpec

FEAS_TOL = 1e-6


@dataclass
class SolverOptions:
    rho0: float = 10.0
    rho_factor: float = 2.0
    outer: int = 20
    inner: int = 3000
    viol_tol: float = 1e-8
    grad_tol: float = 1e-6
    multistart: int = 4
    seed: int = 0
    threads: int = 1
    memory: int = 10


@dataclass
class DiscreteInstance:
    spec: ModelSpec
    agents: np.ndarray
    weights: np.ndarray
    grid_shape: tuple = None
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        self.agents = np.atleast_2d(np.asarray(self.agents, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        self.weights = w / w.sum()

    @classmethod
    def on_grid(cls, spec: ModelSpec, counts, options=None):
        agents, weights, shape = agent_grid(spec, counts)
        return cls(spec, agents, weights, shape, options or SolverOptions())


@dataclass
class Solution:
    agents: np.ndarray
    y: np.ndarray
    z: np.ndarray
    u: np.ndarray
    profit: float
    ic_residual: float
    ir_residual: float
    converged: bool
    iterations: int
    seed: int
    trace: list = field(default_factory=list)
    weights: np.ndarray = None
    grid_shape: tuple = None

    def allocation(self) -> IndirectUtility:
        return IndirectUtility(self.agents, self.weights, self.u, y=self.y, z=self.z, grid_shape=self.grid_shape)


# --------------------------------------------------------------------------
# penalized objective


class _Problem:
    def __init__(self, inst: DiscreteInstance):
        spec = inst.spec
        self.spec = spec
        self.x = inst.agents
        self.w = inst.weights
        self.N = self.x.shape[0]
        self.d = spec.n + 1
        box = np.vstack([spec.Y, spec.Z[None, :]])
        self.lo = np.tile(box[:, 0], self.N)
        self.hi = np.tile(box[:, 1], self.N)
        self.u_out = spec.u_outside(self.x)
        self.xs_pairs = np.repeat(self.x, self.N, axis=0)  # row i*N + j -> agent i

    def unpack(self, v):
        c = v.reshape(self.N, self.d)
        return c[:, :-1], c[:, -1]

    def constraints(self, v, order=1):
        """IC matrix ``C[i, j]`` (own minus other), IR vector and their contract gradients."""
        spec, N = self.spec, self.N
        y, z = self.unpack(v)
        pts = spec.pack(self.xs_pairs, np.tile(y, (N, 1)), np.tile(z, N))
        jet = spec.G.jet(pts, order=1)
        Gv = jet.value.reshape(N, N)
        Gg = jet.gradient[:, spec.ybar].reshape(N, N, self.d)
        own = np.diag(Gv)
        C = own[:, None] - Gv
        ir = own - self.u_out
        return C, ir, Gv, Gg

    def objective(self, v):
        y, z = self.unpack(v)
        jet = self.spec.pi.jet(self.spec.pack(self.x, y, z), order=1)
        return float(self.w @ jet.value), self.w[:, None] * jet.gradient[:, self.spec.ybar]

    def merit(self, v, rho, lam_ic, lam_ir):
        """Augmented Lagrangian value and gradient (to be minimized)."""
        prof, dprof = self.objective(v)
        C, ir, _, Gg = self.constraints(v)
        mu_ic = np.maximum(0.0, lam_ic - rho * C)
        np.fill_diagonal(mu_ic, 0.0)
        mu_ir = np.maximum(0.0, lam_ir - rho * ir)
        val = -prof + (np.sum(mu_ic**2 - lam_ic**2) + np.sum(mu_ir**2 - lam_ir**2)) / (2.0 * rho)
        own_g = Gg[np.arange(self.N), np.arange(self.N)]  # (N, d)
        g = -dprof
        g -= (mu_ic.sum(axis=1) + mu_ir)[:, None] * own_g
        g += np.einsum("kj,kjd->jd", mu_ic, Gg)
        return val, g.ravel()

    def violation(self, v):
        C, ir, _, _ = self.constraints(v)
        np.fill_diagonal(C, 0.0)
        return max(0.0, -float(C.min()), -float(ir.min()))

    def project(self, v):
        return np.clip(v, self.lo, self.hi)


def _spg(prob: _Problem, v, rho, lam_ic, lam_ir, max_iter, grad_tol, memory):
    """Spectral projected gradient with nonmonotone (max of last ``memory``) Armijo backtracking."""
    f, g = prob.merit(v, rho, lam_ic, lam_ir)
    hist = [f]
    step = 1.0 / max(1.0, np.linalg.norm(g, np.inf))
    it = 0
    for it in range(1, max_iter + 1):
        pg = prob.project(v - g) - v
        if np.linalg.norm(pg, np.inf) < grad_tol:
            break
        d = prob.project(v - step * g) - v
        fref = max(hist[-memory:])
        gd = float(g @ d)
        alpha = 1.0
        while True:
            vn = v + alpha * d
            fn, gn = prob.merit(vn, rho, lam_ic, lam_ir)
            if fn <= fref + 1e-4 * alpha * gd or alpha < 1e-12:
                break
            alpha *= 0.5
        s, r = vn - v, gn - g
        sr = float(s @ r)
        step = float(s @ s) / sr if sr > 1e-300 else 1e6
        step = min(max(step, 1e-12), 1e6)
        v, f, g = vn, fn, gn
        hist.append(f)
    return v, it


def _repair(prob: _Problem, v):
    """Make an allocation exactly feasible by letting agents re-choose from the offered contracts."""
    spec = prob.spec
    y, z = prob.unpack(v)
    menu = with_outside(spec, y, z)
    alloc = utility_from_menu(spec, menu, prob.x, prob.w, tie_tol=1e-9)
    return np.column_stack([alloc.y, alloc.z]).ravel()


def _start(prob: _Problem, kind, rng):
    spec = prob.spec
    pool = np.tile(np.concatenate([spec.outside_y, [spec.outside_z]]), prob.N)
    if kind == "pool":
        return pool
    # random menu: products and prices drawn uniformly, then best responses
    y = spec.Y[:, 0] + (spec.Y[:, 1] - spec.Y[:, 0]) * rng.random((prob.N, spec.n))
    z = spec.Z[0] + (spec.Z[1] - spec.Z[0]) * rng.random(prob.N)
    return _repair(prob, np.column_stack([y, z]).ravel())


def _run(inst: DiscreteInstance, kind, seed) -> Solution:
    opts = inst.options
    prob = _Problem(inst)
    rng = np.random.default_rng(seed)
    v = _start(prob, kind, rng)
    lam_ic = np.zeros((prob.N, prob.N))
    lam_ir = np.zeros(prob.N)
    trace = []
    best = -np.inf
    total = 0
    converged = False
    rho = opts.rho0
    for k in range(opts.outer):
        v, its = _spg(prob, v, rho, lam_ic, lam_ir, opts.inner, opts.grad_tol, opts.memory)
        total += its
        C, ir, _, _ = prob.constraints(v)
        lam_ic = np.maximum(0.0, lam_ic - rho * C)
        np.fill_diagonal(lam_ic, 0.0)
        lam_ir = np.maximum(0.0, lam_ir - rho * ir)
        viol = prob.violation(v)
        prof, _ = prob.objective(v)
        if viol <= FEAS_TOL:
            best = max(best, prof)
        trace.append({"outer": k, "rho": rho, "profit": prof, "violation": viol, "best_feasible": best, "inner": its})
        _, g = prob.merit(v, rho, lam_ic, lam_ir)
        pg = np.linalg.norm(prob.project(v - g) - v, np.inf)
        if viol < opts.viol_tol and pg < opts.grad_tol:
            converged = True
            break
        rho *= opts.rho_factor
    return _finish(inst, prob, v, converged, total, seed, trace)


def _finish(inst, prob, v, converged, iterations, seed, trace):
    spec = inst.spec
    if prob.violation(v) > FEAS_TOL:
        v = _repair(prob, v)
        converged = False
    y, z = prob.unpack(v)
    alloc = IndirectUtility(prob.x, prob.w, spec.G_value(prob.x, y, z), y=y.copy(), z=z.copy(), grid_shape=inst.grid_shape)
    ic = check_incentive_compatible(spec, alloc)
    ir = float(ir_slacks(spec, alloc).min())
    return Solution(
        agents=prob.x,
        y=y.copy(),
        z=z.copy(),
        u=alloc.values,
        profit=profit_functional(spec, alloc),
        ic_residual=min(0.0, ic.worst_violation) if prob.N > 1 else 0.0,
        ir_residual=ir,
        converged=converged,
        iterations=iterations,
        seed=seed,
        trace=trace,
        weights=prob.w,
        grid_shape=inst.grid_shape,
    )


def _thread_count(requested):
    env = os.environ.get("GSCREEN_THREADS")
    if requested is None or requested <= 0:
        requested = int(env) if env else 1
    return max(1, requested)


def solve_principal(inst: DiscreteInstance) -> Solution:
    """Best feasible solution over ``multistart`` runs.

    Run 0 starts from pooling at the outside option (always feasible); the
    others start from best responses to random menus.  Run ``r`` uses seed
    ``options.seed + r``.  Results are compared by (profit, run index).
    """
    opts = inst.options
    runs = [("pool" if r == 0 else "random", opts.seed + r) for r in range(max(1, opts.multistart))]
    workers = _thread_count(opts.threads)
    if workers > 1 and len(runs) > 1:
        with ThreadPoolExecutor(workers) as ex:
            sols = list(ex.map(lambda a: _run(inst, *a), runs))
    else:
        sols = [_run(inst, *a) for a in runs]
    feasible = [s for s in sols if s.ic_residual >= -FEAS_TOL and s.ir_residual >= -FEAS_TOL]
    if not feasible:
        raise Infeasible("no run produced a feasible allocation")
    best = feasible[0]
    for s in feasible[1:]:
        if s.profit > best.profit:
            best = s
    return best


# --------------------------------------------------------------------------
# verification and uniqueness


@dataclass
class Verification:
    feasible: bool
    stationarity: float
    profit: float
    ic_residual: float
    ir_residual: float


def kkt_residual(inst: DiscreteInstance, y, z, active_tol=1e-6):
    """Distance of the profit gradient from the cone of active constraint gradients.

    Box bounds count as constraints.  Computed by nonnegative least squares.
    """
    prob = _Problem(inst)
    v = np.column_stack([np.atleast_2d(y).reshape(prob.N, -1), z]).ravel()
    _, dprof = prob.objective(v)
    C, ir, _, Gg = prob.constraints(v)
    N, d = prob.N, prob.d
    cols = []
    own_g = Gg[np.arange(N), np.arange(N)]
    for i in range(N):
        for j in range(N):
            if i != j and C[i, j] < active_tol:
                col = np.zeros((N, d))
                col[i] += own_g[i]
                col[j] -= Gg[i, j]
                cols.append(col.ravel())
        if ir[i] < active_tol:
            col = np.zeros((N, d))
            col[i] += own_g[i]
            cols.append(col.ravel())
    for k in range(N * d):
        if v[k] - prob.lo[k] < active_tol:
            e = np.zeros(N * d)
            e[k] = 1.0
            cols.append(e)
        if prob.hi[k] - v[k] < active_tol:
            e = np.zeros(N * d)
            e[k] = -1.0
            cols.append(e)
    g = dprof.ravel()
    if not cols:
        return float(np.linalg.norm(g))
    A = np.column_stack(cols)
    # maximize profit: grad = -sum mu * grad(constraint), mu >= 0
    _, res = nnls(-A, g, maxiter=50 * A.shape[1])
    return float(res)


def verify_solution(inst: DiscreteInstance, sol: Solution) -> Verification:
    """Recompute slacks and profit; stationarity is the KKT residual of :func:`kkt_residual`."""
    spec = inst.spec
    alloc = IndirectUtility(inst.agents, inst.weights, spec.G_value(inst.agents, sol.y, sol.z), y=sol.y, z=sol.z)
    ic = check_incentive_compatible(spec, alloc, tol=FEAS_TOL)
    ir = float(ir_slacks(spec, alloc).min())
    feasible = ic.ok and ir >= -FEAS_TOL
    return Verification(feasible, kkt_residual(inst, sol.y, sol.z), profit_functional(spec, alloc), ic.worst_violation, ir)


@dataclass
class UniquenessProbe:
    max_distance: float
    distances: np.ndarray
    profits: np.ndarray
    solutions: list


def uniqueness_probe(inst: DiscreteInstance, runs=10, seeds=None) -> UniquenessProbe:
    """Solve from ``runs`` distinct seeds (one start each) and compare induced utilities."""
    if runs < 2:
        raise ValueError("runs must be >= 2")
    if seeds is None:
        seeds = [inst.options.seed + r for r in range(runs)]
    sols = []
    for s in seeds:
        opts = replace(inst.options, multistart=1, seed=s)
        sub = DiscreteInstance(inst.spec, inst.agents, inst.weights, inst.grid_shape, opts)
        sols.append(_run(sub, "random", s))
    k = len(sols)
    D = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            D[i, j] = D[j, i] = discrete_sobolev_distance(sols[i].allocation(), sols[j].allocation())
    return UniquenessProbe(float(D.max()), D, np.array([s.profit for s in sols]), sols)
