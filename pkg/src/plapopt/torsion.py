"""Torsion functions, the induced distance between measures, and the
proximal map of the measure energy.

The torsion function of a measure minimizes

    (1/p) int |grad v|^p + (1/p) int |v|^p dmu - int v,

a strictly convex coercive problem on the nodes left free by the blocked
region.  Weak and strong topologies agree on the fixed grid, so
convergence of measures is metrized by the L^p distance of their torsion
functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from plapopt.grid import GridSpec, Field, anchor_values, \
    discrete_gradient, integrate
from plapopt.measure import CapacitaryMeasure, lebesgue_weights
from plapopt.energy import EnergyContext, f_energy, energy_gradient, dual_norm
from plapopt import operators
from plapopt import hessians
from plapopt.solvers import bb_minimize, newton_refine

DEFAULT_TOL_DECREMENT = 1e-10
DEFAULT_TOL_GRAD = 1e-8
BB_STAGE_ITER = 1500


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_decrement: float
    converged: bool


def _torsion_context(mu: CapacitaryMeasure) -> EnergyContext:
    # weights are irrelevant to the torsion objective; Lebesgue keeps the
    # context constructible
    return EnergyContext(mu.grid, mu, lebesgue_weights(mu.grid))


def _load_vector(grid: GridSpec, free_idx: np.ndarray) -> np.ndarray:
    """Right-hand side of int v: cell volume at each free anchor node."""
    ones = np.ones(grid.n_cells)
    anchor = operators.anchor_op(grid)[:, free_idx]
    return grid.cell_volume * (anchor.T @ ones)


def _linear_solve_p2(grid: GridSpec, mu: CapacitaryMeasure,
                     rhs_builder) -> np.ndarray:
    free = operators.free_node_mask(grid, mu)
    idx = np.flatnonzero(free)
    values = np.zeros(grid.n_nodes)
    if idx.size == 0:
        return values
    A, _, _ = operators.p2_matrices(grid, mu, lebesgue_weights(grid), free)
    b = rhs_builder(idx)
    values[idx] = spla.spsolve(A.tocsc(), b)
    return values


def torsion(mu: CapacitaryMeasure,
            grid: GridSpec | None = None) -> tuple[Field, SolveReport]:
    """Torsion function of a measure with its solve report.

    p = 2 solves the sparse linear system directly; general p starts
    from the p = 2 profile and descends the convex objective (BB stage,
    then Newton through a smoothing continuation for p < 2).
    """
    grid = mu.grid if grid is None else grid
    if grid != mu.grid:
        raise ValueError("grid mismatch")
    ctx = _torsion_context(mu)
    free = operators.free_node_mask(grid, mu)
    idx = np.flatnonzero(free)
    if idx.size == 0:
        return Field(grid, np.zeros(grid.n_nodes)), SolveReport(0, 0.0, True)

    quad = _linear_solve_p2(grid, mu, lambda i: _load_vector(grid, i))
    if grid.p == 2.0:
        return Field(grid, quad), SolveReport(1, 0.0, True)

    b = _load_vector(grid, idx)

    def make_stage(eps):
        ctx_e = ctx if eps is None else replace(ctx, eps_reg=eps)

        def value_and_grad(x):
            field = _embed(grid, idx, x)
            f = _f_value(ctx_e, field, eps) - float(np.dot(b, x))
            g = energy_gradient(ctx_e, field).flat[idx] - b
            return f, g

        def hess(x):
            return hessians.hessian_f(ctx_e, _embed(grid, idx, x), idx)

        return value_and_grad, hess

    vg0, _ = make_stage(None)
    x0 = _scale_to_descent(quad[idx], vg0)
    x, info = _bb_then_newton(
        ctx, grid, idx, x0, make_stage,
        grad_scale=dual_norm(ctx, _embed_raw(grid, idx, b)))
    values = np.zeros(grid.n_nodes)
    values[idx] = x
    return Field(grid, values), SolveReport(
        info["iterations"], info["final_decrement"], info["converged"])


def _f_value(ctx: EnergyContext, u: Field, eps: float | None) -> float:
    """Measure energy, optionally with the gradient smoothing in the value."""
    if eps is None:
        return f_energy(ctx, u)
    grid = ctx.grid
    p = grid.p
    grad = discrete_gradient(u)
    s = np.sum(grad * grad, axis=-1) + eps
    s = np.where(ctx.mu.blocked, 0.0, s)
    total = grid.cell_volume * (s ** (p / 2.0)).sum()
    anch = anchor_values(grid, u.values)
    total += grid.cell_volume * (ctx.mu.density * np.abs(anch) ** p).sum()
    flat = u.flat
    for node, mass in ctx.mu.atoms:
        total += mass * abs(flat[node]) ** p
    return total / p


def _bb_then_newton(ctx, grid, idx, x0, make_stage, *, grad_scale):
    """Descend a smoothing continuation, then Newton on the true problem.

    ``make_stage(eps)`` returns (value_and_grad, hessian) callables of the
    eps-smoothed objective; eps = None means the un-smoothed target.  The
    smoothing follows the gradient regularizer: |grad|^2 + eps inside the
    (p-2)/2 power, consistently in value, gradient and Hessian, so each
    stage is a smooth convex problem that Newton finishes quadratically.
    For p >= 2 the gradient is already C^1 and the continuation is skipped.
    """
    gnorm = lambda g: dual_norm(ctx, _embed_raw(grid, idx, g))
    p = ctx.p
    total = 0
    x = np.asarray(x0, dtype=float).copy()
    value_and_grad, _ = make_stage(None)
    x, info = bb_minimize(
        x, value_and_grad, max_iter=BB_STAGE_ITER,
        tol_decrement=DEFAULT_TOL_DECREMENT, tol_grad=1e-4,
        grad_norm=gnorm, grad_scale=grad_scale)
    total += info["iterations"]
    if p < 2.0:
        h2 = min(grid.spacing) ** 2
        for eps in (1e-2 * h2, 1e-5 * h2, 1e-8 * h2):
            if eps <= ctx.eps_reg:
                break
            vg, hs = make_stage(eps)
            x, sinfo = newton_refine(
                x, vg, hs, tol_decrement=1e-12, tol_grad=1e-10,
                grad_norm=gnorm, grad_scale=grad_scale)
            total += sinfo["iterations"]
    vg, hs = make_stage(None)
    x, ninfo = newton_refine(
        x, vg, hs, max_iter=200,
        tol_decrement=DEFAULT_TOL_DECREMENT, tol_grad=DEFAULT_TOL_GRAD,
        grad_norm=gnorm, grad_scale=grad_scale)
    ninfo["iterations"] += total
    return x, ninfo


def _embed(grid: GridSpec, idx: np.ndarray, x: np.ndarray) -> Field:
    values = np.zeros(grid.n_nodes)
    values[idx] = x
    return Field(grid, values)


def _embed_raw(grid: GridSpec, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
    values = np.zeros(grid.n_nodes)
    values[idx] = x
    return values


def _scale_to_descent(x0, value_and_grad):
    """Shrink the initial iterate until the objective is finite."""
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(80):
        f, _ = value_and_grad(x)
        if math.isfinite(f):
            return x
        x *= 0.5
    return np.zeros_like(x)


def field_distance_p(a: Field, b: Field) -> float:
    """Discrete L^p distance of two fields on the same grid."""
    if a.grid != b.grid:
        raise ValueError("grid mismatch")
    grid = a.grid
    diff = anchor_values(grid, a.values - b.values)
    return float(integrate(grid, np.abs(diff) ** grid.p) ** (1.0 / grid.p))


def gamma_distance(mu1: CapacitaryMeasure, mu2: CapacitaryMeasure,
                   grid: GridSpec | None = None) -> float:
    """L^p distance of the torsion functions of two measures."""
    grid = mu1.grid if grid is None else grid
    if mu1.grid != grid or mu2.grid != grid:
        raise ValueError("grid mismatch")
    w1, r1 = torsion(mu1)
    w2, r2 = torsion(mu2)
    if not (r1.converged and r2.converged):
        raise RuntimeError("torsion solver did not converge")
    return field_distance_p(w1, w2)


def prox(z: Field, k: float, mu: CapacitaryMeasure,
         b=None) -> tuple[Field, SolveReport]:
    """Moreau-Yosida proximal point of the measure energy at z.

    Minimizes (k/p) int |z - v|^p b + f_mu(v).  Whenever f_mu(z) is
    finite the minimizer obeys the descent bound

        (k/p) int |z - prox|^p b + f_mu(prox) <= f_mu(z).
    """
    if k <= 0:
        raise ValueError("k must be > 0")
    grid = z.grid
    if mu.grid != grid:
        raise ValueError("grid mismatch")
    bcells = np.ones(grid.cells_shape) if b is None else \
        np.asarray(b, dtype=float).reshape(grid.cells_shape)
    if np.any(bcells <= 0):
        raise ValueError("b must be > 0 cellwise")
    ctx = _torsion_context(mu)
    free = operators.free_node_mask(grid, mu)
    idx = np.flatnonzero(free)
    if idx.size == 0:
        return Field(grid, np.zeros(grid.n_nodes)), SolveReport(0, 0.0, True)

    p = grid.p
    vol = grid.cell_volume
    anchor = operators.anchor_op(grid)[:, idx]
    bflat = bcells.reshape(-1)
    zfree = z.flat[idx]

    if p == 2.0:
        A, _, _ = operators.p2_matrices(grid, mu, lebesgue_weights(grid), free)
        M = vol * (anchor.T @ sp.diags(bflat) @ anchor)
        x = spla.spsolve((A + k * M).tocsc(), k * (M @ zfree))
        values = np.zeros(grid.n_nodes)
        values[idx] = x
        return Field(grid, values), SolveReport(1, 0.0, True)

    def make_stage(eps):
        ctx_e = ctx if eps is None else replace(ctx, eps_reg=eps)

        def value_and_grad(x):
            field = _embed(grid, idx, x)
            diff = anchor_values(grid, field.values - z.values)
            fid = (k / p) * vol * (bcells * np.abs(diff) ** p).sum()
            f = fid + _f_value(ctx_e, field, eps)
            gfid = k * vol * (anchor.T @ (bflat * _odd(diff.reshape(-1), p)))
            g = gfid + energy_gradient(ctx_e, field).flat[idx]
            return f, g

        def hess(x):
            field = _embed(grid, idx, x)
            diff = anchor_values(grid, field.values - z.values).reshape(-1)
            dfid = k * (p - 1.0) * vol * bflat * hessians.abs_pow(diff,
                                                                  p - 2.0)
            H = anchor.T @ sp.diags(dfid) @ anchor
            return H + hessians.hessian_f(ctx_e, field, idx)

        return value_and_grad, hess

    x, info = _bb_then_newton(
        ctx, grid, idx, zfree, make_stage,
        grad_scale=max(k * z.norm_p() ** (p - 1.0), 1.0))
    values = np.zeros(grid.n_nodes)
    values[idx] = x
    return Field(grid, values), SolveReport(
        info["iterations"], info["final_decrement"], info["converged"])


def _odd(x, p):
    return np.sign(x) * np.abs(x) ** (p - 1.0)
