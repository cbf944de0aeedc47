"""Energy functionals of the eigenvalue problem and their gradients.

The constrained Rayleigh value of a field u is

    f(u) / (g1(u) - g2(u)),

with f the p-Dirichlet energy plus the measure term and g1, g2 the weight
energies.  All three are p-homogeneous, so the ratio is invariant under
scaling and its critical points solve the discrete eigen-equation
f'(u) = lambda (g1'(u) - g2'(u)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from plapopt.grid import (
    GridSpec,
    Field,
    anchor_values,
    blocked_adjacent_nodes,
    discrete_gradient,
)
from plapopt.measure import CapacitaryMeasure, WeightPair


class ConstraintViolation(Exception):
    """The field sits outside the cone g1 - g2 > 0."""


@dataclass(frozen=True)
class EnergyContext:
    """Grid, measure and weights of one eigenvalue problem.

    eps_reg smooths |grad u|^(p-2) near vanishing gradients for p < 2; it
    perturbs gradients only, never reported energies.  None picks the
    default 1e-12 * h^2 for p < 2 and exact arithmetic otherwise.
    """

    grid: GridSpec
    mu: CapacitaryMeasure
    weights: WeightPair
    eps_reg: float | None = None

    def __post_init__(self):
        if self.mu.grid != self.grid or self.weights.grid != self.grid:
            raise ValueError("measure/weights grid mismatch")
        if self.weights.trivial_nu1:
            raise ValueError("nu1 vanishes: no field can satisfy g1 > g2")
        if self.eps_reg is None:
            eps = 1e-12 * min(self.grid.spacing) ** 2 if self.grid.p < 2 else 0.0
            object.__setattr__(self, "eps_reg", eps)
        elif self.eps_reg < 0:
            raise ValueError("eps_reg must be >= 0")

    @property
    def p(self) -> float:
        return self.grid.p

    def blocked_adjacent(self) -> np.ndarray:
        return blocked_adjacent_nodes(self.grid, self.mu.blocked)

    def violates_dirichlet(self, u: Field) -> bool:
        return bool(np.any(u.values[self.blocked_adjacent()] != 0.0))

    def project_dirichlet(self, values: np.ndarray) -> np.ndarray:
        out = np.array(values, dtype=float).reshape(self.grid.nodes_shape)
        out[self.blocked_adjacent()] = 0.0
        return out

    def feasibility_tol(self, g1_value: float) -> float:
        return 1e-12 * max(abs(g1_value), 1e-300)


def _check_grid(ctx: EnergyContext, u: Field):
    if u.grid != ctx.grid:
        raise ValueError("field grid mismatch")


def f_energy(ctx: EnergyContext, u: Field) -> float:
    """(1/p) integral |grad u|^p + (1/p) integral |u|^p dmu, or +inf.

    The value is +inf as soon as u is nonzero on a node adjacent to a
    blocked cell (the Dirichlet condition of the infinite part).
    """
    _check_grid(ctx, u)
    if ctx.violates_dirichlet(u):
        return math.inf
    p = ctx.p
    grad = discrete_gradient(u)
    grad_term = (np.sum(grad * grad, axis=-1) ** (p / 2)).sum()
    anch = anchor_values(ctx.grid, u.values)
    dens_term = (ctx.mu.density * np.abs(anch) ** p).sum()
    total = ctx.grid.cell_volume * (grad_term + dens_term)
    flat = u.flat
    for node, mass in ctx.mu.atoms:
        total += mass * abs(flat[node]) ** p
    return total / p


def g_energy(ctx: EnergyContext, u: Field, which: int) -> float:
    """(1/p) integral |u|^p dnu_j for j = 1 or 2."""
    _check_grid(ctx, u)
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    p = ctx.p
    w = ctx.weights.w1 if which == 1 else ctx.weights.w2
    anch = anchor_values(ctx.grid, u.values)
    total = ctx.grid.cell_volume * (w * np.abs(anch) ** p).sum()
    if which == 1:
        flat = u.flat
        for node, mass in ctx.weights.w1_atoms:
            total += mass * abs(flat[node]) ** p
    return total / p


def rayleigh(ctx: EnergyContext, u: Field) -> float:
    """f(u) / (g1(u) - g2(u)) on the feasible cone; 0-homogeneous."""
    g1 = g_energy(ctx, u, 1)
    g2 = g_energy(ctx, u, 2)
    denom = g1 - g2
    if denom <= ctx.feasibility_tol(g1):
        raise ConstraintViolation(
            f"constraint violated: g1 - g2 = {denom:.3e} <= tolerance")
    f = f_energy(ctx, u)
    if math.isinf(f):
        return math.inf
    return f / denom


def _grad_weights(ctx: EnergyContext, grad: np.ndarray) -> np.ndarray:
    """|grad|^(p-2) per cell, regularized for p < 2 at vanishing gradients."""
    p = ctx.p
    s = np.sum(grad * grad, axis=-1)
    if p == 2.0:
        return np.ones_like(s)
    if p > 2.0:
        return s ** ((p - 2.0) / 2.0)
    s_reg = s + ctx.eps_reg
    out = np.zeros_like(s)
    pos = s_reg > 0
    out[pos] = s_reg[pos] ** ((p - 2.0) / 2.0)
    return out


def energy_gradient(ctx: EnergyContext, u: Field) -> Field:
    """Gradient of f at u, projected onto the Dirichlet-feasible subspace.

    Satisfies the Euler identity <grad, u> = p f(u) exactly when
    eps_reg = 0.
    """
    _check_grid(ctx, u)
    grid = ctx.grid
    p = ctx.p
    grad = discrete_gradient(u)
    wcell = _grad_weights(ctx, grad)
    wcell = np.where(ctx.mu.blocked, 0.0, wcell)
    flux = grad * wcell[..., None] * grid.cell_volume
    out = _scatter_gradient(grid, flux)
    anch = anchor_values(grid, u.values)
    dens = grid.cell_volume * ctx.mu.density * _odd_power(anch, p)
    out += _scatter_anchor(grid, dens)
    flat = out.reshape(-1)
    uflat = u.flat
    for node, mass in ctx.mu.atoms:
        flat[node] += mass * _odd_power(uflat[node], p)
    return Field(grid, ctx.project_dirichlet(out))


def g_gradient(ctx: EnergyContext, u: Field, which: int) -> Field:
    """Gradient of g_j at u, projected like the energy gradient."""
    _check_grid(ctx, u)
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    grid = ctx.grid
    p = ctx.p
    w = ctx.weights.w1 if which == 1 else ctx.weights.w2
    anch = anchor_values(grid, u.values)
    dens = grid.cell_volume * w * _odd_power(anch, p)
    out = _scatter_anchor(grid, dens)
    if which == 1:
        flat = out.reshape(-1)
        uflat = u.flat
        for node, mass in ctx.weights.w1_atoms:
            flat[node] += mass * _odd_power(uflat[node], p)
    return Field(grid, ctx.project_dirichlet(out))


def _odd_power(x, p: float):
    """sign(x) |x|^(p-1), the derivative of |x|^p / p."""
    return np.sign(x) * np.abs(x) ** (p - 1.0)


def _scatter_gradient(grid: GridSpec, flux: np.ndarray) -> np.ndarray:
    """Adjoint of the forward-difference map: cells x dim -> nodes."""
    shape_pad = tuple(grid.n + 1 for _ in range(grid.dim))
    acc = np.zeros(shape_pad)
    for a in range(grid.dim):
        h = grid.spacing[a]
        comp = flux[..., a] / h
        hi = [slice(0, grid.n)] * grid.dim
        hi[a] = slice(1, grid.n + 1)
        lo = [slice(0, grid.n)] * grid.dim
        acc[tuple(hi)] += comp
        acc[tuple(lo)] -= comp
    inner = tuple(slice(1, grid.n) for _ in range(grid.dim))
    return acc[inner].copy()


def _scatter_anchor(grid: GridSpec, dens: np.ndarray) -> np.ndarray:
    """Adjoint of the anchor selection: per-cell values back to nodes."""
    shape_pad = tuple(grid.n + 1 for _ in range(grid.dim))
    acc = np.zeros(shape_pad)
    lo = tuple(slice(0, grid.n) for _ in range(grid.dim))
    acc[lo] += dens
    inner = tuple(slice(1, grid.n) for _ in range(grid.dim))
    return acc[inner].copy()


def dual_norm(ctx: EnergyContext, r: np.ndarray) -> float:
    """Discrete L^p' norm of a node functional r (entries include h^d)."""
    p = ctx.p
    q = p / (p - 1.0)
    vol = ctx.grid.cell_volume
    r = np.asarray(r, dtype=float).reshape(-1)
    return float((vol * np.sum(np.abs(r / vol) ** q)) ** (1.0 / q))


def residual(ctx: EnergyContext, u: Field, lam: float) -> float:
    """Dual norm of f'(u) - lambda (g1'(u) - g2'(u)).

    Zero exactly when (u, lambda) solves the discrete eigen-equation on
    the feasible cone.
    """
    g1 = g_energy(ctx, u, 1)
    g2 = g_energy(ctx, u, 2)
    if g1 - g2 <= ctx.feasibility_tol(g1):
        raise ConstraintViolation("residual needs a feasible field")
    r = (energy_gradient(ctx, u).values
         - lam * (g_gradient(ctx, u, 1).values
                  - g_gradient(ctx, u, 2).values))
    return dual_norm(ctx, r)
