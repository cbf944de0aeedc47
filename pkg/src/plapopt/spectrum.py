"""Variational eigenvalues through the finite-dimensional minimax reduction.

The m-th value is the infimum, over m-dimensional subspaces whose unit
sphere stays inside the feasible cone g1 - g2 > 0, of the supremum of the
Rayleigh ratio on that sphere.  Such a sphere has index exactly m, so each
value is an upper bound for the m-th inf-sup eigenvalue; for p = 2 the
reduction is exact and computed from the matrix pencil.  For general p the
inner supremum runs multistart projected ascent and the outer infimum
descends on the basis vectors; reported eigenpairs are polished by a
damped Newton iteration on the eigen-equation and certified through their
residual.

All randomness derives from a caller seed, so repeated runs coincide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from plapopt.grid import GridSpec, Field
from plapopt.measure import CapacitaryMeasure, WeightPair
from plapopt.energy import (
    EnergyContext,
    ConstraintViolation,
    f_energy,
    g_energy,
    rayleigh,
    energy_gradient,
    g_gradient,
    residual,
    dual_norm,
)
from plapopt import operators
from plapopt import hessians

M_MAX_LIMIT = 6
DENSE_DOF_LIMIT = 1400
CERT_TOL = 1e-6

FINITE = "finite"
INFEASIBLE = "infeasible"
UNRESOLVED = "unresolved"


class InfeasibleSubspace(Exception):
    """The candidate's sphere meets the cone boundary g1 - g2 <= 0."""


@dataclass(frozen=True)
class SubspaceCandidate:
    """Basis of an m-dimensional trial subspace.

    The basis must be numerically independent: smallest singular value of
    the stacked values at least 1e-8 times the largest.
    """

    basis: tuple[Field, ...]

    def __post_init__(self):
        basis = tuple(self.basis)
        if not 1 <= len(basis) <= M_MAX_LIMIT:
            raise ValueError(f"need 1..{M_MAX_LIMIT} basis fields")
        grid = basis[0].grid
        if any(b.grid != grid for b in basis):
            raise ValueError("basis fields on different grids")
        mat = np.stack([b.flat for b in basis])
        svals = np.linalg.svd(mat, compute_uv=False)
        if svals[-1] < 1e-8 * svals[0]:
            raise ValueError("basis is numerically dependent")
        object.__setattr__(self, "basis", basis)

    @property
    def m(self) -> int:
        return len(self.basis)

    @property
    def grid(self) -> GridSpec:
        return self.basis[0].grid

    def matrix(self) -> np.ndarray:
        """Stacked basis values, shape (m, n_nodes)."""
        return np.stack([b.flat for b in self.basis])

    def combine(self, xi: np.ndarray) -> Field:
        return Field(self.grid, xi @ self.matrix())


@dataclass
class SpectralResult:
    """Nondecreasing eigenvalue list with fields, residuals and statuses."""

    lambdas: list[float]
    eigenfields: list[Field | None]
    residuals: list[float | None]
    statuses: list[str]
    subspace_bounds: list[float] = field(default_factory=list)

    def __post_init__(self):
        finite = [x for x in self.lambdas if math.isfinite(x)]
        if any(b > a + 1e-9 * max(abs(a), 1.0)
               for a, b in zip(finite[1:], finite[:-1])):
            raise ValueError("lambdas must be nondecreasing")

    def status_of(self, m: int) -> str:
        return self.statuses[m - 1]

    def value(self, m: int) -> float:
        return self.lambdas[m - 1]


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of the general-p machinery (p = 2 ignores most of them)."""

    n_starts: int = 32
    max_ascent_iter: int = 120
    max_outer_iter: int = 25
    max_restarts: int = 3
    descent_max_iter: int = 4000
    newton_max_iter: int = 60
    cert_tol: float = CERT_TOL


# ----------------------------------------------------------------------
# exact p = 2 path

def _pencil_positive_eigs(ctx: EnergyContext, m_max: int):
    """Positive pencil directions: lambda_m = 1 / beta_m with beta the
    m-th largest positive eigenvalue of B u = beta A u on free nodes."""
    grid = ctx.grid
    A, B, idx = operators.p2_matrices(grid, ctx.mu, ctx.weights)
    n = idx.size
    if n == 0:
        return [], [], idx
    dense = n <= DENSE_DOF_LIMIT
    if not dense and _is_diag_pd(B):
        lams, vecs = _sparse_smallest(A, B, m_max)
        return lams, [_embed(grid, idx, v) for v in vecs.T], idx
    Ad = A.toarray()
    Bd = B.toarray()
    beta, U = sla.eigh(Bd, Ad)       # beta ascending, U^T A U = I
    order = np.argsort(-beta)
    lams, vecs = [], []
    for j in order[:max(m_max, 0)]:
        if beta[j] <= 1e-13 * max(abs(beta[order[0]]), 1e-300):
            break
        lams.append(1.0 / beta[j])
        vecs.append(_embed(grid, idx, U[:, j]))
    return lams, vecs, idx


def _is_diag_pd(B) -> bool:
    off = B - sp.diags(B.diagonal())
    return off.nnz == 0 and np.all(B.diagonal() > 0)


def _sparse_smallest(A, B, k: int):
    n = A.shape[0]
    k = min(k, n - 2)
    # fixed start vector keeps repeated runs bit-identical
    v0 = np.full(n, 1.0 / math.sqrt(n))
    vals, vecs = spla.eigsh(A.tocsc(), k=k, M=B.tocsc(), sigma=0,
                            which="LM", v0=v0)
    order = np.argsort(vals)
    return list(vals[order]), vecs[:, order]


def _embed(grid: GridSpec, idx: np.ndarray, x: np.ndarray) -> Field:
    values = np.zeros(grid.n_nodes)
    values[idx] = x
    return Field(grid, values)


def _normalize(ctx: EnergyContext, u: Field) -> Field:
    """Scale so that g1(u) - g2(u) = 1."""
    denom = g_energy(ctx, u, 1) - g_energy(ctx, u, 2)
    if denom <= 0:
        raise ConstraintViolation("cannot normalize an infeasible field")
    return Field(ctx.grid, u.values / denom ** (1.0 / ctx.p))


# ----------------------------------------------------------------------
# inner supremum on a subspace sphere

def _sphere_project(xi: np.ndarray) -> np.ndarray:
    return xi / np.linalg.norm(xi)


def _starts(m: int, n_starts: int, rng: np.random.Generator) -> list[np.ndarray]:
    starts = []
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        starts.append(e.copy())
        starts.append(-e)
    while len(starts) < n_starts:
        starts.append(_sphere_project(rng.standard_normal(m)))
    return starts[:max(n_starts, 2 * m)]


class _SubspaceEval:
    """Restriction of f, g1, g2 to an m-dimensional subspace.

    Precomputes the gradient, anchor and atom operators applied to the
    basis so every coefficient-space evaluation is a handful of small
    matrix products; numerically identical to the field-based energies.
    """

    def __init__(self, ctx: EnergyContext, cand: SubspaceCandidate):
        grid = ctx.grid
        self.ctx = ctx
        self.p = ctx.p
        self.vol = grid.cell_volume
        V = cand.matrix()                      # (m, n_nodes)
        self.m = V.shape[0]
        self.G = [Gop @ V.T for Gop in operators.gradient_ops(grid)]
        self.A = operators.anchor_op(grid) @ V.T   # (n_cells, m)
        self.keep = (~ctx.mu.blocked).reshape(-1)
        self.dens = ctx.mu.density.reshape(-1)
        self.w1 = ctx.weights.w1.reshape(-1)
        self.w2 = ctx.weights.w2.reshape(-1)
        self.mu_atoms = [(V[:, n], mass) for n, mass in ctx.mu.atoms]
        self.w1_atoms = [(V[:, n], mass) for n, mass in ctx.weights.w1_atoms]
        badj = ctx.blocked_adjacent().reshape(-1)
        self.violates = bool(np.any(V[:, badj] != 0.0))

    def _parts(self, xi):
        gc = [Ga @ xi for Ga in self.G]        # per-axis cell gradients
        s = sum(g * g for g in gc)
        av = self.A @ xi
        return gc, s, av

    def denominators(self, xi):
        _, _, av = self._parts(xi)
        p = self.p
        g1 = self.vol * float(self.w1 @ np.abs(av) ** p)
        g2 = self.vol * float(self.w2 @ np.abs(av) ** p)
        for row, mass in self.w1_atoms:
            g1 += mass * abs(float(row @ xi)) ** p
        return g1 / p, g2 / p

    def denom_grad(self, xi):
        _, _, av = self._parts(xi)
        p = self.p
        odd = np.sign(av) * np.abs(av) ** (p - 1.0)
        g1 = self.vol * float(self.w1 @ np.abs(av) ** p) / p
        g2 = self.vol * float(self.w2 @ np.abs(av) ** p) / p
        grad = self.vol * (self.A.T @ ((self.w1 - self.w2) * odd))
        for row, mass in self.w1_atoms:
            uval = float(row @ xi)
            g1 += mass * abs(uval) ** p / p
            grad += mass * np.sign(uval) * abs(uval) ** (p - 1.0) * row
        return g1 - g2, grad

    def ratio_grad(self, xi):
        """(value, gradient) of f/(g1-g2); (inf, None) off the cone."""
        if self.violates:
            return math.inf, None
        gc, s, av = self._parts(xi)
        p = self.p
        g1, g2 = self.denominators(xi)
        denom = g1 - g2
        if denom <= self.ctx.feasibility_tol(g1):
            return math.inf, None
        skeep = np.where(self.keep, s, 0.0)
        f = self.vol * float((skeep ** (p / 2.0)).sum())
        f += self.vol * float(self.dens @ np.abs(av) ** p)
        for row, mass in self.mu_atoms:
            f += mass * abs(float(row @ xi)) ** p
        f /= p
        val = f / denom
        # gradient of f
        if p == 2.0:
            w = np.ones_like(s)
        elif p > 2.0:
            w = skeep ** ((p - 2.0) / 2.0)
        else:
            sr = skeep + self.ctx.eps_reg
            w = np.where(sr > 0, sr ** ((p - 2.0) / 2.0), 0.0)
        w = np.where(self.keep, w, 0.0)
        gf = sum(Ga.T @ (w * g) for Ga, g in zip(self.G, gc)) * self.vol
        odd = np.sign(av) * np.abs(av) ** (p - 1.0)
        gf += self.vol * (self.A.T @ (self.dens * odd))
        for row, mass in self.mu_atoms:
            uval = float(row @ xi)
            gf += mass * np.sign(uval) * abs(uval) ** (p - 1.0) * row
        _, gdiff = self.denom_grad(xi)
        return val, (gf - val * gdiff) / denom


def _sphere_min_denominator(ev: _SubspaceEval, starts) -> float:
    """Approximate min of g1 - g2 over the unit coefficient sphere."""
    best = math.inf
    for xi in starts:
        xi = _sphere_project(xi)
        d, grad = ev.denom_grad(xi)
        step = 0.5
        for _ in range(80):
            tang = grad - np.dot(grad, xi) * xi
            tn = np.linalg.norm(tang)
            if tn < 1e-14 * max(1.0, abs(d)):
                break
            improved = False
            while step > 1e-14:
                xi_new = _sphere_project(xi - step * tang / tn)
                d_new, grad_new = ev.denom_grad(xi_new)
                if d_new < d:
                    xi, d, grad = xi_new, d_new, grad_new
                    improved = True
                    step *= 1.7
                    break
                step *= 0.5
            if not improved or d < 0:
                break
        best = min(best, d)
        if best < 0:
            break
    return best


def _ascend_ratio(ev: _SubspaceEval, xi, max_iter):
    xi = _sphere_project(xi)
    val, grad = ev.ratio_grad(xi)
    if not math.isfinite(val):
        return val, xi
    step = 0.5
    for _ in range(max_iter):
        tang = grad - np.dot(grad, xi) * xi
        tn = np.linalg.norm(tang)
        if tn <= 1e-11 * max(1.0, abs(val)):
            break
        moved = False
        while step > 1e-14:
            xi_new = _sphere_project(xi + step * tang / tn)
            val_new, grad_new = ev.ratio_grad(xi_new)
            if math.isfinite(val_new) and val_new > val:
                xi, val, grad = xi_new, val_new, grad_new
                moved = True
                step *= 1.7
                break
            step *= 0.5
        if not moved:
            break
    return val, xi


def _sup_general(ev: _SubspaceEval, starts, opts: SolverOptions):
    best_val, best_xi = -math.inf, None
    for xi in starts:
        val, xi_out = _ascend_ratio(ev, xi, opts.max_ascent_iter)
        if math.isfinite(val) and val > best_val:
            best_val, best_xi = val, xi_out
    if best_xi is None:
        raise InfeasibleSubspace("no feasible start on the sphere")
    return best_val, best_xi


def sup_on_sphere(ctx: EnergyContext, candidate: SubspaceCandidate, *,
                  seed: int = 0,
                  options: SolverOptions | None = None,
                  _evaluator: "_SubspaceEval | None" = None,
                  _warm_xi: np.ndarray | None = None
                  ) -> tuple[float, np.ndarray]:
    """Supremum of the Rayleigh ratio over the candidate's unit sphere.

    Returns (value, argmax coefficients).  Raises InfeasibleSubspace when
    the sphere is not strictly inside the cone g1 - g2 > 0; for p = 2 the
    value is the largest eigenvalue of the restricted m x m pencil.
    """
    opts = options or SolverOptions()
    m = candidate.m
    if m > M_MAX_LIMIT:
        raise ValueError(f"m must be <= {M_MAX_LIMIT}")
    if candidate.grid != ctx.grid:
        raise ValueError("candidate grid mismatch")
    rng = np.random.default_rng(seed)

    if _violates_dirichlet(ctx, candidate):
        # the ratio is +inf wherever a blocked-adjacent node is hit; the
        # sphere still gives a (useless) upper bound
        e1 = np.zeros(m)
        e1[0] = 1.0
        return math.inf, e1

    if ctx.p == 2.0:
        return _sup_on_sphere_p2(ctx, candidate)

    ev = _evaluator or _SubspaceEval(ctx, candidate)
    if m == 1:
        val, _ = ev.ratio_grad(np.array([1.0]))
        if not math.isfinite(val):
            raise InfeasibleSubspace("single ray outside the feasible cone")
        return val, np.array([1.0])

    starts = _starts(m, opts.n_starts, rng)
    scale = _sphere_denominator_scale(ev)
    if _warm_xi is not None:
        feas_starts = starts[:2 * m + 4]
    else:
        feas_starts = starts
    min_denom = _sphere_min_denominator(ev, feas_starts)
    if min_denom <= 1e-10 * scale:
        raise InfeasibleSubspace(
            f"sphere reaches g1 - g2 = {min_denom:.3e}")
    if _warm_xi is not None:
        starts = [_warm_xi] + starts[:max(2 * m, 4)]
    return _sup_general(ev, starts, opts)


def _sphere_denominator_scale(ev: _SubspaceEval) -> float:
    vals = []
    for j in range(ev.m):
        e = np.zeros(ev.m)
        e[j] = 1.0
        g1, g2 = ev.denominators(e)
        vals.append(abs(g1) + abs(g2))
    return max(max(vals), 1e-300)


def _violates_dirichlet(ctx: EnergyContext, candidate: SubspaceCandidate) -> bool:
    badj = ctx.blocked_adjacent().reshape(-1)
    return any(np.any(b.flat[badj] != 0.0) for b in candidate.basis)


def _sup_on_sphere_p2(ctx: EnergyContext, candidate: SubspaceCandidate):
    Ar, Br = _restricted_pencil(ctx, candidate)
    bmin = sla.eigh(Br, eigvals_only=True)[0]
    scale = max(np.abs(Br).max(), 1e-300)
    if bmin <= 1e-12 * scale:
        raise InfeasibleSubspace(
            f"restricted weight form not positive definite "
            f"(min eig {bmin:.3e})")
    vals, vecs = sla.eigh(Ar, Br)
    xi = vecs[:, -1]
    return float(vals[-1]), _sphere_project(xi)


def _restricted_pencil(ctx: EnergyContext, candidate: SubspaceCandidate):
    m = candidate.m
    Ar = np.zeros((m, m))
    Br = np.zeros((m, m))
    # quadratic forms via the gradients at each basis field (p = 2)
    fgrads = [energy_gradient(ctx, b).flat for b in candidate.basis]
    ggrads = [(g_gradient(ctx, b, 1).flat - g_gradient(ctx, b, 2).flat)
              for b in candidate.basis]
    mats = candidate.matrix()
    for i in range(m):
        for j in range(m):
            Ar[i, j] = np.dot(mats[i], fgrads[j])
            Br[i, j] = np.dot(mats[i], ggrads[j])
    Ar = 0.5 * (Ar + Ar.T)
    Br = 0.5 * (Br + Br.T)
    return Ar, Br


# ----------------------------------------------------------------------
# eigenpair polishing / certification

def certify(ctx: EnergyContext, u: Field, lam: float,
            tol: float = CERT_TOL) -> bool:
    """True iff the residual is below tol * lambda * ||u||^(p-1)."""
    try:
        res = residual(ctx, u, lam)
    except ConstraintViolation:
        return False
    return res <= tol * abs(lam) * u.norm_p() ** (ctx.p - 1.0)


def polish_eigenpair(ctx: EnergyContext, u: Field, *,
                     options: SolverOptions | None = None
                     ) -> tuple[float, Field, float]:
    """Damped Newton on (f'(u) - lambda (g1'-g2')(u), g1-g2-1) = 0.

    Returns (lambda, field, residual); the input only needs to be a
    feasible approximation.
    """
    opts = options or SolverOptions()
    grid = ctx.grid
    free = operators.free_node_mask(grid, ctx.mu)
    idx = np.flatnonzero(free)
    u = _normalize(ctx, u)
    lam = rayleigh(ctx, u)

    def full_residual(uf: Field, lam: float):
        r = (energy_gradient(ctx, uf).flat
             - lam * (g_gradient(ctx, uf, 1).flat
                      - g_gradient(ctx, uf, 2).flat))
        return r[idx]

    x = u.flat[idx]
    r = full_residual(u, lam)
    best = (lam, u, dual_norm(ctx, _embed(grid, idx, r).values))
    for _ in range(opts.newton_max_iter):
        field = _embed(grid, idx, x)
        gdiff = (g_gradient(ctx, field, 1).flat
                 - g_gradient(ctx, field, 2).flat)[idx]
        Hf = hessians.hessian_f(ctx, field, idx)
        Hg = hessians.hessian_g_diff(ctx, field, idx)
        J = sp.bmat([[Hf - lam * Hg, -sp.csc_matrix(gdiff).T],
                     [sp.csc_matrix(gdiff), None]], format="csc")
        con = (g_energy(ctx, field, 1) - g_energy(ctx, field, 2)) - 1.0
        rhs = -np.concatenate([full_residual(field, lam), [con]])
        try:
            delta = spla.spsolve(J, rhs)
        except Exception:
            break
        if not np.all(np.isfinite(delta)):
            break
        step = 1.0
        res0 = np.linalg.norm(rhs)
        accepted = False
        for _ in range(30):
            x_new = x + step * delta[:-1]
            lam_new = lam + step * delta[-1]
            fnew = _embed(grid, idx, x_new)
            g1 = g_energy(ctx, fnew, 1)
            g2 = g_energy(ctx, fnew, 2)
            if g1 - g2 > ctx.feasibility_tol(g1):
                rn = np.concatenate(
                    [full_residual(fnew, lam_new),
                     [(g1 - g2) - 1.0]])
                if np.linalg.norm(rn) < res0 * (1.0 - 1e-4 * step):
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
        x, lam = x_new, lam_new
        field = _embed(grid, idx, x)
        resn = dual_norm(ctx, _embed(
            grid, idx, full_residual(field, lam)).values)
        if resn < best[2]:
            best = (lam, field, resn)
        if resn <= 1e-14 * max(abs(lam), 1.0):
            break
    _, field, _ = best
    field = _normalize(ctx, field)
    lam = rayleigh(ctx, field)
    resn = residual(ctx, field, lam)
    return float(lam), field, float(resn)


# ----------------------------------------------------------------------
# first eigenvalue and the full minimax sweep

def _probe_fields(ctx: EnergyContext, rng: np.random.Generator,
                  count: int = 12) -> list[Field]:
    """Heuristic feasibility probes: weight-supported bumps and noise."""
    grid = ctx.grid
    free = operators.free_node_mask(grid, ctx.mu)
    probes = []
    base = np.zeros(grid.n_nodes)
    support = operators.anchor_op(grid).T @ ctx.weights.w1.reshape(-1)
    base[free] = support[free]
    if base.any():
        probes.append(Field(grid, base))
    for node, _ in ctx.weights.w1_atoms:
        v = np.zeros(grid.n_nodes)
        if free[node]:
            v[node] = 1.0
            probes.append(Field(grid, v))
    for _ in range(count):
        v = np.zeros(grid.n_nodes)
        v[free] = rng.standard_normal(int(free.sum()))
        if v.any():
            probes.append(Field(grid, v))
    return probes


def _feasible(ctx: EnergyContext, u: Field) -> bool:
    g1 = g_energy(ctx, u, 1)
    return g1 - g_energy(ctx, u, 2) > ctx.feasibility_tol(g1)


def eigen_first(ctx: EnergyContext, *, seed: int = 0,
                options: SolverOptions | None = None
                ) -> tuple[float, Field, float]:
    """Smallest eigenvalue by ratio descent plus Newton polishing.

    Returns (lambda1, eigenfield, residual); the field is normalized to
    g1 - g2 = 1.  Raises InfeasibleSubspace when no feasible field is
    found (the case of an everywhere-degenerate right-hand side).
    """
    opts = options or SolverOptions()
    rng = np.random.default_rng(seed)
    p = ctx.p

    if p == 2.0:
        lams, vecs, _ = _pencil_positive_eigs(ctx, 1)
        if not lams:
            raise InfeasibleSubspace("no positive pencil direction")
        u = _normalize(ctx, vecs[0])
        lam = rayleigh(ctx, u)
        return lam, u, residual(ctx, u, lam)

    u0 = None
    try:
        lams, vecs, _ = _pencil_positive_eigs(_p2_context(ctx), 1)
        if lams:
            u0 = Field(ctx.grid, vecs[0].values)
    except Exception:
        u0 = None
    if u0 is None or not _feasible(ctx, u0):
        for probe in _probe_fields(ctx, rng):
            if _feasible(ctx, probe):
                u0 = probe
                break
    if u0 is None or not _feasible(ctx, u0):
        raise InfeasibleSubspace("no feasible probe field")

    u = _descend_ratio(ctx, u0, opts)
    lam, u, res = polish_eigenpair(ctx, u, options=opts)
    return lam, u, res


def _p2_context(ctx: EnergyContext) -> EnergyContext:
    grid2 = GridSpec(ctx.grid.dim, ctx.grid.n, ctx.grid.lengths, 2.0)
    mu2 = CapacitaryMeasure(grid2, ctx.mu.density, ctx.mu.blocked,
                            ctx.mu.atoms if grid2.p > grid2.dim else ())
    w2 = WeightPair(grid2, ctx.weights.w1,
                    ctx.weights.w1_atoms if grid2.p > grid2.dim else (),
                    ctx.weights.w2)
    return EnergyContext(grid2, mu2, w2)


def _descend_ratio(ctx: EnergyContext, u0: Field,
                   opts: SolverOptions) -> Field:
    """Backtracking BB descent of the 0-homogeneous Rayleigh ratio."""
    grid = ctx.grid
    free = operators.free_node_mask(grid, ctx.mu)
    idx = np.flatnonzero(free)

    def value_grad(x):
        uf = _embed(grid, idx, x)
        g1 = g_energy(ctx, uf, 1)
        g2 = g_energy(ctx, uf, 2)
        denom = g1 - g2
        if denom <= ctx.feasibility_tol(g1):
            return math.inf, None
        val = f_energy(ctx, uf) / denom
        g = (energy_gradient(ctx, uf).flat
             - val * (g_gradient(ctx, uf, 1).flat
                      - g_gradient(ctx, uf, 2).flat))[idx] / denom
        return val, g

    u = _normalize(ctx, u0)
    x = u.flat[idx]
    f, g = value_grad(x)
    t = 1.0 / max(np.linalg.norm(g), 1e-12)
    for _ in range(opts.descent_max_iter):
        gn = np.linalg.norm(g)
        if gn <= 1e-9 * max(abs(f), 1.0):
            break
        step = t
        accepted = False
        for _ in range(50):
            x_new = x + step * (-g)
            f_new, g_new = value_grad(x_new)
            if math.isfinite(f_new) and f_new <= f - 1e-4 * step * gn * gn:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        s = x_new - x
        y = g_new - g
        sy = float(np.dot(s, y))
        t = float(np.dot(s, s)) / sy if sy > 1e-300 else step * 2.0
        t = min(max(t, 1e-18), 1e18)
        rel = (f - f_new) / max(abs(f), 1e-300)
        x, f, g = x_new, f_new, g_new
        if rel < 1e-14:
            break
        xn = np.linalg.norm(x)
        if xn > 0:
            x = x / xn
            f, g = value_grad(x)
    return _normalize(ctx, _embed(grid, idx, x))


def eigen_minimax(ctx: EnergyContext, m_max: int, *, seed: int = 0,
                  options: SolverOptions | None = None) -> SpectralResult:
    """Nondecreasing eigenvalues for m = 1..m_max with certification.

    p = 2 values come straight from the pencil and are exact at linear
    algebra accuracy.  For general p each level reports the best subspace
    upper bound found, with the eigenfield polished out of the inner
    argmax; levels are flagged infeasible when no subspace sphere fits in
    the feasible cone and unresolved when certification fails.
    """
    if not 1 <= m_max <= M_MAX_LIMIT:
        raise ValueError(f"m_max must be in 1..{M_MAX_LIMIT}")
    opts = options or SolverOptions()
    if ctx.p == 2.0:
        return _eigen_minimax_p2(ctx, m_max, opts)
    return _eigen_minimax_general(ctx, m_max, seed, opts)


def _eigen_minimax_p2(ctx: EnergyContext, m_max: int,
                      opts: SolverOptions) -> SpectralResult:
    lams, vecs, _ = _pencil_positive_eigs(ctx, m_max)
    out = SpectralResult([], [], [], [], [])
    for m in range(1, m_max + 1):
        if m <= len(lams):
            u = _normalize(ctx, vecs[m - 1])
            lam = float(lams[m - 1])
            res = residual(ctx, u, lam)
            ok = res <= opts.cert_tol * abs(lam) * u.norm_p() ** (ctx.p - 1)
            out.lambdas.append(lam)
            out.eigenfields.append(u)
            out.residuals.append(res)
            out.statuses.append(FINITE if ok else UNRESOLVED)
            out.subspace_bounds.append(lam)
        else:
            out.lambdas.append(math.inf)
            out.eigenfields.append(None)
            out.residuals.append(None)
            out.statuses.append(INFEASIBLE)
            out.subspace_bounds.append(math.inf)
    return out


def _orthonormal_rows(mat: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(mat.T)
    return q.T[:mat.shape[0]]


def _eigen_minimax_general(ctx: EnergyContext, m_max: int, seed: int,
                           opts: SolverOptions) -> SpectralResult:
    grid = ctx.grid
    rng = np.random.default_rng(seed)
    free = operators.free_node_mask(grid, ctx.mu)
    idx = np.flatnonzero(free)

    init_fields: list[Field] = []
    try:
        lams2, vecs2, _ = _pencil_positive_eigs(_p2_context(ctx), m_max)
        init_fields = [Field(grid, v.values) for v in vecs2]
    except Exception:
        init_fields = []
    if not init_fields:
        init_fields = [f for f in _probe_fields(ctx, rng)
                       if _feasible(ctx, f)][:m_max]

    out = SpectralResult([], [], [], [], [])
    infeasible_from = None
    for m in range(1, m_max + 1):
        if infeasible_from is not None:
            out.lambdas.append(math.inf)
            out.eigenfields.append(None)
            out.residuals.append(None)
            out.statuses.append(INFEASIBLE)
            out.subspace_bounds.append(math.inf)
            continue
        level = _minimax_level(ctx, m, idx, init_fields, rng, opts, seed)
        if level is None:
            infeasible_from = m
            out.lambdas.append(math.inf)
            out.eigenfields.append(None)
            out.residuals.append(None)
            out.statuses.append(INFEASIBLE)
            out.subspace_bounds.append(math.inf)
            continue
        bound, lam, u, res = level
        prev = out.lambdas[m - 2] if m >= 2 else -math.inf
        floor = prev - 1e-9 * max(abs(prev), 1.0)
        status = FINITE
        if res > opts.cert_tol * abs(lam) * u.norm_p() ** (ctx.p - 1):
            status = UNRESOLVED
        if lam < floor:
            # the polished pair slid below the previous level; keep the
            # ordering by reporting the subspace bound, uncertified
            lam = max(bound, prev)
            status = UNRESOLVED
        out.lambdas.append(float(max(lam, prev)))
        out.eigenfields.append(u)
        out.residuals.append(float(res))
        out.statuses.append(status)
        out.subspace_bounds.append(float(bound))
    return out


def _minimax_level(ctx, m, idx, init_fields, rng, opts, seed):
    """One m-level of the outer minimization; None when infeasible."""
    grid = ctx.grid

    def build_candidate(mat) -> SubspaceCandidate | None:
        mat = _orthonormal_rows(mat)
        try:
            return SubspaceCandidate(
                tuple(_embed(grid, idx, row[idx] if row.size == grid.n_nodes
                             else row) for row in mat))
        except ValueError:
            return None

    def initial_matrices():
        if len(init_fields) >= m:
            yield np.stack([f.flat for f in init_fields[:m]])
        base = [f.flat for f in init_fields[:m]]
        for _ in range(opts.max_restarts):
            rows = list(base)
            while len(rows) < m:
                v = np.zeros(grid.n_nodes)
                v[idx] = rng.standard_normal(idx.size)
                rows.append(v)
            if len(rows) > m:
                rows = rows[:m]
            yield np.stack(rows)
            base = []  # later restarts are fully random

    feasible_found = False
    best = None  # (value, candidate, xi)
    for mat in initial_matrices():
        cand = build_candidate(mat)
        if cand is None:
            continue
        try:
            val, xi = sup_on_sphere(ctx, cand, seed=seed + 101 * m,
                                    options=opts)
        except InfeasibleSubspace:
            continue
        feasible_found = True
        if best is None or val < best[0]:
            best = (val, cand, xi)
        break
    if not feasible_found:
        return None

    val, cand, xi = best
    non_improving = 0
    for _ in range(opts.max_outer_iter):
        u_star = cand.combine(xi)
        g1 = g_energy(ctx, u_star, 1)
        g2 = g_energy(ctx, u_star, 2)
        denom = g1 - g2
        gradR = (energy_gradient(ctx, u_star).flat
                 - val * (g_gradient(ctx, u_star, 1).flat
                          - g_gradient(ctx, u_star, 2).flat)) / denom
        mat = cand.matrix()
        scale = np.linalg.norm(gradR)
        if scale <= 1e-14:
            break
        step = 1.0 / scale
        improved = False
        for _ in range(6):
            new_mat = mat - step * np.outer(xi, gradR)
            cand_new = build_candidate(new_mat)
            if cand_new is not None:
                try:
                    val_new, xi_new = sup_on_sphere(
                        ctx, cand_new, seed=seed + 101 * m, options=opts,
                        _warm_xi=xi)
                except InfeasibleSubspace:
                    val_new = math.inf
                if val_new < val * (1.0 - 1e-12):
                    val, cand, xi = val_new, cand_new, xi_new
                    improved = True
                    break
            step *= 0.25
        if not improved:
            non_improving += 1
            if non_improving >= 1:
                break
        elif (best[0] - val) <= 1e-7 * max(abs(val), 1.0):
            best = (val, cand, xi)
            break
        if val < best[0]:
            best = (val, cand, xi)

    val, cand, xi = min(best, (val, cand, xi), key=lambda t: t[0])
    u_star = cand.combine(xi)
    lam, u, res = polish_eigenpair(ctx, u_star, options=opts)
    return val, lam, u, res
