"""Discrete optimal transport for the regularized cost, exact and entropic.

The exact solver treats the finite Kantorovich problem as a dense
transportation LP and serves as the oracle; the entropic solver runs
log-domain Sinkhorn iterations and scales to grid instances.  Both return
a coupling plus dual potentials in the convention where the source
potential phi satisfies phi(x) + psi(y) <= c_eps(x, y), with equality on
the support of the optimal coupling, so that the map is recovered as
T(x) = x - eps * Dphi / sqrt(1 - |Dphi|^2).
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix
from scipy.special import logsumexp

from .core import DiscreteMeasure, Grid2, ScalarField, cost_eps
from .errors import CapacityError, DegeneracyError, InputError, NonconvergenceError

EXACT_CAPACITY = 2500


@dataclass(frozen=True)
class CostMatrix:
    """Dense matrix of c_eps values between two discrete supports."""

    entries: np.ndarray
    eps: float

    @classmethod
    def build(cls, src, tgt, eps):
        entries = cost_eps(src.points[:, None, :], tgt.points[None, :, :], eps)
        return cls(entries=entries, eps=eps)


@dataclass(frozen=True)
class TransportPlan:
    """Coupling matrix between source and target with its transport cost."""

    coupling: np.ndarray
    source: DiscreteMeasure
    target: DiscreteMeasure
    objective: float
    iterations: int = 0
    marginal_violation: float = 0.0


@dataclass(frozen=True)
class DualPotentials:
    """Kantorovich dual pair, anchored so that phi[0] = 0."""

    phi: np.ndarray
    psi: np.ndarray


@dataclass(frozen=True)
class MapField:
    """Sampled transport map: source points, their images, and validity."""

    points: np.ndarray
    image: np.ndarray
    valid: np.ndarray
    grid: Grid2 = None

    @property
    def displacement(self):
        """Per-point displacement length d = |x - T(x)|."""
        return np.linalg.norm(self.points - self.image, axis=-1)


def _check_pair(src, tgt):
    if abs(src.masses.sum() - tgt.masses.sum()) > 1e-9:
        raise InputError("source and target masses are unbalanced")


def solve_exact(src, tgt, eps):
    """Solve the finite transportation problem exactly (dense LP).

    Returns the globally optimal plan and feasible, complementary-slack
    dual potentials.  Deterministic for fixed input.  Supports are capped
    at 2500 points each.
    """
    if src.n > EXACT_CAPACITY or tgt.n > EXACT_CAPACITY:
        raise CapacityError(f"exact solver capped at {EXACT_CAPACITY} points per side")
    _check_pair(src, tgt)
    n, m = src.n, tgt.n
    C = CostMatrix.build(src, tgt, eps).entries
    # equality-constrained transportation LP on the flattened coupling
    rows_i = np.repeat(np.arange(n), m)
    cols_j = np.tile(np.arange(m), n)
    var = np.arange(n * m)
    A = coo_matrix(
        (
            np.ones(2 * n * m),
            (np.concatenate([rows_i, n + cols_j]), np.concatenate([var, var])),
        ),
        shape=(n + m, n * m),
    ).tocsc()
    b = np.concatenate([src.masses, tgt.masses])
    res = linprog(
        C.ravel(),
        A_eq=A,
        b_eq=b,
        bounds=(0, None),
        method="highs",
        options={
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
        },
    )
    if not res.success:
        raise InputError(f"exact transportation LP failed: {res.message}")
    coupling = res.x.reshape(n, m)
    objective = float(np.sum(coupling * C))
    duals = np.asarray(res.eqlin.marginals)
    phi, psi = duals[:n], duals[n:]
    shift = phi[0]
    plan = TransportPlan(
        coupling=coupling, source=src, target=tgt, objective=objective
    )
    return plan, DualPotentials(phi=phi - shift, psi=psi + shift)


def _sinkhorn_stage(C, a, b, f, g, lam, tol, max_iter):
    """Stabilized Sinkhorn scaling at one regularization strength.

    Iterates on u = exp(f_res/lam), v = exp(g_res/lam) against the absorbed
    kernel K = exp((f + g - C)/lam); the scalings are absorbed back into
    (f, g) whenever they leave a safe dynamic range.  Returns the updated
    duals, the last row-marginal TV violation, and the iteration count.
    """
    absorb_cap = 1e100

    def kernel():
        return np.exp((f[:, None] + g[None, :] - C) / lam)

    K = kernel()
    u = np.ones(a.shape[0])
    v = np.ones(b.shape[0])
    violation = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        Kv = K @ v
        u = a / np.maximum(Kv, 1e-300)
        Ktu = K.T @ u
        v = b / np.maximum(Ktu, 1e-300)
        if (
            u.max() > absorb_cap
            or v.max() > absorb_cap
            or 1.0 / max(u.min(), 1e-300) > absorb_cap
            or 1.0 / max(v.min(), 1e-300) > absorb_cap
        ):
            f = f + lam * np.log(np.maximum(u, 1e-300))
            g = g + lam * np.log(np.maximum(v, 1e-300))
            K = kernel()
            u = np.ones(a.shape[0])
            v = np.ones(b.shape[0])
            continue
        if it % 10 == 0 or it == max_iter:
            # columns match b after the v-update; check the row marginal
            row = u * (K @ v)
            violation = 0.5 * np.abs(row - a).sum()
            if violation <= tol:
                break
    f = f + lam * np.log(np.maximum(u, 1e-300))
    g = g + lam * np.log(np.maximum(v, 1e-300))
    return f, g, violation, it


# annealing entry point and loose tolerance for the intermediate stages
_ANNEAL_START = 0.05
_ANNEAL_TOL = 1e-4


def solve_entropic(
    src, tgt, eps, lam, tol=1e-9, max_iter=20000, init=None, anneal=True
):
    """Entropically regularized transport via stabilized Sinkhorn scaling.

    Parameters
    ----------
    lam : float
        Entropic regularization strength (> 0); smaller is sharper.
    tol : float
        Total-variation bound on the worse of the two marginal violations.
    max_iter : int
        Iteration cap per stage; exceeding it at the final strength raises
        ``NonconvergenceError`` carrying the last violation.
    init : DualPotentials, optional
        Warm start (e.g. duals from a neighbouring instance in a sweep);
        disables annealing.
    anneal : bool
        On cold starts, halve the strength from 0.05 down to ``lam``,
        warm-starting each stage on the previous one (loose intermediate
        tolerance); pure speedup, same fixed point.
    """
    if lam <= 0 or tol <= 0:
        raise InputError("lam and tol must be positive")
    _check_pair(src, tgt)
    C = CostMatrix.build(src, tgt, eps).entries
    log_a = np.log(np.maximum(src.masses, 1e-300))
    a = src.masses
    b = tgt.masses
    if init is not None:
        f = np.array(init.phi, dtype=float)
        g = np.array(init.psi, dtype=float)
    else:
        f = np.zeros(src.n)
        g = np.zeros(tgt.n)
        if anneal and lam < _ANNEAL_START:
            stage = _ANNEAL_START
            while stage > lam * 1.0000001:
                f, g, _, _ = _sinkhorn_stage(
                    C, a, b, f, g, stage, max(_ANNEAL_TOL, tol), max_iter
                )
                stage *= 0.5
    f, g, violation, it = _sinkhorn_stage(C, a, b, f, g, lam, tol, max_iter)
    if violation > tol:
        raise NonconvergenceError(
            f"sinkhorn did not reach tol={tol} in {max_iter} iterations",
            violation=violation,
            iterations=it,
        )
    # renormalize rows exactly onto the source marginal (Gibbs form kept)
    logK = (f[:, None] + g[None, :] - C) / lam
    logK = logK + (log_a - logsumexp(logK, axis=1))[:, None]
    coupling = np.exp(logK)
    objective = float(np.sum(coupling * C))
    shift = f[0]
    plan = TransportPlan(
        coupling=coupling,
        source=src,
        target=tgt,
        objective=objective,
        iterations=it,
        marginal_violation=float(violation),
    )
    return plan, DualPotentials(phi=f - shift, psi=g + shift)


def barycentric_map(plan, grid=None):
    """Extract a map by row-wise barycenters of the coupling.

    Rows with (numerically) zero mass are flagged invalid rather than
    producing NaNs.
    """
    rowsum = plan.coupling.sum(axis=1)
    valid = rowsum > 0
    image = np.zeros_like(plan.source.points)
    image[valid] = (plan.coupling[valid] @ plan.target.points) / rowsum[valid, None]
    image[~valid] = plan.source.points[~valid]
    return MapField(points=plan.source.points, image=image, valid=valid, grid=grid)


def grad_masked(values, grid):
    """Masked-aware gradient: central differences, one-sided at mask edges.

    Returns (gradient array (nx, ny, 2), validity mask).  A node is valid
    when at least one neighbour exists along each axis inside the mask.
    """
    mask = grid.mask
    nx, ny = grid.nx, grid.ny
    g = np.zeros((nx, ny, 2))
    ok = np.zeros((nx, ny), dtype=bool)
    v = values

    def axis_diff(axis, h):
        d = np.zeros((nx, ny))
        good = np.zeros((nx, ny), dtype=bool)
        plus = np.zeros_like(mask)
        minus = np.zeros_like(mask)
        if axis == 0:
            plus[:-1, :] = mask[1:, :]
            minus[1:, :] = mask[:-1, :]
            vp = np.roll(v, -1, axis=0)
            vm = np.roll(v, 1, axis=0)
        else:
            plus[:, :-1] = mask[:, 1:]
            minus[:, 1:] = mask[:, :-1]
            vp = np.roll(v, -1, axis=1)
            vm = np.roll(v, 1, axis=1)
        both = mask & plus & minus
        fwd = mask & plus & ~minus
        bwd = mask & minus & ~plus
        d[both] = (vp[both] - vm[both]) / (2 * h)
        d[fwd] = (vp[fwd] - v[fwd]) / h
        d[bwd] = (v[bwd] - vm[bwd]) / h
        good = both | fwd | bwd
        return d, good

    dx, okx = axis_diff(0, grid.hx)
    dy, oky = axis_diff(1, grid.hy)
    g[:, :, 0] = dx
    g[:, :, 1] = dy
    ok = okx & oky
    return g, ok


def map_from_potential(phi_grid, eps):
    """Transport map from a sampled potential: T = x - eps*Du/sqrt(1-|Du|^2).

    The gradient is taken by masked central differences.  Nodes where
    |Du| >= 1 are clipped to 1 - 1e-10; if more than 1% of masked nodes
    need clipping the potential is rejected as degenerate for this eps.
    """
    grid = phi_grid.grid
    du, ok = grad_masked(phi_grid.values, grid)
    norm = np.linalg.norm(du, axis=-1)
    clipped = (norm >= 1.0) & grid.mask & ok
    n_clip = int(clipped.sum())
    if n_clip > 0.01 * max(grid.n_masked, 1):
        raise DegeneracyError(
            f"|Du| >= 1 at {n_clip} of {grid.n_masked} nodes; eps too small for grid"
        )
    safe = np.minimum(norm, 1.0 - 1e-10)
    factor = eps / np.sqrt(1.0 - safe**2)
    adj = np.where(norm > 0, np.minimum(safe / np.maximum(norm, 1e-300), 1.0), 1.0)
    X, Y = np.meshgrid(grid.xs, grid.ys, indexing="ij")
    pts = np.stack([X, Y], axis=-1)
    image = pts - factor[:, :, None] * (du * adj[:, :, None])
    image[~(grid.mask & ok)] = pts[~(grid.mask & ok)]
    valid = grid.mask & ok
    mpts = pts[grid.mask]
    mimg = image[grid.mask]
    return MapField(
        points=mpts, image=mimg, valid=valid[grid.mask], grid=grid
    )


def map_field_on_grid(mapfield):
    """Reshape a grid-backed MapField image to (nx, ny, 2) with NaN off-mask."""
    grid = mapfield.grid
    if grid is None:
        raise InputError("map field carries no grid")
    out = np.full((grid.nx, grid.ny, 2), np.nan)
    out[grid.mask] = mapfield.image
    valid = np.zeros((grid.nx, grid.ny), dtype=bool)
    valid[grid.mask] = mapfield.valid
    return out, valid


def potential_field(duals, grid):
    """Lift source-side dual values onto their grid as a ScalarField."""
    vals = np.zeros((grid.nx, grid.ny))
    vals[grid.mask] = duals.phi
    return ScalarField(grid=grid, values=vals)
