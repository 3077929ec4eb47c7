"""Regularity observables of transport maps: DT, eigenvalues, W, moduli.

Everything here consumes sampled maps on grids.  The central quantity is
the Jacobian trace W = lambda_1 + lambda_2 of DT, which for maps derived
from a c-concave potential decomposes as DT = A^{-1} w with both factors
symmetric positive, so the eigenvalues are real and positive up to
discretization noise.  Complex eigenvalues are counted and reported, never
coerced.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_erosion

from .errors import DomainError, InputError, NonconvergenceError
from .ot_solver import (
    barycentric_map,
    map_field_on_grid,
    map_from_potential,
    potential_field,
    solve_entropic,
    solve_exact,
)

# probe regions stay 3 stencil spacings away from the mask boundary
BOUNDARY_MARGIN = 3

_EIG_FLUSH = 1e-9


@dataclass(frozen=True)
class JacobianField:
    """2x2 Jacobian per node, defined where the full stencil is masked."""

    grid: object
    J: np.ndarray  # (nx, ny, 2, 2)
    valid: np.ndarray  # (nx, ny) bool
    h: tuple


@dataclass(frozen=True)
class DiagnosticsReport:
    """Per-eps record of eigenvalue extremes, W extremes and moduli."""

    eps: float
    max_W: float
    min_W: float
    min_eig: float
    max_eig: float
    complex_count: int
    lipschitz_modulus: float
    probe_region: tuple
    holder_exponent: float = None
    node_count: int = 0
    error: str = None

    def to_dict(self):
        return {
            "eps": self.eps,
            "max_W": self.max_W,
            "min_W": self.min_W,
            "min_eig": self.min_eig,
            "max_eig": self.max_eig,
            "complex_count": self.complex_count,
            "lipschitz_modulus": self.lipschitz_modulus,
            "probe_region": list(self.probe_region) if self.probe_region else None,
            "holder_exponent": self.holder_exponent,
            "node_count": self.node_count,
            "error": self.error,
        }


def jacobian_field(mapfield, h=None):
    """DT by second-order central differences at interior masked nodes.

    ``h`` defaults to the grid spacing and must match it when given (the
    stencil lives on the map samples themselves).
    """
    grid = mapfield.grid
    if grid is None:
        raise InputError("jacobian_field needs a grid-backed map")
    hx, hy = grid.hx, grid.hy
    if h is not None:
        if not (np.isclose(h, hx) and np.isclose(h, hy)):
            raise InputError(f"h={h} does not match grid spacing ({hx}, {hy})")
    T, valid_nodes = map_field_on_grid(mapfield)
    m = grid.mask & valid_nodes
    interior = np.zeros_like(m)
    interior[1:-1, 1:-1] = (
        m[1:-1, 1:-1] & m[2:, 1:-1] & m[:-2, 1:-1] & m[1:-1, 2:] & m[1:-1, :-2]
    )
    if not interior.any():
        raise InputError("no interior stencil fits inside the mask")
    J = np.zeros((grid.nx, grid.ny, 2, 2))
    dTdx = np.zeros_like(T)
    dTdy = np.zeros_like(T)
    dTdx[1:-1, :, :] = (T[2:, :, :] - T[:-2, :, :]) / (2 * hx)
    dTdy[:, 1:-1, :] = (T[:, 2:, :] - T[:, :-2, :]) / (2 * hy)
    J[:, :, 0, 0] = dTdx[:, :, 0]
    J[:, :, 1, 0] = dTdx[:, :, 1]
    J[:, :, 0, 1] = dTdy[:, :, 0]
    J[:, :, 1, 1] = dTdy[:, :, 1]
    J[~interior] = 0.0
    return JacobianField(grid=grid, J=J, valid=interior, h=(hx, hy))


def eigs2(J):
    """Eigenvalues of a 2x2 matrix from trace and determinant.

    Returns (lam1, lam2) ordered by descending real part (ties broken by
    descending imaginary part).  Imaginary parts below 1e-9*(1+|tr|) are
    flushed to zero.
    """
    J = np.asarray(J, dtype=float)
    tr = J[0, 0] + J[1, 1]
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    disc = tr * tr - 4.0 * det
    if disc >= 0:
        r = np.sqrt(disc)
        lam1 = complex(0.5 * (tr + r))
        lam2 = complex(0.5 * (tr - r))
    else:
        r = np.sqrt(-disc)
        im = 0.5 * r
        if im <= _EIG_FLUSH * (1.0 + abs(tr)):
            lam1 = lam2 = complex(0.5 * tr)
        else:
            lam1 = complex(0.5 * tr, im)
            lam2 = complex(0.5 * tr, -im)
    if (lam1.real, lam1.imag) < (lam2.real, lam2.imag):
        lam1, lam2 = lam2, lam1
    return lam1, lam2


def trace_W(J):
    """Trace of DT, equal to the sum of its eigenvalues."""
    J = np.asarray(J, dtype=float)
    return float(J[0, 0] + J[1, 1])


def matrices_Aw(Du, D2u, eps):
    """Cost Hessian A, PDE matrix w = A - D2u, and W = tr(A^{-1} w).

    A = (I - Du x Du)/L with L = eps/sqrt(1-|Du|^2); the inverse uses the
    closed form L(I + (L/eps)^2 Du x Du) and is verified against direct
    inversion.
    """
    Du = np.asarray(Du, dtype=float)
    D2u = np.asarray(D2u, dtype=float)
    v = float(Du @ Du)
    if v >= 1.0:
        raise DomainError("|Du| >= 1: cost Hessian degenerates")
    L = eps / np.sqrt(1.0 - v)
    outer = np.outer(Du, Du)
    A = (np.eye(2) - outer) / L
    w = A - D2u
    A_inv = L * (np.eye(2) + (L / eps) ** 2 * outer)
    if not np.allclose(A_inv @ A, np.eye(2), atol=1e-10):
        raise DomainError("closed-form inverse of A failed its identity check")
    W = float(np.trace(A_inv @ w))
    return A, w, W


def ray_components(J, Du):
    """Map derivatives along and across the local ray direction.

    nu = -Du/|Du| and xi = nu rotated by 90 degrees; returns
    (nu^T J nu, xi^T J xi), whose sum is trace_W(J).
    """
    Du = np.asarray(Du, dtype=float)
    nrm = np.linalg.norm(Du)
    if nrm <= 1e-12:
        raise DomainError("|Du| ~ 0: ray direction undefined")
    nu = -Du / nrm
    xi = np.array([-nu[1], nu[0]])
    J = np.asarray(J, dtype=float)
    return float(nu @ J @ nu), float(xi @ J @ xi)


def _in_region(pts, region):
    xmin, xmax, ymin, ymax = region
    return (
        (pts[..., 0] >= xmin)
        & (pts[..., 0] <= xmax)
        & (pts[..., 1] >= ymin)
        & (pts[..., 1] <= ymax)
    )


def lipschitz_modulus(mapfield, region):
    """Max of |T(p)-T(q)|/|p-q| over adjacent grid node pairs in a region."""
    grid = mapfield.grid
    if grid is None:
        raise InputError("lipschitz_modulus needs a grid-backed map")
    T, valid = map_field_on_grid(mapfield)
    X, Y = np.meshgrid(grid.xs, grid.ys, indexing="ij")
    pts = np.stack([X, Y], axis=-1)
    sel = grid.mask & valid & _in_region(pts, region)
    if sel.sum() < 2:
        raise InputError("region contains fewer than 2 usable nodes")
    best = 0.0
    pair_x = sel[1:, :] & sel[:-1, :]
    if pair_x.any():
        dT = np.linalg.norm(T[1:, :][pair_x] - T[:-1, :][pair_x], axis=-1)
        best = max(best, float(dT.max() / grid.hx))
    pair_y = sel[:, 1:] & sel[:, :-1]
    if pair_y.any():
        dT = np.linalg.norm(T[:, 1:][pair_y] - T[:, :-1][pair_y], axis=-1)
        best = max(best, float(dT.max() / grid.hy))
    if best == 0.0 and not (pair_x.any() or pair_y.any()):
        raise InputError("region contains no adjacent node pair")
    return best


def holder_fit(pairs):
    """Least-squares power-law fit value ~ constant * delta^exponent.

    ``pairs`` is a list of (delta, value) with positive entries; at least
    3 pairs are required.  Returns (exponent, constant, r2).
    """
    pairs = list(pairs)
    if len(pairs) < 3:
        raise InputError("holder_fit needs at least 3 pairs")
    deltas = np.array([p[0] for p in pairs], dtype=float)
    values = np.array([p[1] for p in pairs], dtype=float)
    if np.any(deltas <= 0) or np.any(values <= 0):
        raise InputError("holder_fit needs positive deltas and values")
    if len(np.unique(deltas)) != len(deltas):
        raise InputError("holder_fit deltas must be distinct")
    ld, lv = np.log(deltas), np.log(values)
    exponent, intercept = np.polyfit(ld, lv, 1)
    pred = exponent * ld + intercept
    ss_res = float(np.sum((lv - pred) ** 2))
    ss_tot = float(np.sum((lv - lv.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(exponent), float(np.exp(intercept)), r2


def probe_selector(grid, probe, extra_valid=None, margin=BOUNDARY_MARGIN):
    """Nodes inside the probe rectangle, eroded away from the mask boundary."""
    eroded = binary_erosion(grid.mask, iterations=margin)
    X, Y = np.meshgrid(grid.xs, grid.ys, indexing="ij")
    pts = np.stack([X, Y], axis=-1)
    sel = eroded & _in_region(pts, probe)
    if extra_valid is not None:
        sel = sel & extra_valid
    return sel


def diagnostics_from_map(mapfield, eps, probe):
    """Assemble a DiagnosticsReport for one map over a probe rectangle."""
    jf = jacobian_field(mapfield)
    sel = probe_selector(mapfield.grid, probe, extra_valid=jf.valid)
    if not sel.any():
        raise InputError("probe region selects no interior nodes")
    idx = np.argwhere(sel)
    Ws, eigs_re = [], []
    n_complex = 0
    tr = jf.J[:, :, 0, 0] + jf.J[:, :, 1, 1]
    for i, j in idx:
        l1, l2 = eigs2(jf.J[i, j])
        if l1.imag != 0.0:
            n_complex += 1
        eigs_re.extend([l1.real, l2.real])
        Ws.append(tr[i, j])
    Ws = np.array(Ws)
    eigs_re = np.array(eigs_re)
    lip = lipschitz_modulus(mapfield, probe)
    return DiagnosticsReport(
        eps=float(eps),
        max_W=float(Ws.max()),
        min_W=float(Ws.min()),
        min_eig=float(eigs_re.min()),
        max_eig=float(eigs_re.max()),
        complex_count=int(n_complex),
        lipschitz_modulus=float(lip),
        probe_region=tuple(probe),
        node_count=int(len(idx)),
    )


def _solve_one(src, tgt, eps, solver, init=None):
    mode = solver.get("mode", "entropic")
    if mode == "exact":
        return solve_exact(src, tgt, eps)
    return solve_entropic(
        src,
        tgt,
        eps,
        lam=solver.get("lambda", 0.01),
        tol=solver.get("tol", 1e-7),
        max_iter=solver.get("max_iter", 50000),
        init=init,
    )


def eps_sweep(instance, eps_list, probe):
    """Solve one instance across an eps sweep and diagnose each map.

    ``instance`` is an ExperimentConfig (or anything with grid/src/tgt and
    a solver dict via ``build_instance``).  Per eps: solve, extract the map
    from the potential, diagnose over the probe.  Solver failures yield a
    report carrying an error marker; the sweep continues.  The worker count
    honours the MONGE_LAB_THREADS environment variable (default 1, which
    additionally enables dual warm starts across the sweep).
    """
    from .config import build_instance

    if len(eps_list) == 0:
        raise InputError("eps_list must be nonempty")
    grid, src, tgt = build_instance(instance)
    solver = dict(instance.solver)

    map_mode = solver.get("map", "barycentric")

    def run(eps, init=None):
        try:
            plan, duals = _solve_one(src, tgt, eps, solver, init=init)
            if map_mode == "potential":
                phi = potential_field(duals, grid)
                mf = map_from_potential(phi, eps)
            else:
                mf = barycentric_map(plan, grid=grid)
            return diagnostics_from_map(mf, eps, probe), duals
        except NonconvergenceError as exc:
            report = DiagnosticsReport(
                eps=float(eps),
                max_W=np.nan,
                min_W=np.nan,
                min_eig=np.nan,
                max_eig=np.nan,
                complex_count=0,
                lipschitz_modulus=np.nan,
                probe_region=tuple(probe),
                error=str(exc),
            )
            return report, None

    threads = int(os.environ.get("MONGE_LAB_THREADS", "1"))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda e: run(e)[0], eps_list))
        return results
    reports = []
    duals = None
    for eps in eps_list:
        report, duals = run(eps, init=duals)
        reports.append(report)
    return reports
