"""Shared geometry, measure and field types, plus grid discretization.

Grids are node-centered rectangular lattices with a boolean mask selecting
the nodes that belong to the computational domain.  Arrays are indexed
``[i, j]`` with ``i`` running over x and ``j`` over y.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError

MASS_TOL = 1e-12

# subcell sampling resolution used to clip boundary cells against the mask
_SUBCELL = 4


@dataclass(frozen=True)
class Grid2:
    """Rectangular node-centered grid with a domain mask.

    Parameters
    ----------
    nx, ny : int
        Node counts per axis, both >= 2.
    bounds : tuple of float
        ``(xmin, xmax, ymin, ymax)``.
    mask : ndarray of bool, shape (nx, ny)
        True where the node lies inside the domain.
    inside : callable or None
        Point predicate used to clip boundary cells during discretization.
        Optional; defaults to treating whole cells of masked nodes as inside.
    """

    nx: int
    ny: int
    bounds: tuple
    mask: np.ndarray
    inside: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ConfigurationError("grid needs nx, ny >= 2")
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ConfigurationError("degenerate grid bounds")
        if self.mask.shape != (self.nx, self.ny):
            raise ConfigurationError("mask shape must be (nx, ny)")

    @property
    def hx(self):
        xmin, xmax, _, _ = self.bounds
        return (xmax - xmin) / (self.nx - 1)

    @property
    def hy(self):
        _, _, ymin, ymax = self.bounds
        return (ymax - ymin) / (self.ny - 1)

    @property
    def xs(self):
        xmin, xmax, _, _ = self.bounds
        return np.linspace(xmin, xmax, self.nx)

    @property
    def ys(self):
        _, _, ymin, ymax = self.bounds
        return np.linspace(ymin, ymax, self.ny)

    def nodes(self):
        """All node coordinates as an (nx*ny, 2) array, x-major order."""
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def masked_nodes(self):
        """Coordinates of the masked (inside) nodes, in x-major order."""
        return self.nodes()[self.mask.ravel()]

    @property
    def n_masked(self):
        return int(self.mask.sum())


@dataclass(frozen=True)
class ScalarField:
    """One real value per grid node; meaningful only at masked nodes."""

    grid: Grid2
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ConfigurationError("scalar field shape must match grid")
        if not np.all(np.isfinite(self.values[self.grid.mask])):
            raise ConfigurationError("scalar field has non-finite masked values")


@dataclass(frozen=True)
class VectorField:
    """One 2-vector per grid node; meaningful only at masked nodes."""

    grid: Grid2
    values: np.ndarray  # shape (nx, ny, 2)

    def __post_init__(self):
        if self.values.shape != (self.grid.nx, self.grid.ny, 2):
            raise ConfigurationError("vector field shape must match grid")
        if not np.all(np.isfinite(self.values[self.grid.mask])):
            raise ConfigurationError("vector field has non-finite masked values")


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud with nonnegative masses summing to one."""

    points: np.ndarray  # (n, 2)
    masses: np.ndarray  # (n,)

    def __post_init__(self):
        if len(self.points) != len(self.masses):
            raise InputError("points and masses must have equal length")
        if np.any(self.masses < 0):
            raise InputError("masses must be nonnegative")
        total = float(self.masses.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise InputError(f"masses must sum to 1 (got {total!r})")

    @property
    def n(self):
        return len(self.masses)


def build_grid(nx, ny, bounds, mask_predicate):
    """Build a grid and evaluate the mask predicate at every node.

    ``mask_predicate(x, y)`` may be scalar or numpy-vectorized; it is
    broadcast over all nodes.
    """
    if nx < 2 or ny < 2:
        raise ConfigurationError("grid needs nx, ny >= 2")
    xmin, xmax, ymin, ymax = bounds
    if not (xmax > xmin and ymax > ymin):
        raise ConfigurationError("degenerate grid bounds")
    xs = np.linspace(xmin, xmax, nx)
    ys = np.linspace(ymin, ymax, ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    try:
        mask = np.asarray(mask_predicate(X, Y), dtype=bool)
        if mask.shape != X.shape:
            raise ValueError
    except Exception:
        mask = np.array(
            [[bool(mask_predicate(x, y)) for y in ys] for x in xs], dtype=bool
        )
    return Grid2(nx=nx, ny=ny, bounds=tuple(bounds), mask=mask, inside=mask_predicate)


def _cell_subsamples(grid):
    """Subcell sample points for every node cell, shape (nx, ny, s*s, 2)."""
    hx, hy = grid.hx, grid.hy
    off = (np.arange(_SUBCELL) + 0.5) / _SUBCELL - 0.5
    ox, oy = np.meshgrid(off * hx, off * hy, indexing="ij")
    X, Y = np.meshgrid(grid.xs, grid.ys, indexing="ij")
    px = X[:, :, None] + ox.ravel()[None, None, :]
    py = Y[:, :, None] + oy.ravel()[None, None, :]
    return px, py


def discretize(density, grid):
    """Discretize a nonnegative density into cell masses on a grid.

    Each masked node receives mass proportional to the mean of
    ``density * inside`` over a 4x4 subcell sample of its cell, times the
    cell area; masses are renormalized to total 1.  Boundary cells are
    thereby clipped against the mask predicate.
    """
    px, py = _cell_subsamples(grid)
    if grid.inside is not None:
        try:
            ins = np.asarray(grid.inside(px, py), dtype=bool)
            if ins.shape != px.shape:
                raise ValueError
        except Exception:
            f = np.vectorize(lambda x, y: bool(grid.inside(x, y)))
            ins = f(px, py)
    else:
        ins = np.ones(px.shape, dtype=bool)
    # evaluate the density only at samples inside the mask, so that
    # densities raising outside their domain remain usable
    vals = np.zeros(px.shape)
    try:
        out = np.asarray(density(px[ins], py[ins]), dtype=float)
        if out.shape != px[ins].shape:
            out = np.broadcast_to(out, px[ins].shape).copy()
    except Exception:
        f = np.vectorize(lambda x, y: float(density(x, y)))
        out = f(px[ins], py[ins])
    vals[ins] = out
    if np.any(vals[grid.mask] < 0):
        raise InputError("density must be nonnegative on masked cells")
    masses = vals.mean(axis=2) * grid.hx * grid.hy
    masses[~grid.mask] = 0.0
    total = masses.sum()
    if total <= 0:
        raise InputError("density vanishes identically on the grid")
    masses = masses[grid.mask] / total
    # guard against renormalization rounding
    masses = masses / masses.sum()
    return DiscreteMeasure(points=grid.masked_nodes(), masses=masses)


def cost_eps(x, y, eps):
    """Regularized transport cost sqrt(eps^2 + |x-y|^2).

    ``x`` and ``y`` may be single points or arrays of points with the
    coordinate on the last axis; broadcasting applies.
    """
    if eps < 0:
        raise InputError("eps must be nonnegative")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d2 = np.sum((x - y) ** 2, axis=-1)
    out = np.sqrt(eps**2 + d2)
    return float(out) if out.ndim == 0 else out
