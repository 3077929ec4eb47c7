"""Transport density two ways: Beckmann grid flow and the ray-wise formula.

The Beckmann route solves a minimum-cost flow on the 4-neighbor grid graph
(axis edges weighted by their length) whose node divergences equal the
cell-mass imbalance f - g; its objective is the Wasserstein-1 distance in
the grid metric and its edge intensities yield a discrete transport
density.  The ray route evaluates the 1-D residual-mass formula on the
counterexample's ray family.  Both are cross-checked against the system
div(sigma Du) = f - g, |Du| <= 1, |Du| = 1 on {sigma > 0}.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import counterexample as cx
from .core import ScalarField
from .errors import DomainError, InputError, TopologyError
from .ot_solver import grad_masked

_INF = 1e30


@njit(cache=True)
def _min_cost_flow(n_nodes, arc_head, arc_cap, arc_cost, first_out, next_out,
                   source, sink, total_supply):
    """Successive shortest augmenting paths with potentials.

    Residual arcs come in pairs (2k, 2k+1); pushing on one grows the cap of
    the other.  Returns 0 on success, 1 if the remaining supply cannot
    reach the sink.
    """
    n_arcs = arc_head.shape[0]
    pot = np.zeros(n_nodes)
    dist = np.empty(n_nodes)
    done = np.empty(n_nodes, dtype=np.uint8)
    prev_arc = np.empty(n_nodes, dtype=np.int64)
    heap_d = np.empty(n_arcs + 1)
    heap_n = np.empty(n_arcs + 1, dtype=np.int64)
    pushed = 0.0
    eps_cap = 1e-15

    while pushed < total_supply - 1e-12:
        for i in range(n_nodes):
            dist[i] = _INF
            done[i] = 0
            prev_arc[i] = -1
        dist[source] = 0.0
        hs = 0
        heap_d[0] = 0.0
        heap_n[0] = source
        hs = 1
        while hs > 0:
            d0 = heap_d[0]
            u = heap_n[0]
            hs -= 1
            heap_d[0] = heap_d[hs]
            heap_n[0] = heap_n[hs]
            i = 0
            while True:
                l = 2 * i + 1
                r = l + 1
                m = i
                if l < hs and heap_d[l] < heap_d[m]:
                    m = l
                if r < hs and heap_d[r] < heap_d[m]:
                    m = r
                if m == i:
                    break
                heap_d[i], heap_d[m] = heap_d[m], heap_d[i]
                heap_n[i], heap_n[m] = heap_n[m], heap_n[i]
                i = m
            if done[u]:
                continue
            done[u] = 1
            if u == sink:
                break
            a = first_out[u]
            while a != -1:
                if arc_cap[a] > eps_cap:
                    v = arc_head[a]
                    if not done[v]:
                        nd = d0 + arc_cost[a] + pot[u] - pot[v]
                        if nd < dist[v] - 1e-15:
                            dist[v] = nd
                            prev_arc[v] = a
                            heap_d[hs] = nd
                            heap_n[hs] = v
                            hs += 1
                            i = hs - 1
                            while i > 0:
                                p = (i - 1) // 2
                                if heap_d[p] <= heap_d[i]:
                                    break
                                heap_d[i], heap_d[p] = heap_d[p], heap_d[i]
                                heap_n[i], heap_n[p] = heap_n[p], heap_n[i]
                                i = p
                a = next_out[a]
        if not done[sink]:
            return 1
        d_sink = dist[sink]
        for i in range(n_nodes):
            if dist[i] < d_sink:
                pot[i] += dist[i]
            else:
                pot[i] += d_sink
        # bottleneck along the path
        delta = _INF
        v = sink
        while v != source:
            a = prev_arc[v]
            if arc_cap[a] < delta:
                delta = arc_cap[a]
            v = arc_head[a ^ 1]
        if delta > total_supply - pushed:
            delta = total_supply - pushed
        v = sink
        while v != source:
            a = prev_arc[v]
            arc_cap[a] -= delta
            arc_cap[a ^ 1] += delta
            v = arc_head[a ^ 1]
        pushed += delta
    return 0


class _ArcBuilder:
    """Accumulates residual arc pairs and adjacency lists."""

    def __init__(self, n_nodes):
        self.head = []
        self.cap = []
        self.cost = []
        self.first = np.full(n_nodes, -1, dtype=np.int64)
        self.next = []

    def add(self, u, v, cap, cost):
        for (a, b, c, w) in ((u, v, cap, cost), (v, u, 0.0, -cost)):
            idx = len(self.head)
            self.head.append(b)
            self.cap.append(c)
            self.cost.append(w)
            self.next.append(self.first[a])
            self.first[a] = idx

    def arrays(self):
        return (
            np.array(self.head, dtype=np.int64),
            np.array(self.cap, dtype=np.float64),
            np.array(self.cost, dtype=np.float64),
            self.first,
            np.array(self.next, dtype=np.int64),
        )


@dataclass(frozen=True)
class FlowField:
    """Signed mass flow on the axis edges of a grid graph.

    ``flow_x[i, j]`` is the mass moved from node (i, j) to (i+1, j) (negative
    for the reverse direction); likewise ``flow_y`` along y.  The objective
    is the flow's total cost sum |flow| * edge length, i.e. the grid-metric
    Wasserstein-1 value.
    """

    grid: object
    flow_x: np.ndarray  # (nx-1, ny)
    flow_y: np.ndarray  # (nx, ny-1)
    objective: float

    def divergence(self):
        """Net outflow per node; equals the cell-mass imbalance f - g."""
        g = self.grid
        div = np.zeros((g.nx, g.ny))
        div[:-1, :] += self.flow_x
        div[1:, :] -= self.flow_x
        div[:, :-1] += self.flow_y
        div[:, 1:] -= self.flow_y
        return div


def beckmann_flow(fm, gm, grid):
    """Minimum-cost flow on the grid graph with divergence f - g.

    Both measures must be supported on the masked nodes of ``grid`` and
    carry equal total mass.
    """
    nodes = grid.masked_nodes()
    if fm.points.shape != nodes.shape or gm.points.shape != nodes.shape:
        raise InputError("measures must be supported on the grid's masked nodes")
    if not (np.allclose(fm.points, nodes) and np.allclose(gm.points, nodes)):
        raise InputError("measure supports do not match the grid nodes")
    if abs(fm.masses.sum() - gm.masses.sum()) > 1e-9:
        raise InputError("unbalanced masses")
    b = fm.masses - gm.masses

    mask = grid.mask
    node_id = np.full((grid.nx, grid.ny), -1, dtype=np.int64)
    node_id[mask] = np.arange(grid.n_masked)
    n = grid.n_masked
    S, T = n, n + 1
    builder = _ArcBuilder(n + 2)

    # grid edges (both directions, cost = length, unbounded capacity)
    ex = mask[:-1, :] & mask[1:, :]
    for i, j in np.argwhere(ex):
        u, v = node_id[i, j], node_id[i + 1, j]
        builder.add(u, v, _INF, grid.hx)
        builder.add(v, u, _INF, grid.hx)
    ey = mask[:, :-1] & mask[:, 1:]
    for i, j in np.argwhere(ey):
        u, v = node_id[i, j], node_id[i, j + 1]
        builder.add(u, v, _INF, grid.hy)
        builder.add(v, u, _INF, grid.hy)

    n_grid_arcs = len(builder.head)  # residual entries belonging to grid edges

    total_supply = 0.0
    for k in range(n):
        if b[k] > 0:
            builder.add(S, k, b[k], 0.0)
            total_supply += b[k]
        elif b[k] < 0:
            builder.add(k, T, -b[k], 0.0)

    head, cap, cost, first, nxt = builder.arrays()
    cap0 = cap.copy()
    status = _min_cost_flow(n + 2, head, cap, cost, first, nxt, S, T, total_supply)
    if status != 0:
        raise TopologyError("mask is disconnected: flow cannot be routed")

    # pushed flow on each forward residual arc = cap gained by its partner
    flow_arc = cap[1:n_grid_arcs:2] - cap0[1:n_grid_arcs:2]  # per forward arc

    flow_x = np.zeros((grid.nx - 1, grid.ny))
    flow_y = np.zeros((grid.nx, grid.ny - 1))
    k = 0
    for i, j in np.argwhere(ex):
        flow_x[i, j] = flow_arc[k] - flow_arc[k + 1]
        k += 2
    for i, j in np.argwhere(ey):
        flow_y[i, j] = flow_arc[k] - flow_arc[k + 1]
        k += 2
    objective = float(
        np.abs(flow_x).sum() * grid.hx + np.abs(flow_y).sum() * grid.hy
    )
    return FlowField(grid=grid, flow_x=flow_x, flow_y=flow_y, objective=objective)


def density_from_flow(flow):
    """Flow intensity per unit area: (sum of incident |flow|*length / 2) / cell area."""
    g = flow.grid
    acc = np.zeros((g.nx, g.ny))
    fx = np.abs(flow.flow_x) * g.hx
    fy = np.abs(flow.flow_y) * g.hy
    acc[:-1, :] += fx
    acc[1:, :] += fx
    acc[:, :-1] += fy
    acc[:, 1:] += fy
    sigma = acc / (2.0 * g.hx * g.hy)
    sigma[~g.mask] = 0.0
    return ScalarField(grid=g, values=sigma)


def ray_density(a, t):
    """Transport density on ray a at coordinate t, in source-density units.

    sigma_a(t) = sqrt(1+a) |F_f(t) - F_g(t)| / (t + 2a) with F the weighted
    cumulative ray masses; it vanishes at both ray endpoints.  The sqrt(1+a)
    converts from the ray coordinate t (speed sqrt(1+a)) to arclength, so
    the planar integral of sigma equals the Euclidean Wasserstein-1 value.
    """
    if not (0.0 < a <= 1.0):
        raise DomainError(f"ray parameter a={a} outside (0, 1]")
    top = 3.0 + a
    if not (-cx.GEOM_TOL <= t <= top + cx.GEOM_TOL):
        raise DomainError(f"t={t} outside ray [0, {top}]")
    t = min(max(t, 0.0), top)
    if t == 0.0:
        return 0.0
    resid = cx.cumulative_f(a, t) - cx.cumulative_g(a, t)
    return np.sqrt(1.0 + a) * abs(resid) / (t + 2.0 * a)


def mk_residual(sigma, u, fm, gm):
    """Residuals of the system div(sigma Du) = f - g, |Du| <= 1 on a grid.

    Returns (div_res, grad_res, slack_res):
      div_res   max over interior masked nodes of |div_h(sigma Du_h) - (f-g)|,
                densities taken per unit area;
      grad_res  max over nodes of max(|Du_h| - 1, 0);
      slack_res max over nodes with sigma > 1% of max sigma of (1 - |Du_h|).
    """
    grid = sigma.grid
    if u.grid is not grid and (u.grid.bounds != grid.bounds
                               or (u.grid.nx, u.grid.ny) != (grid.nx, grid.ny)):
        raise InputError("sigma and u live on different grids")
    cell = grid.hx * grid.hy
    dens_f = np.zeros((grid.nx, grid.ny))
    dens_g = np.zeros((grid.nx, grid.ny))
    dens_f[grid.mask] = fm.masses / cell
    dens_g[grid.mask] = gm.masses / cell

    du, ok = grad_masked(u.values, grid)
    nrm = np.linalg.norm(du, axis=-1)
    grad_res = float(np.maximum(nrm[grid.mask & ok] - 1.0, 0.0).max())

    # conservative staggered divergence: fluxes sigma*Du live on edge
    # midpoints, with one-sided gradients and averaged sigma there; this is
    # the standard compact scheme for div(sigma grad u) and stays accurate
    # across kinks of u where sigma vanishes
    s, v = sigma.values, u.values
    mask = grid.mask
    fx = 0.5 * (s[1:, :] + s[:-1, :]) * (v[1:, :] - v[:-1, :]) / grid.hx
    fx = np.where(mask[1:, :] & mask[:-1, :], fx, 0.0)
    fy = 0.5 * (s[:, 1:] + s[:, :-1]) * (v[:, 1:] - v[:, :-1]) / grid.hy
    fy = np.where(mask[:, 1:] & mask[:, :-1], fy, 0.0)
    div = np.zeros((grid.nx, grid.ny))
    div[1:-1, :] = (fx[1:, :] - fx[:-1, :]) / grid.hx
    div[:, 1:-1] += (fy[:, 1:] - fy[:, :-1]) / grid.hy
    interior = np.zeros_like(mask)
    interior[1:-1, 1:-1] = (
        mask[1:-1, 1:-1] & mask[2:, 1:-1] & mask[:-2, 1:-1]
        & mask[1:-1, 2:] & mask[1:-1, :-2]
    )
    # the potential decreases along the transport direction, so the mass
    # flux is -sigma Du and the divergence identity reads div(sigma Du) = g - f
    div_res = float(np.abs(div[interior] - (dens_g - dens_f)[interior]).max())

    # slack uses the upwind (Rouy-Tourin) gradient magnitude, which stays
    # first-order accurate across the kinks of a distance-like potential
    # where central differences collapse
    nrm_up = _upwind_grad_norm(v, grid)
    smax = sigma.values[grid.mask].max()
    support = grid.mask & ok & (sigma.values > 0.01 * smax)
    if support.any():
        slack_res = float((1.0 - nrm_up[support]).max())
    else:
        slack_res = 0.0
    return div_res, grad_res, slack_res


def _upwind_grad_norm(v, grid):
    """Per-axis max-magnitude one-sided difference norm (Rouy-Tourin)."""
    mask = grid.mask
    gx = np.zeros_like(v)
    gy = np.zeros_like(v)
    fwd = np.zeros_like(v)
    bwd = np.zeros_like(v)
    fwd[:-1, :] = np.where(mask[:-1, :] & mask[1:, :],
                           (v[1:, :] - v[:-1, :]) / grid.hx, 0.0)
    bwd[1:, :] = np.where(mask[1:, :] & mask[:-1, :],
                          (v[1:, :] - v[:-1, :]) / grid.hx, 0.0)
    gx = np.maximum(np.abs(fwd), np.abs(bwd))
    fwd = np.zeros_like(v)
    bwd = np.zeros_like(v)
    fwd[:, :-1] = np.where(mask[:, :-1] & mask[:, 1:],
                           (v[:, 1:] - v[:, :-1]) / grid.hy, 0.0)
    bwd[:, 1:] = np.where(mask[:, 1:] & mask[:, :-1],
                          (v[:, 1:] - v[:, :-1]) / grid.hy, 0.0)
    gy = np.maximum(np.abs(fwd), np.abs(bwd))
    return np.sqrt(gx**2 + gy**2)
