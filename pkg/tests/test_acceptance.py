"""Acceptance gate: ten criteria with pinned tolerances and runtime budgets.

Each test states its oracle and asserts the agreed threshold verbatim.
Thresholds are never loosened to make a test pass: criteria 8 and 9 assert
targets the current discretization is known not to reach, and their failure
messages carry the measured values (see the design notes for the analysis).
"""

import itertools
import json
import os
import time
from itertools import permutations

import numpy as np
import pytest
from scipy.integrate import quad

from mongelab import (
    DiscreteMeasure,
    ScalarField,
    a_of_y,
    beckmann_flow,
    build_grid,
    cost_eps,
    density_from_flow,
    eigs2,
    eps_sweep,
    eta,
    eta_ode_coeffs,
    holder_fit,
    jacobian_field,
    mk_residual,
    potential_u,
    ray_density,
    ray_direction,
    ray_of_point,
    solve_exact,
    strip_mass_check,
    t0_map,
    trace_W,
)
from mongelab.cli import run as cli_run
from mongelab.config import build_instance, counterexample_config, smooth_config
from mongelab.counterexample import RayCoord, eta_integral_form
from mongelab.diagnostics import probe_selector, ray_components
from mongelab.ot_solver import (
    barycentric_map,
    grad_masked,
    potential_field,
    solve_entropic,
)


class Budget:
    """Asserts the wall-clock budget of a criterion on exit."""

    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.monotonic()
        return self

    def __exit__(self, *exc):
        if exc[0] is None:
            elapsed = time.monotonic() - self.t0
            assert elapsed < self.seconds, (
                f"runtime budget exceeded: {elapsed:.1f}s >= {self.seconds}s"
            )


def test_criterion_01_eta_consistency():
    """Closed-form eta solves its balance ODE (residual <= 1e-8 on
    y in [0.01, 4]) and matches the independent integral form to 1e-6."""
    with Budget(1.0):
        h = 1e-5
        worst = 0.0
        for y in np.linspace(0.01, 4.0, 80):
            dp = (-eta(y + 2 * h) + 8 * eta(y + h)
                  - 8 * eta(y - h) + eta(y - 2 * h)) / (12 * h)
            p, q = eta_ode_coeffs(a_of_y(y))
            worst = max(worst, abs(dp + q / y * eta(y) - y * p))
        assert worst <= 1e-8, f"eta ODE residual {worst:.3e} > 1e-8"
        for y in (0.5, 1.5, 3.0):
            ref = eta_integral_form(y)
            assert abs(eta(y) - ref) <= 1e-6, (
                f"eta({y}) = {eta(y)} vs integral form {ref}"
            )


def test_criterion_02_strip_mass_balance():
    """Source and target masses below every ray agree to 1e-8 relative;
    at a = 1 both equal the full-triangle mass 8."""
    with Budget(5.0):
        for a in np.linspace(0.05, 1.0, 20):
            lhs, rhs = strip_mass_check(a)
            assert abs(lhs - rhs) / lhs <= 1e-8, (
                f"strip a={a}: |{lhs} - {rhs}|/{lhs} > 1e-8"
            )
            assert lhs == pytest.approx(np.sqrt(a) * (3 + a) ** 2 / 2, rel=1e-8)
        lhs, rhs = strip_mass_check(1.0)
        assert lhs == pytest.approx(8.0, abs=1e-8)
        assert rhs == pytest.approx(8.0, abs=1e-8)


def test_criterion_03_potential():
    """1-Lipschitz on >= 1e4 random pairs (slack 1e-9); unit slope exactly
    on rays (1e-6) and strictly below off rays (1e-9); finite-difference
    gradient equals the ray direction to 1e-4 away from y = 0."""
    with Budget(10.0):
        rng = np.random.default_rng(42)
        pts = []
        while len(pts) < 150:
            x = rng.uniform(-3, 1)
            y = rng.uniform(0, 4)
            if y <= x + 3:
                pts.append((x, y))
        us = np.array([potential_u(x, y) for x, y in pts])
        P = np.array(pts)
        n_pairs = 0
        for i, j in itertools.combinations(range(len(pts)), 2):
            d = float(np.hypot(*(P[i] - P[j])))
            assert abs(us[i] - us[j]) <= d + 1e-9, (
                f"Lipschitz violated at {pts[i]}, {pts[j]}"
            )
            n_pairs += 1
        assert n_pairs >= 10_000

        # equality of slope holds exactly along rays ...
        for _ in range(25):
            x = rng.uniform(-2.5, 0.5)
            y = rng.uniform(0.3, min(x + 2.8, 3.5))
            rc = ray_of_point(x, y)
            t2 = min(rc.t + rng.uniform(0.3, 0.8), 3 + rc.a)
            q = RayCoord(a=rc.a, t=t2).point(sign=1.0)
            d = float(np.hypot(q[0] - x, q[1] - y))
            if d < 1e-3:
                continue
            du = abs(potential_u(x, y) - potential_u(*q))
            assert abs(du - d) <= 1e-6, f"on-ray slope {du/d} != 1 at {(x, y)}"
        # ... and strictly below 1 across rays
        for _ in range(25):
            x = rng.uniform(-2.0, 0.5)
            y = rng.uniform(0.5, min(x + 2.8, 3.5))
            rc = ray_of_point(x, y)
            a2 = min(1.0, rc.a + 0.2)
            q = RayCoord(a=a2, t=rc.t).point(sign=1.0)
            d = float(np.hypot(q[0] - x, q[1] - y))
            du = abs(potential_u(x, y) - potential_u(*q))
            assert du < d - 1e-9, f"cross-ray slope not strict at {(x, y)}"

        # gradient equals the ray direction away from the axis
        h = 1e-6
        for _ in range(15):
            x = rng.uniform(-2.2, 0.5)
            y = rng.uniform(0.4, min(x + 2.6, 3.4))
            gx = (potential_u(x + h, y) - potential_u(x - h, y)) / (2 * h)
            gy = (potential_u(x, y + h) - potential_u(x, y - h)) / (2 * h)
            nu = ray_direction(x, y)
            assert abs(gx - nu[0]) <= 1e-4 and abs(gy - nu[1]) <= 1e-4, (
                f"Du != nu at {(x, y)}: ({gx}, {gy}) vs {nu}"
            )


def test_criterion_04_blowup():
    """x-displacement at (-2, sigma): limit constant sqrt(14)-3 within 1%
    at sigma = 1e-6, difference quotient >= 50 there, the lower bound
    (sqrt(5)-2) sigma^(2/3) for all sigma <= 1e-2, and a Hoelder fit with
    exponent in [0.62, 0.72], r^2 >= 0.99."""
    with Budget(1.0):
        img = t0_map(-2.0, 1e-6)
        ratio = (img[0] + 2.0) / 1e-6 ** (2 / 3)
        assert ratio == pytest.approx(np.sqrt(14) - 3, rel=0.01), (
            f"limit constant {ratio} vs {np.sqrt(14) - 3}"
        )
        assert (img[0] + 2.0) / 1e-6 >= 50.0

        sigmas = np.logspace(-6, -2, 15)
        disps = []
        for s in sigmas:
            d = t0_map(-2.0, s)[0] + 2.0
            assert d >= (np.sqrt(5) - 2) * s ** (2 / 3), (
                f"lower bound violated at sigma={s}"
            )
            disps.append(d)
        exponent, _, r2 = holder_fit(list(zip(sigmas, disps)))
        assert 0.62 <= exponent <= 0.72, f"Hoelder exponent {exponent}"
        assert r2 >= 0.99, f"fit r^2 {r2}"


def test_criterion_05_exact_solver_oracle():
    """solve_exact equals the brute-force permutation minimum to 1e-9 on
    50 random equal-mass instances with <= 6 points, eps in {0, 0.1, 1}."""
    with Budget(10.0):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(2, 7))
            src = DiscreteMeasure(rng.uniform(0, 1, (n, 2)), np.full(n, 1 / n))
            tgt = DiscreteMeasure(rng.uniform(0, 1, (n, 2)), np.full(n, 1 / n))
            for eps in (0.0, 0.1, 1.0):
                plan, _ = solve_exact(src, tgt, eps)
                C = cost_eps(src.points[:, None, :], tgt.points[None, :, :], eps)
                best = min(
                    sum(C[i, p[i]] for i in range(n)) / n
                    for p in permutations(range(n))
                )
                assert abs(plan.objective - best) <= 1e-9, (
                    f"objective {plan.objective} vs oracle {best} (eps={eps})"
                )


def _solve_smooth(eps, lam=0.005):
    cfg = smooth_config(eps_list=(eps,))
    grid, src, tgt = build_instance(cfg)
    plan, duals = solve_entropic(src, tgt, eps, lam=lam, tol=1e-7,
                                 max_iter=200000)
    return cfg, grid, plan, duals


def test_criterion_06_eigenvalue_positivity():
    """Smooth 33x33 instance at eps = 0.2: >= 99% of interior probe nodes
    have both DT eigenvalues real (|Im| <= 1e-6 (1+|tr|)) and positive."""
    with Budget(60.0):
        cfg, grid, plan, duals = _solve_smooth(0.2)
        mf = barycentric_map(plan, grid=grid)
        jf = jacobian_field(mf)
        sel = probe_selector(grid, cfg.probe, extra_valid=jf.valid)
        assert sel.sum() > 50
        good = 0
        for i, j in np.argwhere(sel):
            J = jf.J[i, j]
            l1, l2 = eigs2(J)
            tr = abs(J[0, 0] + J[1, 1])
            real = max(abs(l1.imag), abs(l2.imag)) <= 1e-6 * (1 + tr)
            if real and l1.real > 0 and l2.real > 0:
                good += 1
        frac = good / sel.sum()
        assert frac >= 0.99, f"only {frac:.3%} of nodes real-positive"


def test_criterion_07_smooth_sweep_stability():
    """Smooth instance, eps sweep {0.4, 0.2, 0.1, 0.05}: max_W varies by
    < 50% across the sweep; the per-node trace identities
    W = lam1 + lam2 = T^nu_nu + T^xi_xi hold within 1e-9."""
    with Budget(240.0):
        cfg = smooth_config(eps_list=(0.4, 0.2, 0.1, 0.05))
        reports = eps_sweep(cfg, cfg.eps_list, cfg.probe)
        assert all(r.error is None for r in reports)
        max_Ws = np.array([r.max_W for r in reports])
        variation = (max_Ws.max() - max_Ws.min()) / max_Ws.min()
        assert variation < 0.50, f"max_W varies by {variation:.2%}: {max_Ws}"

        # per-node identities on one sweep member
        _, grid, plan, duals = _solve_smooth(0.2)
        mf = barycentric_map(plan, grid=grid)
        jf = jacobian_field(mf)
        phi = potential_field(duals, grid)
        du, ok = grad_masked(phi.values, grid)
        sel = probe_selector(grid, cfg.probe, extra_valid=jf.valid & ok)
        checked = 0
        for i, j in np.argwhere(sel):
            J = jf.J[i, j]
            if np.linalg.norm(du[i, j]) <= 1e-8:
                continue
            W = trace_W(J)
            l1, l2 = eigs2(J)
            tn, tx = ray_components(J, du[i, j])
            assert abs(W - (l1 + l2).real) <= 1e-9
            assert abs(W - (tn + tx)) <= 1e-9
            checked += 1
        assert checked > 50


def test_criterion_08_counterexample_lipschitz_growth():
    """Counterexample on the 65x129 triangle grid, same eps sweep: the
    adjacent-node Lipschitz modulus near (-2, 0) strictly increases and
    grows by >= 3x, while max_W stays within a 50% band.

    Known red: the 3x growth target is unreachable at this resolution.
    The exact map's own discrete modulus on this grid is ~2.98 (the h=1/16
    sampling cuts off the singularity), while the converged eps = 0.4
    solution already sits at ~1.58, capping the attainable ratio near 1.9;
    measured ratios are ~1.76.  Strict increase and the max_W band do hold.
    """
    with Budget(300.0):
        cfg = counterexample_config()
        reports = eps_sweep(cfg, cfg.eps_list, cfg.probe)
        assert all(r.error is None for r in reports), (
            f"solver errors: {[r.error for r in reports]}"
        )
        # sweep is ordered by decreasing eps
        lips = np.array([r.lipschitz_modulus for r in reports])
        max_Ws = np.array([r.max_W for r in reports])
        band = (max_Ws.max() - max_Ws.min()) / max_Ws.min()
        assert band < 0.50, f"max_W band {band:.2%}: {max_Ws}"
        assert np.all(np.diff(lips) > 0), (
            f"lipschitz modulus not strictly increasing: {lips}"
        )
        ratio = lips[-1] / lips[0]
        assert ratio >= 3.0, (
            f"lipschitz growth {ratio:.3f} < 3 (moduli {lips}); the 65x129 "
            f"grid caps the discrete modulus of the exact map at ~2.98 while "
            f"the converged eps=0.4 baseline is ~1.58, so the 3x target is "
            f"structurally out of reach at this resolution"
        )


def test_criterion_09_transport_density():
    """(a) Beckmann objective equals the exact-LP value to 1e-6 on 1-D
    axis-aligned instances; (b) MK residuals (div, gradient, slack) of the
    flow density against the analytic potential are <= 0.05 on the
    counterexample at 129x129; (c) ray_density vanishes at ray endpoints to
    1e-8; (d) ray_density matches density_from_flow within 10% relative L1.

    Residuals are quoted in the unit-total-mass density units that
    mk_residual natively uses (the physical f = 1 corresponds to 1/16).

    Known red: (b) and (d) fail for the 4-neighbor flow density.  The grid
    flow is metrically anisotropic (axis-path length inflates Euclidean
    lengths by up to sqrt(2)) and partially filamentary, so its sigma
    deviates from the ray-formula density by ~45% in L1 and its divergence
    residual is ~0.40.  The ray-formula density itself satisfies the same
    MK system to (0.009, 1e-12, 0.002), which this test also asserts as
    the control.
    """
    with Budget(180.0):
        # (a) aligned 1-D instances (mass varies along x only, so all
        # transport is horizontal and the grid metric is Euclidean)
        rng = np.random.default_rng(3)
        for n in (15, 40):
            grid = build_grid(n, 3, (0, 1, 0, 0.1), lambda x, y: np.ones_like(
                np.asarray(x), dtype=bool))
            w1 = np.repeat(rng.uniform(0.2, 1.0, n), 3)
            w2 = np.repeat(rng.uniform(0.2, 1.0, n), 3)
            fm = DiscreteMeasure(grid.masked_nodes(), w1 / w1.sum())
            gm = DiscreteMeasure(grid.masked_nodes(), w2 / w2.sum())
            flow = beckmann_flow(fm, gm, grid)
            plan, _ = solve_exact(fm, gm, 0.0)
            assert abs(flow.objective - plan.objective) <= 1e-6 * max(
                1.0, plan.objective
            ), f"beckmann {flow.objective} vs LP {plan.objective}"

        # (c) ray density endpoint decay
        for a in np.linspace(0.05, 1.0, 20):
            assert ray_density(a, 0.0) <= 1e-8
            assert ray_density(a, 3.0 + a) <= 1e-8, (
                f"ray density at top endpoint of a={a}: {ray_density(a, 3 + a)}"
            )

        # counterexample at 129x129
        cfg = counterexample_config(nx=129, ny=129)
        grid, src, tgt = build_instance(cfg)
        flow = beckmann_flow(src, tgt, grid)
        sigma_flow = density_from_flow(flow)

        # analytic potential and ray-formula density on the same nodes
        u_vals = np.zeros((grid.nx, grid.ny))
        sig_ray = np.zeros((grid.nx, grid.ny))
        for i, j in np.argwhere(grid.mask):
            x, y = grid.xs[i], grid.ys[j]
            u_vals[i, j] = potential_u(x, y)
            rc = ray_of_point(x, y)
            # the formula extends continuously to the a -> 0 axis limit
            a_eff = min(max(rc.a, 1e-12), 1.0)
            sig_ray[i, j] = ray_density(a_eff, min(rc.t, 3.0 + a_eff))
        u = ScalarField(grid=grid, values=u_vals)
        # ray density is in physical units (total mass 16); rescale to the
        # unit-mass convention of the discretized measures
        sig_ray_f = ScalarField(grid=grid, values=sig_ray / 16.0)

        # control: the ray-formula density satisfies the MK system
        div_r, grad_r, slack_r = mk_residual(sig_ray_f, u, src, tgt)
        assert div_r <= 0.05, f"ray-sigma div residual {div_r}"
        assert grad_r <= 0.05
        assert slack_r <= 0.05, f"ray-sigma slack residual {slack_r}"

        # (b) spec target: the flow density satisfies the same system
        div_f, grad_f, slack_f = mk_residual(sigma_flow, u, src, tgt)
        assert div_f <= 0.05, (
            f"flow-sigma div residual {div_f:.3f} > 0.05 (gradient "
            f"{grad_f:.2e}, slack {slack_f:.3f}); the 4-neighbor flow is "
            f"anisotropic and filamentary, while the ray-formula control "
            f"density passes at {div_r:.4f}"
        )
        assert grad_f <= 0.05
        assert slack_f <= 0.05, f"flow-sigma slack residual {slack_f:.3f} > 0.05"

        # (d) relative L1 agreement between the two densities
        m = grid.mask
        l1 = np.abs(sigma_flow.values[m] - sig_ray_f.values[m]).sum()
        rel = l1 / sig_ray_f.values[m].sum()
        assert rel <= 0.10, (
            f"flow vs ray density relative L1 {rel:.3f} > 0.10; grid-metric "
            f"inflation (up to sqrt(2)) plus filamentation of the 4-neighbor "
            f"flow accounts for the gap"
        )


def test_criterion_10_selftest_determinism(tmp_path):
    """Two selftest runs with the same seed produce byte-identical output."""
    out1, out2 = str(tmp_path / "r1"), str(tmp_path / "r2")
    assert cli_run(["selftest", "--out", out1, "--seed", "11"]) == 0
    assert cli_run(["selftest", "--out", out2, "--seed", "11"]) == 0
    b1 = open(os.path.join(out1, "selftest.json"), "rb").read()
    b2 = open(os.path.join(out2, "selftest.json"), "rb").read()
    assert b1 == b2
    checks = json.loads(b1)["checks"]
    assert all(c["passed"] for c in checks)
