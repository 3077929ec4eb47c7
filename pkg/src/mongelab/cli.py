"""Batch front-end: experiment orchestration and CSV/JSON artifact emission.

Subcommands: counterexample | solve | diagnose | sweep | density | selftest.
Exit codes: 0 success, 1 configuration error, 2 solver nonconvergence,
3 internal inconsistency (a failed invariant).
"""

import argparse
import json
import os
import sys

import numpy as np

from . import counterexample as cx
from . import diagnostics as dg
from . import transport_density as td
from .config import ExperimentConfig, build_instance, counterexample_config
from .core import cost_eps
from .errors import (
    ConfigurationError,
    InternalError,
    MongeLabError,
    NonconvergenceError,
)
from .ot_solver import (
    barycentric_map,
    map_from_potential,
    potential_field,
    solve_entropic,
    solve_exact,
)

MAP_SAMPLES_HEADER = "sigma,a,x_image,y_image,displacement"
FIELDS_HEADER = "x,y,W,eig1,eig2,Tnn,Txx"


def _fmt(x):
    return repr(float(x))


def parse_log_range(spec):
    """Parse 'start:end:logN' into N log-spaced values (inclusive ends)."""
    parts = spec.split(":")
    if len(parts) != 3 or not parts[2].startswith("log"):
        raise ConfigurationError(f"bad range spec {spec!r}; expected start:end:logN")
    start, end = float(parts[0]), float(parts[1])
    n = int(parts[2][3:])
    if start <= 0 or end <= 0 or n < 1:
        raise ConfigurationError("log range needs positive endpoints and count")
    return np.logspace(np.log10(start), np.log10(end), n)


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_counterexample(args):
    sigmas = parse_log_range(args.sigma_grid)
    rows = [MAP_SAMPLES_HEADER]
    pairs = []
    for s in sigmas:
        a = cx.ray_of_point(-2.0, s).a
        img = cx.t0_map(-2.0, s)
        disp = float(np.hypot(img[0] + 2.0, img[1] - s))
        rows.append(",".join(_fmt(v) for v in (s, a, img[0], img[1], disp)))
        pairs.append((float(s), disp))
    _write(os.path.join(args.out, "map_samples.csv"), "\n".join(rows) + "\n")
    exponent, constant, r2 = dg.holder_fit(pairs)
    _write_json(
        os.path.join(args.out, "holder_fit.json"),
        {"exponent": exponent, "constant": constant, "r2": r2,
         "n_samples": len(pairs)},
    )
    print(f"counterexample: {len(pairs)} sigma samples, "
          f"holder exponent {exponent:.4f} (r2={r2:.6f})")
    return 0


def _solve_instance(config, eps):
    grid, src, tgt = build_instance(config)
    solver = dict(config.solver)
    if solver.get("mode", "entropic") == "exact":
        plan, duals = solve_exact(src, tgt, eps)
    else:
        plan, duals = solve_entropic(
            src, tgt, eps,
            lam=solver.get("lambda", 0.01),
            tol=solver.get("tol", 1e-7),
            max_iter=solver.get("max_iter", 200000),
        )
    return grid, src, tgt, plan, duals


def cmd_solve(args):
    config = ExperimentConfig.from_json(args.config)
    out = args.out or config.output_dir
    summaries = []
    for eps in config.eps_list:
        grid, src, tgt, plan, duals = _solve_instance(config, eps)
        tag = _fmt(eps)
        rows = ["phi"] + [_fmt(v) for v in duals.phi]
        _write(os.path.join(out, f"duals_phi_eps{tag}.csv"), "\n".join(rows) + "\n")
        rows = ["psi"] + [_fmt(v) for v in duals.psi]
        _write(os.path.join(out, f"duals_psi_eps{tag}.csv"), "\n".join(rows) + "\n")
        summaries.append(
            {
                "eps": float(eps),
                "objective": plan.objective,
                "iterations": plan.iterations,
                "marginal_violation": plan.marginal_violation,
                "support_size": int(np.count_nonzero(plan.coupling > 1e-12)),
            }
        )
        print(f"solve: eps={eps} objective={plan.objective:.6e}")
    _write_json(os.path.join(out, "solve.json"), summaries)
    return 0


def cmd_diagnose(args):
    config = ExperimentConfig.from_json(args.config)
    out = args.out or config.output_dir
    eps = config.eps_list[0]
    grid, src, tgt, plan, duals = _solve_instance(config, eps)
    phi = potential_field(duals, grid)
    if config.solver.get("map", "barycentric") == "potential":
        mf = map_from_potential(phi, eps)
    else:
        mf = barycentric_map(plan, grid=grid)
    jf = dg.jacobian_field(mf)
    from .ot_solver import grad_masked

    du, _ = grad_masked(phi.values, grid)
    sel = dg.probe_selector(grid, config.probe, extra_valid=jf.valid)
    rows = [FIELDS_HEADER]
    for i, j in np.argwhere(sel):
        J = jf.J[i, j]
        l1, l2 = dg.eigs2(J)
        W = dg.trace_W(J)
        if np.linalg.norm(du[i, j]) > 1e-12:
            tnn, txx = dg.ray_components(J, du[i, j])
        else:
            tnn, txx = float("nan"), float("nan")
        rows.append(
            ",".join(
                _fmt(v)
                for v in (grid.xs[i], grid.ys[j], W, l1.real, l2.real, tnn, txx)
            )
        )
    _write(os.path.join(out, "fields.csv"), "\n".join(rows) + "\n")
    report = dg.diagnostics_from_map(mf, eps, config.probe)
    _write_json(os.path.join(out, "report.json"), report.to_dict())
    print(f"diagnose: eps={eps} max_W={report.max_W:.4f} "
          f"complex={report.complex_count}/{report.node_count}")
    return 0


def cmd_sweep(args):
    config = ExperimentConfig.from_json(args.config)
    out = args.out or config.output_dir
    reports = dg.eps_sweep(config, config.eps_list, config.probe)
    _write_json(os.path.join(out, "reports.json"), [r.to_dict() for r in reports])
    for r in reports:
        status = r.error or f"max_W={r.max_W:.4f} lip={r.lipschitz_modulus:.4f}"
        print(f"sweep: eps={r.eps} {status}")
    if any(r.error for r in reports):
        return 2
    return 0


def cmd_density(args):
    config = ExperimentConfig.from_json(args.config)
    out = args.out or config.output_dir
    grid, src, tgt = build_instance(config)
    flow = td.beckmann_flow(src, tgt, grid)
    sigma = td.density_from_flow(flow)
    rows = ["x,y,sigma"]
    for i, j in np.argwhere(grid.mask):
        rows.append(",".join(_fmt(v) for v in (grid.xs[i], grid.ys[j],
                                               sigma.values[i, j])))
    _write(os.path.join(out, "density.csv"), "\n".join(rows) + "\n")
    _write_json(os.path.join(out, "density.json"), {"objective": flow.objective})
    print(f"density: beckmann objective {flow.objective:.6e}")
    return 0


def _selftest_checks(seed):
    """Fast invariant suite; returns a list of (name, passed, detail)."""
    rng = np.random.default_rng(seed)
    checks = []

    def record(name, ok, detail=""):
        checks.append({"name": name, "passed": bool(ok), "detail": detail})

    # cost symmetry and the eps sandwich
    pts = rng.uniform(-2, 2, size=(40, 2, 2))
    ok = True
    for x, y in pts:
        for eps in (0.0, 0.3, 1.0):
            c1, c2 = cost_eps(x, y, eps), cost_eps(y, x, eps)
            d = float(np.linalg.norm(x - y))
            ok &= abs(c1 - c2) < 1e-14 and -1e-14 <= c1 - d <= eps + 1e-14
    record("cost_eps symmetry and bounds", ok)

    # eta: closed form vs ODE residual
    ys = np.linspace(0.05, 4.0, 30)
    res = []
    for y in ys:
        h = 1e-4
        dp = (-cx.eta(y + 2 * h) + 8 * cx.eta(y + h)
              - 8 * cx.eta(y - h) + cx.eta(y - 2 * h)) / (12 * h)
        p, q = cx.eta_ode_coeffs(cx.a_of_y(y))
        res.append(abs(dp + q / y * cx.eta(y) - y * p))
    record("eta ODE residual <= 1e-8", max(res) <= 1e-8, f"max={max(res):.2e}")

    # ray map endpoints and monotonicity on a few rays
    ok = True
    for a in (0.1, 0.5, 1.0):
        ok &= abs(cx.monotone_ray_map(a, 0.0)) <= 1e-12
        ok &= abs(cx.monotone_ray_map(a, 3 + a) - (3 + a)) <= 1e-8
        ts = np.linspace(0.1, 3 + a - 0.1, 12)
        imgs = [cx.monotone_ray_map(a, t) for t in ts]
        ok &= bool(np.all(np.diff(imgs) > 0))
    record("monotone_ray_map endpoints and monotonicity", ok)

    # potential 1-Lipschitz on random pairs
    ok = True
    worst = 0.0
    for _ in range(50):
        p = _random_triangle_point(rng)
        q = _random_triangle_point(rng)
        du = abs(cx.potential_u(*p) - cx.potential_u(*q))
        d = float(np.hypot(p[0] - q[0], p[1] - q[1]))
        worst = max(worst, du - d)
        ok &= du <= d + 1e-9
    record("potential 1-Lipschitz", ok, f"max excess={worst:.2e}")

    # exact solver against a brute-force permutation oracle
    from itertools import permutations

    from .core import DiscreteMeasure

    ok = True
    for _ in range(5):
        n = 5
        src = DiscreteMeasure(rng.uniform(0, 1, (n, 2)), np.full(n, 1.0 / n))
        tgt = DiscreteMeasure(rng.uniform(0, 1, (n, 2)), np.full(n, 1.0 / n))
        plan, duals = solve_exact(src, tgt, 0.1)
        C = cost_eps(src.points[:, None, :], tgt.points[None, :, :], 0.1)
        best = min(
            sum(C[i, p[i]] for i in range(n)) / n for p in permutations(range(n))
        )
        ok &= abs(plan.objective - best) <= 1e-9
    record("exact solver matches permutation oracle", ok)

    # beckmann flow on a 1-D aligned instance
    from .core import build_grid, discretize

    grid = build_grid(15, 3, (0.0, 1.0, 0.0, 0.1), lambda x, y: np.ones_like(
        np.asarray(x), dtype=bool))
    fm = discretize(lambda x, y: np.exp(-((x - 0.25) / 0.1) ** 2), grid)
    gm = discretize(lambda x, y: np.exp(-((x - 0.75) / 0.1) ** 2), grid)
    flow = td.beckmann_flow(fm, gm, grid)
    plan, _ = solve_exact(fm, gm, 0.0)
    rel = abs(flow.objective - plan.objective) / plan.objective
    record("beckmann matches exact W1 on aligned instance", rel <= 1e-6,
           f"rel={rel:.2e}")

    return checks


def _random_triangle_point(rng):
    while True:
        x = rng.uniform(-3, 1)
        y = rng.uniform(0, 4)
        if cx.in_triangle_upper(x, y, tol=-1e-9):
            return (x, y)


def cmd_selftest(args):
    checks = _selftest_checks(args.seed)
    _write_json(os.path.join(args.out, "selftest.json"),
                {"seed": args.seed, "checks": checks})
    n_fail = sum(1 for c in checks if not c["passed"])
    for c in checks:
        print(f"selftest: {'PASS' if c['passed'] else 'FAIL'} {c['name']}")
    if n_fail:
        print(f"selftest: {n_fail} of {len(checks)} checks failed")
        return 3
    print(f"selftest: all {len(checks)} checks passed")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="mongelab")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("counterexample", help="sample the blowup map near (-2,0)")
    p.add_argument("--sigma-grid", default="1e-2:1e-6:log5",
                   help="log-spaced sigma range start:end:logN")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_counterexample)

    for name, fn in (("solve", cmd_solve), ("diagnose", cmd_diagnose),
                     ("sweep", cmd_sweep), ("density", cmd_density)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.set_defaults(fn=fn)

    p = sub.add_parser("selftest", help="run the fast invariant suite")
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_selftest)
    return ap


def run(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NonconvergenceError as exc:
        print(f"solver nonconvergence: {exc}", file=sys.stderr)
        return 2
    except (InternalError, MongeLabError) as exc:
        print(f"internal inconsistency: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
