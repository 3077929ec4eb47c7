"""Experiment configuration: parsing, validation, and instance building."""

import json
from dataclasses import dataclass, field

import numpy as np

from . import counterexample as cx
from .core import build_grid, discretize
from .errors import ConfigurationError

_MASKS = ("rect", "triangle_ABB'")
_DENSITIES = ("uniform", "counterexample_f", "counterexample_g", "gaussian_mixture")
_SOLVER_MODES = ("exact", "entropic")

_GRID_KEYS = {"nx", "ny", "bounds", "mask"}
_SOLVER_KEYS = {"mode", "lambda", "tol", "max_iter", "map"}
_MAP_MODES = ("barycentric", "potential")
_TOP_KEYS = {
    "grid",
    "source",
    "target",
    "eps_list",
    "solver",
    "probe",
    "output_dir",
    "seed",
}


def _reject_unknown(d, allowed, where):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; round-trips through JSON unchanged."""

    grid: dict
    source: dict
    target: dict
    eps_list: tuple
    solver: dict
    probe: tuple
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        _reject_unknown(self.grid, _GRID_KEYS, "grid")
        if self.grid.get("mask", "rect") not in _MASKS:
            raise ConfigurationError(f"mask must be one of {_MASKS}")
        if int(self.grid["nx"]) < 2 or int(self.grid["ny"]) < 2:
            raise ConfigurationError("grid counts must be >= 2")
        for spec in (self.source, self.target):
            kind = spec.get("kind")
            if kind not in _DENSITIES:
                raise ConfigurationError(f"density kind must be one of {_DENSITIES}")
            allowed = {"kind"}
            if kind == "gaussian_mixture":
                allowed |= {"centers", "widths", "weights"}
            _reject_unknown(spec, allowed, f"density {kind}")
        if not self.eps_list:
            raise ConfigurationError("eps_list must be nonempty")
        for e in self.eps_list:
            if not (0.0 < e <= 1.0):
                raise ConfigurationError("eps values must lie in (0, 1]")
        _reject_unknown(self.solver, _SOLVER_KEYS, "solver")
        if self.solver.get("mode", "entropic") not in _SOLVER_MODES:
            raise ConfigurationError(f"solver mode must be one of {_SOLVER_MODES}")
        if self.solver.get("map", "barycentric") not in _MAP_MODES:
            raise ConfigurationError(f"solver map must be one of {_MAP_MODES}")
        if len(self.probe) != 4:
            raise ConfigurationError("probe must be (xmin, xmax, ymin, ymax)")

    @classmethod
    def from_dict(cls, d):
        _reject_unknown(d, _TOP_KEYS, "config")
        return cls(
            grid=dict(d["grid"]),
            source=dict(d["source"]),
            target=dict(d["target"]),
            eps_list=tuple(float(e) for e in d["eps_list"]),
            solver=dict(d.get("solver", {})),
            probe=tuple(float(v) for v in d["probe"]),
            output_dir=str(d.get("output_dir", "out")),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self):
        return {
            "grid": dict(self.grid),
            "source": dict(self.source),
            "target": dict(self.target),
            "eps_list": list(self.eps_list),
            "solver": dict(self.solver),
            "probe": list(self.probe),
            "output_dir": self.output_dir,
            "seed": self.seed,
        }


def _mask_predicate(name):
    if name == "rect":
        return lambda x, y: np.ones_like(np.asarray(x), dtype=bool)
    # closed symmetric triangle ABB' with a small inclusion tolerance
    return lambda x, y: (np.asarray(x) <= 1 + cx.GEOM_TOL) & (
        np.abs(y) <= np.asarray(x) + 3 + cx.GEOM_TOL
    )


def _density_fn(spec):
    kind = spec["kind"]
    if kind == "uniform":
        return lambda x, y: np.ones_like(np.asarray(x, dtype=float))
    if kind == "counterexample_f":
        return lambda x, y: np.ones_like(np.asarray(x, dtype=float))
    if kind == "counterexample_g":
        eta_v = np.vectorize(cx.eta)
        return lambda x, y: 1.0 + 0.25 * np.asarray(x, dtype=float) + eta_v(
            np.abs(y)
        )
    if kind == "gaussian_mixture":
        centers = np.asarray(spec.get("centers", [[0.5, 0.5]]), dtype=float)
        widths = np.asarray(spec.get("widths", [0.2] * len(centers)), dtype=float)
        weights = np.asarray(spec.get("weights", [1.0] * len(centers)), dtype=float)

        def fn(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            out = np.zeros(np.broadcast(x, y).shape)
            for (cx_, cy_), w, wt in zip(centers, widths, weights):
                out += wt * np.exp(-((x - cx_) ** 2 + (y - cy_) ** 2) / (2 * w * w))
            return out

        return fn
    raise ConfigurationError(f"unknown density kind {kind!r}")


def build_instance(config):
    """Materialize (grid, source measure, target measure) from a config."""
    g = config.grid
    grid = build_grid(
        int(g["nx"]),
        int(g["ny"]),
        tuple(float(v) for v in g["bounds"]),
        _mask_predicate(g.get("mask", "rect")),
    )
    src = discretize(_density_fn(config.source), grid)
    tgt = discretize(_density_fn(config.target), grid)
    return grid, src, tgt


def counterexample_config(nx=65, ny=129, eps_list=(0.4, 0.2, 0.1, 0.05),
                          solver=None, probe=(-2.4, -1.6, -0.4, 0.4),
                          output_dir="out", seed=0):
    """Canonical counterexample instance on the symmetric triangle ABB'."""
    return ExperimentConfig(
        grid={"nx": nx, "ny": ny, "bounds": [-3.0, 1.0, -4.0, 4.0],
              "mask": "triangle_ABB'"},
        source={"kind": "counterexample_f"},
        target={"kind": "counterexample_g"},
        eps_list=tuple(eps_list),
        solver=solver if solver is not None else
            {"mode": "entropic", "lambda": 0.005, "tol": 1e-7,
             "max_iter": 200000, "map": "barycentric"},
        probe=tuple(probe),
        output_dir=output_dir,
        seed=seed,
    )


def smooth_config(nx=33, ny=33, eps_list=(0.2,), solver=None,
                  probe=(0.15, 0.85, 0.15, 0.85), output_dir="out", seed=0):
    """Smooth desk-scale instance: gaussian mixture to uniform on the unit square."""
    return ExperimentConfig(
        grid={"nx": nx, "ny": ny, "bounds": [0.0, 1.0, 0.0, 1.0], "mask": "rect"},
        source={
            "kind": "gaussian_mixture",
            "centers": [[0.3, 0.35], [0.7, 0.65]],
            "widths": [0.25, 0.3],
            "weights": [1.0, 0.8],
        },
        target={"kind": "uniform"},
        eps_list=tuple(eps_list),
        solver=solver if solver is not None else
            {"mode": "entropic", "lambda": 0.005, "tol": 1e-7,
             "max_iter": 200000, "map": "barycentric"},
        probe=tuple(probe),
        output_dir=output_dir,
        seed=seed,
    )
