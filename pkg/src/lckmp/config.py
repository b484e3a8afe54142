"""Scenario configuration files and the fit pipeline.

A scenario is one YAML mapping::

    name: letter_g_2d
    seed: 0
    demo_source: {generator: letter_g_2d, params: {}}   # or {file: demos.csv}
    gmm: {components: 8, max_iter: 200, tol: 1.0e-7}
    kernel: {k_h: 6.0, delta: 1.0e-4}
    lambda: 3.0
    grid: {t_start: 0.01, t_end: 2.0, n: 200}
    constraints:
      - {g: [1, 0, 0, 0], c: -4, t_range: all, type: ineq}
    desired_points:
      - {t: 0.5, mu: [4.2, 7.6], sigma: 1.0e-4}

``mu`` of length O takes its velocity half from the mixture regression at
``t``; ``sigma`` may be a scalar, a diagonal or a full matrix. Instead of
``demo_source``/``gmm``/``grid`` a small ``reference`` block with explicit
``times``, ``mu`` and ``sigma`` can be given, and ``features`` selects an
explicit random feature kernel.
"""

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ValidationError
from .fileio import load_yaml, mpc_problem_from_dict, row_from_dict
from .gmm import RefTrajectory, build_reference, fit_em, gmr_condition
from .kernel import KernelSpec, RandomFeatureMap
from .model import ConstraintRow, ConstraintSet, DesiredPoint, adapt, train
from .scenarios import GENERATORS, capture_gain, gen_scenario
from .trajdata import load_demos, uniform_grid

_KEYS = {
    "name", "seed", "demo_source", "gmm", "kernel", "lambda", "grid", "constraints",
    "capture_region", "desired_points", "reference", "features", "qp", "mpc",
}


def shipped_configs():
    """Names of the scenario files bundled with the package."""
    root = resources.files("lckmp") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_config(name_or_path):
    """A filesystem path, or the name of a bundled scenario."""
    path = Path(name_or_path)
    if path.exists() or path.suffix in (".yaml", ".yml") or path.parent != Path("."):
        return path
    bundled = resources.files("lckmp") / "configs" / f"{name_or_path}.yaml"
    if bundled.is_file():
        return Path(str(bundled))
    raise ValidationError(
        f"no config file {name_or_path!r} and no bundled scenario of that name "
        f"(bundled: {', '.join(shipped_configs())})", "ingest")


def _positive(value, name):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {value!r}", "ingest") from None
    if not np.isfinite(v) or v <= 0:
        raise ValidationError(f"{name} must be positive, got {value!r}", "ingest")
    return v


def _count(value, name, minimum=1):
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}, got {value!r}", "ingest")
    return int(value)


def _section(doc, key, allowed):
    sec = doc.get(key) or {}
    if not isinstance(sec, dict):
        raise ValidationError(f"'{key}' must be a mapping", "ingest")
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown keys in '{key}': {sorted(unknown)}", "ingest")
    return sec


def capture_rows(spec):
    """Two-sided rows ``lo <= p + b p_dot <= hi`` per period and axis.

    ``spec`` holds ``h_com``, ``g`` and ``periods``, a list of
    ``{t_range: [s, e], x: [lo, hi], y: [lo, hi]}``. Coordinates 0/1 are the
    positions and 2/3 the velocities of a planar ``eta``.
    """
    b = capture_gain(_positive(spec.get("h_com", 0.8898), "h_com"),
                     _positive(spec.get("g", 9.8), "g"))
    rows = []
    for period in spec.get("periods", []):
        t_range = tuple(period["t_range"])
        for axis in (0, 1):
            lo, hi = period["xy"[axis]]
            g = np.zeros(4)
            g[axis], g[axis + 2] = 1.0, b
            rows.append(ConstraintRow(g, lo, t_range))
            rows.append(ConstraintRow(-g, -hi, t_range))
    return rows


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario; see the module docstring for the file layout."""

    name: str
    seed: int
    lam: Optional[float]
    k_h: float
    delta: float
    rows: tuple
    desired_points: tuple
    demo_source: Optional[dict] = None
    gmm: Optional[dict] = None
    grid: Optional[dict] = None
    reference: Optional[dict] = None
    features: Optional[dict] = None
    qp_tol: float = 1e-8
    qp_max_iter: Optional[int] = None
    mpc: Optional[dict] = None
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, doc, base_dir=".", seed=None):
        unknown = set(doc) - _KEYS
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}", "ingest")
        seed = _count(doc.get("seed", 0) if seed is None else seed, "seed", minimum=0)
        kernel = _section(doc, "kernel", ("k_h", "delta"))
        qp = _section(doc, "qp", ("tol", "max_iter"))
        mpc_only = "mpc" in doc and not {"demo_source", "reference", "lambda"} & set(doc)
        if "lambda" not in doc and not mpc_only:
            raise ValidationError("config needs 'lambda'", "ingest")
        lam = None if mpc_only else _positive(doc["lambda"], "lambda")
        k_h = _positive(kernel.get("k_h", 1.0), "kernel.k_h")
        delta = _positive(kernel.get("delta", 1e-4), "kernel.delta")

        rows = [row_from_dict(r, "ingest") for r in doc.get("constraints") or []]
        if doc.get("capture_region"):
            rows += capture_rows(_section(doc, "capture_region", ("h_com", "g", "periods")))
        points = tuple(dict(p) for p in doc.get("desired_points") or [])
        for p in points:
            if set(p) - {"t", "mu", "sigma"} or not {"t", "mu"} <= set(p):
                raise ValidationError(f"desired point needs t, mu and optional sigma: {p}",
                                      "ingest")

        source = gmm = grid = reference = None
        if mpc_only:
            pass
        elif "reference" in doc:
            reference = _section(doc, "reference", ("times", "mu", "sigma"))
        else:
            source = _section(doc, "demo_source",
                              ("generator", "params", "file", "has_derivatives", "resample"))
            if ("generator" in source) == ("file" in source):
                raise ValidationError("demo_source needs exactly one of 'generator' or 'file'",
                                      "ingest")
            if "generator" in source and source["generator"] not in GENERATORS:
                raise ValidationError(
                    f"unknown generator {source['generator']!r}; choose from {sorted(GENERATORS)}",
                    "ingest")
            gmm = _section(doc, "gmm", ("components", "seed", "max_iter", "tol"))
            _count(gmm.get("components", 5), "gmm.components")
            grid = _section(doc, "grid", ("t_start", "t_end", "n"))
            if not {"t_start", "t_end", "n"} <= set(grid):
                raise ValidationError("grid needs t_start, t_end and n", "ingest")
            _count(grid["n"], "grid.n", minimum=2)
        features = _section(doc, "features", ("n_features", "seed")) if "features" in doc else None
        return cls(
            name=str(doc.get("name", "scenario")), seed=seed, lam=lam, k_h=k_h, delta=delta,
            rows=tuple(rows), desired_points=points, demo_source=source, gmm=gmm, grid=grid,
            reference=reference, features=features,
            qp_tol=_positive(qp.get("tol", 1e-8), "qp.tol"),
            qp_max_iter=None if qp.get("max_iter") is None else _count(qp["max_iter"],
                                                                      "qp.max_iter"),
            mpc=doc.get("mpc"), base_dir=Path(base_dir),
        )

    @classmethod
    def load(cls, name_or_path, seed=None):
        path = resolve_config(name_or_path)
        return cls.from_dict(load_yaml(path), path.parent, seed)

    def feature_map(self):
        if self.features is None:
            return None
        return RandomFeatureMap(_count(self.features.get("n_features", 20), "n_features"),
                                self.k_h, self.features.get("seed", 0))

    def kernel_spec(self, output_dim):
        fmap = self.feature_map()
        if fmap is not None:
            return fmap.spec(self.delta, output_dim)
        return KernelSpec(self.k_h, self.delta, output_dim)

    def mpc_problem(self):
        if self.mpc is None:
            raise ValidationError(f"config {self.name!r} has no 'mpc' section", "mpc")
        return mpc_problem_from_dict(self.mpc)

    def demos(self):
        src = self.demo_source
        if self.lam is None:
            raise ValidationError(f"config {self.name!r} only describes an MPC problem",
                                  "ingest")
        if src is None:
            raise ValidationError("config has an explicit reference and no demonstrations",
                                  "ingest")
        if "generator" in src:
            return gen_scenario(src["generator"], src.get("params"), self.seed)
        path = Path(src["file"])
        if not path.is_absolute():
            path = self.base_dir / path
        return load_demos(path, bool(src.get("has_derivatives", False)), src.get("resample"))


@dataclass(frozen=True, eq=False)
class PipelineResult:
    config: ScenarioConfig
    demos: object
    gmm: object
    reference: RefTrajectory
    adapted: RefTrajectory
    constraints: ConstraintSet
    model: object


def desired_points(config, gmm_model, output_dim, extra=()):
    """Turn desired-point entries into :class:`DesiredPoint` objects."""
    out = []
    dim = 2 * output_dim
    for p in list(config.desired_points) + list(extra):
        t = float(p["t"])
        mu = np.asarray(p["mu"], dtype=float).reshape(-1)
        if mu.size == output_dim:
            if gmm_model is None:
                raise ValidationError("a position-only desired point needs a mixture model "
                                      "for its velocity", "assemble")
            mu = np.concatenate([mu, gmr_condition(gmm_model, t)[0][output_dim:]])
        elif mu.size != dim:
            raise ValidationError(f"desired mu must have {output_dim} or {dim} entries, "
                                  f"got {mu.size}", "assemble")
        sigma = np.asarray(p.get("sigma", 1e-6), dtype=float)
        if sigma.ndim == 0:
            sigma = float(sigma) * np.eye(dim)
        elif sigma.ndim == 1:
            sigma = np.diag(sigma)
        out.append(DesiredPoint(t, mu, sigma))
    return out


def build_reference_for(config):
    """Demonstrations, mixture and reference trajectory (before adaptation)."""
    if config.reference is not None:
        r = config.reference
        mu = np.asarray(r["mu"], dtype=float)
        sigma = np.asarray(r.get("sigma", 1.0), dtype=float)
        if sigma.ndim == 0:
            sigma = np.broadcast_to(float(sigma) * np.eye(mu.shape[1]), mu.shape + mu.shape[1:])
        return None, None, RefTrajectory(r["times"], mu, sigma)
    demos = config.demos()
    g = config.gmm
    gmm_model = fit_em(demos, g.get("components", 5), g.get("seed", config.seed),
                       g.get("max_iter", 200), g.get("tol", 1e-7))
    grid = config.grid
    ref = build_reference(gmm_model, uniform_grid(grid["t_start"], grid["t_end"], grid["n"]))
    return demos, gmm_model, ref


def run_pipeline(config, extra_points=(), constrained=True):
    """Generate or load demos, fit the mixture, build and adapt the reference, train.

    ``constrained=False`` drops every constraint row, which gives the
    plain kernelized fit of the same (adapted) reference.
    """
    if config.lam is None:
        raise ValidationError(f"config {config.name!r} only describes an MPC problem", "ingest")
    demos, gmm_model, ref = build_reference_for(config)
    points = desired_points(config, gmm_model, ref.output_dim, extra_points)
    adapted = adapt(ref, points)
    rows = config.rows if constrained else ()
    cons = ConstraintSet.from_rows(adapted.times, rows, adapted.output_dim)
    model = train(config.kernel_spec(adapted.output_dim), config.lam, adapted, cons,
                  config.qp_tol, config.qp_max_iter, rows)
    return PipelineResult(config, demos, gmm_model, ref, adapted, cons, model)
