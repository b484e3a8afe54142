"""Model files (JSON), trajectory CSVs and MPC problem files (YAML).

Floats are written with ``repr`` so every file round-trips bit-exactly and
two identical runs produce identical bytes.
"""

import csv
import json

import numpy as np
import yaml

from .exceptions import DataFileError, ValidationError
from .gmm import GmmModel, RefTrajectory
from .kernel import KernelSpec
from .model import ConstraintRow, ConstraintSet, restore
from .mpc import LinearSystem, MpcProblem

MODEL_FORMAT = "lckmp-model"
GMM_FORMAT = "lckmp-gmm"
FORMAT_VERSION = 1


def _open(path, mode, stage):
    try:
        return open(path, mode, newline="" if "w" in mode else None, encoding="utf-8")
    except OSError as exc:
        verb = "write" if "w" in mode else "read"
        raise DataFileError(f"cannot {verb} {path}: {exc.strerror or exc}", stage) from exc


def _fmt(v):
    return repr(float(v))


def _dump_json(doc, path, stage):
    with _open(path, "w", stage) as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")


def _load_json(path, kind, stage):
    with _open(path, "r", stage) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: malformed {kind} file ({exc})", stage) from exc
    if not isinstance(doc, dict) or doc.get("format") != kind:
        raise ValidationError(f"{path}: not a {kind} file", stage)
    if doc.get("version") != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported version {doc.get('version')!r}", stage)
    return doc


def row_to_dict(row):
    return {
        "g": list(row.g),
        "c": row.c,
        "t_range": "all" if row.t_range is None else list(row.t_range),
        "type": row.kind,
        "eps": row.eps,
    }


def row_from_dict(doc, stage="assemble"):
    """Build a :class:`ConstraintRow` from the config/model schema."""
    if not isinstance(doc, dict):
        raise ValidationError(f"constraint entry must be a mapping, got {doc!r}", stage)
    unknown = set(doc) - {"g", "c", "t_range", "type", "eps"}
    if unknown:
        raise ValidationError(f"unknown constraint keys {sorted(unknown)}", stage)
    if "g" not in doc or "c" not in doc:
        raise ValidationError("constraint entry needs 'g' and 'c'", stage)
    t_range = doc.get("t_range", "all")
    if t_range in ("all", None):
        t_range = None
    elif not (isinstance(t_range, (list, tuple)) and len(t_range) == 2):
        raise ValidationError(f"t_range must be [start, end] or 'all', got {t_range!r}", stage)
    return ConstraintRow(doc["g"], doc["c"], t_range, doc.get("type", "ineq"),
                         float(doc.get("eps", 0.0)))


# ---------------------------------------------------------------------------
# constrained model
# ---------------------------------------------------------------------------


def model_to_dict(model):
    if model.spec.function is not None:
        raise ValidationError("models with a custom kernel function cannot be exported",
                              "predict")
    ref = model.ref
    cons = model.constraints
    return {
        "format": MODEL_FORMAT,
        "version": FORMAT_VERSION,
        "kernel": {"k_h": model.spec.k_h, "delta": model.spec.delta,
                   "output_dim": model.spec.output_dim},
        "lambda": model.lam,
        "reference": {
            "times": ref.times.tolist(),
            "mu": ref.mu.tolist(),
            "sigma": ref.sigma.tolist(),
        },
        "constraints": {
            "g": cons.g.tolist(),
            "c": cons.c.tolist(),
            "active": cons.active.tolist(),
        },
        "rows": [row_to_dict(r) for r in model.rows],
        "alpha": model.alpha.tolist(),
        "dual_status": model.dual_status,
    }


def model_from_dict(doc):
    try:
        k = doc["kernel"]
        spec = KernelSpec(float(k["k_h"]), float(k["delta"]), int(k["output_dim"]))
        r = doc["reference"]
        ref = RefTrajectory(np.array(r["times"], float), np.array(r["mu"], float),
                            np.array(r["sigma"], float))
        c = doc["constraints"]
        n, dim = len(ref), 2 * spec.output_dim
        f = len(c["c"][0]) if n else 0
        cons = ConstraintSet(np.array(c["g"], float).reshape(n, f, dim),
                             np.array(c["c"], float).reshape(n, f),
                             np.array(c["active"], bool).reshape(n, f))
        rows = tuple(row_from_dict(d) for d in doc.get("rows", []))
        return restore(spec, float(doc["lambda"]), ref, cons, np.array(doc["alpha"], float),
                       rows, doc.get("dual_status", "optimal"))
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"model file is missing or mistypes field {exc}", "predict") from exc


def save_model(model, path):
    _dump_json(model_to_dict(model), path, "predict")


def load_model(path):
    return model_from_dict(_load_json(path, MODEL_FORMAT, "predict"))


# ---------------------------------------------------------------------------
# Mixture model
# ---------------------------------------------------------------------------


def save_gmm(model, path):
    doc = {
        "format": GMM_FORMAT,
        "version": FORMAT_VERSION,
        "C": model.n_components,
        "O": model.output_dim,
        "components": [
            {"pi": float(p), "mu": m.tolist(), "sigma": s.reshape(-1).tolist()}
            for p, m, s in zip(model.priors, model.means, model.covariances)
        ],
        "log_likelihoods": list(model.log_likelihoods),
    }
    _dump_json(doc, path, "gmm")


def load_gmm(path):
    doc = _load_json(path, GMM_FORMAT, "gmm")
    try:
        dim = 1 + 2 * int(doc["O"])
        comps = doc["components"]
        if len(comps) != int(doc["C"]):
            raise ValidationError(f"{path}: C={doc['C']} but {len(comps)} components", "gmm")
        return GmmModel(
            np.array([c["pi"] for c in comps], float),
            np.array([c["mu"] for c in comps], float),
            np.array([np.reshape(c["sigma"], (dim, dim)) for c in comps], float),
            tuple(doc.get("log_likelihoods", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"{path}: malformed mixture file ({exc})", "gmm") from exc


# ---------------------------------------------------------------------------
# CSV outputs
# ---------------------------------------------------------------------------


def _write_csv(path, header, rows, stage):
    with _open(path, "w", stage) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def write_reference_csv(ref, path):
    """Columns ``t, mu1..mu2O, s1..s(2O)^2`` with each covariance row-major."""
    dim = ref.mu.shape[1]
    header = ["t"] + [f"mu{i + 1}" for i in range(dim)] + [f"s{i + 1}" for i in range(dim * dim)]
    rows = ([_fmt(t)] + [_fmt(v) for v in mu] + [_fmt(v) for v in s.reshape(-1)]
            for t, mu, s in zip(ref.times, ref.mu, ref.sigma))
    _write_csv(path, header, rows, "gmm")


def read_reference_csv(path):
    with _open(path, "r", "gmm") as fh:
        data = list(csv.reader(fh))
    if not data:
        raise ValidationError(f"{path}: empty reference file", "gmm")
    try:
        arr = np.array(data[1:], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric entry ({exc})", "gmm") from exc
    dim = (-1 + int(np.sqrt(1 + 4 * (len(data[0]) - 1)))) // 2
    if 1 + dim + dim * dim != len(data[0]):
        raise ValidationError(f"{path}: {len(data[0])} columns do not form t, mu, sigma", "gmm")
    arr = arr.reshape(-1, len(data[0]))
    return RefTrajectory(arr[:, 0], arr[:, 1:1 + dim], arr[:, 1 + dim:].reshape(-1, dim, dim))


def write_trajectory_csv(times, eta, path, output_dim):
    """Columns ``t, x1..xO, xd1..xdO``; an empty time list gives a header-only file."""
    header = (["t"] + [f"x{i + 1}" for i in range(output_dim)]
              + [f"xd{i + 1}" for i in range(output_dim)])
    eta = np.asarray(eta, dtype=float).reshape(-1, 2 * output_dim)
    rows = ([_fmt(t)] + [_fmt(v) for v in e] for t, e in zip(np.asarray(times, float), eta))
    _write_csv(path, header, rows, "predict")


def write_mpc_csv(times, eta, u, path):
    """Columns ``t, eta1..eta_n, u1..u_m``; the final state has no control and empty u cells."""
    eta = np.asarray(eta, dtype=float)
    u = np.asarray(u, dtype=float).reshape(eta.shape[0] - 1, -1)
    n, m = eta.shape[1], u.shape[1]
    header = ["t"] + [f"eta{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]

    def rows():
        for k, t in enumerate(times):
            tail = [_fmt(v) for v in u[k]] if k < u.shape[0] else [""] * m
            yield [_fmt(t)] + [_fmt(v) for v in eta[k]] + tail

    _write_csv(path, header, rows(), "mpc")


# ---------------------------------------------------------------------------
# MPC problem files
# ---------------------------------------------------------------------------


def mpc_problem_from_dict(doc):
    """MpcProblem from a mapping with keys ``system {a, b}``, ``horizon``, ``eta1``,
    ``eta_hat``, ``q``, ``r`` and optional ``bounds {eta_min, eta_max, u_min, u_max}``.
    Matrices are nested row lists; ``null`` bound entries mean unbounded.
    """
    try:
        system = LinearSystem(doc["system"]["a"], doc["system"]["b"])
        bounds = doc.get("bounds") or {}
        unknown = set(bounds) - {"eta_min", "eta_max", "u_min", "u_max"}
        if unknown:
            raise ValidationError(f"unknown bound keys {sorted(unknown)}", "mpc")

        def bound(key, fill):
            val = bounds.get(key)
            if val is None:
                return None
            return [fill if v is None else float(v) for v in val]

        return MpcProblem(system, doc["horizon"], doc["eta1"], doc["eta_hat"], doc["q"], doc["r"],
                          bound("eta_min", -np.inf), bound("eta_max", np.inf),
                          bound("u_min", -np.inf), bound("u_max", np.inf))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"MPC problem is missing or mistypes field {exc}", "mpc") from exc


def load_yaml(path, stage="ingest"):
    with _open(path, "r", stage) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ValidationError(f"{path}: malformed YAML ({exc})", stage) from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: expected a mapping at the top level", stage)
    return doc
