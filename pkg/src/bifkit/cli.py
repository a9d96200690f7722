"""Declarative run driver and the ``bifkit`` command line.

A run specification is a JSON document validated against a strict schema.
Running it builds the model and problem, continues the branch in both
directions and writes an archive directory::

    <root>/<id>/branch.json      points, monitor columns, events
    <root>/<id>/sol_<LABEL>.json unknown vector, tangent and problem state
    <root>/<id>/runspec.json     the validated specification
    <root>/<id>/table.txt        the rendered screen table
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from . import coll, eqbif, pobif, sym
from .contin import Branch, ContinuationSettings, Monitor, Point, Regularized, continue_branch
from .errors import ArchiveError, BifkitError, SchemaError
from .model import get_model

log = logging.getLogger(__name__)

PROBLEMS = ("ep", "sn", "hopf", "dh", "po", "po_sn", "po_pd", "po_tr", "po_fixT", "eqv_hopf", "symbreak")

# number of free parameters each problem type needs for a one-dimensional branch
_N_FREE = {"ep": 1, "sn": 2, "hopf": 2, "dh": 3, "po": 1, "po_sn": 2, "po_pd": 2, "po_tr": 2,
           "po_fixT": 2, "eqv_hopf": 2, "symbreak": 2}

_NUM = {"type": "number"}
_NUM_OR_NULL = {"type": ["number", "null"]}

RUNSPEC_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "bifkit run specification",
    "type": "object",
    "additionalProperties": False,
    "required": ["id", "model", "problem", "start", "free"],
    "properties": {
        "id": {"type": "string", "pattern": r"^[A-Za-z0-9_.\-]+$"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"type": "string"},
                "params": {"type": "object", "additionalProperties": _NUM},
                "display": {
                    "type": "object",
                    "additionalProperties": {
                        "type": "object", "additionalProperties": False,
                        "required": ["label", "scale"],
                        "properties": {"label": {"type": "string"}, "scale": _NUM},
                    },
                },
            },
        },
        "problem": {"enum": list(PROBLEMS)},
        "start": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "x": {"type": "array", "items": _NUM, "minItems": 1},
                "from_hopf": {"type": "string", "pattern": r"^[^/]+/[^/]+$"},
                "restart": {"type": "string", "pattern": r"^[^/]+/[^/]+$"},
                "radius": {"type": "number", "exclusiveMinimum": 0},
            },
            "minProperties": 1,
        },
        "free": {"type": "array", "items": {"type": "string"}},
        "events": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "uz": {"type": "object", "additionalProperties": {"type": "array", "items": _NUM}},
                "ncs_threshold": _NUM,
            },
        },
        "settings": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "h0": _NUM, "h_min": _NUM, "h_max": _NUM, "tol": _NUM, "max_iter": {"type": "integer"},
                "max_steps": {"oneOf": [{"type": "integer"},
                                        {"type": "array", "items": {"type": "integer"}, "minItems": 2,
                                         "maxItems": 2}]},
                "bounds": {"type": "object", "additionalProperties": {
                    "type": "array", "items": _NUM_OR_NULL, "minItems": 2, "maxItems": 2}},
                "event_tol": _NUM, "discrete_tol": _NUM, "max_angle": _NUM,
                "label_every": {"type": "integer", "minimum": 0}, "h_grow": _NUM,
                "fast_iter": {"type": "integer"}, "bp": {"type": "boolean"}, "fp": {"type": "boolean"},
                "close_loops": {"type": "boolean"},
            },
        },
        "options": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mesh_intervals": {"type": "integer", "minimum": 1},
                "n_deg": {"type": "integer", "minimum": 1, "maximum": 10},
                "adapt": {"type": "boolean"},
                "err_tol": _NUM,
                "L_range": {"type": "array", "items": {"type": "integer", "minimum": 5, "maximum": 400},
                            "minItems": 2, "maxItems": 2},
                "stability": {"type": "boolean"},
                "amp_index": {"type": "integer", "minimum": 0},
                "T_fixed": {"type": "number", "exclusiveMinimum": 0},
                "sample_times": {"type": "array", "items": _NUM},
                "components": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "amp_min": _NUM,
                "hopf_amp": _NUM,
            },
        },
        "symmetry": {"type": "string"},
        "watch": {"type": "array", "items": {"type": "string"}},
        "direction": {"enum": [1, -1]},
        "columns": {"type": "array", "items": {"type": "string"}},
    },
}


# ---------------------------------------------------------------------------
# JSON helpers

def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return {"__complex__": [_to_jsonable(obj.real), _to_jsonable(obj.imag)]}
        return {"__array__": [_float_or_none(v) for v in obj.ravel().tolist()], "shape": list(obj.shape)}
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _float_or_none(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _float_or_none(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            data = np.array([np.nan if v is None else v for v in obj["__array__"]], dtype=float)
            return data.reshape(obj["shape"])
        if "__complex__" in obj:
            re, im = obj["__complex__"]
            return _from_jsonable(re) + 1j * _from_jsonable(im)
        return {k: _from_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_from_jsonable(v) for v in obj]
    return obj


def _dump(obj) -> str:
    return json.dumps(_to_jsonable(obj), indent=1, sort_keys=True, allow_nan=False)


# ---------------------------------------------------------------------------
# specification handling

def default_root() -> Path:
    return Path(os.environ.get("BIFKIT_RUNS", "runs"))


def validate_spec(spec: dict) -> dict:
    """Schema and consistency checks; returns a deep copy. Raises :class:`SchemaError`."""
    try:
        jsonschema.validate(spec, RUNSPEC_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"invalid run specification at {where}: {exc.message}") from None
    spec = copy.deepcopy(spec)
    start = spec["start"]
    kinds = [k for k in ("x", "from_hopf", "restart") if k in start]
    if len(kinds) != 1:
        raise SchemaError("start needs exactly one of x, from_hopf, restart")
    prob = spec["problem"]
    params = [f for f in spec["free"] if "=" not in f]
    pins = [f for f in spec["free"] if "=" in f]
    if pins and prob != "ep":
        raise SchemaError("state pins are only supported for equilibrium runs")
    need = _N_FREE[prob] + len(pins)
    if len(params) != need:
        raise SchemaError(f"dimensional deficit would be {len(params) - need + 1}, not 1: problem {prob!r} "
                          f"with {len(pins)} state pin(s) needs {need} free parameter(s), got {len(params)}")
    if prob in ("eqv_hopf", "symbreak") and "symmetry" not in spec:
        raise SchemaError(f"problem {prob!r} requires a symmetry")
    return spec


def _settings(spec) -> ContinuationSettings:
    s = dict(spec.get("settings", {}))
    if "bounds" in s:
        s["bounds"] = {k: tuple(v) for k, v in s["bounds"].items()}
    if "max_steps" in s and isinstance(s["max_steps"], list):
        s["max_steps"] = tuple(s["max_steps"])
    try:
        return ContinuationSettings(**s)
    except ValueError as exc:
        raise SchemaError(str(exc)) from None


def _split_free(free):
    params, pins = [], {}
    for f in free:
        if "=" in f:
            k, v = f.split("=", 1)
            pins[k.strip()] = float(v)
        else:
            params.append(f.strip())
    return params, pins


def _display(spec):
    return {k: (v["label"], float(v["scale"])) for k, v in spec["model"].get("display", {}).items()}


def _param_vector(field_, spec, base=None):
    """Parameter vector from the spec; on restarts free parameters keep their stored values."""
    p = np.full(field_.n_p, np.nan) if base is None else np.array(base, dtype=float)
    keep = set(_split_free(spec["free"])[0]) if base is not None else set()
    for k, v in spec["model"].get("params", {}).items():
        if k in keep:
            continue
        try:
            p[field_.param_index(k)] = float(v)
        except (KeyError, ValueError):
            raise SchemaError(f"model {field_.name!r} has no parameter {k!r}") from None
    if np.any(np.isnan(p)):
        missing = [n for n, v in zip(field_.param_names, p) if np.isnan(v)]
        raise SchemaError(f"missing parameter values: {missing}")
    return p


def _symmetry(spec, field_):
    if "symmetry" not in spec:
        return None
    n_cells = field_.n_x // 2 if field_.name == "brusselator4" else field_.n_x
    cell_dim = field_.n_x // n_cells
    return sym.SpatioTemporalSymmetry.parse(spec["symmetry"], n_cells, cell_dim)


# ---------------------------------------------------------------------------
# archive

@dataclass
class RunArchive:
    run_id: str
    path: Path
    branch: Branch
    table: str
    spec: dict = field(default_factory=dict)
    problem: object = None


def _point_record(p: Point) -> dict:
    return {"label": p.label, "types": list(p.types), "s": p.s, "sweep": p.sweep, "h": p.h,
            "monitors": {k: v for k, v in p.monitors.items() if not k.startswith("_")}}


def _atomic_write_dir(target: Path, files: dict):
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        for name, text in files.items():
            (tmp / name).write_text(text)
        if target.exists():
            old = target.with_name(f".{target.name}.old")
            if old.exists():
                shutil.rmtree(old)
            os.replace(target, old)
            os.replace(tmp, target)
            shutil.rmtree(old)
        else:
            os.replace(tmp, target)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _columns_for(spec, problem) -> list:
    if spec.get("columns"):
        return list(spec["columns"])
    disp = _display(spec)
    params, _ = _split_free(spec["free"])
    cols = [disp[n][0] if n in disp else n for n in params]
    kind = spec["problem"]
    fld = problem.field
    if kind == "ep":
        cols = list(fld.state_names[:1]) + cols
    elif kind in ("hopf", "eqv_hopf"):
        cols += ["k"]
    elif kind == "dh":
        cols += ["k", "l1"]
    elif kind == "po_fixT":
        cols += ["amplitude", "det", "tr"]
    else:
        cols += ["po.period", "amplitude"]
    return cols


def print_table(branch: Branch, columns: Sequence[str]) -> str:
    """Fixed-width table of labelled points with ``x.xxxxe+xx`` entries."""
    width = 13
    head = f"{'LABEL':>6}  {'TYPE':<8}" + "".join(f"{c:>{width}}" for c in columns)
    lines = [head]
    last_sweep = None
    for p in branch.points:
        if p.label is None:
            continue
        if last_sweep is not None and p.sweep != last_sweep:
            lines.append("")
            lines.append(head)
        last_sweep = p.sweep
        cells = []
        for c in columns:
            v = p.monitors.get(c)
            cells.append(f"{'':>{width}}" if v is None else f"{_fmt(v):>{width}}")
        ty = "+".join(p.types)
        lines.append(f"{p.label:>6}  {ty:<8}" + "".join(cells))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    v = float(v)
    if not math.isfinite(v):
        return "nan"
    return f"{v:.4e}"


def export_csv(branch, path) -> Path:
    """One row per accepted point: arclength, sweep, label, type and every monitor."""
    if isinstance(branch, (str, Path)) and not str(branch).endswith(".csv"):
        branch = load_branch(branch)
    keys = sorted({k for p in branch.points for k in p.monitors if not k.startswith("_")})
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "sweep", "label", "type"] + keys)
        for p in branch.points:
            w.writerow([repr(float(p.s)), p.sweep, "" if p.label is None else p.label, "+".join(p.types)]
                       + [_csv_value(p.monitors.get(k)) for k in keys])
    return path


def _csv_value(v):
    if v is None:
        return ""
    v = float(v)
    return repr(v) if math.isfinite(v) else "nan"


def load_branch(run_dir) -> Branch:
    run_dir = Path(run_dir)
    try:
        data = json.loads((run_dir / "branch.json").read_text())
    except FileNotFoundError:
        raise ArchiveError(f"no archive at {run_dir}") from None
    br = Branch(problem=data.get("problem", ""), meta=data.get("meta", {}), warnings=data.get("warnings", []))
    for r in data["points"]:
        mon = {k: (np.nan if v is None else v) for k, v in r["monitors"].items()}
        br.points.append(Point(None, None, r["s"], r.get("h", 0.0), mon, r["types"], r["label"], r["sweep"]))
    return br


def _run_dir(run_id: str, root=None) -> Path:
    return Path(root or default_root()) / run_id


def restart_from_label(run_id: str, label, root=None) -> dict:
    """Stored record of a labelled point: ``u``, ``t``, problem state and the originating spec."""
    d = _run_dir(run_id, root)
    if not d.exists():
        raise ArchiveError(f"no archive for run {run_id!r}")
    ref = str(label)
    if not ref.isdigit():
        br = load_branch(d)
        try:
            ref = str(br.find(ref).label)
        except KeyError as exc:
            raise ArchiveError(f"run {run_id!r}: {exc.args[0]}") from None
    f = d / f"sol_{ref}.json"
    if not f.exists():
        raise ArchiveError(f"run {run_id!r} has no label {label!r}")
    rec = _from_jsonable(json.loads(f.read_text()))
    rec["u"] = np.asarray(rec["u"], dtype=float)
    rec["t"] = np.asarray(rec["t"], dtype=float)
    return rec


# ---------------------------------------------------------------------------
# problem construction

def _po_kwargs(spec, kind):
    o = spec.get("options", {})
    kw = {}
    for key in ("adapt", "err_tol", "stability", "amp_index", "amp_min", "hopf_amp"):
        if key in o:
            kw[key] = o[key]
    if "L_range" in o:
        kw["L_range"] = tuple(o["L_range"])
    ev = spec.get("events", {})
    if "ncs_threshold" in ev:
        kw["ncs_threshold"] = float(ev["ncs_threshold"])
    return kw


def _mesh_from_options(spec):
    o = spec.get("options", {})
    if "mesh_intervals" not in o:
        return None
    return coll.make_mesh(int(o["mesh_intervals"]), int(o.get("n_deg", 4)))


def _base_u(rec):
    """Strip slack variables of a regularized source problem."""
    st = rec.get("state") or {}
    if isinstance(st, dict) and "base" in st and "S" in st:
        m = int(rec.get("n_slack", 0))
        return rec["u"][: rec["u"].size - m], st["base"]
    return rec["u"], st


def _orbit_from_record(rec, field_):
    u, st = _base_u(rec)
    mesh = coll.Mesh.from_dict(st["mesh"])
    n_p = field_.n_p
    X = u[n_p + 1: n_p + 1 + mesh.n_base * field_.n_x].reshape(mesh.n_base, field_.n_x)
    return pobif.POSolution(mesh, X.copy(), float(u[n_p]), u[:n_p].copy(), field_)


def _point_xp(rec, field_):
    u, _ = _base_u(rec)
    n_p = field_.n_p
    return u[n_p: n_p + field_.n_x].copy(), u[:n_p].copy()


def _watch(problem, spec, field_):
    if not spec.get("watch"):
        return
    S = _symmetry(spec, field_) or sym.SpatioTemporalSymmetry.identity(1, field_.n_x)
    syms = [sym.SpatioTemporalSymmetry.parse(s, S.n_cells, S.cell_dim) for s in spec["watch"]]
    sym.watch_symmetries(problem, syms)


def build_problem(spec: dict, root=None):
    """Return ``(problem, u0, extra)`` for a validated spec."""
    field_ = get_model(spec["model"]["name"])
    kind = spec["problem"]
    start = spec["start"]
    params, pins = _split_free(spec["free"])
    for n in params:
        if n not in field_.param_names:
            raise SchemaError(f"model {field_.name!r} has no parameter {n!r}")
    display = _display(spec)
    S = _symmetry(spec, field_)
    rec = None
    src_ref = start.get("restart") or start.get("from_hopf")
    if src_ref:
        rid, lab = src_ref.split("/", 1)
        rec = restart_from_label(rid, lab, root)
        if rec["model"] != field_.name:
            raise ArchiveError(f"source run uses model {rec['model']!r}, not {field_.name!r}")
    src_kind = rec["problem"] if rec else None
    base_p = None
    if rec is not None:
        base_p = _base_u(rec)[0][: field_.n_p]
    p0 = _param_vector(field_, spec, base_p)
    hint = None

    def lift_error():
        return ArchiveError(f"cannot start a {kind!r} run from a {src_kind!r} point")

    if kind == "ep":
        prob = eqbif.ep_problem(field_, params, p0, pins or None, display)
        if rec is None:
            u0 = prob.initial_u(start["x"], p0)
        elif src_kind in ("ep", "sn", "hopf", "dh", "eqv_hopf"):
            x, _ = _point_xp(rec, field_)
            u0 = prob.initial_u(x, p0)
        else:
            raise lift_error()
    elif kind == "sn":
        prob = eqbif.sn_problem(field_, params, p0, display)
        if rec is not None and src_kind == "sn":
            u0 = rec["u"].copy()
        else:
            x = np.asarray(start["x"], float) if rec is None else _point_xp(rec, field_)[0]
            u0 = prob.initial_u(x, p0, eqbif.sn_init(field_, x, p0))
    elif kind in ("hopf", "dh"):
        make = eqbif.hopf_problem if kind == "hopf" else eqbif.dh_problem
        prob = make(field_, params, p0, display)
        if rec is not None and src_kind in ("hopf", "dh"):
            u0 = _base_u(rec)[0].copy()
            if src_kind == kind:
                prob.set_state(rec["state"])
            else:
                prob.set_xi(prob.split(u0)[3])
        else:
            x = np.asarray(start["x"], float) if rec is None else _point_xp(rec, field_)[0]
            hd = eqbif.hopf_eigendata(field_, x, p0)
            u0 = prob.initial_u(hd.x, p0, hd.omega, hd.v, hd.w)
    elif kind == "eqv_hopf":
        prob = sym.eqv_hopf_track_problem(field_, S, params, p0, display)
        if rec is not None and src_kind == "eqv_hopf" and "n_slack" in rec:
            prob.set_state(rec["state"])
            u0 = rec["u"].copy()
        else:
            x = np.asarray(start["x"], float) if rec is None else _point_xp(rec, field_)[0]
            u0 = sym.eqv_hopf_init(prob, x, p0)
    elif kind in ("po", "po_fixT", "po_sn", "po_pd", "po_tr", "symbreak"):
        kw = _po_kwargs(spec, kind)
        if rec is None and kind != "po":
            raise SchemaError(f"problem {kind!r} needs a restart start")
        if rec is None or src_kind in ("ep", "hopf", "dh", "eqv_hopf"):
            if kind != "po":
                raise lift_error()
            x = np.asarray(start["x"], float) if rec is None else _point_xp(rec, field_)[0]
            J = field_.dfdx(x, p0)
            if S is not None:
                ev = np.linalg.eigvals(J)
                omega = float(ev[np.argmin(np.abs(ev.real) + (ev.imag <= 0) * 1e9)].imag)
                v, w = sym.symmetric_hopf_eigvec(S, J, omega)
                hd = eqbif.HopfData(x, p0, omega, v, w)
            else:
                hd = eqbif.hopf_eigendata(field_, x, p0)
            mesh = _mesh_from_options(spec)
            prob, u0, sol = pobif.hopf_po_problem(field_, hd, params, start.get("radius"), mesh, p0,
                                                  display=display, **kw)
            hint = prob.hint
        else:
            sol = _orbit_from_record(rec, field_)
            sol.p = p0.copy()
            mesh = _mesh_from_options(spec)
            if mesh is not None and mesh != sol.mesh:
                sol = pobif.POSolution(mesh, coll.interpolate(sol.mesh, sol.X, mesh), sol.T, sol.p, field_)
            if kind == "po":
                prob = pobif.po_problem(field_, sol.mesh, sol, params, display=display, **kw)
                u0 = prob.initial_u(sol)
            elif kind == "po_fixT":
                T_fixed = float(spec.get("options", {}).get("T_fixed", sol.T))
                if T_fixed > sol.T * (1 + 1e-12):
                    sol = pobif.insert_dwell(sol, T_fixed)
                prob = pobif.fixed_period_problem(field_, sol.mesh, T_fixed, sol, params, display=display, **kw)
                u0 = prob.initial_u(sol)
            elif kind == "po_sn":
                prob = pobif.po_sn_problem(field_, sol.mesh, sol, params, display=display, **kw)
                u0 = pobif.po_sn_init(prob, sol)
            elif kind == "po_pd":
                prob = pobif.po_pd_problem(field_, sol.mesh, sol, params, display=display, **kw)
                u0 = pobif.po_pd_init(prob, sol)
            elif kind == "po_tr":
                prob = pobif.po_tr_problem(field_, sol.mesh, sol, params, display=display, **kw)
                u0 = pobif.po_tr_init(prob, sol)
            else:
                o = spec.get("options", {})
                prob = sym.symbreak_track_problem(field_, sol.mesh, S, sol, params, display=display,
                                                  sample_times=o.get("sample_times", (0.0,)),
                                                  components=o.get("components"), **kw)
                u0 = sym.symbreak_init(prob, sol)
            if src_kind == kind and rec["u"].size == prob.n_u:
                # same problem type: resume from the stored vector exactly
                prob.set_state(rec["state"])
                u0 = rec["u"].copy()
        if kind == "po" and S is not None:
            o = spec.get("options", {})
            prob = sym.append_symmetry_constraints(prob, S, o.get("sample_times", (0.0,)), o.get("components"))
            if isinstance(prob, Regularized):
                if u0.size != prob.n_u:
                    u0 = np.concatenate([u0, np.zeros(prob.m)])
                if hint is not None:
                    hint = np.concatenate([hint, np.zeros(prob.m)])
                    prob.base.hint = hint[: prob.base.n_u]
        _watch(prob, spec, field_)
    else:  # pragma: no cover - schema prevents this
        raise SchemaError(f"unknown problem {kind!r}")
    if prob.deficit != 1:
        raise SchemaError(f"dimensional deficit is {prob.deficit}, not 1")
    return prob, np.asarray(u0, dtype=float), {"field": field_}


# ---------------------------------------------------------------------------
# running

def run(spec: dict, root=None) -> RunArchive:
    """Validate, execute both sweeps and write the archive."""
    spec = validate_spec(spec)
    settings = _settings(spec)
    prob, u0, extra = build_problem(spec, root)
    monitors = [Monitor(col, "UZ", "uz", tuple(vals)) for col, vals in spec.get("events", {}).get("uz", {}).items()]
    br = continue_branch(prob, u0, settings, monitors=monitors, direction=spec.get("direction"))
    columns = _columns_for(spec, prob)
    table = print_table(br, columns)
    field_ = extra["field"]
    files = {
        "runspec.json": json.dumps(spec, indent=1, sort_keys=True),
        "table.txt": table,
        "branch.json": _dump({"problem": br.problem, "meta": br.meta, "warnings": br.warnings,
                              "columns": columns, "points": [_point_record(p) for p in br.points]}),
    }
    n_slack = prob.m if isinstance(prob, Regularized) else 0
    for p in br.points:
        if p.label is None:
            continue
        rec = {"label": p.label, "types": p.types, "problem": spec["problem"], "model": field_.name,
               "param_names": field_.param_names, "free": spec["free"], "u": p.u, "t": p.t,
               "state": p.state, "n_slack": n_slack, "monitors": _point_record(p)["monitors"]}
        files[f"sol_{p.label}.json"] = _dump(rec)
    path = _run_dir(spec["id"], root)
    _atomic_write_dir(path, files)
    return RunArchive(spec["id"], path, br, table, spec, prob)


def load_spec(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None


# ---------------------------------------------------------------------------
# command line

def _parser():
    ap = argparse.ArgumentParser(prog="bifkit", description="Continuation and bifurcation analysis runs.")
    ap.add_argument("--root", default=None, help="archive directory (default $BIFKIT_RUNS or ./runs)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="execute a run specification")
    r.add_argument("spec")
    t = sub.add_parser("table", help="print the table of an archived run")
    t.add_argument("run_id")
    e = sub.add_parser("export", help="export an archived branch")
    e.add_argument("run_id")
    e.add_argument("--csv", required=True, dest="csv_path")
    s = sub.add_parser("restart", help="start a new run from a labelled point")
    s.add_argument("ref", help="run-id/label")
    s.add_argument("--as", dest="as_problem", required=True, choices=PROBLEMS)
    s.add_argument("--spec", dest="overrides", required=True, help="JSON file with the remaining fields")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        if args.cmd == "run":
            arch = run(load_spec(args.spec), args.root)
            sys.stdout.write(arch.table)
        elif args.cmd == "table":
            sys.stdout.write((_run_dir(args.run_id, args.root) / "table.txt").read_text())
        elif args.cmd == "export":
            export_csv(load_branch(_run_dir(args.run_id, args.root)), args.csv_path)
        elif args.cmd == "restart":
            spec = load_spec(args.overrides)
            spec["problem"] = args.as_problem
            spec["start"] = {"restart": args.ref}
            arch = run(spec, args.root)
            sys.stdout.write(arch.table)
        return 0
    except (SchemaError, jsonschema.ValidationError) as exc:
        sys.stderr.write(f"bifkit: {exc}\n")
        return 1
    except (ArchiveError, FileNotFoundError) as exc:
        sys.stderr.write(f"bifkit: {exc}\n")
        return 2
    except Exception as exc:  # internal failure
        log.debug("internal failure", exc_info=True)
        sys.stderr.write(f"bifkit: internal failure: {exc}\n")
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
