"""YAML scenario files.

A scenario names a mesh source, an optional hybrid split, an initial
condition, a parameter schedule and run settings. Relative file paths are
resolved against the directory of the scenario file. Schedule intervals may
omit fields; omitted values repeat those of the previous interval.
"""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .mesh import Mesh, generate_rectangle_mesh, read_triangle_files
from .scenarios import (
    DEFAULT_FRACTIONS,
    DEFAULT_POPULATION,
    RIDGE_VARIANCE,
    SCHEDULE_ALLEE_A,
    SCHEDULE_ALLEE_N0,
    SCHEDULE_ROWS,
    SCHEDULE_STARTS,
    gaussian_ridge_density,
    lombardy_like_mesh,
    scaled_diffusion,
)
from .seir import EpidemicParams, ParameterError, ParamSchedule, SeirState

RATE_KEYS = ("sigma", "phi_e", "phi_i", "beta")


class ScenarioError(ValueError):
    """Invalid scenario; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


def _get(d, key, path, kind=None, default=...):
    if not isinstance(d, dict):
        raise ScenarioError(path, "expected a mapping")
    if key not in d:
        if default is ...:
            raise ScenarioError(f"{path}.{key}" if path else key, "missing required key")
        return default
    v = d[key]
    if kind is float:
        try:
            return float(v)
        except (TypeError, ValueError):
            raise ScenarioError(f"{path}.{key}" if path else key, f"expected a number, got {v!r}") from None
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
            raise ScenarioError(f"{path}.{key}" if path else key, f"expected an integer, got {v!r}")
        return int(v)
    if kind is bool:
        if not isinstance(v, bool):
            raise ScenarioError(f"{path}.{key}" if path else key, f"expected true/false, got {v!r}")
    return v


def _check_keys(d, allowed, path):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ScenarioError(f"{path}.{extra[0]}" if path else extra[0], "unknown key")


def _exactly_one(d, options, path):
    present = [k for k in options if k in d]
    if len(present) != 1:
        raise ScenarioError(path, f"need exactly one of {list(options)}, got {present}")
    return present[0]


@dataclass
class Scenario:
    name: str
    mesh: dict
    initial: dict
    schedule: ParamSchedule
    t_end: float
    dt: float = 0.1
    record_every: int = 1
    snapshot_every: int = 0
    hybrid: dict | None = None
    fit: dict | None = None
    output_dir: str = "output"
    base_dir: Path = field(default=Path("."), compare=False)

    # resolution helpers

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def build_mesh(self) -> Mesh:
        kind = _exactly_one(self.mesh, ("rectangle", "files", "lombardy_like"), "mesh")
        spec = self.mesh[kind]
        if kind == "rectangle":
            return generate_rectangle_mesh(_get(spec, "width", "mesh.rectangle", float, 2.0),
                                           _get(spec, "height", "mesh.rectangle", float, 1.0),
                                           _get(spec, "h", "mesh.rectangle", float),
                                           spec.get("split_x"))
        if kind == "lombardy_like":
            return lombardy_like_mesh(_get(spec, "h", "mesh.lombardy_like", float, 0.1))
        return read_triangle_files(self.path(_get(spec, "prefix", "mesh.files")),
                                   degrees=bool(spec.get("degrees", False)))

    def build_initial(self, mesh: Mesh) -> SeirState:
        from .initfit import GaussianBasis, ProvinceData, build_initial_state, ingest_point_population
        from .io import read_points_csv, read_province_csv

        kind = _exactly_one(self.initial, ("constant", "provinces", "points"), "initial")
        spec = self.initial[kind]
        if kind == "constant":
            fr = tuple(float(v) for v in spec.get("fractions", DEFAULT_FRACTIONS))
            total = _get(spec, "total_population", "initial.constant", float, DEFAULT_POPULATION)
            if spec.get("density", "ridge") == "uniform":
                n = np.full(mesh.vertex_count, total / mesh.area)
            else:
                n = gaussian_ridge_density(mesh, total, _get(spec, "variance", "initial.constant", float,
                                                             RIDGE_VARIANCE))
            return SeirState.from_fractions(*fr, n)
        if kind == "provinces":
            pop, inf, rem = read_province_csv(self.path(_get(spec, "csv", "initial.provinces")))
            data = ProvinceData(pop, inf, rem, _get(spec, "sigma_e", "initial.provinces", float, 1.0))
            basis = GaussianBasis.at_centroids(mesh, _get(spec, "std_dev", "initial.provinces", float))
            return build_initial_state(mesh, basis, data).state
        pts, st = read_points_csv(self.path(_get(spec, "csv", "initial.points")))
        return ingest_point_population(pts, st, mesh, smooth=bool(spec.get("smooth", True)))

    def to_dict(self, relative_to=None) -> dict:
        """Plain mapping; file paths are rewritten relative to ``relative_to`` when given."""
        d = {"name": self.name, "output_dir": self.output_dir, "mesh": copy.deepcopy(self.mesh)}
        if self.hybrid is not None:
            d["hybrid"] = copy.deepcopy(self.hybrid)
        d["initial"] = copy.deepcopy(self.initial)
        d["schedule"] = schedule_to_dict(self.schedule)
        d["time"] = {"t_end": self.t_end, "dt": self.dt, "record_every": self.record_every,
                     "snapshot_every": self.snapshot_every}
        if self.fit is not None:
            d["fit"] = copy.deepcopy(self.fit)
        if relative_to is not None:
            d["output_dir"] = _rebase(self.path(self.output_dir), relative_to)
            for section, sub, key in PATH_KEYS:
                entry = d.get(section, {}).get(sub) if sub else d.get(section)
                if isinstance(entry, dict) and key in entry:
                    entry[key] = _rebase(self.path(entry[key]), relative_to)
        return d


def _rebase(target: Path, directory) -> str:
    """``target`` relative to ``directory``, or absolute when they only share the root."""
    target, directory = target.resolve(), Path(directory).resolve()
    if os.path.commonpath([target, directory]) == target.anchor:
        return str(target)
    return os.path.relpath(target, directory)


PATH_KEYS = (("mesh", "files", "prefix"), ("initial", "provinces", "csv"), ("initial", "points", "csv"),
             ("fit", None, "targets"))


def schedule_to_dict(schedule: ParamSchedule) -> dict:
    first = schedule.params[0]
    out = {"allee_A": first.allee_A, "allee_n0": first.allee_n0, "intervals": []}
    for start, p in zip(schedule.starts, schedule.params):
        if p.beta_i != p.beta_e:
            row = dict(start=float(start), sigma=p.sigma, phi_e=p.phi_e, phi_i=p.phi_i,
                       beta_i=p.beta_i, beta_e=p.beta_e, diffusion=p.diffusion)
        else:
            row = dict(start=float(start), sigma=p.sigma, phi_e=p.phi_e, phi_i=p.phi_i, beta=p.beta_i,
                       diffusion=p.diffusion)
        out["intervals"].append(row)
    return out


def parse_schedule(d) -> ParamSchedule:
    if d == "default" or (isinstance(d, dict) and d.get("preset") == "default"):
        d = {"allee_A": SCHEDULE_ALLEE_A, "allee_n0": SCHEDULE_ALLEE_N0,
             "intervals": [dict(start=s, **r) for s, r in zip(SCHEDULE_STARTS, SCHEDULE_ROWS)]}
    if not isinstance(d, dict):
        raise ScenarioError("schedule", "expected a mapping or 'default'")
    _check_keys(d, ("allee_A", "allee_n0", "intervals", "preset"), "schedule")
    A = _get(d, "allee_A", "schedule", float, 0.0)
    n0 = d.get("allee_n0")
    n0 = None if n0 is None else _get(d, "allee_n0", "schedule", float)
    rows = _get(d, "intervals", "schedule")
    if not isinstance(rows, list) or not rows:
        raise ScenarioError("schedule.intervals", "expected a non-empty list")
    starts, params = [], []
    prev: dict = {}
    allowed = ("start", "sigma", "phi_e", "phi_i", "beta", "beta_i", "beta_e", "D", "diffusion")
    for k, row in enumerate(rows):
        path = f"schedule.intervals[{k}]"
        if not isinstance(row, dict):
            raise ScenarioError(path, "expected a mapping")
        _check_keys(row, allowed, path)
        cur = dict(prev)
        for key in ("sigma", "phi_e", "phi_i"):
            if key in row:
                cur[key] = _get(row, key, path, float)
        if "beta" in row:
            cur["beta_i"] = cur["beta_e"] = _get(row, "beta", path, float)
        for key in ("beta_i", "beta_e"):
            if key in row:
                cur[key] = _get(row, key, path, float)
        if "D" in row and "diffusion" in row:
            raise ScenarioError(f"{path}.D", "give either D (degree^2/day x 100) or diffusion (km^2/day)")
        if "D" in row:
            cur["diffusion"] = scaled_diffusion(_get(row, "D", path, float))
        if "diffusion" in row:
            cur["diffusion"] = _get(row, "diffusion", path, float)
        for key in ("sigma", "phi_e", "phi_i", "beta_i", "beta_e", "diffusion"):
            if key not in cur:
                raise ScenarioError(f"{path}.{'beta' if key.startswith('beta') else key}",
                                    "missing in the first interval")
        try:
            params.append(EpidemicParams(cur["sigma"], cur["phi_e"], cur["phi_i"], cur["beta_i"], cur["beta_e"],
                                         cur["diffusion"], A, n0))
        except ParameterError as exc:
            raise ScenarioError(path, str(exc)) from None
        starts.append(_get(row, "start", path, float, 0.0 if k == 0 else ...))
        prev = cur
    try:
        return ParamSchedule(tuple(starts), tuple(params))
    except (ParameterError, ValueError) as exc:
        raise ScenarioError("schedule.intervals", str(exc)) from None


def parse_scenario(d: dict, base_dir=".") -> Scenario:
    if not isinstance(d, dict):
        raise ScenarioError("<root>", "expected a mapping")
    _check_keys(d, ("name", "output_dir", "mesh", "hybrid", "initial", "schedule", "time", "fit"), "")
    base_dir = Path(base_dir)
    mesh = _get(d, "mesh", "")
    if not isinstance(mesh, dict):
        raise ScenarioError("mesh", "expected a mapping")
    _exactly_one(mesh, ("rectangle", "files", "lombardy_like"), "mesh")
    _check_keys(mesh, ("rectangle", "files", "lombardy_like"), "mesh")
    if "files" in mesh:
        prefix = base_dir / _get(mesh["files"], "prefix", "mesh.files")
        for ext in (".node", ".ele"):
            if not Path(str(prefix) + ext).exists():
                raise ScenarioError("mesh.files.prefix", f"file not found: {prefix}{ext}")
    initial = _get(d, "initial", "")
    if not isinstance(initial, dict):
        raise ScenarioError("initial", "expected a mapping")
    kind = _exactly_one(initial, ("constant", "provinces", "points"), "initial")
    if kind in ("provinces", "points"):
        p = base_dir / _get(initial[kind], "csv", f"initial.{kind}")
        if not p.exists():
            raise ScenarioError(f"initial.{kind}.csv", f"file not found: {p}")
    hybrid = d.get("hybrid")
    if hybrid is not None:
        if not isinstance(hybrid, dict):
            raise ScenarioError("hybrid", "expected a mapping")
        _check_keys(hybrid, ("ode_labels", "penalty", "zero_bc"), "hybrid")
        labels = _get(hybrid, "ode_labels", "hybrid")
        if labels != "all" and (not isinstance(labels, list) or not labels
                                or not all(isinstance(v, int) and not isinstance(v, bool) for v in labels)):
            raise ScenarioError("hybrid.ode_labels", "expected a non-empty list of integer labels or 'all'")
        _get(hybrid, "penalty", "hybrid", float, 0.0)
        _get(hybrid, "zero_bc", "hybrid", bool, False)
    schedule = parse_schedule(_get(d, "schedule", ""))
    t = _get(d, "time", "")
    _check_keys(t, ("t_end", "dt", "record_every", "snapshot_every"), "time")
    t_end = _get(t, "t_end", "time", float)
    dt = _get(t, "dt", "time", float, 0.1)
    if t_end <= 0:
        raise ScenarioError("time.t_end", "must be positive")
    if dt <= 0:
        raise ScenarioError("time.dt", "must be positive")
    if schedule.starts[-1] >= t_end:
        raise ScenarioError("schedule.intervals", f"last interval starts at {schedule.starts[-1]} >= t_end {t_end}")
    fit = d.get("fit")
    if fit is not None:
        _check_keys(fit, ("targets", "vid_labels", "max_iterations", "residual_tolerance", "coordinates",
                          "segments", "model"), "fit")
        p = base_dir / _get(fit, "targets", "fit")
        if not p.exists():
            raise ScenarioError("fit.targets", f"file not found: {p}")
        coords = fit.get("coordinates", "whitened-log")
        if coords not in ("linear", "log", "whitened-log"):
            raise ScenarioError("fit.coordinates", f"expected linear, log or whitened-log, got {coords!r}")
        if fit.get("model", "pde") not in ("pde", "hybrid"):
            raise ScenarioError("fit.model", f"expected 'pde' or 'hybrid', got {fit.get('model')!r}")
        _get(fit, "max_iterations", "fit", int, 100)
        _get(fit, "residual_tolerance", "fit", float, 0.0)
    return Scenario(
        name=str(d.get("name", "scenario")), mesh=mesh, initial=initial, schedule=schedule, t_end=t_end, dt=dt,
        record_every=_get(t, "record_every", "time", int, 1), snapshot_every=_get(t, "snapshot_every", "time", int, 0),
        hybrid=hybrid, fit=fit, output_dir=str(d.get("output_dir", "output")), base_dir=base_dir)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        d = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ScenarioError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ScenarioError("<file>", f"YAML syntax error in {path}: {exc}") from None
    return parse_scenario(d, path.parent)


def dump_scenario(scn: Scenario, relative_to=None) -> str:
    return yaml.safe_dump(scn.to_dict(relative_to), sort_keys=False)


def save_scenario(scn: Scenario, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_scenario(scn, path.parent))
    return path
