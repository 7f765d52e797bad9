"""Command-line entry point: ``hybridseir <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, io
from .hybrid import HybridModel, HybridState, OdeCompartment, hybrid_initial, run_hybrid
from .initfit import InitialFitError
from .lmfit import (
    FiniteDifferenceForward,
    FitProblem,
    HybridValues,
    PdeForwardModel,
    fit_segments,
    format_report,
    lm_iterate,
    merge_ode_columns,
)
from .mesh import MeshError, generate_rectangle_mesh, split_for_hybrid, write_triangle_files
from .scenario import Scenario, ScenarioError, dump_scenario, load_scenario, save_scenario
from .scenarios import lombardy_like_mesh
from .seir import ParameterError, ParamSchedule, run_full_pde

log = logging.getLogger("hybridseir")

OUTPUT_ENV = "HYBRIDSEIR_OUTPUT_DIR"


def _out_dir(args, scn: Scenario | None = None) -> Path:
    if getattr(args, "output_dir", None):
        d = Path(args.output_dir)
    else:
        default = scn.path(scn.output_dir) if scn is not None else Path("output")
        d = io.output_dir(default, OUTPUT_ENV)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _emit(path: Path):
    print(f"wrote {path}")


def cmd_gen_mesh(args) -> int:
    if args.lombardy_like:
        mesh = lombardy_like_mesh(args.h)
    else:
        w, h = args.rect
        mesh = generate_rectangle_mesh(w, h, args.h, args.split)
    out = _out_dir(args)
    prefix = out / args.name
    write_triangle_files(mesh, prefix)
    print(f"{mesh.vertex_count} vertices, {mesh.triangle_count} triangles, labels {mesh.labels}")
    _emit(Path(f"{prefix}.node"))
    _emit(Path(f"{prefix}.ele"))
    return 0


def _write_run(traj, mesh, out: Path, stem: str):
    _emit(io.write_trajectory_csv(traj, out / f"{stem}.csv"))
    if traj.snapshots and mesh is not None:
        paths = io.write_snapshots(mesh, traj.snapshots, out / f"{stem}_vtk")
        print(f"wrote {len(paths)} VTK snapshots to {out / f'{stem}_vtk'}")
    for w in traj.warnings:
        print(f"warning: {w}", file=sys.stderr)


def cmd_simulate_pde(args) -> int:
    scn = load_scenario(args.scenario)
    mesh = scn.build_mesh()
    state = scn.build_initial(mesh)
    traj = run_full_pde(mesh, state, scn.schedule, scn.t_end, scn.dt, scn.record_every, scn.snapshot_every)
    _write_run(traj, mesh, _out_dir(args, scn), f"{scn.name}_pde")
    return 0


def build_hybrid(scn: Scenario, mesh, state):
    """Model and initial state from the scenario's ``hybrid`` section."""
    if scn.hybrid is None:
        raise ScenarioError("hybrid", "section required for hybrid runs")
    labels = scn.hybrid["ode_labels"]
    penalty = float(scn.hybrid.get("penalty", 1e6))
    zero_bc = bool(scn.hybrid.get("zero_bc", False))
    if labels == "all" or sorted(labels) == mesh.labels:
        ode = OdeCompartment.from_fields(mesh, state, np.arange(mesh.triangle_count))
        return HybridModel(None), HybridState(state.time, None, ode), None
    try:
        split = split_for_hybrid(mesh, labels)
    except MeshError as exc:
        raise ScenarioError("hybrid.ode_labels", str(exc)) from None
    model = HybridModel.from_split(split, penalty=penalty, zero_bc=zero_bc)
    return model, hybrid_initial(mesh, split, state), split


def cmd_simulate_hybrid(args) -> int:
    scn = load_scenario(args.scenario)
    mesh = scn.build_mesh()
    state = scn.build_initial(mesh)
    model, initial, _ = build_hybrid(scn, mesh, state)
    traj = run_hybrid(model, initial, scn.schedule, scn.t_end, scn.dt, scn.record_every, scn.snapshot_every)
    _write_run(traj, model.mesh, _out_dir(args, scn), f"{scn.name}_hybrid")
    return 0


def cmd_fit_init(args) -> int:
    from .fem import subdomain_integrals

    scn = load_scenario(args.scenario)
    mesh = scn.build_mesh()
    state = scn.build_initial(mesh)
    out = _out_dir(args, scn)
    rows = []
    per = {name: subdomain_integrals(mesh, getattr(state, name), state.n) for name in "seir"}
    pop = subdomain_integrals(mesh, np.ones(mesh.vertex_count), state.n)
    for l in mesh.labels:
        rows.append(dict(subdomain_id=l, population=pop[l], S=per["s"][l], E=per["e"][l], I=per["i"][l],
                         R=per["r"][l]))
    _emit(io.write_rows(out / f"{scn.name}_initial.csv",
                        ("subdomain_id", "population", "S", "E", "I", "R"), rows))
    _emit(io.write_vtk(mesh, state, out / f"{scn.name}_initial.vtk", title=f"{scn.name} initial"))
    return 0


def _fit_settings(scn: Scenario):
    if scn.fit is None:
        raise ScenarioError("fit", "section required for fit-params")
    fit = scn.fit
    times, targets = io.read_targets_csv(scn.path(fit["targets"]))
    vid = np.zeros(targets.shape[1], dtype=bool)
    for l in fit.get("vid_labels", []):
        if not 1 <= int(l) <= targets.shape[1]:
            raise ScenarioError("fit.vid_labels", f"label {l} outside 1..{targets.shape[1]}")
        vid[int(l) - 1] = True
    return fit, times, targets, vid


def cmd_fit_params(args) -> int:
    scn = load_scenario(args.scenario)
    fit, times, targets, vid = _fit_settings(scn)
    mesh = scn.build_mesh()
    if targets.shape[1] != len(mesh.labels):
        raise ScenarioError("fit.targets", f"{targets.shape[1]} target columns, mesh has {len(mesh.labels)} subdomains")
    state = scn.build_initial(mesh)
    max_it = int(fit.get("max_iterations", 100))
    tol = float(fit.get("residual_tolerance", 0.0))
    coords = fit.get("coordinates", "whitened-log")
    model_kind = fit.get("model", "pde")
    out = _out_dir(args, scn)
    report = []
    if fit.get("segments", False):
        starts = list(scn.schedule.starts)
        ends = starts[1:] + [scn.t_end]
        per_segment, used_starts, bases = [], [], []
        for j, (a, b) in enumerate(zip(starts, ends)):
            sel = (times > a + 1e-9) & (times <= b + 1e-9)
            if not sel.any():
                raise ScenarioError("fit.targets", f"no target times in schedule interval {j} ({a}, {b}]")
            per_segment.append((times[sel] - a, targets[sel]))
            used_starts.append(a)
            bases.append(scn.schedule.params[j])
        fits = fit_segments(mesh, state, bases, used_starts, per_segment, vid, scn.dt, max_it, tol,
                            coordinates=coords)
        new_schedule = ParamSchedule(tuple(used_starts), tuple(f.params for f in fits))
        for j, f in enumerate(fits):
            report.append(f"## segment {j} [{f.start}, {f.end}]\n" + format_report(f.result))
    else:
        base = scn.schedule.params[0]
        if model_kind == "hybrid":
            hmodel, initial, _ = build_hybrid(scn, mesh, state)
            labels = scn.hybrid["ode_labels"]
            labels = mesh.labels if labels == "all" else labels
            targets, vid = merge_ode_columns(targets, vid, labels)
            if hmodel.mesh is None:
                targets, vid = targets[:, -1:], vid[-1:]
                values = HybridValues(hmodel, initial, base, times, scn.dt)
                forward = FiniteDifferenceForward(lambda p: values(p)[:, -1:])
            else:
                forward = FiniteDifferenceForward(HybridValues(hmodel, initial, base, times, scn.dt))
        elif model_kind == "pde":
            forward = PdeForwardModel(mesh, state, base, times, scn.dt)
        else:
            raise ScenarioError("fit.model", f"expected 'pde' or 'hybrid', got {model_kind!r}")
        problem = FitProblem(targets, times, vid, base.fit_vector, max_it, tol)
        res = lm_iterate(problem, forward, coordinates=coords)
        new_schedule = ParamSchedule.constant(base.with_fit_vector(res.p))
        report.append(format_report(res))
    fitted = Scenario(**{**scn.__dict__, "schedule": new_schedule})
    fitted.name = f"{scn.name}_fitted"
    path = out / f"{scn.name}_fit_report.txt"
    path.write_text("\n".join(report) + "\n# fitted scenario\n" + dump_scenario(fitted, out))
    _emit(path)
    _emit(save_scenario(fitted, out / f"{scn.name}_fitted.yaml"))
    return 0


def cmd_sweep(args) -> int:
    scn = load_scenario(args.scenario) if args.scenario else None
    cfg = analysis.SweepConfig()
    schedule = None
    if scn is not None:
        rect = scn.mesh.get("rectangle")
        if rect is None:
            raise ScenarioError("mesh.rectangle", "the sweep needs a rectangle mesh")
        const = scn.initial.get("constant", {})
        cfg = analysis.SweepConfig(h=float(rect["h"]), t_end=scn.t_end, dt=scn.dt,
                                   width=float(rect.get("width", 2.0)), height=float(rect.get("height", 1.0)),
                                   penalty=float((scn.hybrid or {}).get("penalty", 1e6)),
                                   fractions0=tuple(const.get("fractions", cfg.fractions0)),
                                   total_population=float(const.get("total_population", cfg.total_population)))
        schedule = scn.schedule
    if args.h is not None:
        cfg = analysis.SweepConfig(**{**cfg.__dict__, "h": args.h})
    table = analysis.ode_fraction_sweep(args.fractions, cfg, schedule, jobs=args.jobs)
    out = _out_dir(args, scn)
    name = scn.name if scn else "rectangle"
    cols = [c for c in analysis.SWEEP_COLUMNS if c != "runtime_s"]
    _emit(io.write_rows(out / f"{name}_sweep.csv", cols, table))
    _emit(io.write_rows(out / f"{name}_sweep_runtime.csv", ("fraction", "runtime_s"), table))
    r2 = analysis.linear_fit_r2([r["fraction"] for r in table], [r["mae"] for r in table])
    print("fraction  mae  relative_mae  accuracy  runtime_s")
    for r in table:
        print(f"{r['fraction']:.4f}  {r['mae']:.6g}  {r['relative_mae']:.4e}  {r['accuracy']:.4f}  {r['runtime_s']:.3f}")
    print(f"linear fit R^2 = {r2:.5f}; monotone = {analysis.sweep_is_monotone([r['mae'] for r in table])}")
    return 0


def cmd_compare(args) -> int:
    ref = io.read_table(args.pde)
    cand = io.read_table(args.candidate)
    base = io.read_table(args.ode)
    col = args.column
    for path, t in ((args.pde, ref), (args.candidate, cand), (args.ode, base)):
        if col not in t:
            raise ValueError(f"{path}: no column {col!r}")
    if not (np.array_equal(ref["time"], cand["time"]) and np.array_equal(ref["time"], base["time"])):
        raise ValueError("the three runs must share one time grid")
    acc = analysis.accuracy(cand[col], ref[col], base[col])
    dev, rel = analysis.max_average_deviation(cand[col], ref[col])
    mae = analysis.mean_absolute_error(cand[col], ref[col])
    print(f"accuracy {acc!r}")
    print(f"max_deviation {dev!r}")
    print(f"relative_max_deviation {rel!r}")
    print(f"mean_absolute_error {mae!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridseir", description="Spatial SEIR: PDE, hybrid PDE/ODE, fitting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_out(sp):
        sp.add_argument("--output-dir", help=f"output directory (overrides scenario and ${OUTPUT_ENV})")
        return sp

    g = with_out(sub.add_parser("gen-mesh", help="write a structured rectangle mesh in Triangle format"))
    g.add_argument("--rect", nargs=2, type=float, metavar=("WIDTH", "HEIGHT"), default=(2.0, 1.0))
    g.add_argument("--h", type=float, required=True, help="target edge length (km)")
    g.add_argument("--split", type=float, default=None, help="x of the label 1 | label 2 cut")
    g.add_argument("--lombardy-like", action="store_true", help="five-province 4 x 2 layout")
    g.add_argument("--name", default="mesh")
    g.set_defaults(func=cmd_gen_mesh)

    for name, func, text in (("simulate-pde", cmd_simulate_pde, "full PDE run"),
                             ("simulate-hybrid", cmd_simulate_hybrid, "hybrid PDE/ODE run"),
                             ("fit-init", cmd_fit_init, "initial fields from counts or points"),
                             ("fit-params", cmd_fit_params, "fit rate parameters to infectious counts")):
        sp = with_out(sub.add_parser(name, help=text))
        sp.add_argument("scenario")
        sp.set_defaults(func=func)

    s = with_out(sub.add_parser("sweep", help="hybrid error against ODE-region fraction"))
    s.add_argument("scenario", nargs="?")
    s.add_argument("--fractions", nargs="+", type=float,
                   default=[0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0])
    s.add_argument("--h", type=float, default=None)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare", help="accuracy and deviation of a run against PDE and ODE runs")
    c.add_argument("pde")
    c.add_argument("candidate")
    c.add_argument("ode")
    c.add_argument("--column", default="I")
    c.set_defaults(func=cmd_compare)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: scenario key {exc}", file=sys.stderr)
        return 2
    except (MeshError, ParameterError, InitialFitError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
