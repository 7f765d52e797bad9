"""Post-processing metrics and the ODE-fraction sweep."""
from __future__ import annotations

import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .hybrid import DEFAULT_PENALTY, HybridModel, HybridState, OdeCompartment, hybrid_initial, run_hybrid
from .mesh import split_for_hybrid
from .scenarios import DEFAULT_FRACTIONS, DEFAULT_POPULATION, rectangle_scenario, default_schedule
from .seir import ParamSchedule, run_full_pde


class DegenerateBaselineError(ValueError):
    pass


def seven_day_average(raw) -> np.ndarray:
    """Centered 7-day moving average; near the ends the window shrinks symmetrically."""
    x = np.asarray(raw, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("need a non-empty 1-D series")
    n = x.size
    c = np.concatenate([[0.0], np.cumsum(x)])
    k = np.arange(n)
    half = np.minimum(3, np.minimum(k, n - 1 - k))
    return (c[k + half + 1] - c[k - half]) / (2 * half + 1)


def _check_grids(*series):
    lens = {len(np.asarray(s)) for s in series}
    if len(lens) != 1:
        raise ValueError("series must share one time grid")


def accuracy(candidate, reference, baseline) -> float:
    """``1 - ||candidate - reference|| / ||baseline - reference||``, clamped to [0, 1].

    The reference (full PDE) scores 1 and the baseline (pure ODE) scores 0.
    """
    _check_grids(candidate, reference, baseline)
    c, ref, base = (np.asarray(a, dtype=float) for a in (candidate, reference, baseline))
    dev = np.linalg.norm(c - ref)
    worst = np.linalg.norm(base - ref)
    if worst == 0:
        if dev == 0:
            return 1.0
        raise DegenerateBaselineError("baseline equals reference; accuracy undefined")
    return float(np.clip(1.0 - dev / worst, 0.0, 1.0))


def max_average_deviation(candidate, reference) -> tuple[float, float]:
    """Largest pointwise ``|candidate - reference|``, absolute and relative to the reference peak."""
    _check_grids(candidate, reference)
    c, ref = np.asarray(candidate, dtype=float), np.asarray(reference, dtype=float)
    d = float(np.max(np.abs(c - ref))) if c.size else 0.0
    peak = float(np.max(np.abs(ref))) if ref.size else 0.0
    return d, (d / peak if peak > 0 else 0.0)


def mean_absolute_error(candidate, reference) -> float:
    _check_grids(candidate, reference)
    return float(np.mean(np.abs(np.asarray(candidate, dtype=float) - np.asarray(reference, dtype=float))))


def linear_fit_r2(x, y) -> float:
    """Coefficient of determination of the least-squares line through ``(x, y)``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    A = np.column_stack([x, np.ones_like(x)])
    coef = np.linalg.lstsq(A, y, rcond=None)[0]
    ss_res = float(np.sum((y - A @ coef) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class SweepConfig:
    h: float = 0.05
    t_end: float = 60.0
    dt: float = 0.1
    width: float = 2.0
    height: float = 1.0
    penalty: float = DEFAULT_PENALTY
    fractions0: tuple = DEFAULT_FRACTIONS
    total_population: float = DEFAULT_POPULATION


def run_ode_fraction(fraction: float, config: SweepConfig = SweepConfig(), schedule: ParamSchedule | None = None):
    """Run the rectangle with the right ``fraction`` of its width as ODE region.

    Returns ``(times, total infectious, runtime seconds)``; the runtime covers
    time stepping only. ``fraction`` 0 is the full PDE model, 1 the pure ODE.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("ODE fraction must lie in [0, 1]")
    schedule = schedule or default_schedule()
    split_x = config.width * (1.0 - fraction)
    inner = 0.0 < fraction < 1.0
    mesh, state = rectangle_scenario(config.h, split_x if inner else None, config.fractions0,
                                     config.total_population, config.width, config.height)
    if fraction == 0.0:
        t0 = _time.perf_counter()
        traj = run_full_pde(mesh, state, schedule, config.t_end, config.dt)
        return traj.times, traj.column("I"), _time.perf_counter() - t0
    if fraction == 1.0:
        ode = OdeCompartment.from_fields(mesh, state, np.arange(mesh.triangle_count))
        model, initial = HybridModel(None), HybridState(0.0, None, ode)
    else:
        split = split_for_hybrid(mesh, [2])
        model = HybridModel.from_split(split, penalty=config.penalty)
        initial = hybrid_initial(mesh, split, state)
    t0 = _time.perf_counter()
    traj = run_hybrid(model, initial, schedule, config.t_end, config.dt)
    return traj.times, traj.column("I"), _time.perf_counter() - t0


SWEEP_COLUMNS = ("fraction", "mae", "relative_mae", "accuracy", "max_deviation", "relative_max_deviation",
                 "runtime_s")


def ode_fraction_sweep(fractions, config: SweepConfig = SweepConfig(), schedule=None, jobs: int = 1) -> list[dict]:
    """Error of hybrid runs against the full PDE for several ODE-area fractions.

    The full PDE (fraction 0) and pure ODE (fraction 1) runs are always
    computed since they define the error reference and the accuracy baseline.
    """
    fractions = [float(f) for f in fractions]
    needed = sorted(set(fractions) | {0.0, 1.0})
    args = [(f, config, schedule) for f in needed]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_worker, args))
    else:
        results = [_sweep_worker(a) for a in args]
    runs = dict(zip(needed, results))
    _, ref, _ = runs[0.0]
    _, base, _ = runs[1.0]
    peak = float(np.max(np.abs(ref)))
    table = []
    for f in fractions:
        _, cand, rt = runs[f]
        mae = mean_absolute_error(cand, ref)
        dev, rel_dev = max_average_deviation(cand, ref)
        table.append(dict(fraction=f, mae=mae, relative_mae=mae / peak, accuracy=accuracy(cand, ref, base),
                          max_deviation=dev, relative_max_deviation=rel_dev, runtime_s=rt))
    return table


def _sweep_worker(args):
    f, config, schedule = args
    return run_ode_fraction(f, config, schedule)


def sweep_is_monotone(errors, tolerance=0.0) -> bool:
    e = np.asarray(errors, dtype=float)
    return bool(np.all(e[:-1] <= e[1:] + tolerance))
