"""End-to-end acceptance checks; a PASS/FAIL line per criterion is printed in the session summary."""
import time

import numpy as np
import pytest

from hybridseir.analysis import (
    SweepConfig,
    linear_fit_r2,
    ode_fraction_sweep,
    run_ode_fraction,
    sweep_is_monotone,
)
from hybridseir.cli import run_cli
from hybridseir.fem import integrate_weighted, subdomain_integrals
from hybridseir.hybrid import HybridModel, HybridState, OdeCompartment, run_hybrid
from hybridseir.initfit import GaussianBasis, ProvinceData, build_initial_state
from hybridseir.lmfit import FitProblem, PdeForwardModel, choose_lambda1, lm_iterate, lm_step
from hybridseir.mesh import split_for_hybrid
from hybridseir.scenarios import lombardy_like_mesh, rectangle_scenario, schedule_params, default_schedule
from hybridseir.seir import SeirState, allee_factor, run_full_pde
from hybridseir.sensitivity import simulate_infectious, simulate_with_sensitivities

from oracles import seir_euler

FRACTIONS = [k / 8 for k in range(9)]


def scalar_schedule_oracle(y0, schedule, n, dt, steps):
    """Well-mixed SEIR under the schedule (forward Euler, density n)."""
    out = [tuple(y0)]
    y = tuple(y0)
    for k in range(steps):
        p = schedule.at(round(k * dt, 10))
        F = allee_factor(n, p.allee_A, p.allee_n0)
        y = seir_euler(y, p.__dict__, dt, 1, F=F)[1]
        out.append(y)
    return np.array(out)


def test_criterion_01_allee_bound(criterion):
    criterion(1, "Allee factor within [1/3, 1] for 1e6 densities, minimum 1/3 at n = 0")
    t0 = time.perf_counter()
    n = np.random.default_rng(20200301).uniform(0.0, 1e10, 1_000_000)
    F = allee_factor(n, 3.0e7, 4.5e7)
    F0 = allee_factor(0.0, 3.0e7, 4.5e7)
    elapsed = time.perf_counter() - t0
    assert np.all(F >= 1 / 3) and np.all(F <= 1.0)
    assert abs(F0 - 1 / 3) <= 1e-15
    assert elapsed < 1.0


def test_criterion_02_conservation(criterion):
    criterion(2, "full PDE rectangle conserves population (1e-6) and s+e+i+r = 1 (1e-6)")
    t0 = time.perf_counter()
    mesh, st0 = rectangle_scenario(h=0.05)
    traj = run_full_pde(mesh, st0, default_schedule(), 60.0, 0.1)
    elapsed = time.perf_counter() - t0
    assert len(traj) == 601
    N = traj.column("N")
    assert np.max(np.abs(N / N[0] - 1.0)) < 1e-6
    assert np.max(traj.column("sum_dev")) < 1e-6
    assert elapsed < 60.0


def test_criterion_03_hybrid_limits(criterion):
    criterion(3, "0% ODE hybrid equals full PDE (1e-8), 100% ODE equals scalar SEIR (1e-10)")
    t0 = time.perf_counter()
    mesh, st0 = rectangle_scenario(h=0.05)
    sched = default_schedule()
    full = run_full_pde(mesh, st0, sched, 60.0, 0.1)
    empty = run_hybrid(HybridModel(mesh), HybridState(0.0, st0, None), sched, 60.0, 0.1)
    I_full, I_h = full.column("I"), empty.column("I")
    assert np.max(np.abs(I_h - I_full) / np.abs(I_full)) < 1e-8

    ode = OdeCompartment.from_fields(mesh, st0, np.arange(mesh.triangle_count))
    pure = run_hybrid(HybridModel(None), HybridState(0.0, None, ode), sched, 60.0, 0.1)
    ref = scalar_schedule_oracle(ode.y, sched, ode.n2_mean, 0.1, 600)
    got = np.column_stack([pure.column(f"ode_{c}") for c in "SEIR"]) / ode.population
    assert np.max(np.abs(got - ref)) < 1e-10
    assert time.perf_counter() - t0 < 60.0


def test_criterion_04_homogeneous_mixing(criterion):
    criterion(4, "constant data on a 50/50 split follows the scalar SEIR curve (1e-3, 60 days)")
    mesh, _ = rectangle_scenario(h=0.05, split_x=1.0)
    y0 = (0.998, 0.001, 0.001, 0.0)
    n0 = 5e7
    split = split_for_hybrid(mesh, [2])
    pde = SeirState.from_fractions(*y0, np.full(split.pde_mesh.vertex_count, n0))
    ode = OdeCompartment(np.array(y0), n0, split.omega2_area)
    sched = default_schedule()
    model = HybridModel.from_split(split)
    traj = run_hybrid(model, HybridState(0.0, pde, ode), sched, 60.0, 0.1)
    ref = scalar_schedule_oracle(y0, sched, n0, 0.1, 600)
    pop1 = n0 * split.pde_mesh.area
    pde_mean = np.column_stack([traj.column(f"pde_{c}") for c in "SEIR"]) / pop1
    ode_frac = np.column_stack([traj.column(f"ode_{c}") for c in "SEIR"]) / ode.population
    assert np.max(np.abs(pde_mean - ref)) < 1e-3
    assert np.max(np.abs(ode_frac - ref)) < 1e-3


@pytest.fixture(scope="module")
def sweep_runs():
    cfg = SweepConfig(h=0.05)
    t0 = time.perf_counter()
    table = ode_fraction_sweep(FRACTIONS, cfg)
    series = {f: run_ode_fraction(f, cfg) for f in FRACTIONS}
    return table, series, time.perf_counter() - t0


def test_criterion_05_sweep_trend(criterion, sweep_runs):
    criterion(5, "sweep error monotone in ODE fraction with linear-fit R^2 > 0.95")
    table, _, elapsed = sweep_runs
    mae = [r["mae"] for r in table]
    assert mae[0] == 0.0
    assert sweep_is_monotone(mae, tolerance=0.0)
    assert linear_fit_r2(FRACTIONS, mae) > 0.95
    assert table[-2]["max_deviation"] > table[1]["max_deviation"]
    assert elapsed < 600.0


def test_criterion_06_hybrid_between_pde_and_ode(criterion, sweep_runs):
    criterion(6, "after day 10 every hybrid curve lies between full PDE and pure ODE (1% band)")
    _, series, _ = sweep_runs
    t, full, _ = series[0.0]
    _, ode, _ = series[1.0]
    lo, hi = np.minimum(full, ode), np.maximum(full, ode)
    late = t > 10.0
    for f in FRACTIONS[1:-1]:
        _, hyb, _ = series[f]
        assert np.all(hyb[late] >= 0.99 * lo[late]) and np.all(hyb[late] <= 1.01 * hi[late]), f


def test_criterion_07_extreme_case(criterion):
    criterion(7, "infection flows from the ODE into a disease-free PDE region; zero BC isolates it")
    mesh, _ = rectangle_scenario(h=0.05, split_x=1.0)
    split = split_for_hybrid(mesh, [2])
    n0 = 5e7
    pde = SeirState.from_fractions(1.0, 0.0, 0.0, 0.0, np.full(split.pde_mesh.vertex_count, n0))
    ode = OdeCompartment(np.array([0.99, 0.0, 0.01, 0.0]), n0, split.omega2_area)
    start = HybridState(0.0, pde, ode)
    sched = default_schedule()
    coupled = run_hybrid(HybridModel.from_split(split), start, sched, 1.0, 0.1)
    I_pde = coupled.column("pde_I")
    assert len(I_pde) == 11 and np.all(np.diff(I_pde) > 0)

    iso = run_hybrid(HybridModel.from_split(split, zero_bc=True), start, sched, 60.0, 0.1)
    assert np.max(np.abs(iso.column("pde_I"))) < 1e-10
    I_ode = iso.column("ode_I")
    k = int(np.argmax(I_ode))
    assert 0 < k < len(I_ode) - 1 and I_ode[k] > I_ode[0]


def test_criterion_08_sensitivities(criterion):
    criterion(8, "analytic Jacobian matches central differences (1e-3) for 4 parameters x 2 subdomains x t in {5, 10}")
    t0 = time.perf_counter()
    mesh, st0 = rectangle_scenario(h=0.1, split_x=1.0)
    p = schedule_params(0)
    # phi_e > 0 so that p - h stays admissible
    p = p.with_fit_vector(p.fit_vector + [0.0, 0.02, 0.0, 0.0])
    times = [5.0, 10.0]
    _, J, _ = simulate_with_sensitivities(mesh, st0, p, times)
    pv = p.fit_vector
    worst = 0.0
    for m in range(4):
        h = 1e-4 * pv[m]
        dp = np.eye(4)[m] * h
        Ip, _ = simulate_infectious(mesh, st0, p.with_fit_vector(pv + dp), times)
        Im, _ = simulate_infectious(mesh, st0, p.with_fit_vector(pv - dp), times)
        fd = (Ip - Im) / (2 * h)
        worst = max(worst, float(np.max(np.abs(J[:, :, m] - fd) / np.maximum(np.abs(fd), 1e-12))))
    assert worst < 1e-3
    assert time.perf_counter() - t0 < 120.0


def test_criterion_09_parameter_recovery(criterion):
    criterion(9, "Levenberg-Marquardt recovers interval-1 rates from +30% within 5% (phi_e within 1e-3)")
    t0 = time.perf_counter()
    mesh, st0 = rectangle_scenario(h=0.1, split_x=1.0)
    truth = schedule_params(0)
    times = np.arange(1.0, 11.0)
    fwd = PdeForwardModel(mesh, st0, truth, times)
    targets, _ = fwd(truth.fit_vector)
    p_true = truth.fit_vector
    p0 = 1.3 * p_true
    p0[1] = 0.01       # +30% of zero is zero, which is not a valid start
    prob = FitProblem(targets, times, [True, False], p0, max_iterations=25)
    res = lm_iterate(prob, fwd, coordinates="whitened-log")
    acc = [r.residual for r in res.accepted]
    assert res.accepted_iterations <= 25
    assert all(b < a for a, b in zip(acc, acc[1:]))
    assert all(np.all(r.p > 0) for r in res.trace)
    for m in (0, 2, 3):
        assert abs(res.p[m] / p_true[m] - 1.0) < 0.05
    assert abs(res.p[1] - 0.0) < 1e-3
    assert time.perf_counter() - t0 < 600.0


def test_criterion_10_initial_fit(criterion):
    criterion(10, "fitted subdomain integrals of n, s n, e n, i n match targets (1e-6), weights >= 0")
    mesh = lombardy_like_mesh(0.1)
    data = ProvinceData([2.3e5, 3.25e6, 3.6e5, 1.11e6, 1.26e6], [420.0, 180, 150, 610, 330],
                        [40.0, 10, 10, 50, 30])
    fit = build_initial_state(mesh, GaussianBasis.at_centroids(mesh, 0.3), data)
    st0 = fit.state
    for w in fit.weights.values():
        assert np.all(w >= 0)
    for field, target in ((np.ones(mesh.vertex_count), data.population), (st0.s, data.susceptible),
                          (st0.e, data.exposed), (st0.i, data.infectious)):
        got = np.array([v for _, v in sorted(subdomain_integrals(mesh, field, st0.n).items())])
        assert np.max(np.abs(got / target - 1.0)) < 1e-6


def test_criterion_11_lm_limits(criterion):
    criterion(11, "lambda1 = 0 gives the Gauss-Newton step (1e-10); large lambda1 follows -J^T F (cos > 0.999)")
    rng = np.random.default_rng(42)
    J = rng.normal(size=(20, 4))
    F = rng.normal(size=20)
    gn = np.linalg.lstsq(J, -F, rcond=None)[0]
    assert np.max(np.abs(lm_step(J, F, 0.0) - gn)) < 1e-10
    JtJ = J.T @ J
    d = lm_step(J, F, 1e8 * np.trace(JtJ))
    g = -J.T @ F
    assert d @ g / (np.linalg.norm(d) * np.linalg.norm(g)) > 0.999
    assert choose_lambda1(JtJ) >= 0


def test_criterion_12_determinism(criterion, tmp_path):
    criterion(12, "repeated scenario runs write byte-identical CSV files")
    import yaml

    scn = {
        "name": "det",
        "mesh": {"rectangle": {"width": 2.0, "height": 1.0, "h": 0.1, "split_x": 1.0}},
        "hybrid": {"ode_labels": [2]},
        "initial": {"constant": {"fractions": [0.998, 0.001, 0.001, 0.0]}},
        "schedule": "default",
        "time": {"t_end": 60.0, "dt": 0.1, "record_every": 1},
    }
    cfg = tmp_path / "det.yaml"
    cfg.write_text(yaml.safe_dump(scn))
    files = ("det_pde.csv", "det_hybrid.csv", "det_sweep.csv")
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        for cmd in (["simulate-pde", str(cfg)], ["simulate-hybrid", str(cfg)],
                    ["sweep", str(cfg), "--fractions", "0", "0.5", "1"]):
            assert run_cli(cmd + ["--output-dir", str(out)]) == 0
        outs.append(out)
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
