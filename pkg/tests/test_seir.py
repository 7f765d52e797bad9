import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridseir.fem import FemContext
from hybridseir.mesh import generate_rectangle_mesh
from hybridseir.scenarios import rectangle_scenario, schedule_params, default_schedule
from hybridseir.seir import (
    EpidemicParams,
    ParameterError,
    ParamSchedule,
    SeirState,
    allee_factor,
    reaction_rates,
    run_full_pde,
    step_full_pde,
)

from oracles import seir_euler

P1 = dict(sigma=0.3, phi_e=0.05, phi_i=0.2, beta_i=0.5, beta_e=0.4)


def params(D=0.0, **kw):
    return EpidemicParams(**{**P1, **kw}, diffusion=D)


def test_allee_examples():
    assert allee_factor(0.0, 3.0e7, 4.5e7) == pytest.approx(1 / 3, rel=1e-15)
    assert allee_factor(123.0, 0.0, 0.0) == 1.0
    assert allee_factor(1.5e8, 3.0e7, 4.5e7) == pytest.approx(1 - 3e7 / 1.95e8, rel=1e-15)
    with pytest.raises(ParameterError):
        allee_factor(1.0, 3.0e7, 3.0e7)
    with pytest.raises(ParameterError):
        allee_factor(-1.0, 0.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(n=st.floats(0, 1e12), A=st.floats(0, 1e9), extra=st.floats(1.0, 10.0))
def test_allee_bound(n, A, extra):
    F = allee_factor(n, A, 1.5 * A * extra)
    assert 1 / 3 <= F <= 1.0


def test_params_validation():
    with pytest.raises(ParameterError):
        params(sigma=-1.0)
    with pytest.raises(ParameterError):
        EpidemicParams(**P1, diffusion=0.0, allee_A=1.0, allee_n0=1.0)
    assert EpidemicParams(**P1, diffusion=0.0, allee_A=2.0).allee_n0 == 3.0


def test_reaction_examples():
    p = params()
    z = np.zeros(3)
    assert np.all(reaction_rates(np.stack([np.ones(3), z, z, z]), np.ones(3), p) == 0)
    eps = 1e-3
    ds, de, di, _ = reaction_rates(np.array([1.0, 0.0, eps, 0.0]), 1.0, p)
    assert ds == pytest.approx(-p.beta_i * eps, rel=1e-15)
    assert de == pytest.approx(p.beta_i * eps, rel=1e-15)
    assert di == pytest.approx(-p.phi_i * eps, rel=1e-15)


@settings(max_examples=100, deadline=None)
@given(y=st.lists(st.floats(0, 1), min_size=4, max_size=4), n=st.floats(0, 1e9))
def test_reaction_sum_zero(y, n):
    p = EpidemicParams(**P1, diffusion=0.0, allee_A=3e7)
    assert np.sum(reaction_rates(np.array(y), n, p)) == 0.0


def test_zero_rates_no_diffusion_unchanged(unit_square):
    m = unit_square
    rng = np.random.default_rng(0)
    y = rng.dirichlet(np.ones(4), m.vertex_count).T
    st0 = SeirState(0.0, y, rng.uniform(1, 2, m.vertex_count))
    p = EpidemicParams(0, 0, 0, 0, 0, 0)
    out = step_full_pde(st0, p, 0.1, FemContext(m))
    assert np.max(np.abs(out.y - y)) <= 1e-14
    assert out.time == pytest.approx(0.1)


def test_no_diffusion_matches_scalar_euler(unit_square):
    m = unit_square
    rng = np.random.default_rng(1)
    y = rng.dirichlet(np.ones(4), m.vertex_count).T
    n = rng.uniform(1e6, 1e8, m.vertex_count)
    p = EpidemicParams(**P1, diffusion=0.0, allee_A=3e7)
    ctx = FemContext(m)
    state = SeirState(0.0, y, n)
    F = allee_factor(n, 3e7, 4.5e7)
    ref = [seir_euler(y[:, v], P1, 0.1, 20, F=F[v]) for v in range(m.vertex_count)]
    for k in range(1, 21):
        state = step_full_pde(state, p, 0.1, ctx)
        expect = np.array([r[k] for r in ref]).T
        assert np.max(np.abs(state.y - expect)) <= 1e-12


def test_constant_fields_stay_constant(perturbed_square):
    m = perturbed_square
    st0 = SeirState.from_fractions(0.9, 0.05, 0.05, 0.0, np.full(m.vertex_count, 1e7))
    p = EpidemicParams(**P1, diffusion=0.5, allee_A=3e6)
    ctx = FemContext(m)
    state = st0
    for _ in range(30):
        state = step_full_pde(state, p, 0.1, ctx)
    assert np.max(np.ptp(state.y, axis=1)) <= 1e-10


def test_run_t_end_zero(unit_square):
    st0 = SeirState.from_fractions(1, 0, 0, 0, np.ones(unit_square.vertex_count))
    traj = run_full_pde(unit_square, st0, params(), 0.0)
    assert len(traj) == 1 and traj.rows[0]["time"] == 0.0


def test_single_interval_schedule_equals_loop(unit_square):
    m = unit_square
    st0 = SeirState.from_fractions(0.99, 0.005, 0.005, 0, np.full(m.vertex_count, 100.0))
    p = params(D=0.01)
    traj = run_full_pde(m, st0, ParamSchedule.constant(p), 1.0)
    ctx = FemContext(m)
    state = st0
    for _ in range(10):
        state = step_full_pde(state, p, 0.1, ctx)
    assert np.array_equal(traj.final_state.y, state.y)


def test_schedule_switching():
    sch = default_schedule()
    assert sch.at(0.0) is sch.params[0]
    assert sch.at(9.95) is sch.params[0]
    assert sch.at(10.0) is sch.params[1]
    assert sch.at(100.0) is sch.params[3]
    with pytest.raises(ParameterError):
        ParamSchedule((1.0,), (params(),))
    with pytest.raises(ParameterError):
        ParamSchedule((0.0, 5.0, 5.0), (params(),) * 3)


@pytest.fixture(scope="module")
def rectangle_run():
    mesh, st0 = rectangle_scenario(h=0.05)
    return mesh, run_full_pde(mesh, st0, default_schedule(), 60.0, 0.1)


def test_rectangle_invariants(rectangle_run):
    _, traj = rectangle_run
    N = traj.column("N")
    assert np.max(np.abs(N / N[0] - 1)) < 1e-6
    assert np.max(traj.column("sum_dev")) < 1e-9
    R = traj.column("R")
    assert np.all(np.diff(R) >= -1e-10 * R.max())
    assert not traj.warnings


def test_rectangle_single_peak_before_day_29(rectangle_run):
    _, traj = rectangle_run
    I, t = traj.column("I"), traj.times
    k = int(np.argmax(I))
    assert t[k] <= 29.0 + 1e-9
    assert I[k] > 5 * I[0]
    # rises into the peak and falls afterwards
    late = I[t >= 5.0]
    kk = int(np.argmax(late))
    assert np.all(np.diff(late[: kk + 1]) > 0) and np.all(np.diff(late[kk:]) < 0)


def test_refinement_in_time():
    mesh, st0 = rectangle_scenario(h=0.1)
    a = run_full_pde(mesh, st0, default_schedule(), 60.0, 0.1).column("I")[-1]
    b = run_full_pde(mesh, st0, default_schedule(), 60.0, 0.05).column("I")[-1]
    assert abs(a - b) / abs(b) < 0.01


def test_default_params():
    p = schedule_params(0)
    assert p.allee_n0 == 4.5e7 and p.beta_e == p.beta_i == 4.4202e-1
    assert p.diffusion == pytest.approx(0.0435 / 111.3**2 * 100, rel=1e-15)
