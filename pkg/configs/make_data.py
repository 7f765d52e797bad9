"""Regenerate the synthetic data files used by the example scenarios."""
from pathlib import Path

import numpy as np

from hybridseir import io
from hybridseir.scenario import load_scenario
from hybridseir.sensitivity import simulate_infectious

HERE = Path(__file__).parent

io.write_province_csv(HERE / "lombardy_like_provinces.csv",
                      population=[230_000, 3_250_000, 360_000, 1_110_000, 1_260_000],
                      infectious=[420, 180, 150, 610, 330],
                      removed=[40, 10, 10, 50, 30])

rng = np.random.default_rng(20200301)
P = 4000
pts = np.column_stack([rng.uniform(0, 2, P), np.clip(rng.normal(0.5, 0.2, P), 0, 1)])
status = np.where(pts[:, 0] > 1.6, rng.choice(["S", "E", "I"], P, p=[0.96, 0.02, 0.02]),
                  rng.choice(["S", "R"], P, p=[0.995, 0.005]))
io.write_points_csv(HERE / "points.csv", pts, status)

# targets: infectious counts of the province scenario at the reference parameters
scn = load_scenario(HERE / "lombardy_like_reference.yaml")
mesh = scn.build_mesh()
state = scn.build_initial(mesh)
times = np.arange(1.0, 11.0)
I, _ = simulate_infectious(mesh, state, scn.schedule.params[0], times, scn.dt)
io.write_targets_csv(HERE / "lombardy_like_targets.csv", times, I)
