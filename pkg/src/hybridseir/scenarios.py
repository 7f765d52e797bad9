"""Synthetic scenario builders: the 2 x 1 rectangle and a five-province layout."""
from __future__ import annotations

import numpy as np

from .fem import integrate_weighted
from .mesh import KM_PER_DEGREE, Mesh, generate_rectangle_mesh, relabel
from .seir import EpidemicParams, ParamSchedule, SeirState

# Piecewise parameters of the rectangle / Lombardy runs; "-" entries repeat the
# previous interval. D is given in degree^2/day scaled by 100, converted to km^2.
SCHEDULE_STARTS = (0.0, 10.0, 23.0, 29.0)
SCHEDULE_ROWS = (
    dict(sigma=2.6676e-02, phi_e=0.0, phi_i=2.3310e-01, beta=4.4202e-01, D=0.0435),
    dict(sigma=2.6676e-02, phi_e=0.0, phi_i=2.3310e-01, beta=2.0588e-01, D=0.0198),
    dict(sigma=2.6676e-02, phi_e=0.0, phi_i=2.3310e-01, beta=6.0352e-08, D=0.0090),
    dict(sigma=1.8747e-01, phi_e=3.2655e-11, phi_i=2.1907e+00, beta=2.2168e-01, D=0.0075),
)
SCHEDULE_ALLEE_A = 3.0e7
SCHEDULE_ALLEE_N0 = 4.5e7

DEFAULT_FRACTIONS = (0.998, 0.001, 0.001, 0.0)
DEFAULT_POPULATION = 1.0e8
RIDGE_VARIANCE = 0.1


def scaled_diffusion(value: float) -> float:
    return value / KM_PER_DEGREE**2 * 1.0e2


def schedule_params(k: int) -> EpidemicParams:
    row = SCHEDULE_ROWS[k]
    return EpidemicParams(
        sigma=row["sigma"], phi_e=row["phi_e"], phi_i=row["phi_i"],
        beta_i=row["beta"], beta_e=row["beta"], diffusion=scaled_diffusion(row["D"]),
        allee_A=SCHEDULE_ALLEE_A, allee_n0=SCHEDULE_ALLEE_N0,
    )


def default_schedule() -> ParamSchedule:
    return ParamSchedule(SCHEDULE_STARTS, tuple(schedule_params(k) for k in range(4)))


def gaussian_ridge_density(mesh: Mesh, total_population=DEFAULT_POPULATION, variance=RIDGE_VARIANCE,
                           center_y=None) -> np.ndarray:
    """Population density constant along x and Gaussian in y, scaled to ``total_population``."""
    y = mesh.vertices[:, 1]
    if center_y is None:
        lo, hi = mesh.bounding_box
        center_y = 0.5 * (lo[1] + hi[1])
    shape = np.exp(-((y - center_y) ** 2) / (2.0 * variance))
    return shape * (total_population / integrate_weighted(mesh, np.ones_like(shape), shape))


def constant_fraction_state(mesh: Mesh, n, fractions=DEFAULT_FRACTIONS) -> SeirState:
    s, e, i, r = fractions
    return SeirState.from_fractions(s, e, i, r, n)


def rectangle_scenario(h=0.05, split_x=None, fractions=DEFAULT_FRACTIONS,
                       total_population=DEFAULT_POPULATION, width=2.0, height=1.0):
    """Mesh and initial state of the rectangle experiments."""
    mesh = generate_rectangle_mesh(width, height, h, split_x)
    n = gaussian_ridge_density(mesh, total_population)
    return mesh, constant_fraction_state(mesh, n, fractions)


LOMBARDY_LIKE_NAMES = {1: "Lodi", 2: "Milan", 3: "Cremona", 4: "Bergamo", 5: "Brescia"}


def lombardy_like_mesh(h=0.1) -> Mesh:
    """Five provinces on ``]0,4[ x ]0,2[``; province 2 ("Milan") is the central half.

    Lodi and Cremona occupy the left and right bottom corners, Bergamo and
    Brescia the top corners, so that every province touches Milan.
    """
    mesh = generate_rectangle_mesh(4.0, 2.0, h)

    def label_of(c):
        x, y = c[:, 0], c[:, 1]
        lab = np.where(x < 1.0, np.where(y < 1.0, 1, 4), np.where(y < 1.0, 3, 5))
        return np.where((x > 1.0) & (x < 3.0), 2, lab)

    return relabel(mesh, label_of)
