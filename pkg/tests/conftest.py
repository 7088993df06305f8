"""Shared fixtures. Session scope for anything that assembles or solves."""

import numpy as np
import pytest

from roughbvp.discretization import ProblemSpec
from roughbvp.geometry import GridSpec, full_box, koch_prefractal_domain
from roughbvp.measures import arc_measure_on_boundary, lebesgue_like_measure


@pytest.fixture(scope="session")
def unit_grid_32():
    return GridSpec(origin=(0.0, 0.0), side=1.0, cells_per_side=32)


@pytest.fixture(scope="session")
def unit_box_32(unit_grid_32):
    return full_box(unit_grid_32)


@pytest.fixture(scope="session")
def arc_32(unit_box_32):
    return arc_measure_on_boundary(unit_box_32)


@pytest.fixture(scope="session")
def unit_grid_128():
    return GridSpec(origin=(0.0, 0.0), side=1.0, cells_per_side=128)


@pytest.fixture(scope="session")
def unit_box_128(unit_grid_128):
    return full_box(unit_grid_128)


@pytest.fixture(scope="session")
def arc_128(unit_box_128):
    return arc_measure_on_boundary(unit_box_128)


@pytest.fixture(scope="session")
def interior_mu_128(unit_box_128):
    return lebesgue_like_measure(unit_box_128)


# Koch-2 pixelation in the 1.7-box; the finest feature spans four cells.
@pytest.fixture(scope="session")
def koch2():
    grid = GridSpec(origin=(-0.85, -0.85), side=1.7, cells_per_side=72)
    return koch_prefractal_domain(grid, 2, (-0.45, -0.45), 0.9)


@pytest.fixture(scope="session")
def koch2_arc(koch2):
    return arc_measure_on_boundary(koch2)


@pytest.fixture(scope="session")
def poisson_dirichlet():
    return ProblemSpec(
        kind="dirichlet", alpha=0.0, gamma=0.0, source_f=1.0, boundary_phi=0.0
    )


def rng_loop(seed: int, count: int):
    """Seeded generators for property-test loops, one per trial."""
    return [np.random.default_rng(seed + 1009 * k) for k in range(count)]
