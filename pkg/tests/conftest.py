import os

import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.services.bands import diagonalize_grid, find_fermi
from app.services.fields import Gaussian, PeriodicField, PlaneWaveBasis, SourceDensity
from app.services.geometry import LatticeGeometry, kpoint_grid
from app.services.scf import periodic_source

WELL_CUTOFF = 12.0
RESPONSE_CUTOFF = 6.0


@pytest.fixture(autouse=True)
def setup_testing_environment():
    os.environ["TESTING"] = "true"
    yield
    os.environ.pop("TESTING", None)


@pytest.fixture
def client():
    """Fixture for FastAPI test client."""
    with TestClient(app) as c:
        yield c


def gaussian_well(geometry, depth=40.0, sigma=0.4, cutoff=4 * WELL_CUTOFF):
    """Lattice-periodic Gaussian well centered at the origin, stored up to ``cutoff``"""
    basis = PlaneWaveBasis(geometry, cutoff)
    coeffs = -depth * np.exp(-0.5 * sigma**2 * basis.norms**2) / np.sqrt(geometry.cell_volume)
    return PeriodicField(basis, coeffs, real=True)


@pytest.fixture(scope="session")
def unit_cube():
    return LatticeGeometry.cubic(1.0)


@pytest.fixture(scope="session")
def cube():
    """Cubic cell of side 2 bohr used by the band and response tests"""
    return LatticeGeometry.cubic(2.0)


@pytest.fixture(scope="session")
def well_potential(cube):
    return gaussian_well(cube)


@pytest.fixture(scope="session")
def well_bands(cube, well_potential):
    """Insulating band structure on Lambda_4 with one occupied band"""
    bands = diagonalize_grid(well_potential, kpoint_grid(cube, 4), WELL_CUTOFF)
    find_fermi(bands, 1)
    return bands


@pytest.fixture(scope="session")
def charged_nu(cube):
    return SourceDensity(
        kind="defect",
        geometry=cube,
        gaussians=(Gaussian((0.0, 0.0, 0.0), 0.25, 0.1),),
        support_L=2,
    )


@pytest.fixture(scope="session")
def neutral_nu(cube):
    """Dipole-free neutral pair: a narrow positive and a wider negative Gaussian"""
    return SourceDensity(
        kind="defect",
        geometry=cube,
        gaussians=(Gaussian((0.0, 0.0, 0.0), 0.25, 0.1), Gaussian((0.0, 0.0, 0.0), 0.35, -0.1)),
        support_L=2,
    )


@pytest.fixture(scope="session")
def scf_nuclei(cube):
    """One electron per cell: a compact +5 core and a diffuse -4 background"""
    return periodic_source(
        cube,
        gaussians=[Gaussian((0.0, 0.0, 0.0), 0.25, 5.0), Gaussian((0.5, 0.5, 0.5), 0.7, -4.0)],
    )


@pytest.fixture
def study_payload():
    """Minimal defect-study configuration as sent over the wire"""
    return {
        "lattice": [2.0, 0, 0, 0, 2.0, 0, 0, 0, 2.0],
        "mu_per": {
            "gaussians": [
                {"center_frac": [0, 0, 0], "sigma": 0.25, "weight": 5.0},
                {"center_frac": [0.5, 0.5, 0.5], "sigma": 0.7, "weight": -4.0},
            ]
        },
        "nu": {"gaussians": [{"center_frac": [0, 0, 0], "sigma": 0.25, "weight": 0.1}], "support_L": 2},
        "electrons_per_cell": 1,
        "cutoff": 10.0,
        "response_cutoff": RESPONSE_CUTOFF,
        "L_ladder": [2, 3, 4],
        "pipeline": "quadratic_response",
        "response_grid_P": 6,
    }
