import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hindsight.system import LinearModel, PolytopicConstraints, QuadraticCost, stack

# Appendix-style six-state aircraft plant used across the suite.
JET_A = np.array([
    [0.9991, -1.3736, -0.6730, -1.1226, 0.3420, -0.2069],
    [0.0000, 0.9422, 0.0319, -0.0000, -0.0166, 0.0091],
    [0.0004, 0.3795, 0.9184, -0.0002, -0.6518, 0.4612],
    [0.0000, 0.0068, 0.0335, 1.0000, -0.0136, 0.0096],
    [0.0, 0.0, 0.0, 0.0, 0.3499, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.3499],
])
JET_B = np.array([
    [0.1457, -0.0819],
    [-0.0072, 0.0035],
    [-0.4085, 0.2893],
    [-0.0052, 0.0037],
    [0.6501, 0.0],
    [0.0, 0.6501],
])
JET_E = np.array([
    [0.0, 0.0],
    [0.0, 0.0],
    [1.0, 0.0],
    [0.0, 1.0],
    [0.0, 0.0],
    [0.0, 0.0],
])
JET_QX = np.diag([1.0, 1e3, 1e2, 1e3, 1.0, 1.0])
JET_QU = np.eye(2)


@pytest.fixture(scope="session")
def jet_model():
    return LinearModel(JET_A, JET_B, JET_E)


@pytest.fixture(scope="session")
def jet_cost():
    return QuadraticCost(Qx=JET_QX, Qu=JET_QU, Qf=JET_QX)


@pytest.fixture(scope="session")
def jet_cons():
    return PolytopicConstraints.box(6, 2, x_bounds={0: 1.0}, u_bounds={0: 2.0, 1: 3.0})


@pytest.fixture(scope="session")
def jet_stacked(jet_model, jet_cost, jet_cons):
    return stack(jet_model, jet_cost, jet_cons, N=20)


def random_model(rng, n_x, n_u, n_w, spectral=0.95):
    """Random model with spectral radius scaled to keep horizons well scaled."""
    A = rng.normal(size=(n_x, n_x))
    A *= spectral / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9)
    B = rng.normal(size=(n_x, n_u))
    E = np.linalg.qr(rng.normal(size=(n_x, n_w)))[0][:, :n_w]
    return LinearModel(A, B, E)


def random_cost(rng, n_x, n_u):
    Mx = rng.normal(size=(n_x, n_x))
    Mf = rng.normal(size=(n_x, n_x))
    Mu = rng.normal(size=(n_u, n_u))
    return QuadraticCost(Qx=Mx.T @ Mx, Qu=Mu.T @ Mu + np.eye(n_u), Qf=Mf.T @ Mf)
