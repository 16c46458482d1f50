from importlib import resources

import numpy as np
import pytest

from trihjm.sim import InitialCurves, load_initial_curves
from trihjm.volarch import AmplitudeMatrix, BlockVolSpec, FxLoading, ShapeFamily, load_spec

DATA = resources.files("trihjm") / "data"


def data_path(name: str):
    return DATA / name


@pytest.fixture(scope="session")
def model_a_spec() -> BlockVolSpec:
    return load_spec(data_path("model_a_spec.json"))


@pytest.fixture(scope="session")
def init_curves() -> InitialCurves:
    return load_initial_curves(data_path("init_curves.csv"))


def small_spec(scale: float = 1.0, rho=None) -> BlockVolSpec:
    """A 2+1+1 factor spec with moderate amplitudes."""
    shape = ShapeFamily(0.6, 2.0, 1.2)
    A_N = AmplitudeMatrix.from_bp("N", [[100.0, 40.0, -30.0], [-20.0, 60.0, 10.0]])
    A_R = AmplitudeMatrix.from_bp("R", [[80.0, 30.0, 20.0]])
    A_S = AmplitudeMatrix.from_bp("S", [[30.0, 20.0]])
    m = 4
    r = np.eye(m) if rho is None else np.asarray(rho)
    sig_i = FxLoading("I", np.array([0.0, 0.0, 0.01, 0.0]))
    sig_j = FxLoading("J", np.array([0.0, 0.0, 0.0, 0.008]))
    return BlockVolSpec(shape, A_N, A_R, A_S, sig_i, sig_j, r).scaled(scale)


def flat_init(fN=0.10, fR=0.05, s=0.02, tenors=(0.0, 1.0, 5.0, 10.0)) -> InitialCurves:
    t = np.asarray(tenors, float)
    return InitialCurves(t, np.full(t.size, fN), np.full(t.size, fR), np.full(t.size, s))
