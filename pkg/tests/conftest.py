import numpy as np
import pytest

from slipform.material import MaterialParams
from slipform.potential import StepContext, initial_state
from slipform.slip_geometry import fcc_catalogue, rotation_from_euler

ORI_0 = (0.0, 0.0, 0.0)
ORI_1 = (np.pi / 6, np.pi / 4, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fcc():
    return fcc_catalogue()


def random_context(rng, catalogue, params=None, integrator="expmap", strain=0.05, micromorphic=True):
    """A random, admissible step: rotated initial state, perturbed F, random s and grad s."""
    params = params or MaterialParams(c1=0.1, c2=0.5)
    n = catalogue.n_sys
    R0 = rotation_from_euler(*rng.uniform(0, np.pi, 3)).R0
    st = initial_state(catalogue, params, Fp0=R0)
    F = np.eye(3) + strain * rng.standard_normal((3, 3))
    if micromorphic:
        return StepContext(F, st, params, catalogue, integrator, s=1e-3 * rng.random(n),
                           grad_s=1e-2 * rng.standard_normal((n, 3)))
    return StepContext(F, st, params, catalogue, integrator)


def shear_context(state, F12, params, catalogue, integrator="expmap"):
    F = np.eye(3)
    F[0, 1] = F12
    return StepContext(F, state, params, catalogue, integrator)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
