import math

import numpy as np
import pytest

from oscarsim.params import ExperimentalParams, SimParams


@pytest.fixture
def reference():
    return ExperimentalParams.reference()


@pytest.fixture
def benchmark_sim():
    """Dimensionless benchmark: eps=10, eta=0.3, A=13."""
    return SimParams(eps=10, eta=0.3, A=13, n_max=160)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spinor(n_max, rng):
    from oscarsim.hilbert import SpinorState
    c = rng.normal(size=(2, n_max)) + 1j * rng.normal(size=(2, n_max))
    return SpinorState(c / np.linalg.norm(c))


def fidelity(a, b):
    return abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real)


def relerr(value, target):
    return abs(value - target) / abs(target)


PI = math.pi
