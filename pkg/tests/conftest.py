import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from daemor.model import TransmissionLineParams, build_transmission_line, random_semi_explicit

settings.register_profile('daemor', max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile('thorough', parent=settings.get_profile('daemor'), max_examples=300)
settings.load_profile('daemor')


@pytest.fixture(scope='session')
def tline2():
    return build_transmission_line(TransmissionLineParams(2))


@pytest.fixture(scope='session')
def tline10():
    return build_transmission_line(TransmissionLineParams(10))


@pytest.fixture(scope='session')
def tline10_inductor():
    return build_transmission_line(TransmissionLineParams(10, output_tap='first_inductor_voltage'))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dae(rng):
    """Dissipative random SE-DAE with nonzero b22, c22 and d (MIMO)."""
    return random_semi_explicit(6, 4, 2, 2, rng, feedthrough=True)


def rel_err(x, ref):
    x, ref = np.asarray(x), np.asarray(ref)
    return float(np.abs(x - ref).max() / max(np.abs(ref).max(), 1e-300))
