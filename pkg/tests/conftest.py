import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from platoonkit.dynamics import PlatoonConfig
from platoonkit.formation import TanhAffineLaw
from platoonkit.scenarios import perturbed_start, reference_disturbance

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def ref_law():
    return TanhAffineLaw(0.5, 0.18, 0.18, 0.1, np.full(10, 10.0))


@pytest.fixture(scope="session")
def ref_dist():
    return reference_disturbance(0, 10)


@pytest.fixture(scope="session")
def ref_start(ref_law):
    return perturbed_start(ref_law, 15.0, 0)


@pytest.fixture(scope="session")
def ref_cfg(ref_law):
    return lambda r: PlatoonConfig(ref_law, r, 5.0)
