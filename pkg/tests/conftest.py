import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cadlag_mot.paths import StepPath

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def jump_path(T, jumps, d=1):
    """Step path from (time, level) pairs; scalar levels are allowed for d = 1."""
    return StepPath.from_jumps(T, [(t, np.atleast_1d(np.asarray(v, float))) for t, v in jumps], d=d)


@pytest.fixture
def jp():
    return jump_path
