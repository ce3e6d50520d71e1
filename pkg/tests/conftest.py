import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from onestep.bayes_bootstrap import RngStream
from onestep.core import CausalData

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return RngStream(20240611)


def random_causal(gen, n, d=1, mar=False):
    x = gen.random((n, d))
    a = (gen.random(n) < 0.5).astype(int)
    a[0], a[1] = 1, 0
    y = gen.standard_normal(n)
    if mar:
        y = np.where(a == 1, y, np.nan)
    return CausalData(x=x, a=a, y=y, mar=mar)
