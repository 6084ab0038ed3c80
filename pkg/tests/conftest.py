import numpy as np
import pytest

from vosmdma.scenario import ScenarioConfig, generate


@pytest.fixture(scope="session")
def tiny_scenario():
    """One of each service type on a 2x2 grid; shared read-only across tests."""
    return generate(ScenarioConfig(n_comm=2, n_pos=1, n_sense=1, m_subbands=2,
                                   n_subframes=2, a_max=2, p_max_dbm=20.0), seed=0)


@pytest.fixture(scope="session")
def mixed_scenario():
    """Fig-4-sized instance: 3 comm, 2 pos, 1 sense on a 1x3 grid."""
    return generate(ScenarioConfig(), seed=11)


def random_tiny_config(rng):
    """Small random instance template used by oracle-driven tests."""
    n_comm = int(rng.integers(0, 3))
    n_pos = int(rng.integers(0, 2))
    n_sense = int(rng.integers(0, 2))
    if n_comm + n_pos + n_sense == 0:
        n_comm = 1
    return ScenarioConfig(
        n_comm=n_comm, n_pos=n_pos, n_sense=n_sense,
        m_subbands=int(rng.integers(1, 3)), n_subframes=int(rng.integers(1, 3)),
        a_max=int(rng.integers(1, 3)), p_max_dbm=float(rng.uniform(10, 30)))


def assigned_entries(a):
    arr = np.asarray(getattr(a, "a", a))
    return list(zip(*np.nonzero(arr)))
