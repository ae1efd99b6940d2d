import numpy as np
import pytest

from riscal.channel import crandn
from riscal.model import RisConfig, sample_deviated_table
from riscal.schedule import build_schedule


def random_instance(rng, m_r, m_ris, bits, o_groups=1):
    """Random channel, deviated table and schedule for small oracle checks."""
    cfg = RisConfig(m_ris=m_ris, bits=bits, m_r=m_r, o_groups=o_groups)
    table = sample_deviated_table(cfg, np.deg2rad(20), rng.integers(2**32))
    sched = build_schedule(cfg, rng.integers(2**32))
    h_cas = crandn(rng, (m_r, m_ris))
    return cfg, table, sched, h_cas


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
