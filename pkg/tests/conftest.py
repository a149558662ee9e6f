import numpy as np
import pytest

from bitvolt.grid import RadialNetwork, build_matrices
from bitvolt.plant import OperatingCondition


def make_two_bus(r=0.1, x=0.2, v0=1.0):
    return RadialNetwork(bus_count=1, edges=((0, 1),), r=[r], x=[x], v0=v0)


def make_chain3():
    # reference line: 0 -> 1 -> 2 with x = (0.2, 0.1), r = (0.1, 0.05)
    return RadialNetwork(bus_count=2, edges=((0, 1), (1, 2)),
                         r=[0.1, 0.05], x=[0.2, 0.1], v0=1.0)


def random_net(rng, n, x_range=(0.05, 0.5), r_range=(0.0, 0.1)):
    """Random radial tree built independently of the package generator."""
    edges = tuple((int(rng.integers(0, b)), b) for b in range(1, n + 1))
    return RadialNetwork(bus_count=n, edges=edges,
                         r=rng.uniform(*r_range, size=n),
                         x=rng.uniform(*x_range, size=n), v0=1.0)


def box_condition(n, p=None, q_u=None, v_band=(0.9025, 1.1025), q_cap=0.5):
    return OperatingCondition(
        p=np.zeros(n) if p is None else np.asarray(p, dtype=float),
        q_u=np.zeros(n) if q_u is None else np.asarray(q_u, dtype=float),
        v_min=np.full(n, v_band[0]), v_max=np.full(n, v_band[1]),
        q_min=np.full(n, -q_cap), q_max=np.full(n, q_cap))


@pytest.fixture
def two_bus():
    net = make_two_bus()
    return net, build_matrices(net)


@pytest.fixture
def chain3():
    net = make_chain3()
    return net, build_matrices(net)


@pytest.fixture
def chain3_cond():
    # heavy symmetric load pulling the profile below a +-5% band
    return box_condition(2, p=[-0.8, -0.8])
