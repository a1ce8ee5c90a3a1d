"""
Shared feeders and measurement builders
"""

import numpy as np
import pytest

from modules.identify import LineProblem
from modules.network import (
    LoadGenConfig,
    build_network,
    line_impedance,
    synth_load_profiles,
    tree_topology,
)
from modules.phasor_core import angle
from modules.simulator import MeasurementSet, measure, solve_snapshots
from utils.seeding import split_seed

CHAIN_PARENTS = [None] + list(range(10))
BRANCH_PARENTS = [None, 0, 1, 1]


def make_feeder(parents, length_m=50.0, snapshots=500, seed=7, preset='normal'):
    """Feeder with synthetic loads, its exact state and ideal meter readings"""
    topology = tree_topology(parents, line_impedance(length_m))
    loads = synth_load_profiles(
        LoadGenConfig.preset(preset), snapshots, split_seed(seed, 'loads'), range(1, len(parents))
    )
    net = build_network(topology, loads=loads)
    state = solve_snapshots(net)
    return net, state, measure(state)


@pytest.fixture(scope='session')
def chain10():
    return make_feeder(CHAIN_PARENTS)


@pytest.fixture(scope='session')
def branch_tree():
    return make_feeder(BRANCH_PARENTS, snapshots=1000)


@pytest.fixture
def feeder_factory():
    return make_feeder


def random_line(rng, m=50, noise_v=0.0, r=None, k=None):
    """
    Exact line data for a random physical line with lagging loads

    Returns:
        (LineProblem, true impedance)
    """
    r = rng.uniform(0.02, 0.2) if r is None else r
    k = rng.uniform(0.7, 1.5) if k is None else k
    z = complex(r, r * k)
    v_down = 225.0 + 5.0 * rng.random(m)
    pf = rng.uniform(0.92, 1.0, m)
    j = rng.uniform(10.0, 50.0, m) * np.exp(-1j * np.arccos(pf))
    v_up = np.abs(v_down + j * z)
    if noise_v:
        v_up = v_up + noise_v * rng.standard_normal(m)
        v_down = v_down + noise_v * rng.standard_normal(m)
    return LineProblem(v_up, v_down, j), z


@pytest.fixture
def line_factory():
    return random_line


def backward_chain(z, i_local, v_leaf):
    """
    Meter readings of a chain built from the leaf towards the substation

    Args:
        z: Impedances of lines 1..N
        i_local: Consumed currents in local references, (M, N+1)
        v_leaf: RMS voltage of node N

    Returns:
        MeasurementSet
    """
    n_lines = len(z)
    m = i_local.shape[0]
    v = np.zeros((m, n_lines + 1))
    v[:, n_lines] = v_leaf
    j = i_local[:, n_lines].copy()
    for n in range(n_lines, 0, -1):
        upstream = v[:, n] + j * z[n - 1]
        v[:, n - 1] = np.abs(upstream)
        j = i_local[:, n - 1] + j * np.exp(-1j * angle(upstream))
    i_local = i_local.copy()
    i_local[:, 0] = 0.0
    theta = np.where(np.abs(i_local) > 0, angle(i_local), 0.0)
    return MeasurementSet(v=v, i_mag=np.abs(i_local), theta=theta)


@pytest.fixture
def chain_builder():
    return backward_chain
