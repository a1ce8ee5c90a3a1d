import logging
import time

import numpy as np
import pytest

from modules.network import FeederNetwork, LoadModel, build_network, tree_topology
from modules.phasor_core import angle
from modules.simulator import (
    GroundTruthState,
    MeasurementSet,
    NoiseSpec,
    add_noise,
    backward_propagate,
    forward_propagate,
    kirchhoff_residuals,
    measure,
    power_flow_check,
    solve_snapshot,
    solve_snapshots,
)
from utils.exceptions import BranchingUnsupported, InconsistentSnapshotLengths, ValidationError


def single_line(z, power_w, pf):
    loads = {1: LoadModel(np.asarray(power_w, dtype=float), np.asarray(pf, dtype=float))}
    return build_network(tree_topology([None, 0], z), loads=loads)


def test_single_line_voltage_divider():
    z = 0.02 + 0.014j
    net = single_line(z, [1000.0, 1000.0], [1.0, 1.0])
    state = solve_snapshots(net)
    expected = 230.0 * 52.9 / (52.9 + z)
    np.testing.assert_allclose(state.v[:, 1], expected, rtol=1e-12)
    np.testing.assert_allclose(state.j[:, 1], (230.0 - expected) / z, rtol=1e-9)


def test_open_circuit_limit():
    net = single_line(0.02 + 0.014j, np.zeros(3), np.ones(3))
    state = solve_snapshots(net)
    assert np.max(np.abs(state.v - 230.0)) < 1e-3
    assert np.max(np.abs(state.j)) < 0.01


def test_solve_snapshot_matches_batch(chain10):
    net, state, _ = chain10
    one = solve_snapshot(net, 17)
    np.testing.assert_allclose(one.v[0], state.v[17], rtol=1e-12)


def test_solve_snapshot_out_of_range(chain10):
    net, _, _ = chain10
    with pytest.raises(ValidationError):
        solve_snapshot(net, net.snapshots)


def test_kirchhoff_and_power_flow(chain10):
    net, state, _ = chain10
    kcl, kvl = kirchhoff_residuals(state, net)
    assert kcl < 1e-9
    assert kvl < 1e-9
    assert power_flow_check(state, net) < 1e-9


def test_power_flow_on_tree(branch_tree):
    net, state, _ = branch_tree
    assert power_flow_check(state, net) < 1e-9


def test_power_flow_detects_perturbation(chain10):
    net, state, _ = chain10
    v = state.v.copy()
    v[:, 3] *= 1.01
    assert power_flow_check(GroundTruthState(v, state.i, state.j), net) > 1e-4


def test_zero_current_network_has_no_residual():
    net = build_network(tree_topology([None, 0, 1], 0.02 + 0.014j))
    v = np.full((2, 3), 230.0 + 0j)
    zero = np.zeros((2, 3), dtype=complex)
    assert power_flow_check(GroundTruthState(v, zero, zero), net) == 0.0


def test_resistive_loads_measure_zero_angle():
    loads = {n: LoadModel(np.array([800.0, 1500.0]), np.ones(2)) for n in (1, 2, 3)}
    net = build_network(tree_topology([None, 0, 1, 2], 0.02 + 0.014j), loads=loads)
    ms = measure(solve_snapshots(net))
    np.testing.assert_allclose(ms.theta, 0.0, atol=1e-12)
    assert ms.snapshots == 2


def test_lagging_load_angle():
    net = single_line(0.02 + 0.014j, [2000.0], [0.95])
    ms = measure(solve_snapshots(net))
    assert ms.theta[0, 1] == pytest.approx(-np.arccos(0.95), abs=1e-9)
    assert ms.i_mag[0, 0] == 0.0


def test_measurement_shapes(chain10):
    net, _, ms = chain10
    assert ms.v.shape == ms.i_mag.shape == ms.theta.shape == (net.snapshots, net.n_nodes)


def test_measurement_set_validates():
    with pytest.raises(InconsistentSnapshotLengths):
        MeasurementSet(np.ones((3, 2)), np.ones((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ValidationError):
        MeasurementSet(-np.ones((3, 2)), np.ones((3, 2)), np.zeros((3, 2)))


def test_zero_noise_is_identity(chain10):
    _, _, ms = chain10
    noisy = add_noise(ms, NoiseSpec(pct_fs=0.0, seed=4))
    np.testing.assert_array_equal(noisy.v, ms.v)
    np.testing.assert_array_equal(noisy.i_mag, ms.i_mag)
    np.testing.assert_array_equal(noisy.theta, ms.theta)


def test_noise_is_seeded(chain10):
    _, _, ms = chain10
    spec = NoiseSpec(pct_fs=0.01, seed=9)
    first, second = add_noise(ms, spec), add_noise(ms, spec)
    np.testing.assert_array_equal(first.v, second.v)
    np.testing.assert_array_equal(first.theta, second.theta)
    assert not np.array_equal(first.v, add_noise(ms, NoiseSpec(pct_fs=0.01, seed=10)).v)


def test_voltage_noise_standard_deviation():
    m = 100_000
    ms = MeasurementSet(np.full((m, 2), 230.0), np.full((m, 2), 10.0), np.zeros((m, 2)))
    noisy = add_noise(ms, NoiseSpec(pct_fs=0.01, seed=1, fs_current=20.0))
    assert np.std(noisy.v[:, 1] - 230.0) == pytest.approx(1.25, rel=0.02)


def test_noise_prefix_consistent(chain10):
    _, _, ms = chain10
    spec = NoiseSpec(pct_fs=0.005, seed=21, fs_current=100.0)
    full = add_noise(ms, spec)
    part = add_noise(ms.prefix(120), spec)
    np.testing.assert_array_equal(full.prefix(120).v, part.v)
    np.testing.assert_array_equal(full.prefix(120).i_mag, part.i_mag)


def test_noise_is_mean_zero():
    m = 5
    ideal = MeasurementSet(
        np.full((m, 2), 230.0),
        np.column_stack([np.zeros(m), np.full(m, 10.0)]),
        np.column_stack([np.zeros(m), np.full(m, 0.3)]),
    )
    replicates = [add_noise(ideal, NoiseSpec(pct_fs=0.01, seed=seed, fs_current=20.0)) for seed in range(1000)]
    # 4 sigma per entry over 20 entries
    for channel, sigma in (('v', 1.25), ('i_mag', 0.1), ('theta', np.pi / 3 * 0.005)):
        mean = np.mean([getattr(r, channel) for r in replicates], axis=0)
        np.testing.assert_array_less(np.abs(mean - getattr(ideal, channel)), 4 * sigma / np.sqrt(1000))


def test_negative_currents_are_clipped_and_reported(caplog):
    m = 2000
    ideal = MeasurementSet(
        np.full((m, 2), 230.0), np.column_stack([np.zeros(m), np.full(m, 0.05)]), np.zeros((m, 2))
    )
    with caplog.at_level(logging.WARNING, logger='modules.simulator'):
        noisy = add_noise(ideal, NoiseSpec(pct_fs=0.01, seed=3, fs_current=20.0))
    assert noisy.i_mag.min() >= 0.0
    assert 'Clipped' in caplog.text
    # clipped readings pull the mean of a small current upwards
    assert noisy.i_mag[:, 1].mean() > 0.06


@pytest.mark.slow
def test_nodal_solution_at_5000_snapshots(feeder_factory):
    net, _, _ = feeder_factory([None] + list(range(10)), snapshots=5000)
    start = time.perf_counter()
    state = solve_snapshots(net)
    elapsed = time.perf_counter() - start
    kcl, kvl = kirchhoff_residuals(state, net)
    assert max(kcl, kvl, power_flow_check(state, net)) < 1e-9
    assert elapsed < 5.0


def test_backward_with_lossless_lines():
    net = FeederNetwork(parents={0: None, 1: 0, 2: 1}, impedances={1: 0j, 2: 0j})
    v = np.full((4, 3), 230.0)
    rng = np.random.default_rng(0)
    i_local = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    prop = backward_propagate(net, v, i_local)
    np.testing.assert_array_equal(prop.increments, 0.0)
    np.testing.assert_allclose(prop.line_currents[:, 1], i_local[:, 1] + i_local[:, 2])


def test_backward_matches_nodal_solution(chain10):
    net, state, ms = chain10
    prop = backward_propagate(net, ms.v, ms.local_currents())
    true_phase = angle(state.v)
    for parent, child in net.edges:
        np.testing.assert_allclose(
            prop.increments[:, child], true_phase[:, parent] - true_phase[:, child], atol=1e-9
        )
    np.testing.assert_allclose(prop.node_phases, true_phase, atol=1e-9)
    truth = state.local_line_currents()
    np.testing.assert_allclose(prop.line_currents[:, 1:], truth[:, 1:], rtol=1e-9)


def test_backward_resolves_branch_tree(branch_tree):
    net, state, ms = branch_tree
    prop = backward_propagate(net, ms.v, ms.local_currents())
    i_local = ms.local_currents()
    trunk = (
        i_local[:, 1]
        + prop.line_currents[:, 2] * np.exp(-1j * prop.increments[:, 2])
        + prop.line_currents[:, 3] * np.exp(-1j * prop.increments[:, 3])
    )
    np.testing.assert_allclose(prop.line_currents[:, 1], trunk, rtol=1e-12)
    np.testing.assert_allclose(trunk, state.local_line_currents()[:, 1], rtol=1e-9)


def test_forward_agrees_with_backward(chain10):
    net, state, ms = chain10
    i_local = ms.local_currents()
    fwd = forward_propagate(net, ms.v0, state.j[:, 1], i_local)
    bwd = backward_propagate(net, ms.v, i_local)
    np.testing.assert_allclose(fwd.line_currents[:, 1:], bwd.line_currents[:, 1:], rtol=1e-9)
    np.testing.assert_allclose(fwd.voltages, ms.v, rtol=1e-9)
    assert fwd.closure < 1e-6


def test_forward_lossless_chain():
    net = FeederNetwork(parents={0: None, 1: 0, 2: 1}, impedances={1: 0j, 2: 0j})
    i_local = np.array([[0.0, 2.0 + 1.0j, 3.0 - 0.5j]])
    j1 = np.array([5.0 + 0.5j])
    fwd = forward_propagate(net, np.array([230.0]), j1, i_local)
    np.testing.assert_allclose(fwd.voltages, 230.0)
    np.testing.assert_allclose(fwd.line_currents[0, 2], j1[0] - i_local[0, 1])
    assert fwd.closure == pytest.approx(0.0, abs=1e-12)


def test_forward_rejects_tree(branch_tree):
    net, state, ms = branch_tree
    with pytest.raises(BranchingUnsupported):
        forward_propagate(net, ms.v0, state.j[:, 1], ms.local_currents())
