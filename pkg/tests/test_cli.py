import json
import os

import numpy as np
import pandas as pd
import pytest

from app import main
from config import app_config
from modules.experiment import Scenario, run_scenario
from modules.simulator import MeasurementSet
from utils.data_loader import load_measurements, load_network, load_trace, save_measurements
from utils.exceptions import InconsistentSnapshotLengths

CHAIN = os.path.join(app_config.TOPOLOGY_DIR, 'chain10_50m.json')
TREE = os.path.join(app_config.TOPOLOGY_DIR, 'tree_branch.json')


@pytest.fixture
def simulated(tmp_path):
    out = tmp_path / 'meas.csv'
    truth = tmp_path / 'truth.csv'
    code = main([
        'simulate', '--topology', CHAIN, '--snapshots', '200', '--seed', '5',
        '--out', str(out), '--truth', str(truth),
    ])
    assert code == 0
    return out


def test_simulate_writes_readings(simulated, tmp_path):
    frame = pd.read_csv(simulated)
    assert list(frame.columns) == app_config.MEASUREMENT_COLUMNS
    assert len(frame) == 200 * 11
    assert load_measurements(simulated).snapshots == 200
    assert len(pd.read_csv(tmp_path / 'truth.csv')) == 200 * 11


def test_simulate_with_noise_is_seeded(tmp_path):
    paths = []
    for name in ('a.csv', 'b.csv'):
        path = tmp_path / name
        args = ['simulate', '--topology', CHAIN, '--snapshots', '50', '--noise-pct', '0.5', '--seed', '2', '--out', str(path)]
        assert main(args) == 0
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_identify_writes_one_row_per_line(simulated, tmp_path):
    out = tmp_path / 'results.csv'
    code = main([
        'identify', '--measurements', str(simulated), '--topology', CHAIN,
        '--algo', 'bci', '--xr', '0.7', '--out', str(out),
    ])
    assert code == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == app_config.RESULT_COLUMNS
    assert len(frame) == 10
    assert (frame['rel_err'] < 1e-4).all()


def test_identify_matches_experiment_cell(simulated, tmp_path):
    out = tmp_path / 'results.csv'
    code = main([
        'identify', '--measurements', str(simulated), '--topology', CHAIN,
        '--algo', 'bci', '--xr', '0.7', '--eps', '1e-12', '--max-iters', '400', '--out', str(out),
    ])
    assert code == 0
    cli = pd.read_csv(out)

    sc = Scenario.from_dict({
        'name': 'pipeline',
        'network': {'kind': 'chain', 'n_lines': 10, 'line_length_m': 50},
        'snapshot_counts': [200],
        'master_seed': 5,
        'n_jobs': 1,
        'algorithms': [{'variant': 'bci', 'xr_ratio': 0.7, 'eps': 1e-12, 'max_iters': 400}],
    })
    record = run_scenario(sc)[0]
    np.testing.assert_allclose(cli['z_re_est'], record.z_hat.real, rtol=1e-6)
    np.testing.assert_allclose(cli['z_im_est'], record.z_hat.imag, rtol=1e-6)


def test_dbci_writes_trace(tmp_path):
    meas = tmp_path / 'tree.csv'
    assert main(['simulate', '--topology', TREE, '--snapshots', '300', '--seed', '1', '--out', str(meas)]) == 0
    trace = tmp_path / 'trace.jsonl'
    out = tmp_path / 'dbci.csv'
    code = main([
        'dbci', '--topology', TREE, '--measurements', str(meas),
        '--trace', str(trace), '--out', str(out),
    ])
    assert code == 0
    entries = load_trace(trace)
    assert list(entries.columns) == app_config.TRACE_COLUMNS
    assert len(entries) == 3
    assert entries['to'].tolist()[-1] == 0
    assert len(pd.read_csv(out)) == 3


def test_experiment_writes_tables(tmp_path):
    scenario = tmp_path / 'scenario.json'
    scenario.write_text(json.dumps({
        'name': 'cli',
        'network': {'kind': 'chain', 'n_lines': 2, 'line_length_m': 50},
        'noise_classes': [0.0, 0.5],
        'snapshot_counts': [60, 120],
        'realizations': 3,
        'master_seed': 4,
        'algorithms': [{'variant': 'lbci'}, {'variant': 'bci', 'max_iters': 10, 'report_exhaustion': False}],
    }))
    out_dir = tmp_path / 'out'
    code = main(['experiment', '--scenario', str(scenario), '--out-dir', str(out_dir), '--realizations', '2', '--n-jobs', '1'])
    assert code == 0
    for name in app_config.RESULT_FILES.values():
        assert (out_dir / name).exists()
    results = pd.read_csv(out_dir / 'results.csv')
    assert len(results) == 2 * 2 * 2 * 2 * 2


def test_malformed_topology_exits_2(tmp_path, simulated):
    broken = tmp_path / 'broken.json'
    broken.write_text("{ not json")
    code = main([
        'identify', '--measurements', str(simulated), '--topology', str(broken),
        '--algo', 'lbci', '--out', str(tmp_path / 'x.csv'),
    ])
    assert code == app_config.EXIT_VALIDATION


def test_cyclic_topology_exits_2(tmp_path):
    topology = tmp_path / 'cycle.json'
    topology.write_text(json.dumps({'nodes': [
        {'id': 0, 'parent': None},
        {'id': 1, 'parent': 2, 'z_re': 0.02, 'z_im': 0.014},
        {'id': 2, 'parent': 1, 'z_re': 0.02, 'z_im': 0.014},
    ]}))
    code = main(['simulate', '--topology', str(topology), '--snapshots', '10', '--out', str(tmp_path / 'm.csv')])
    assert code == app_config.EXIT_VALIDATION


def test_bad_arguments_exit_2():
    assert main(['identify', '--algo', 'newton']) == app_config.EXIT_VALIDATION
    assert main([]) == app_config.EXIT_VALIDATION


def test_rank_deficient_data_exits_3(tmp_path):
    topology = tmp_path / 'line.json'
    topology.write_text(json.dumps({'nodes': [
        {'id': 0, 'parent': None},
        {'id': 1, 'parent': 0, 'z_re': 0.02, 'z_im': 0.014},
    ]}))
    meas = tmp_path / 'flat.csv'
    ms = MeasurementSet(
        v=np.tile([230.0, 229.0], (4, 1)),
        i_mag=np.tile([0.0, 5.0], (4, 1)),
        theta=np.tile([0.0, -0.3], (4, 1)),
    )
    save_measurements(ms, meas)
    code = main([
        'identify', '--measurements', str(meas), '--topology', str(topology),
        '--algo', 'lbci-old', '--out', str(tmp_path / 'r.csv'),
    ])
    assert code == app_config.EXIT_NUMERICAL


def test_topology_loads_synthetic_profiles():
    net = load_network(CHAIN, snapshots=30, seed=3)
    assert net.snapshots == 30
    assert sorted(net.loads) == list(range(1, 11))
    assert net.line_xr[5] == 0.7


def test_exported_load_profiles_replay_the_simulation(tmp_path):
    loads = tmp_path / 'loads.csv'
    first = tmp_path / 'first.csv'
    assert main([
        'simulate', '--topology', CHAIN, '--snapshots', '40', '--seed', '9',
        '--out', str(first), '--loads-out', str(loads),
    ]) == 0
    assert len(pd.read_csv(loads)) == 40 * 10

    with open(CHAIN, encoding='utf-8') as f:
        topology = json.load(f)
    for entry in topology['nodes']:
        if entry['parent'] is not None:
            entry['load_csv'] = 'loads.csv'
    replay_topology = tmp_path / 'replay.json'
    replay_topology.write_text(json.dumps(topology), encoding='utf-8')

    second = tmp_path / 'second.csv'
    assert main([
        'simulate', '--topology', str(replay_topology), '--snapshots', '40', '--out', str(second),
    ]) == 0
    assert first.read_bytes() == second.read_bytes()


def test_duplicated_reading_exits_2(simulated, tmp_path):
    frame = pd.read_csv(simulated)
    doubled = tmp_path / 'doubled.csv'
    pd.concat([frame, frame.iloc[[25]]], ignore_index=True).to_csv(doubled, index=False)
    code = main([
        'identify', '--measurements', str(doubled), '--topology', CHAIN,
        '--algo', 'lbci', '--out', str(tmp_path / 'r.csv'),
    ])
    assert code == app_config.EXIT_VALIDATION
    with pytest.raises(InconsistentSnapshotLengths, match='duplicated'):
        load_measurements(doubled)


def test_saved_measurements_read_back_exactly(branch_tree, tmp_path):
    _, _, ms = branch_tree
    path = tmp_path / 'exact.csv'
    save_measurements(ms, path)
    again = load_measurements(path)
    np.testing.assert_array_equal(again.v, ms.v)
    np.testing.assert_array_equal(again.i_mag, ms.i_mag)
    np.testing.assert_array_equal(again.theta, ms.theta)


def test_bundled_tree_scenario_runs_from_cli(tmp_path):
    out_dir = tmp_path / 'tree'
    code = main(['experiment', '--scenario', 'tree_fig2', '--out-dir', str(out_dir)])
    assert code == 0
    results = pd.read_csv(out_dir / 'results.csv')
    assert len(results) == 4 * 3


@pytest.mark.parametrize('flags', [[], ['--xr', '0.7', '--mu', '0.1'], ['--ignore-topology-xr', '--max-iters', '50']])
def test_identify_and_dbci_agree(simulated, tmp_path, flags):
    central = tmp_path / 'central.csv'
    decentral = tmp_path / 'decentral.csv'
    assert main([
        'identify', '--measurements', str(simulated), '--topology', CHAIN,
        '--algo', 'bci', '--out', str(central), *flags,
    ]) == 0
    assert main([
        'dbci', '--topology', CHAIN, '--measurements', str(simulated),
        '--trace', str(tmp_path / 'trace.jsonl'), '--out', str(decentral), *flags,
    ]) == 0
    first, second = pd.read_csv(central), pd.read_csv(decentral)
    assert first['algo'].tolist() == second['algo'].tolist()
    assert first['iters'].tolist() == second['iters'].tolist()
    for column in ('z_re_est', 'z_im_est'):
        np.testing.assert_allclose(first[column], second[column], rtol=0, atol=1e-12)


def test_topology_ratio_used_unless_ignored(simulated, tmp_path):
    names = {}
    for label, extra in (('topology', []), ('ignored', ['--ignore-topology-xr'])):
        out = tmp_path / f"{label}.csv"
        assert main([
            'identify', '--measurements', str(simulated), '--topology', CHAIN,
            '--algo', 'lbci-old', '--out', str(out), *extra,
        ]) == 0
        names[label] = pd.read_csv(out)['algo'].iloc[0]
    assert names == {'topology': 'lbci-old_xr', 'ignored': 'lbci-old'}
