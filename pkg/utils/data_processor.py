"""
Functions for converting between data frames and domain objects
"""

import numpy as np
import pandas as pd

from config import app_config
from modules.network import LoadModel
from modules.simulator import MeasurementSet
from utils.exceptions import InconsistentSnapshotLengths, InvalidConfig, ProfileLengthMismatch


def _require_columns(frame, columns, what):
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise InvalidConfig(f"{what} is missing columns {missing}")


def measurements_to_frame(ms):
    """
    Flatten a MeasurementSet into one row per (snapshot, node)

    Substation rows (node 0) carry no current reading.
    """
    m, n = ms.v.shape
    snapshot = np.repeat(np.arange(m), n)
    node = np.tile(np.arange(n), m)
    i_rms = ms.i_mag.ravel().copy()
    theta = ms.theta.ravel().copy()
    i_rms[node == 0] = np.nan
    theta[node == 0] = np.nan
    return pd.DataFrame(
        {
            'snapshot': snapshot,
            'node': node,
            'v_rms': ms.v.ravel(),
            'i_rms': i_rms,
            'theta_rad': theta,
        },
        columns=app_config.MEASUREMENT_COLUMNS,
    )


def frame_to_measurements(frame):
    """
    Rebuild a MeasurementSet from measurement CSV rows

    Returns:
        MeasurementSet with node-indexed (M, N+1) arrays

    Raises:
        InconsistentSnapshotLengths: Some node lacks a reading for some
            snapshot, or has two
    """
    _require_columns(frame, app_config.MEASUREMENT_COLUMNS, "measurement table")
    duplicated = frame.duplicated(['snapshot', 'node'])
    if duplicated.any():
        first = frame.loc[duplicated, ['snapshot', 'node']].iloc[0]
        raise InconsistentSnapshotLengths(
            f"{int(duplicated.sum())} duplicated readings, first at snapshot "
            f"{first['snapshot']} node {first['node']}"
        )
    frame = frame.copy()
    frame.loc[frame['node'] == 0, ['i_rms', 'theta_rad']] = 0.0

    channels = {}
    for column in ('v_rms', 'i_rms', 'theta_rad'):
        wide = frame.pivot(index='snapshot', columns='node', values=column).sort_index(axis=0).sort_index(axis=1)
        channels[column] = wide

    wide_v = channels['v_rms']
    nodes = list(wide_v.columns)
    if nodes != list(range(len(nodes))):
        raise InvalidConfig(f"measurement nodes must be 0..N, got {nodes}")
    if any(w.isna().to_numpy().any() for w in channels.values()):
        raise InconsistentSnapshotLengths("some nodes are missing readings for some snapshots")
    return MeasurementSet(
        v=wide_v.to_numpy(dtype=float),
        i_mag=channels['i_rms'].to_numpy(dtype=float),
        theta=channels['theta_rad'].to_numpy(dtype=float),
    )


def ground_truth_frame(state):
    """Global node voltages and consumed currents, one row per (snapshot, node)"""
    m, n = state.v.shape
    return pd.DataFrame(
        {
            'snapshot': np.repeat(np.arange(m), n),
            'node': np.tile(np.arange(n), m),
            'v_re': state.v.real.ravel(),
            'v_im': state.v.imag.ravel(),
            'i_re': state.i.real.ravel(),
            'i_im': state.i.imag.ravel(),
        },
        columns=app_config.GROUND_TRUTH_COLUMNS,
    )


def frame_to_load_profiles(frame, nodes=None, snapshots=None, lagging=True):
    """
    Load models from load-profile rows

    Args:
        frame: Rows with snapshot, node, active_power_w, power_factor
        nodes: Restrict to these nodes (all nodes in the frame if None)
        snapshots: Keep the first M snapshots; a shorter profile is an error

    Returns:
        Dictionary node -> LoadModel
    """
    _require_columns(frame, app_config.LOAD_PROFILE_COLUMNS, "load profile table")
    wanted = sorted(frame['node'].unique()) if nodes is None else list(nodes)
    loads = {}
    for node in wanted:
        rows = frame[frame['node'] == node].sort_values('snapshot')
        if rows.empty:
            raise InvalidConfig(f"load profile has no rows for node {node}")
        if snapshots is not None:
            if len(rows) < snapshots:
                raise ProfileLengthMismatch(
                    f"node {node} has {len(rows)} load snapshots, {snapshots} requested"
                )
            rows = rows.iloc[:snapshots]
        loads[int(node)] = LoadModel(
            rows['active_power_w'].to_numpy(dtype=float),
            rows['power_factor'].to_numpy(dtype=float),
            lagging,
        )
    return loads


def load_profiles_to_frame(loads):
    frames = [
        pd.DataFrame(
            {
                'snapshot': np.arange(load.snapshots),
                'node': node,
                'active_power_w': load.power_w,
                'power_factor': load.power_factor,
            }
        )
        for node, load in sorted(loads.items())
    ]
    return pd.concat(frames, ignore_index=True)[app_config.LOAD_PROFILE_COLUMNS]


def records_to_frame(records):
    """Per-line results table in the canonical column order"""
    rows = [row for record in records for row in record.rows()]
    return pd.DataFrame(rows, columns=app_config.RESULT_COLUMNS)


def trace_to_frame(trace):
    return pd.DataFrame(list(trace), columns=app_config.TRACE_COLUMNS)
