"""
Functions for loading and saving data files
"""

import json
import logging
import os

import pandas as pd

from config import app_config
from modules.experiment import Scenario
from modules.network import LoadGenConfig, build_network, synth_load_profiles
from utils.data_processor import (
    frame_to_load_profiles,
    frame_to_measurements,
    ground_truth_frame,
    load_profiles_to_frame,
    measurements_to_frame,
    trace_to_frame,
)
from utils.exceptions import InvalidConfig
from utils.seeding import split_seed

logger = logging.getLogger(__name__)

_READ_ERRORS = (OSError, ValueError, pd.errors.ParserError, pd.errors.EmptyDataError)


def load_json(file_path):
    """
    Load a JSON document

    Raises:
        InvalidConfig: The file is missing or not valid JSON
    """
    try:
        with open(file_path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidConfig(f"cannot read {file_path}: {e}") from e


def read_csv(file_path, what):
    if not os.path.exists(file_path):
        raise InvalidConfig(f"{what} file {file_path} not found")
    try:
        return pd.read_csv(file_path, float_precision='round_trip')
    except _READ_ERRORS as e:
        raise InvalidConfig(f"cannot parse {what} file {file_path}: {e}") from e


def load_topology(file_path):
    """Topology dict with load_csv paths resolved against the file's folder"""
    spec = load_json(file_path)
    if not isinstance(spec, dict) or not isinstance(spec.get('nodes'), list):
        raise InvalidConfig(f"{file_path} is not a topology document")
    base = os.path.dirname(os.path.abspath(file_path))
    for entry in spec['nodes']:
        if isinstance(entry, dict) and entry.get('load_csv'):
            entry['load_csv'] = os.path.join(base, entry['load_csv'])
    return spec


def load_network(file_path, snapshots=None, seed=None, preset='normal'):
    """
    Build a feeder from a topology file

    Nodes with a load_csv get their profile from that file; every other
    non-root node gets a synthetic profile when a seed is given.

    Args:
        file_path: Topology JSON
        snapshots: Number of snapshots to keep (the file's 'snapshots' if None)
        seed: Seed for synthetic profiles, None to skip them
        preset: Synthetic load preset name

    Returns:
        FeederNetwork
    """
    spec = load_topology(file_path)
    snapshots = snapshots or spec.get('snapshots')
    spec['snapshots'] = snapshots

    loads = {}
    frames = {}
    for entry in spec['nodes']:
        path = entry.get('load_csv')
        if path and entry.get('parent') is not None:
            if path not in frames:
                frames[path] = read_csv(path, "load profile")
            node = int(entry['id'])
            loads.update(frame_to_load_profiles(frames[path], nodes=[node], snapshots=snapshots))

    if seed is not None:
        if snapshots is None:
            raise InvalidConfig("a snapshot count is needed to synthesize load profiles")
        missing = [
            int(e['id']) for e in spec['nodes']
            if e.get('parent') is not None and int(e['id']) not in loads
        ]
        loads.update(
            synth_load_profiles(
                LoadGenConfig.preset(preset), int(snapshots), split_seed(seed, 'loads'), missing
            )
        )
    return build_network(spec, loads=loads)


def load_measurements(file_path):
    return frame_to_measurements(read_csv(file_path, 'measurement'))


def save_measurements(ms, file_path):
    _ensure_parent(file_path)
    measurements_to_frame(ms).to_csv(
        file_path, index=False, float_format=app_config.MEASUREMENT_FLOAT_FORMAT
    )
    logger.info("Wrote %d snapshots to %s", ms.snapshots, file_path)


def save_ground_truth(state, file_path):
    _ensure_parent(file_path)
    ground_truth_frame(state).to_csv(
        file_path, index=False, float_format=app_config.MEASUREMENT_FLOAT_FORMAT
    )
    logger.info("Wrote ground truth to %s", file_path)


def save_load_profiles(loads, file_path):
    _ensure_parent(file_path)
    load_profiles_to_frame(loads).to_csv(
        file_path, index=False, float_format=app_config.MEASUREMENT_FLOAT_FORMAT
    )
    logger.info("Wrote load profiles of %d nodes to %s", len(loads), file_path)


def save_table(frame, file_path):
    """Write a results table with the fixed float format"""
    _ensure_parent(file_path)
    frame.to_csv(file_path, index=False, float_format=app_config.CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.info("Wrote %d rows to %s", len(frame), file_path)


def save_tables(tables, out_dir):
    """Write every named table into out_dir using the configured file names"""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, frame in tables.items():
        path = os.path.join(out_dir, app_config.RESULT_FILES.get(name, f"{name}.csv"))
        save_table(frame, path)
        paths[name] = path
    return paths


def save_trace(trace, file_path):
    """Message trace as JSON lines"""
    _ensure_parent(file_path)
    frame = trace_to_frame(trace)
    with open(file_path, 'w', encoding='utf-8') as f:
        if not frame.empty:
            f.write(frame.to_json(orient='records', lines=True))
            f.write("\n")
    logger.info("Wrote %d trace entries to %s", len(frame), file_path)


def load_trace(file_path):
    try:
        return pd.read_json(file_path, orient='records', lines=True)
    except _READ_ERRORS as e:
        raise InvalidConfig(f"cannot parse trace file {file_path}: {e}") from e


def load_scenario(name_or_path):
    """
    Load a scenario from a JSON path or a bundled scenario name

    Returns:
        Scenario
    """
    path = name_or_path
    if not os.path.exists(path) and name_or_path in app_config.BUNDLED_SCENARIOS:
        path = os.path.join(app_config.SCENARIO_DIR, f"{name_or_path}.json")
    data = load_json(path)
    if not isinstance(data, dict):
        raise InvalidConfig(f"{path} is not a scenario document")
    return Scenario.from_dict(data)


def _ensure_parent(file_path):
    parent = os.path.dirname(os.path.abspath(file_path))
    os.makedirs(parent, exist_ok=True)
