"""
Monte Carlo experiments: scenarios, jobs, per-line records and summary tables
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from config import app_config
from modules.identify import AlgoConfig, identify_tree
from modules.network import (
    LoadGenConfig,
    build_network,
    chain_topology,
    line_impedance,
    synth_load_profiles,
    tree_topology,
)
from modules.simulator import NoiseSpec, add_noise, measure, solve_snapshots
from utils.exceptions import FeederIdError, IncompleteSweep, InvalidConfig
from utils.seeding import split_seed

logger = logging.getLogger(__name__)

NOISE_POLICIES = ('prefix', 'fresh')


@dataclass(frozen=True)
class NetworkSpec:
    """Feeder description of a scenario; lengths in metres"""

    kind: str = 'chain'
    n_lines: int = 10
    line_length_m: float = app_config.SHORT_LINE_M
    ohm_per_km: float = app_config.LINE_OHM_PER_KM
    xr_ratio: float = app_config.LINE_XR_RATIO
    parents: tuple = None

    def topology(self):
        z = line_impedance(self.line_length_m, self.ohm_per_km, self.xr_ratio)
        if self.kind == 'chain':
            if self.n_lines < 1:
                raise InvalidConfig("a chain needs at least one line")
            return chain_topology(self.n_lines, z)
        if self.kind == 'tree':
            if not self.parents:
                raise InvalidConfig("a tree network needs a parents list")
            return tree_topology(list(self.parents), z)
        raise InvalidConfig(f"unknown network kind {self.kind!r}")


@dataclass(frozen=True)
class Scenario:
    """
    One experiment grid

    noise_classes are in percent of full scale (0.1 for the 0.1 %FS class).
    """

    name: str
    network: NetworkSpec
    algorithms: tuple
    load_preset: str = 'normal'
    noise_classes: tuple = (0.0,)
    snapshot_counts: tuple = (5000,)
    realizations: int = 1
    master_seed: int = 0
    noise_policy: str = 'prefix'
    n_jobs: int = app_config.N_JOBS
    auto_mu: tuple = ()
    noisy_mu: float = app_config.NOISY_RUN_MU

    def __post_init__(self):
        if not self.algorithms:
            raise InvalidConfig(f"scenario {self.name} lists no algorithms")
        if self.realizations < 1:
            raise InvalidConfig("realizations must be at least 1")
        counts = list(self.snapshot_counts)
        if not counts or counts != sorted(counts) or counts[0] < 2:
            raise InvalidConfig("snapshot counts must be non-decreasing and at least 2")
        if any(pct < 0 for pct in self.noise_classes) or not self.noise_classes:
            raise InvalidConfig("noise classes must be non-negative percentages")
        if self.noise_policy not in NOISE_POLICIES:
            raise InvalidConfig(f"noise_policy must be one of {NOISE_POLICIES}")
        if not 0.0 <= self.noisy_mu <= 1.0:
            raise InvalidConfig("noisy_mu must lie in [0, 1]")
        labels = [a.name for a in self.algorithms]
        if len(set(labels)) != len(labels):
            raise InvalidConfig(f"algorithm labels must be unique, got {labels}")
        LoadGenConfig.preset(self.load_preset)

    def configs_for(self, noise_pct):
        """
        Algorithm settings for one noise class

        Algorithms listed in auto_mu left mu unset; they run with noisy_mu on
        noisy classes and unregularized on noiseless ones.
        """
        if noise_pct == 0:
            return self.algorithms
        return tuple(
            replace(cfg, mu=self.noisy_mu) if cfg.name in self.auto_mu else cfg
            for cfg in self.algorithms
        )

    @classmethod
    def from_dict(cls, data):
        """Build a scenario from its JSON form"""
        try:
            network = dict(data.get('network', {}))
            if network.get('parents') is not None:
                network['parents'] = tuple(network['parents'])
            algorithms = []
            auto_mu = []
            for entry in data['algorithms']:
                entry = dict(entry)
                if 'line_xr' in entry:
                    entry['line_xr'] = {int(k): float(v) for k, v in entry['line_xr'].items()}
                algorithms.append(AlgoConfig(**entry))
                if 'mu' not in entry:
                    auto_mu.append(algorithms[-1].name)
            return cls(
                name=data['name'],
                network=NetworkSpec(**network),
                algorithms=tuple(algorithms),
                load_preset=data.get('load_preset', 'normal'),
                noise_classes=tuple(float(p) for p in data.get('noise_classes', [0.0])),
                snapshot_counts=tuple(int(m) for m in data.get('snapshot_counts', [5000])),
                realizations=int(data.get('realizations', 1)),
                master_seed=int(data.get('master_seed', 0)),
                noise_policy=data.get('noise_policy', 'prefix'),
                n_jobs=int(data.get('n_jobs', app_config.N_JOBS)),
                auto_mu=tuple(auto_mu),
                noisy_mu=float(data.get('noisy_mu', app_config.NOISY_RUN_MU)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidConfig(f"malformed scenario: {e}") from e


@dataclass(frozen=True)
class ExperimentRecord:
    """Per-line results of one (algorithm, noise class, realization, M) cell"""

    scenario: str
    algorithm: str
    variant: str
    noise_pct: float
    realization: int
    snapshots: int
    lines: tuple
    z_true: np.ndarray
    z_hat: np.ndarray
    gamma_min: np.ndarray
    iterations: np.ndarray
    cond_J: np.ndarray
    cost_full: np.ndarray
    converged: np.ndarray

    @property
    def line_errors(self):
        return np.abs(self.z_true - self.z_hat) / np.abs(self.z_true)

    @property
    def log10_errors(self):
        return np.log10(np.maximum(self.line_errors, np.finfo(float).tiny))

    @property
    def aggregate_error_pct(self):
        """100 ||z - z_hat|| / ||z|| over the stacked impedance vector"""
        return 100.0 * float(np.linalg.norm(self.z_true - self.z_hat) / np.linalg.norm(self.z_true))

    def rows(self):
        errors = self.line_errors
        for k, (line_from, line_to) in enumerate(self.lines):
            yield {
                'algo': self.algorithm,
                'variant': self.variant,
                'noise_pct': self.noise_pct,
                'realization': self.realization,
                'snapshots': self.snapshots,
                'line_from': line_from,
                'line_to': line_to,
                'z_re_true': self.z_true[k].real,
                'z_im_true': self.z_true[k].imag,
                'z_re_est': self.z_hat[k].real,
                'z_im_est': self.z_hat[k].imag,
                'rel_err': errors[k],
                'gamma_min': self.gamma_min[k],
                'iters': int(self.iterations[k]),
                'cond_J': self.cond_J[k],
                'cost_full': self.cost_full[k],
            }


def make_record(scenario, cfg, noise_pct, realization, net, result, snapshots):
    """Collect an IdentificationResult into a record ordered by child node"""
    nodes = sorted(result.estimates)
    estimates = [result.estimates[n] for n in nodes]
    return ExperimentRecord(
        scenario=scenario,
        algorithm=cfg.name,
        variant=cfg.variant.value,
        noise_pct=float(noise_pct),
        realization=int(realization),
        snapshots=int(snapshots),
        lines=tuple((net.parents[n], n) for n in nodes),
        z_true=np.array([net.impedances[n] for n in nodes], dtype=complex),
        z_hat=np.array([e.z_hat for e in estimates], dtype=complex),
        gamma_min=np.array([float(np.min(e.gamma)) for e in estimates]),
        iterations=np.array([e.iterations for e in estimates]),
        cond_J=np.array([e.cond_J for e in estimates]),
        cost_full=np.array([e.cost_full for e in estimates]),
        converged=np.array([e.converged for e in estimates]),
    )


def build_scenario_network(sc):
    """Feeder with synthetic loads for the largest snapshot count"""
    gen_cfg = LoadGenConfig.preset(sc.load_preset)
    topology = sc.network.topology()
    n_nodes = len(topology['nodes'])
    loads = synth_load_profiles(
        gen_cfg,
        max(sc.snapshot_counts),
        split_seed(sc.master_seed, 'loads'),
        range(1, n_nodes),
    )
    return build_network(topology, loads=loads)


def noise_spec(sc, noise_pct, realization, fs_current, snapshots=None):
    labels = ['noise', noise_pct, realization]
    if snapshots is not None:
        labels.append(snapshots)
    return NoiseSpec(
        pct_fs=noise_pct / 100.0,
        seed=split_seed(sc.master_seed, *labels),
        fs_current=fs_current,
    )


def _run_job(sc, net, ideal, fs_current, noise_pct, realization):
    records = []
    with threadpool_limits(limits=1):
        if noise_pct > 0 and sc.noise_policy == 'prefix':
            full = add_noise(ideal, noise_spec(sc, noise_pct, realization, fs_current))
        else:
            full = ideal
        for m in sc.snapshot_counts:
            if noise_pct > 0 and sc.noise_policy == 'fresh':
                ms = add_noise(ideal.prefix(m), noise_spec(sc, noise_pct, realization, fs_current, m))
            else:
                ms = full.prefix(m)
            for cfg in sc.configs_for(noise_pct):
                try:
                    result = identify_tree(ms, net, cfg)
                except FeederIdError:
                    logger.error(
                        "Scenario %s failed: %s, noise %s%%, realization %d, M=%d",
                        sc.name, cfg.name, noise_pct, realization, m,
                    )
                    raise
                records.append(make_record(sc.name, cfg, noise_pct, realization, net, result, m))
    return records


def record_key(sc):
    order = {cfg.name: k for k, cfg in enumerate(sc.algorithms)}
    return lambda r: (order[r.algorithm], r.noise_pct, r.realization, r.snapshots)


def run_scenario(sc, n_jobs=None, realizations=None):
    """
    Run the full grid of a scenario

    Loads are fixed by the master seed; each (noise class, realization) job
    redraws only the meter noise. Records come back in canonical order.

    Args:
        sc: Scenario
        n_jobs: Worker count for joblib, defaults to the scenario's
        realizations: Optional override of the scenario's realization count

    Returns:
        List of ExperimentRecord
    """
    if realizations is not None:
        sc = replace(sc, realizations=int(realizations))
    n_jobs = sc.n_jobs if n_jobs is None else n_jobs

    net = build_scenario_network(sc)
    ideal = measure(solve_snapshots(net))
    fs_current = app_config.FS_CURRENT_FACTOR * float(np.max(ideal.i_mag))
    logger.info(
        "Scenario %s: %d lines, %d snapshots, %d jobs",
        sc.name, net.n_lines, ideal.snapshots, len(sc.noise_classes) * sc.realizations,
    )

    jobs = [(pct, r) for pct in sc.noise_classes for r in range(sc.realizations)]
    batches = Parallel(n_jobs=n_jobs)(
        delayed(_run_job)(sc, net, ideal, fs_current, pct, r) for pct, r in jobs
    )
    records = [rec for batch in batches for rec in batch]
    records.sort(key=record_key(sc))
    logger.info("Scenario %s produced %d records", sc.name, len(records))
    return records


def check_grid(records):
    """Raise IncompleteSweep unless records cover a full algorithm x class x realization x M grid"""
    if not records:
        raise IncompleteSweep("no experiment records to summarize")
    cells = {(r.algorithm, r.noise_pct, r.realization, r.snapshots) for r in records}
    axes = [set(c[k] for c in cells) for k in range(4)]
    expected = int(np.prod([len(a) for a in axes]))
    if len(cells) != len(records) or len(cells) != expected:
        raise IncompleteSweep(
            f"{len(records)} records cover {len(cells)} distinct cells, the grid has {expected}"
        )


def summarize(records):
    """
    Summary tables for plotting

    Returns:
        Dictionary with error_by_line (mean log10 per-line error),
        error_vs_m (mean aggregate error in percent, plus a supplementary median
        column) and cond_by_line (mean condition number)
    """
    check_grid(records)
    rows = []
    for r in records:
        for k, (line_from, line_to) in enumerate(r.lines):
            rows.append(
                {
                    'algo': r.algorithm,
                    'noise_pct': r.noise_pct,
                    'snapshots': r.snapshots,
                    'realization': r.realization,
                    'line_from': line_from,
                    'line_to': line_to,
                    'log10_rel_err': r.log10_errors[k],
                    'cond_J': r.cond_J[k],
                }
            )
    lines = pd.DataFrame(rows)
    error_by_line = (
        lines.groupby(['algo', 'noise_pct', 'snapshots', 'line_from', 'line_to'], sort=True)['log10_rel_err']
        .mean()
        .reset_index()
        .rename(columns={'log10_rel_err': 'log10_rel_err_mean'})
    )
    cond_by_line = (
        lines.groupby(['algo', 'line_from', 'line_to'], sort=True)['cond_J']
        .mean()
        .reset_index()
        .rename(columns={'cond_J': 'cond_J_mean'})
    )

    agg = pd.DataFrame(
        [
            {
                'algo': r.algorithm,
                'noise_pct': r.noise_pct,
                'snapshots': r.snapshots,
                'aggregate_err_pct': r.aggregate_error_pct,
            }
            for r in records
        ]
    )
    error_vs_m = (
        agg.groupby(['algo', 'noise_pct', 'snapshots'], sort=True)['aggregate_err_pct']
        .agg(aggregate_err_pct_mean='mean', aggregate_err_pct_median_supplementary='median')
        .reset_index()
    )
    return {
        'error_by_line': error_by_line,
        'error_vs_m': error_vs_m,
        'cond_by_line': cond_by_line,
    }
