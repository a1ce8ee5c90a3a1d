"""
Radial feeder topology, line impedances and per-node load models
"""

import logging
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from config import app_config
from utils.exceptions import (
    CycleDetected,
    DisconnectedNode,
    InvalidConfig,
    NonPositiveResistance,
    ProfileLengthMismatch,
)
from utils.seeding import stream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoadModel:
    """
    Per-snapshot demand of one node

    Args:
        power_w: Active power per snapshot at nominal voltage (watts)
        power_factor: Power factor per snapshot, in (0, 1]
        lagging: True for inductive loads
    """

    power_w: np.ndarray
    power_factor: np.ndarray
    lagging: bool = True

    def __post_init__(self):
        power = np.asarray(self.power_w, dtype=float)
        pf = np.asarray(self.power_factor, dtype=float)
        if power.ndim != 1 or power.shape != pf.shape:
            raise ProfileLengthMismatch(
                f"power profile has {power.size} entries but power factor has {pf.size}"
            )
        if np.any(power < 0) or not np.all(np.isfinite(power)):
            raise InvalidConfig("active power must be finite and non-negative")
        if np.any(pf <= 0) or np.any(pf > 1):
            raise InvalidConfig("power factor must lie in (0, 1]")
        object.__setattr__(self, 'power_w', power)
        object.__setattr__(self, 'power_factor', pf)

    @property
    def snapshots(self):
        return self.power_w.size

    def apparent_power(self):
        """S = P (1 + i sign tan(acos pf)) with the power floor applied"""
        power = np.maximum(self.power_w, app_config.POWER_FLOOR_W)
        sign = 1.0 if self.lagging else -1.0
        return power * (1.0 + 1j * sign * np.tan(np.arccos(self.power_factor)))

    def impedance(self, nominal_voltage=app_config.NOMINAL_VOLTAGE):
        """Equivalent load impedance per snapshot, |V_nom|^2 / conj(S)"""
        return nominal_voltage**2 / np.conj(self.apparent_power())

    def prefix(self, m):
        return LoadModel(self.power_w[:m], self.power_factor[:m], self.lagging)


@dataclass(frozen=True)
class TraversalPlan:
    """
    Leaf-to-root processing order of a feeder

    order lists edges (parent, child) so that every edge comes after all
    edges of the subtree below it.
    """

    order: tuple
    children: dict
    ancestors: dict

    @property
    def nodes(self):
        """Non-root nodes in processing order"""
        return tuple(child for _, child in self.order)


@dataclass(frozen=True)
class FeederNetwork:
    """
    Validated radial feeder rooted at the substation (node 0)

    Lines are keyed by their child node: line n joins parents[n] and n.
    """

    parents: dict
    impedances: dict
    loads: dict = field(default_factory=dict)
    line_xr: dict = field(default_factory=dict)
    nominal_voltage: float = app_config.NOMINAL_VOLTAGE
    snapshots: int = None
    graph: nx.DiGraph = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.graph is None:
            object.__setattr__(self, 'graph', feeder_graph(self.parents))

    @property
    def n_nodes(self):
        return len(self.parents)

    @property
    def n_lines(self):
        return len(self.parents) - 1

    @property
    def edges(self):
        return [(self.parents[n], n) for n in sorted(self.parents) if n != 0]

    def children(self, node):
        return sorted(self.graph.successors(node))

    @property
    def is_chain(self):
        return all(degree <= 1 for _, degree in self.graph.out_degree())

    def impedance_vector(self):
        """True impedances ordered by child node 1..N"""
        return np.array([self.impedances[n] for n in range(1, self.n_nodes)], dtype=complex)

    def to_topology(self):
        """Serialize to the topology JSON layout"""
        nodes = []
        for node in sorted(self.parents):
            entry = {'id': node, 'parent': self.parents[node]}
            if node != 0:
                z = self.impedances[node]
                entry.update({'z_re': z.real, 'z_im': z.imag})
                if node in self.line_xr:
                    entry['xr_ratio'] = self.line_xr[node]
            nodes.append(entry)
        return {
            'nodes': nodes,
            'nominal_voltage': self.nominal_voltage,
            'snapshots': self.snapshots,
        }


def line_impedance(length_m, ohm_per_km=app_config.LINE_OHM_PER_KM, xr_ratio=app_config.LINE_XR_RATIO):
    """Series impedance r (1 + i k) of a line of the given length"""
    r = ohm_per_km * length_m / 1000.0
    return complex(r, r * xr_ratio)


def chain_topology(n_lines, z, xr_ratio=None, nominal_voltage=app_config.NOMINAL_VOLTAGE):
    """Topology dict for a chain 0-1-...-n_lines with identical lines"""
    return tree_topology([None] + list(range(n_lines)), z, xr_ratio, nominal_voltage)


def tree_topology(parents, z, xr_ratio=None, nominal_voltage=app_config.NOMINAL_VOLTAGE):
    """
    Topology dict from a parent list, parents[0] must be None

    Args:
        parents: parents[n] is the parent of node n
        z: Impedance used for every line, or a list indexed by child node
        xr_ratio: Optional known X/R ratio stored on every line
    """
    nodes = []
    for node, parent in enumerate(parents):
        entry = {'id': node, 'parent': parent}
        if parent is not None:
            zn = complex(z[node] if isinstance(z, (list, tuple, np.ndarray)) else z)
            entry.update({'z_re': zn.real, 'z_im': zn.imag})
            if xr_ratio is not None:
                entry['xr_ratio'] = xr_ratio
        nodes.append(entry)
    return {'nodes': nodes, 'nominal_voltage': nominal_voltage, 'snapshots': None}


def feeder_graph(parents):
    """
    Directed parent -> child graph of a feeder

    Nodes and edges are inserted in ascending node order, so successors
    are visited in ascending order by the traversals below.
    """
    graph = nx.DiGraph()
    graph.add_nodes_from(sorted(parents))
    graph.add_edges_from((parents[n], n) for n in sorted(parents) if parents[n] is not None)
    return graph


def _check_tree(parents):
    if 0 not in parents:
        raise DisconnectedNode("substation node 0 is missing")
    for node, parent in parents.items():
        if node != 0 and parent is None:
            raise DisconnectedNode(f"node {node} has no parent and is not the substation")
        if parent is not None and parent not in parents:
            raise DisconnectedNode(f"node {node} refers to unknown parent {parent}")

    graph = feeder_graph(parents)
    loops = list(nx.selfloop_edges(graph))
    if loops:
        raise CycleDetected(f"node {loops[0][0]} is its own parent")
    if parents[0] is not None:
        raise CycleDetected("substation node 0 cannot have a parent")
    if not nx.is_arborescence(graph):
        try:
            cycle = nx.find_cycle(graph)
        except nx.NetworkXNoCycle as e:
            raise DisconnectedNode("some nodes are not reachable from the substation") from e
        raise CycleDetected(f"cycle through nodes {[u for u, _ in cycle]}")
    return graph


def build_network(spec, loads=None):
    """
    Validate a topology description and build the feeder

    Args:
        spec: Topology dict {'nodes': [{'id', 'parent', 'z_re', 'z_im',
            'xr_ratio'?}], 'nominal_voltage'?, 'snapshots'?}
        loads: Optional mapping node -> LoadModel

    Returns:
        FeederNetwork

    Raises:
        CycleDetected, DisconnectedNode, NonPositiveResistance,
        ProfileLengthMismatch, InvalidConfig
    """
    entries = spec.get('nodes')
    if not entries:
        raise InvalidConfig("topology lists no nodes")

    parents = {}
    impedances = {}
    line_xr = {}
    for entry in entries:
        try:
            node = int(entry['id'])
            parent = entry.get('parent')
            parent = None if parent is None else int(parent)
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidConfig(f"malformed node entry {entry!r}: {e}") from e
        if node in parents:
            raise InvalidConfig(f"duplicate node id {node}")
        parents[node] = parent
        if parent is not None and parent != node:
            try:
                z = complex(float(entry['z_re']), float(entry['z_im']))
            except (KeyError, TypeError, ValueError) as e:
                raise InvalidConfig(f"line into node {node} needs numeric z_re and z_im") from e
            if not z.real > 0:
                raise NonPositiveResistance(f"line into node {node} has resistance {z.real}")
            impedances[node] = z
            if entry.get('xr_ratio') is not None:
                k = float(entry['xr_ratio'])
                if k <= 0:
                    raise InvalidConfig(f"xr_ratio of line into node {node} must be positive")
                line_xr[node] = k

    graph = _check_tree(parents)
    if sorted(parents) != list(range(len(parents))):
        raise InvalidConfig("node ids must be 0..N without gaps")

    snapshots = spec.get('snapshots')
    loads = dict(loads or {})
    for node, load in loads.items():
        if node not in parents or node == 0:
            raise InvalidConfig(f"load attached to invalid node {node}")
        if snapshots is None:
            snapshots = load.snapshots
        if load.snapshots != snapshots:
            raise ProfileLengthMismatch(
                f"node {node} has {load.snapshots} snapshots, expected {snapshots}"
            )

    nominal = float(spec.get('nominal_voltage') or app_config.NOMINAL_VOLTAGE)
    if nominal <= 0:
        raise InvalidConfig("nominal voltage must be positive")

    logger.debug("Built feeder with %d nodes and %d loads", len(parents), len(loads))
    return FeederNetwork(
        parents=parents,
        impedances=impedances,
        loads=loads,
        line_xr=line_xr,
        nominal_voltage=nominal,
        snapshots=None if snapshots is None else int(snapshots),
        graph=graph,
    )


def traversal_plan(net):
    """
    Reverse topological edge order (children before parents)

    Depth-first post-order from the substation over sorted children, so a
    chain of N lines yields lines N, N-1, ..., 1.
    """
    children = {n: tuple(net.children(n)) for n in net.graph}
    order = tuple(
        (net.parents[n], n) for n in nx.dfs_postorder_nodes(net.graph, source=0) if n != 0
    )
    ancestors = {n: p for n, p in net.parents.items() if p is not None}
    return TraversalPlan(order=tuple(order), children=children, ancestors=ancestors)


@dataclass(frozen=True)
class LoadGenConfig:
    """Parameters of the synthetic load generator"""

    pf_mean: float = 0.95
    pf_std: float = 0.05
    pf_min: float = 0.9
    pf_max: float = 1.0
    base_power_w: tuple = app_config.LOAD_BASE_POWER_W
    fluctuation: float = app_config.LOAD_FLUCTUATION
    daily_snapshots: int = app_config.LOAD_DAILY_SNAPSHOTS
    lagging: bool = True

    @classmethod
    def preset(cls, name):
        try:
            return cls(**app_config.LOAD_PRESETS[name])
        except KeyError as e:
            raise InvalidConfig(
                f"unknown load preset {name!r}, choose from {sorted(app_config.LOAD_PRESETS)}"
            ) from e

    def validate(self):
        if not 0.0 < self.pf_min <= self.pf_max <= 1.0:
            raise InvalidConfig(
                f"power factor clip interval [{self.pf_min}, {self.pf_max}] is empty or outside (0, 1]"
            )
        if self.pf_std < 0 or self.fluctuation < 0:
            raise InvalidConfig("standard deviations must be non-negative")
        low, high = self.base_power_w
        if not 0 <= low <= high:
            raise InvalidConfig(f"base power range {self.base_power_w} is invalid")
        if self.daily_snapshots < 1:
            raise InvalidConfig("daily_snapshots must be positive")


def daily_shape(m, phase=0.0, daily_snapshots=app_config.LOAD_DAILY_SNAPSHOTS):
    """Normalized residential demand shape with morning and evening peaks"""
    t = (np.arange(m) / daily_snapshots + phase) % 1.0
    morning = np.exp(-(((t - 0.32) / 0.06) ** 2))
    evening = 1.4 * np.exp(-(((t - 0.8) / 0.08) ** 2))
    return 0.35 + 0.15 * np.sin(2.0 * math.pi * t) ** 2 + morning + evening


def synth_load_profiles(gen_cfg, M, seed, nodes):
    """
    Generate seeded load profiles for the given nodes

    Each node draws from its own streams (one for power, one for power
    factor), so the first m snapshots do not depend on M.

    Args:
        gen_cfg: LoadGenConfig
        M: Number of snapshots
        seed: Integer seed
        nodes: Iterable of node ids receiving a load

    Returns:
        Dictionary node -> LoadModel
    """
    gen_cfg.validate()
    if M < 1:
        raise InvalidConfig("at least one snapshot is required")

    low, high = gen_cfg.base_power_w
    loads = {}
    for node in nodes:
        rng = stream(seed, 'load', node, 'power')
        base = rng.uniform(low, high)
        phase = rng.uniform(0.0, 1.0)
        noise = rng.standard_normal(M)
        shape = daily_shape(M, phase, gen_cfg.daily_snapshots)
        power = np.maximum(base * shape * (1.0 + gen_cfg.fluctuation * noise), 0.0)

        pf_rng = stream(seed, 'load', node, 'pf')
        pf = gen_cfg.pf_mean + gen_cfg.pf_std * pf_rng.standard_normal(M)
        pf = np.clip(pf, gen_cfg.pf_min, gen_cfg.pf_max)
        loads[node] = LoadModel(power, pf, gen_cfg.lagging)
    return loads
