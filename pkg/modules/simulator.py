"""
Steady-state phasor simulation of radial feeders and smart-meter emulation

Node-indexed arrays have shape (M, N+1): column n belongs to node n and column
0 to the substation. Line quantities use the same layout keyed by the line's
child node, with column 0 unused (zero).
"""

import logging
from dataclasses import dataclass

import numpy as np

from config import app_config
from modules.network import traversal_plan
from modules.phasor_core import angle, expi, polar, wrap_angle
from utils.exceptions import (
    BranchingUnsupported,
    InconsistentSnapshotLengths,
    InvalidConfig,
    SingularSystem,
    ValidationError,
)
from utils.seeding import stream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroundTruthState:
    """
    Exact global phasors over M snapshots

    Args:
        v: Node voltages, complex (M, N+1)
        i: Consumed node currents, complex (M, N+1)
        j: Line currents keyed by child node, complex (M, N+1)
    """

    v: np.ndarray
    i: np.ndarray
    j: np.ndarray

    @property
    def snapshots(self):
        return self.v.shape[0]

    def local_line_currents(self):
        """Line currents in the receiving node's phase reference"""
        return self.j * expi(-angle(self.v))


@dataclass(frozen=True)
class MeasurementSet:
    """
    Smart-meter readings over M snapshots, node-indexed (M, N+1)

    Column 0 holds the substation voltage; its current channels are zero.
    """

    v: np.ndarray
    i_mag: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.v, dtype=float))
        i_mag = np.atleast_2d(np.asarray(self.i_mag, dtype=float))
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        if not (v.shape == i_mag.shape == theta.shape):
            raise InconsistentSnapshotLengths(
                f"measurement channels disagree in shape: {v.shape}, {i_mag.shape}, {theta.shape}"
            )
        if v.shape[0] < 1 or v.shape[1] < 2:
            raise ValidationError("need at least one snapshot and one metered node")
        if np.any(~(v > 0)):
            raise ValidationError("RMS voltages must be positive")
        if np.any(~(i_mag >= 0)):
            raise ValidationError("RMS currents must be non-negative")
        object.__setattr__(self, 'v', v)
        object.__setattr__(self, 'i_mag', i_mag)
        object.__setattr__(self, 'theta', theta)

    @property
    def snapshots(self):
        return self.v.shape[0]

    @property
    def n_nodes(self):
        return self.v.shape[1]

    @property
    def v0(self):
        return self.v[:, 0]

    def local_current(self, node):
        """Consumed current in the node's own voltage reference"""
        return polar(self.i_mag[:, node], self.theta[:, node])

    def local_currents(self):
        return polar(self.i_mag, self.theta)

    def prefix(self, m):
        if not 1 <= m <= self.snapshots:
            raise InconsistentSnapshotLengths(
                f"cannot take {m} snapshots from a set of {self.snapshots}"
            )
        return MeasurementSet(self.v[:m], self.i_mag[:m], self.theta[:m])


@dataclass(frozen=True)
class NoiseSpec:
    """
    Full-scale Gaussian meter noise

    pct_fs is a fraction (0.01 for the 1 %FS class); each channel's standard
    deviation is fs * pct_fs / 2. fs_current=None resolves to 1.2 x the
    largest ideal current in the data being noised.
    """

    pct_fs: float
    seed: int = 0
    fs_voltage: float = app_config.FS_VOLTAGE
    fs_current: float = None
    fs_angle: float = app_config.FS_ANGLE

    def __post_init__(self):
        if self.pct_fs < 0:
            raise InvalidConfig("noise class must be non-negative")
        if self.fs_voltage <= 0 or self.fs_angle <= 0:
            raise InvalidConfig("full-scale values must be positive")
        if self.fs_current is not None and self.fs_current < 0:
            raise InvalidConfig("current full scale must be non-negative")

    def sigma(self, full_scale):
        return full_scale * self.pct_fs / 2.0


def load_admittances(net, rows=None):
    """
    Per-snapshot load admittances (M, N+1), zero where no load

    Args:
        net: FeederNetwork with load profiles
        rows: Snapshot count (a prefix) or a slice; all snapshots when None
    """
    if net.snapshots is None:
        raise ValidationError("network has no load profiles to simulate")
    if rows is None:
        rows = slice(0, net.snapshots)
    elif not isinstance(rows, slice):
        if not 1 <= rows <= net.snapshots:
            raise ValidationError(f"cannot simulate {rows} of {net.snapshots} snapshots")
        rows = slice(0, rows)
    m = len(range(*rows.indices(net.snapshots)))
    y = np.zeros((m, net.n_nodes), dtype=complex)
    for node, load in net.loads.items():
        y[:, node] = 1.0 / load.impedance(net.nominal_voltage)[rows]
    return y


def _line_admittance_matrix(net):
    n = net.n_nodes
    Y = np.zeros((n, n), dtype=complex)
    for parent, child in net.edges:
        y = 1.0 / net.impedances[child]
        Y[parent, parent] += y
        Y[child, child] += y
        Y[parent, child] -= y
        Y[child, parent] -= y
    return Y


def solve_snapshots(net, snapshots=None):
    """
    Exact nodal solution for a range of snapshots (all, a prefix count or a slice)

    The substation is a Dirichlet node at nominal voltage and angle 0; the
    remaining (N x N) admittance systems are solved in batches.

    Returns:
        GroundTruthState

    Raises:
        SingularSystem: A snapshot's admittance matrix cannot be factorized
    """
    y_load = load_admittances(net, snapshots)
    m = y_load.shape[0]
    n = net.n_nodes
    v0 = complex(net.nominal_voltage)

    Y = _line_admittance_matrix(net)
    Y_ff = Y[1:, 1:]
    rhs = -Y[1:, 0] * v0

    chunk = max(1, app_config.SOLVER_CHUNK_ENTRIES // max(1, (n - 1) ** 2))
    v = np.empty((m, n), dtype=complex)
    v[:, 0] = v0
    diag = np.arange(n - 1)
    for start in range(0, m, chunk):
        stop = min(m, start + chunk)
        batch = np.broadcast_to(Y_ff, (stop - start, n - 1, n - 1)).copy()
        batch[:, diag, diag] += y_load[start:stop, 1:]
        try:
            sol = np.linalg.solve(batch, np.broadcast_to(rhs, (stop - start, n - 1))[..., None])
        except np.linalg.LinAlgError as e:
            raise SingularSystem(f"nodal system singular in snapshots {start}..{stop - 1}") from e
        v[start:stop, 1:] = sol[..., 0]
        logger.debug("Solved snapshots %d..%d", start, stop - 1)

    if not np.all(np.isfinite(v)):
        raise SingularSystem("nodal solution is not finite")

    i = v * y_load
    j = np.zeros_like(v)
    for parent, child in net.edges:
        j[:, child] = (v[:, parent] - v[:, child]) / net.impedances[child]
    return GroundTruthState(v=v, i=i, j=j)


def solve_snapshot(net, m):
    """Ground-truth state of one snapshot (a length-1 slice)"""
    if net.snapshots is None or not 0 <= m < net.snapshots:
        raise ValidationError(f"snapshot {m} out of range")
    return solve_snapshots(net, slice(m, m + 1))


def kirchhoff_residuals(state, net):
    """Worst relative KCL and KVL residuals of a solved state"""
    scale_i = max(np.max(np.abs(state.j)), np.max(np.abs(state.i)), 1e-300)
    scale_v = np.max(np.abs(state.v))
    kcl = state.i.copy()
    kvl = 0.0
    for parent, child in net.edges:
        kcl[:, child] -= state.j[:, child]
        kcl[:, parent] += state.j[:, child]
        drop = state.v[:, parent] - state.v[:, child] - state.j[:, child] * net.impedances[child]
        kvl = max(kvl, float(np.max(np.abs(drop))))
    kcl[:, 0] = 0.0
    return float(np.max(np.abs(kcl)) / scale_i), kvl / scale_v


def power_flow_check(state, net):
    """
    Worst relative residual of the branch power-flow identities

    Checks |v_n|^2 = |v_l|^2 + S z* + S* z + |j z|^2 on every line (n, l) and
    the power balance S_in = s_n + sum(S_out + |j_out|^2 z_out) at every
    metered node, with receiving-end powers S = conj(j) v_l and s = conj(i) v.
    """
    v, i, j = state.v, state.i, state.j
    worst = 0.0

    v_sq = np.abs(v) ** 2
    v_scale = float(np.max(v_sq))
    S = np.conj(j) * v
    for parent, child in net.edges:
        z = net.impedances[child]
        rhs = v_sq[:, child] + 2.0 * np.real(S[:, child] * np.conj(z)) + np.abs(j[:, child] * z) ** 2
        if v_scale > 0:
            worst = max(worst, float(np.max(np.abs(v_sq[:, parent] - rhs)) / v_scale))

    s = np.conj(i) * v
    p_scale = float(max(np.max(np.abs(S)), np.max(np.abs(s))))
    if p_scale > 0:
        balance = S - s
        balance[:, 0] = 0.0
        for parent, child in net.edges:
            if parent != 0:
                z = net.impedances[child]
                balance[:, parent] -= S[:, child] + np.abs(j[:, child]) ** 2 * z
        worst = max(worst, float(np.max(np.abs(balance)) / p_scale))
    return worst


def measure(state):
    """
    Ideal meter readings of a solved state

    theta = angle(i) - angle(v), wrapped to (-pi, pi]; zero where no current
    flows.
    """
    v = np.abs(state.v)
    i_mag = np.abs(state.i)
    theta = wrap_angle(angle(state.i) - angle(state.v))
    theta = np.where(i_mag > 0, theta, 0.0)
    i_mag[:, 0] = 0.0
    theta[:, 0] = 0.0
    return MeasurementSet(v=v, i_mag=i_mag, theta=theta)


def add_noise(ms, spec):
    """
    Corrupt every channel with independent full-scale Gaussian noise

    One Philox stream per (seed, node, channel); the substation voltage is
    noised with the voltage channel. Negative current magnitudes are clipped
    to zero and voltages kept positive.
    """
    if spec.pct_fs == 0:
        return MeasurementSet(ms.v.copy(), ms.i_mag.copy(), ms.theta.copy())

    fs_current = spec.fs_current
    if fs_current is None:
        fs_current = app_config.FS_CURRENT_FACTOR * float(np.max(ms.i_mag))
    sigmas = {
        'v': spec.sigma(spec.fs_voltage),
        'i_mag': spec.sigma(fs_current),
        'theta': spec.sigma(spec.fs_angle),
    }

    m = ms.snapshots
    channels = {'v': ms.v.copy(), 'i_mag': ms.i_mag.copy(), 'theta': ms.theta.copy()}
    for name, data in channels.items():
        first = 0 if name == 'v' else 1
        for node in range(first, ms.n_nodes):
            rng = stream(spec.seed, 'noise', node, app_config.NOISE_CHANNELS[name])
            data[:, node] += sigmas[name] * rng.standard_normal(m)

    clipped = int(np.sum(channels['i_mag'] < 0))
    if clipped:
        logger.warning("Clipped %d negative current readings to zero", clipped)
        channels['i_mag'] = np.maximum(channels['i_mag'], 0.0)
    low = channels['v'] <= 0
    if np.any(low):
        logger.warning("Clipped %d non-positive voltage readings", int(np.sum(low)))
        channels['v'] = np.where(low, np.finfo(float).tiny, channels['v'])
    channels['theta'] = wrap_angle(channels['theta'])
    return MeasurementSet(**channels)


@dataclass(frozen=True)
class Propagation:
    """
    Output of the backward or forward model

    Args:
        increments: Phase increment of each line, (M, N+1) keyed by child
        line_currents: Line currents in the receiving node's reference
        node_phases: Absolute voltage phases with the substation at 0
        voltages: Node RMS voltages used or predicted
        closure: Largest |current| left beyond the last node (forward only)
    """

    increments: np.ndarray
    line_currents: np.ndarray
    node_phases: np.ndarray
    voltages: np.ndarray
    closure: float = 0.0


def _phases_from_increments(net, increments):
    phases = np.zeros_like(increments)
    plan = traversal_plan(net)
    for parent, child in reversed(plan.order):
        phases[:, child] = phases[:, parent] - increments[:, child]
    return phases


def backward_propagate(net, v, i_local):
    """
    Leaf-to-root reconstruction of phase increments and line currents

    Every quantity stays local to its node. A line's increment is
    angle(v_l + j_l z_l), and a node's upstream current merges its children
    as i_n + sum_l j_l exp(-i Delta_l).

    Args:
        net: FeederNetwork with known impedances
        v: Node RMS voltages (M, N+1)
        i_local: Consumed currents in local references (M, N+1)

    Returns:
        Propagation
    """
    v = np.asarray(v, dtype=float)
    i_local = np.asarray(i_local, dtype=complex)
    if v.shape != i_local.shape or v.shape[1] != net.n_nodes:
        raise InconsistentSnapshotLengths("voltage and current arrays do not match the feeder")

    plan = traversal_plan(net)
    increments = np.zeros(v.shape)
    currents = np.zeros(v.shape, dtype=complex)
    for parent, node in plan.order:
        total = i_local[:, node].copy()
        for child in plan.children[node]:
            total += currents[:, child] * expi(-increments[:, child])
        currents[:, node] = total
        increments[:, node] = angle(v[:, node] + total * net.impedances[node])

    phases = _phases_from_increments(net, increments)
    return Propagation(increments=increments, line_currents=currents, node_phases=phases, voltages=v)


def forward_propagate(net, v0, j1, i_local):
    """
    Root-to-leaf propagation along a chain from the substation line current

    Works in the sending node's reference: exp(-i Delta_n) = (v_{n-1} -
    j_n z_n) / v_n, then j_{n+1} = j_n exp(i Delta_n) - i_n.

    Args:
        net: Chain FeederNetwork
        v0: Substation RMS voltage (M,)
        j1: Current of line 1 in the substation reference (M,)
        i_local: Consumed currents in local references (M, N+1)

    Returns:
        Propagation; line_currents are in the receiving node's reference

    Raises:
        BranchingUnsupported: The feeder is not a chain
    """
    if not net.is_chain:
        raise BranchingUnsupported("forward propagation is only defined for chain feeders")

    v0 = np.asarray(v0, dtype=float)
    i_local = np.asarray(i_local, dtype=complex)
    m, n_nodes = i_local.shape
    voltages = np.zeros((m, n_nodes))
    voltages[:, 0] = v0
    increments = np.zeros((m, n_nodes))
    currents = np.zeros((m, n_nodes), dtype=complex)

    j_send = np.asarray(j1, dtype=complex)
    node = 0
    while True:
        children = net.children(node)
        if not children:
            break
        child = children[0]
        downstream = voltages[:, node] - j_send * net.impedances[child]
        voltages[:, child] = np.abs(downstream)
        increments[:, child] = -angle(downstream)
        currents[:, child] = j_send * expi(increments[:, child])
        j_send = currents[:, child] - i_local[:, child]
        node = child

    phases = _phases_from_increments(net, increments)
    closure = float(np.max(np.abs(j_send)))
    return Propagation(
        increments=increments,
        line_currents=currents,
        node_phases=phases,
        voltages=voltages,
        closure=closure,
    )
