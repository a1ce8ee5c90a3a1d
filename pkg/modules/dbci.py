"""
Decentralized identification: one agent per smart meter

Each agent waits for one payload from every child meter, identifies the lines
to those children, merges their currents into its own upstream line current
and sends a single payload to its parent. The substation agent only
identifies. Channels are reliable in-memory queues.
"""

import hashlib
import logging
from collections import deque
from dataclasses import dataclass, field, replace

import networkx as nx
import numpy as np

from modules.identify import Branch, LineProblem, merge_upward, solve_line
from modules.network import traversal_plan
from utils.exceptions import Deadlock, InvalidConfig, MissingChildPayload
from utils.seeding import stream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UpstreamPayload:
    """
    Message from a meter to its parent

    Args:
        sender: Sending node
        receiver: Parent node
        v: Sender RMS voltages (M,)
        j: Sender's upstream line current in its own reference (M,)
        drift: Phase offset carried by j (M,)
    """

    sender: int
    receiver: int
    v: np.ndarray
    j: np.ndarray
    drift: np.ndarray

    def __post_init__(self):
        for name in ('v', 'j', 'drift'):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.v.shape == self.j.shape == self.drift.shape):
            raise InvalidConfig("payload vectors must share one length")

    @property
    def m(self):
        return self.v.size

    @property
    def checksum(self):
        digest = hashlib.sha256()
        digest.update(f"{self.sender}->{self.receiver}:{self.m}".encode())
        for arr in (self.v, self.j, self.drift):
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()


@dataclass
class MeterAgent:
    """
    State machine of one meter

    Args:
        node: Meter node
        parent: Parent node, None for the substation
        children: Child nodes whose payloads are required
        v: Own RMS voltages
        i_local: Own consumed current in the local reference
        cfg: AlgoConfig; its line_xr holds this meter's X/R knowledge
    """

    node: int
    parent: int
    children: tuple
    v: np.ndarray
    i_local: np.ndarray
    cfg: object
    inbox: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict)
    done: bool = False

    @property
    def pending(self):
        return tuple(c for c in self.children if c not in self.inbox)

    def receive(self, payload):
        if payload.receiver != self.node or payload.sender not in self.children:
            raise InvalidConfig(f"meter {self.node} cannot accept a payload from {payload.sender}")
        self.inbox[payload.sender] = payload


def agent_step(agent, inbox=None):
    """
    Identify the agent's child lines and build its upstream payload

    Args:
        agent: MeterAgent
        inbox: Mapping child -> UpstreamPayload; the agent's own inbox if None

    Returns:
        (estimates keyed by child node, UpstreamPayload or None at the substation)

    Raises:
        MissingChildPayload: A child has not reported yet
    """
    inbox = agent.inbox if inbox is None else inbox
    missing = [c for c in agent.children if c not in inbox]
    if missing:
        raise MissingChildPayload(f"meter {agent.node} still waits for {missing}")

    branches = []
    estimates = {}
    for child in agent.children:
        payload = inbox[child]
        p = LineProblem(agent.v, payload.v, payload.j)
        est = solve_line(p, agent.cfg, line=(agent.node, child))
        estimates[child] = est
        branches.append(Branch(child, p, est, payload.drift))

    agent.estimates = estimates
    agent.done = True
    if agent.parent is None:
        return estimates, None

    if branches:
        current, drift = merge_upward(agent.i_local, agent.v, branches, agent.cfg.variant)
    else:
        current, drift = agent.i_local, np.zeros(agent.v.size)
    payload = UpstreamPayload(agent.node, agent.parent, agent.v, current, drift)
    return estimates, payload


def build_agents(net, ms, cfg):
    """One agent per node, each holding only its own readings"""
    if ms.n_nodes != net.n_nodes:
        raise InvalidConfig(f"measurements cover {ms.n_nodes} nodes, feeder has {net.n_nodes}")
    agents = {}
    for node in sorted(net.parents):
        children = tuple(net.children(node))
        local_xr = {c: cfg.line_xr[c] for c in children if c in cfg.line_xr}
        agents[node] = MeterAgent(
            node=node,
            parent=net.parents[node],
            children=children,
            v=ms.v[:, node],
            i_local=ms.local_current(node),
            cfg=replace(cfg, line_xr=local_xr),
        )
    return agents


def random_schedule(net, seed):
    """Seeded activation order in which every meter follows all its children"""
    rng = stream(seed, 'schedule')
    nodes = sorted(net.graph)
    priority = dict(zip(nodes, rng.permutation(len(nodes)).tolist()))
    upward = net.graph.reverse(copy=False)
    return list(nx.lexicographical_topological_sort(upward, key=priority.__getitem__))


@dataclass(frozen=True)
class DecentralizedResult:
    estimates: dict
    trace: list
    payloads: dict

    @property
    def messages(self):
        return len(self.trace)

    def impedances(self):
        return {n: est.z_hat for n, est in sorted(self.estimates.items())}


def run_decentralized(net, ms, cfg, schedule=None):
    """
    Run every meter agent in the given activation order

    Args:
        net: FeederNetwork (structure and per-line X/R knowledge)
        ms: MeasurementSet, node-indexed
        cfg: AlgoConfig shared by all agents
        schedule: Node activation order; children-first post-order by default

    Returns:
        DecentralizedResult with per-line estimates and the message trace

    Raises:
        Deadlock: The schedule activates a meter before all its children
    """
    agents = build_agents(net, ms, cfg)
    if schedule is None:
        schedule = [child for _, child in traversal_plan(net).order] + [0]
    schedule = [int(n) for n in schedule]
    if sorted(schedule) != sorted(agents):
        raise Deadlock("schedule must activate every meter exactly once")

    channels = {node: deque() for node in agents}
    trace = []
    payloads = {}
    estimates = {}
    for node in schedule:
        agent = agents[node]
        while channels[node]:
            agent.receive(channels[node].popleft())
        try:
            found, payload = agent_step(agent)
        except MissingChildPayload as e:
            raise Deadlock(f"schedule activates meter {node} too early: {e}") from e
        estimates.update(found)
        if payload is not None:
            channels[payload.receiver].append(payload)
            payloads[node] = payload
            trace.append(
                {
                    't': len(trace),
                    'from': payload.sender,
                    'to': payload.receiver,
                    'm': payload.m,
                    'checksum': payload.checksum,
                }
            )
            logger.debug("Meter %d sent %d snapshots to %d", node, payload.m, payload.receiver)

    logger.info("Decentralized run finished with %d messages", len(trace))
    return DecentralizedResult(estimates=estimates, trace=trace, payloads=payloads)
