"""
Line impedance identification from smart-meter data

Per-line solvers (LBCI, LBCI-old, BCI) work on a LineProblem built from the
sending and receiving RMS voltages and the receiving-end line current. The
chain and tree drivers process lines leaf to root, rebuilding each upstream
line current from the estimates below it.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from config import app_config
from modules.fixedpoint import ConstrainedLS, fixed_point_iterate
from modules.network import TraversalPlan, traversal_plan
from modules.phasor_core import (
    Q1,
    Q2,
    LeastSquaresKernel,
    as_cvec,
    condition_number,
    current_matrix,
    expi,
)
from utils.exceptions import (
    FeederIdError,
    InconsistentSnapshotLengths,
    InvalidConfig,
    LineError,
    ValidationError,
    ZeroColumn,
)

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    LBCI = 'lbci'
    LBCI_OLD = 'lbci-old'
    BCI = 'bci'


class Regularizer(str, Enum):
    Q2_IMAGE = 'q2-image'
    XR_ROW = 'xr-row'


@dataclass(frozen=True)
class AlgoConfig:
    """
    Settings of one identification run

    Args:
        variant: Per-line solver
        xr_ratio: Known X/R ratio applied to every line
        line_xr: Per-line X/R ratios keyed by child node, overriding xr_ratio
        use_xr_reduction: Reduce known-ratio lines to one unknown (r)
        mu: Extra regularization weight in [0, 1]
        regularizer: Regularizer rows; None picks XR_ROW when a ratio is
            known and Q2_IMAGE otherwise
        alpha, eps, max_iters: BCI fixed-point settings
        clamp: Clamp negative square-root radicands at zero
        strict: Raise when BCI does not converge
        report_exhaustion: Warn when BCI uses its whole iteration budget
        label: Name used in experiment outputs
    """

    variant: Variant = Variant.BCI
    xr_ratio: float = None
    line_xr: dict = field(default_factory=dict)
    use_xr_reduction: bool = True
    mu: float = 0.0
    regularizer: Regularizer = None
    alpha: float = app_config.DEFAULT_ALPHA
    eps: float = app_config.DEFAULT_EPS
    max_iters: int = app_config.DEFAULT_MAX_ITERS
    clamp: bool = True
    strict: bool = False
    report_exhaustion: bool = True
    label: str = None

    def __post_init__(self):
        try:
            object.__setattr__(self, 'variant', Variant(self.variant))
            if self.regularizer is not None:
                object.__setattr__(self, 'regularizer', Regularizer(self.regularizer))
        except ValueError as e:
            raise InvalidConfig(str(e)) from e
        if self.xr_ratio is not None and not self.xr_ratio > 0:
            raise InvalidConfig("xr_ratio must be positive")
        if any(not k > 0 for k in self.line_xr.values()):
            raise InvalidConfig("per-line X/R ratios must be positive")
        if not 0.0 <= self.mu <= 1.0:
            raise InvalidConfig("mu must lie in [0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfig("alpha must lie in (0, 1)")
        if self.max_iters < 1 or self.eps < 0:
            raise InvalidConfig("max_iters must be >= 1 and eps >= 0")

    def xr_for(self, line):
        """Known X/R ratio of a (from, to) line, or None"""
        if line is not None and line[1] in self.line_xr:
            return self.line_xr[line[1]]
        return self.xr_ratio

    @property
    def name(self):
        if self.label:
            return self.label
        name = self.variant.value
        if self.xr_ratio is not None or self.line_xr:
            name += '_xr'
        if self.variant is Variant.BCI:
            name += f"_{self.max_iters}"
        return name


@dataclass(frozen=True)
class LineProblem:
    """
    Measurements of one line over M snapshots

    Args:
        v_up: RMS voltage at the sending node
        v_down: RMS voltage at the receiving node
        j: Line current in the receiving node's reference
    """

    v_up: np.ndarray
    v_down: np.ndarray
    j: np.ndarray

    def __post_init__(self):
        v_up = np.asarray(self.v_up, dtype=float)
        v_down = np.asarray(self.v_down, dtype=float)
        j = as_cvec(self.j)
        if not (v_up.shape == v_down.shape == j.shape):
            raise InconsistentSnapshotLengths(
                f"line data lengths differ: {v_up.shape}, {v_down.shape}, {j.shape}"
            )
        if j.size < 2:
            raise ValidationError("at least two snapshots are needed per line")
        if np.any(~(v_up > 0)) or np.any(~(v_down > 0)):
            raise ValidationError("line voltages must be positive")
        object.__setattr__(self, 'v_up', v_up)
        object.__setattr__(self, 'v_down', v_down)
        object.__setattr__(self, 'j', j)

    @property
    def snapshots(self):
        return self.j.size

    @property
    def J(self):
        return current_matrix(self.j)

    @property
    def A1(self):
        """J Q1, so that A1 z = Re(j z)"""
        return self.J @ Q1

    @property
    def A2(self):
        """J Q2, so that A2 z = Im(j z)"""
        return self.J @ Q2

    @property
    def dv(self):
        return self.v_up - self.v_down


@dataclass(frozen=True)
class ReducedProblem:
    """
    Line problem with a known X/R ratio k: z = r (1 + i k)

    a1 and a2 are the single columns A1 T and A2 T with T = [1, k].
    """

    problem: LineProblem
    k: float
    a1: np.ndarray
    a2: np.ndarray

    @property
    def T(self):
        return np.array([1.0, self.k])


def apply_xr(p, k):
    """
    Reduce a line problem to its resistance using the X/R ratio k

    Raises:
        ZeroColumn: Re(j) - k Im(j) vanishes for every snapshot
    """
    if not k > 0:
        raise InvalidConfig("X/R ratio must be positive")
    T = np.array([1.0, k])
    a1 = p.A1 @ T
    a2 = p.A2 @ T
    scale = np.max(np.abs(p.j))
    if scale == 0 or np.max(np.abs(a1)) <= app_config.RANK_TOL * scale:
        raise ZeroColumn(f"reduced current column vanishes for X/R ratio {k}")
    return ReducedProblem(problem=p, k=float(k), a1=a1, a2=a2)


@dataclass(frozen=True)
class LineEstimate:
    """
    Identification result for one line

    Args:
        z_hat: Estimated impedance (ohms)
        gamma: cos of the phase increment per snapshot (ones for LBCI variants)
        iterations: Number of fixed-point evaluations (1 for closed-form solvers)
        cost_full: ||v_up g - v_down - A1 z||^2 + ||v_up sqrt(1 - g^2) - A2 z||^2
        cost_reg: cost_full + mu ||D z||^2
        cond_J: Condition number of [Re(j) Im(j)]
        converged: False when BCI ran out of iterations
        final_gap: Fixed-point gap at the returned iterate
        variant: Solver that produced the estimate
        line: (from, to) nodes when known
    """

    z_hat: complex
    gamma: np.ndarray
    iterations: int
    cost_full: float
    cost_reg: float
    cond_J: float
    converged: bool = True
    final_gap: float = 0.0
    variant: Variant = Variant.BCI
    line: tuple = None


class _Design:
    """Measurement columns and regularizer of a (possibly reduced) line problem"""

    def __init__(self, p, cfg, line=None):
        self.problem = p
        k = cfg.xr_for(line)
        self.k = k
        self.mu = cfg.mu
        regularizer = cfg.regularizer
        if regularizer is None:
            regularizer = Regularizer.XR_ROW if k is not None else Regularizer.Q2_IMAGE
        if regularizer is Regularizer.XR_ROW and k is None:
            raise InvalidConfig("the X/R regularizer row needs a known X/R ratio")
        self.regularizer = regularizer

        # regularizer in full (re, im) coordinates
        if regularizer is Regularizer.XR_ROW:
            self.D_full = np.array([[k, -1.0]])
        else:
            self.D_full = p.A2

        if k is not None and cfg.use_xr_reduction:
            reduced = apply_xr(p, k)
            self.T = reduced.T
            self.A1 = reduced.a1[:, None]
            self.A2 = reduced.a2[:, None]
            self.D = self.D_full @ self.T[:, None]
        else:
            self.T = None
            self.A1 = p.A1
            self.A2 = p.A2
            self.D = self.D_full

    def regularization(self):
        if self.mu == 0.0:
            return None, 0.0
        return self.D, self.mu

    def pair(self, x):
        """Unknowns -> full (re, im) pair"""
        if self.T is not None:
            return float(x[0]) * self.T
        return np.array([float(x[0]), float(x[1])])


def _costs(p, design, z_pair, gamma):
    first = p.v_up * gamma - p.v_down - p.A1 @ z_pair
    second = p.v_up * np.sqrt(np.clip(1.0 - gamma**2, 0.0, None)) - p.A2 @ z_pair
    full = float(first @ first + second @ second)
    Dz = design.D_full @ z_pair
    return full, full + design.mu * float(Dz @ Dz)


def _cond(p):
    cond = condition_number(p.J)
    if cond > app_config.ILL_CONDITIONED_WARNING:
        logger.warning("Current matrix is ill-conditioned (cond %.3g)", cond)
    return cond


def _estimate(p, design, z_pair, gamma, variant, line, iterations=1, converged=True, gap=0.0):
    full, reg = _costs(p, design, z_pair, gamma)
    return LineEstimate(
        z_hat=complex(z_pair[0], z_pair[1]),
        gamma=gamma,
        iterations=iterations,
        cost_full=full,
        cost_reg=reg,
        cond_J=_cond(p),
        converged=converged,
        final_gap=gap,
        variant=variant,
        line=line,
    )


def lbci_line(p, cfg, line=None):
    """
    Linearized estimate: min ||dv - A1 z||^2 + ||A2 z||^2 (+ mu ||D z||^2)

    The second term keeps the stacked system full rank even when the current
    has a constant phase.
    """
    design = _Design(p, cfg, line)
    D, mu = design.regularization()
    stacked = np.vstack([design.A1, design.A2])
    b = np.concatenate([p.dv, np.zeros(p.snapshots)])
    x = LeastSquaresKernel(stacked, D=D, mu=mu).solve(b)
    z_pair = design.pair(x)
    return _estimate(p, design, z_pair, np.ones(p.snapshots), Variant.LBCI, line)


def lbci_old_line(p, cfg, line=None):
    """Plain least squares on the voltage-drop term only"""
    design = _Design(p, cfg, line)
    D, mu = design.regularization()
    x = LeastSquaresKernel(design.A1, D=D, mu=mu).solve(p.v_up - p.v_down)
    z_pair = design.pair(x)
    return _estimate(p, design, z_pair, np.ones(p.snapshots), Variant.LBCI_OLD, line)


def bci_line(p, cfg, line=None):
    """
    Fixed-point estimate with gamma = cos(Delta) as the constrained variable

    h(gamma) solves the voltage-drop least squares for the target
    v_up gamma - v_down and g(z) = sqrt(1 - (A2 z)^2 / v_up^2). The radicand
    is clamped at zero unless cfg.clamp is off, in which case leaving the
    domain raises DomainViolation.
    """
    design = _Design(p, cfg, line)
    D, mu = design.regularization()
    v_up = p.v_up
    A2 = design.A2

    def radicand(x):
        return 1.0 - ((A2 @ x) / v_up) ** 2

    clamped = []

    def g(x):
        r = radicand(x)
        negative = r < 0
        if np.any(negative):
            if not clamped:
                logger.warning("Clamping negative radicands at line %s", line)
            clamped.append(int(negative.sum()))
            r = np.where(negative, 0.0, r)
        return np.sqrt(r)

    in_domain = None if cfg.clamp else (lambda x: bool(np.all(radicand(x) >= 0)))
    prob = ConstrainedLS(design.A1, v_up, -p.v_down, g, in_domain=in_domain, D=D, mu=mu)
    result = fixed_point_iterate(
        prob,
        alpha=cfg.alpha,
        eps=cfg.eps,
        max_iters=cfg.max_iters,
        strict=cfg.strict,
        report_exhaustion=cfg.report_exhaustion,
    )
    gamma = np.clip(result.y_star, 0.0, 1.0)
    z_pair = design.pair(result.x_star)
    logger.debug(
        "Line %s: %d evaluations, gap %.3g", line, result.evaluations, result.final_gap
    )
    return _estimate(
        p,
        design,
        z_pair,
        gamma,
        Variant.BCI,
        line,
        iterations=result.evaluations,
        converged=result.converged,
        gap=result.final_gap,
    )


LINE_SOLVERS = {
    Variant.LBCI: lbci_line,
    Variant.LBCI_OLD: lbci_old_line,
    Variant.BCI: bci_line,
}


def solve_line(p, cfg, line=None):
    """Run the configured per-line solver, attaching the line to any failure"""
    try:
        return LINE_SOLVERS[cfg.variant](p, cfg, line)
    except FeederIdError as e:
        if line is None:
            raise
        raise LineError(line, e) from e


def phase_increments(est, p):
    """
    Phase increment per snapshot from an estimate

    Small-angle form A2 z / v_up for the linearized solvers, asin of the same
    ratio for BCI.
    """
    z = np.array([est.z_hat.real, est.z_hat.imag])
    ratio = (p.A2 @ z) / p.v_up
    if est.variant is Variant.BCI:
        return np.arcsin(np.clip(ratio, -1.0, 1.0))
    return ratio


def _rotation(est, p):
    """exp(-i Delta) reconstructed from gamma and the sign of sin(Delta)"""
    z = np.array([est.z_hat.real, est.z_hat.imag])
    sign = np.sign(p.A2 @ z)
    return est.gamma - 1j * sign * np.sqrt(np.clip(1.0 - est.gamma**2, 0.0, None))


@dataclass(frozen=True)
class Branch:
    """
    One identified child line seen from its parent node

    Args:
        node: Child node
        problem: LineProblem of the line into node
        estimate: LineEstimate of that line
        drift: Phase offset of problem.j against the child's true reference
    """

    node: int
    problem: LineProblem
    estimate: LineEstimate
    drift: np.ndarray


def merge_upward(i_local, v_node, branches, variant):
    """
    Line current entering a node, rebuilt from its identified child lines

    A single child uses the chain update: j + i for the linearized solvers,
    i + (j v_child + conj(z) |j|^2) / v_node for BCI. Several children are
    phase-matched first: the child with the largest mean current is the
    reference and every other child current is rotated by
    exp(i (drift_ref - drift_child)) before summation. Linearized solvers skip
    each line's increment, so it is added to that child's drift.

    Returns:
        (current, drift) for the node
    """
    i_local = np.asarray(i_local, dtype=complex)
    if len(branches) == 1:
        b = branches[0]
        p, est = b.problem, b.estimate
        if variant is Variant.BCI:
            carried = (p.j * p.v_down + np.conj(est.z_hat) * np.abs(p.j) ** 2) / v_node
            return i_local + carried, b.drift
        return i_local + p.j, b.drift + phase_increments(est, p)

    contributions = []
    drifts = []
    for b in branches:
        p, est = b.problem, b.estimate
        if variant is Variant.BCI:
            contributions.append(p.j * _rotation(est, p))
            drifts.append(b.drift)
        else:
            contributions.append(p.j)
            drifts.append(b.drift + phase_increments(est, p))

    strengths = [float(np.mean(np.abs(b.problem.j))) for b in branches]
    ref = int(np.argmax(strengths))
    total = i_local.copy()
    for contribution, drift in zip(contributions, drifts):
        total = total + contribution * expi(drifts[ref] - drift)
    return total, drifts[ref]


@dataclass(frozen=True)
class IdentificationResult:
    """
    Per-line estimates of a feeder, keyed by child node

    currents[n] is the line current used for line n (receiving-end reference)
    and drifts[n] its accumulated phase offset.
    """

    estimates: dict
    currents: dict
    increments: dict
    drifts: dict

    def impedances(self):
        return {n: est.z_hat for n, est in sorted(self.estimates.items())}


def _check_measurements(ms, n_nodes):
    if ms.n_nodes != n_nodes:
        raise InconsistentSnapshotLengths(
            f"measurements cover {ms.n_nodes} nodes, feeder has {n_nodes}"
        )
    if ms.snapshots < 2:
        raise ValidationError("at least two snapshots are required")


def identify_along(ms, plan, cfg):
    """
    Leaf-to-root identification over a traversal plan

    Shared by the chain and tree drivers so both follow the same arithmetic.
    """
    v = ms.v
    zero = np.zeros(ms.snapshots)
    problems, estimates, currents, drifts, increments = {}, {}, {}, {}, {}
    for parent, node in plan.order:
        children = plan.children[node]
        if children:
            branches = [Branch(c, problems[c], estimates[c], drifts[c]) for c in children]
            current, drift = merge_upward(ms.local_current(node), v[:, node], branches, cfg.variant)
        else:
            current, drift = ms.local_current(node), zero
        currents[node] = current
        drifts[node] = drift

        p = LineProblem(v[:, parent], v[:, node], current)
        est = solve_line(p, cfg, line=(parent, node))
        problems[node] = p
        estimates[node] = est
        increments[node] = phase_increments(est, p)
    return IdentificationResult(estimates, currents, increments, drifts)


def chain_plan(n_nodes):
    """Traversal plan of the chain 0-1-...-(n_nodes - 1)"""
    order = tuple((n - 1, n) for n in range(n_nodes - 1, 0, -1))
    children = {n: ((n + 1,) if n + 1 < n_nodes else ()) for n in range(n_nodes)}
    ancestors = {n: n - 1 for n in range(1, n_nodes)}
    return TraversalPlan(order=order, children=children, ancestors=ancestors)


def identify_chain(ms, cfg):
    """
    Identify every line of the chain 0-1-...-N, processing lines N..1

    Returns:
        IdentificationResult

    Raises:
        LineError: A line failed; the original error is kept as its cause
    """
    _check_measurements(ms, ms.n_nodes)
    result = identify_along(ms, chain_plan(ms.n_nodes), cfg)
    logger.info("Identified %d chain lines with %s", len(result.estimates), cfg.name)
    return result


def identify_tree(ms, net, cfg):
    """Identify every line of a radial feeder with phase matching at branch nodes"""
    _check_measurements(ms, net.n_nodes)
    result = identify_along(ms, traversal_plan(net), cfg)
    logger.info("Identified %d feeder lines with %s", len(result.estimates), cfg.name)
    return result


def relative_error(z_true, z_hat):
    """||z - z_hat|| / ||z|| over stacked complex vectors"""
    z_true = np.atleast_1d(np.asarray(z_true, dtype=complex))
    z_hat = np.atleast_1d(np.asarray(z_hat, dtype=complex))
    return float(np.linalg.norm(z_true - z_hat) / np.linalg.norm(z_true))
