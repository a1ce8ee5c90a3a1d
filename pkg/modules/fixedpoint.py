"""
Damped fixed-point solver for min ||A x - B y - c||^2 subject to y = g(x)

h(y) is the least-squares minimizer over x for fixed y; the solution is the
fixed point y* = g(h(y*)), reached by y <- y + alpha (g(h(y)) - y).
"""

import logging
from dataclasses import dataclass

import numpy as np

from config import app_config
from modules.phasor_core import LeastSquaresKernel
from utils.exceptions import ConvergenceNotReached, DomainViolation, InvalidConfig

logger = logging.getLogger(__name__)


class ConstrainedLS:
    """
    One instance of the constrained least-squares problem class

    Args:
        A: M x n real matrix (n in {1, 2}), full column rank
        B: Length-M vector (diagonal of B) or an M x M matrix
        c: Length-M vector
        g: Callable x -> y
        in_domain: Optional predicate on x; iterates failing it raise DomainViolation
        D: Optional regularizer rows added to the x-subproblem
        mu: Regularization weight in [0, 1]
    """

    def __init__(self, A, B, c, g, in_domain=None, D=None, mu=0.0):
        self.kernel = LeastSquaresKernel(A, D=D, mu=mu)
        self.A = self.kernel.A
        self.B = np.asarray(B, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.g = g
        self.in_domain = in_domain
        m = self.kernel.rows
        if self.c.shape != (m,):
            raise InvalidConfig(f"c has shape {self.c.shape}, expected ({m},)")
        if self.B.shape not in ((m,), (m, m)):
            raise InvalidConfig(f"B has shape {self.B.shape}, expected ({m},) or ({m}, {m})")

    def target(self, y):
        """B y + c"""
        if self.B.ndim == 1:
            return self.B * y + self.c
        return self.B @ y + self.c

    def objective(self, x, y):
        """f(x, y) = ||A x - B y - c||^2"""
        r = self.A @ x - self.target(y)
        return float(r @ r)


@dataclass(frozen=True)
class FixedPointResult:
    """
    Args:
        y_star: Returned y iterate
        x_star: h(y_star)
        iterations: Number of damped updates that produced y_star
        evaluations: Number of g(h(.)) evaluations performed
        final_gap: ||g(h(y_star)) - y_star||_2
        converged: final_gap <= eps
    """

    y_star: np.ndarray
    x_star: np.ndarray
    iterations: int
    evaluations: int
    final_gap: float
    converged: bool


def solve_h(prob, y):
    """Least-squares minimizer of f(., y), i.e. A^+ (B y + c)"""
    return prob.kernel.solve(prob.target(np.asarray(y, dtype=float)))


def fixed_point_iterate(
    prob,
    alpha=app_config.DEFAULT_ALPHA,
    eps=app_config.DEFAULT_EPS,
    max_iters=app_config.DEFAULT_MAX_ITERS,
    y0=None,
    strict=False,
    report_exhaustion=True,
):
    """
    Damped iteration y <- y + alpha (g(h(y)) - y)

    Every pass evaluates x = h(y) and the gap ||g(x) - y||. The pair (x, y) is
    returned as soon as the gap drops to eps; after max_iters evaluations the
    pair with the smallest gap is returned with converged=False. With
    max_iters=1 the result is (h(y0), y0).

    Args:
        prob: ConstrainedLS
        alpha: Step size in (0, 1)
        eps: Gap tolerance
        max_iters: Maximum number of evaluations (>= 1)
        y0: Starting point, all ones by default
        strict: Raise ConvergenceNotReached instead of returning the best pair
        report_exhaustion: Log a warning when the budget runs out

    Returns:
        FixedPointResult

    Raises:
        DomainViolation: An iterate leaves the validity domain of g
        ConvergenceNotReached: Only when strict is set
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidConfig(f"alpha must lie in (0, 1), got {alpha}")
    if max_iters < 1:
        raise InvalidConfig("max_iters must be at least 1")
    if eps < 0:
        raise InvalidConfig("eps must be non-negative")

    y = np.ones(prob.kernel.rows) if y0 is None else np.array(y0, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DomainViolation("starting point is not finite")

    best = None
    for k in range(max_iters):
        x = solve_h(prob, y)
        if prob.in_domain is not None and not prob.in_domain(x):
            raise DomainViolation(f"iterate {k} left the domain of g")
        gy = np.asarray(prob.g(x), dtype=float)
        gap = float(np.linalg.norm(gy - y))
        if best is None or gap < best[3]:
            best = (y, x, k, gap)
        if gap <= eps:
            logger.debug("Fixed point reached after %d updates, gap %.3g", k, gap)
            return FixedPointResult(y, x, k, k + 1, gap, True)
        y = y + alpha * (gy - y)

    y_best, x_best, k_best, gap_best = best
    message = f"no fixed point within {max_iters} evaluations (best gap {gap_best:.3g} > {eps:.3g})"
    if strict:
        raise ConvergenceNotReached(message)
    if report_exhaustion:
        logger.warning(message)
    return FixedPointResult(y_best, x_best, k_best, max_iters, gap_best, False)
