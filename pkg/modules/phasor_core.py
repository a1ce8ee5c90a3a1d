"""
Phasor arithmetic and small dense least-squares kernels

Complex scalars are Python/numpy complex numbers and complex vectors are 1-D
``complex128`` arrays; the helpers below only add the conventions the rest of
the toolkit relies on (angle range, 2-column measurement matrices, rank checks).
"""

import logging

import numpy as np
from scipy.linalg import svdvals

from config import app_config
from utils.exceptions import RankDeficient

logger = logging.getLogger(__name__)

# z = [Re z, Im z]:  J @ Q1 @ z = Re(j z),  J @ Q2 @ z = Im(j z)
Q1 = np.array([[1.0, 0.0], [0.0, -1.0]])
Q2 = np.array([[0.0, 1.0], [1.0, 0.0]])


def as_cvec(values):
    """
    Coerce values to a non-empty 1-D complex vector

    Args:
        values: Scalar or sequence of complex-compatible numbers

    Returns:
        numpy.ndarray of complex128, length M >= 1
    """
    vec = np.atleast_1d(np.asarray(values, dtype=np.complex128))
    if vec.ndim != 1 or vec.size == 0:
        raise ValueError("complex vector must be 1-D with at least one element")
    return vec


def magnitude(x):
    return np.abs(x)


def angle(x):
    """Phase angle in (-pi, pi]"""
    theta = np.angle(x)
    # numpy returns -pi for negative reals with a -0.0 imaginary part
    return np.where(theta <= -np.pi, theta + 2.0 * np.pi, theta)


def wrap_angle(theta):
    """Wrap real angles into (-pi, pi]"""
    wrapped = np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped <= -np.pi, wrapped + 2.0 * np.pi, wrapped)


def polar(mag, theta):
    """Build phasors from magnitude and angle"""
    return np.asarray(mag, dtype=float) * np.exp(1j * np.asarray(theta, dtype=float))


def expi(theta):
    """Elementwise exp(i*theta)"""
    return np.exp(1j * np.asarray(theta, dtype=float))


def current_matrix(j):
    """
    Build the M x 2 measurement matrix [Re(j) Im(j)] from a line current vector

    Args:
        j: Complex line current vector (amps)

    Returns:
        numpy.ndarray of shape (M, 2)
    """
    j = as_cvec(j)
    return np.column_stack([j.real, j.imag])


def _as_columns(A):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2 or A.shape[1] not in (1, 2):
        raise ValueError(f"expected an M x 1 or M x 2 matrix, got shape {A.shape}")
    return A


def condition_number(A):
    """
    Ratio of the largest to the smallest singular value

    Args:
        A: Nonzero M x 2 (or M x 1) real matrix

    Returns:
        float >= 1, or inf when A is rank deficient
    """
    s = svdvals(_as_columns(A))
    if s[0] == 0.0:
        raise ValueError("condition number of a zero matrix is undefined")
    if s[-1] <= app_config.RANK_TOL * s[0]:
        return float('inf')
    return float(s[0] / s[-1])


class LeastSquaresKernel:
    """
    Precomputed solver for min ||b - A z||^2 + mu ||D z||^2 with 1 or 2 unknowns

    The rank test and the factorization are done once so the same kernel can be
    applied to many right-hand sides (the BCI inner loop). Solving uses the
    explicit 2x2 normal equations unless their condition number exceeds
    GRAM_COND_LIMIT, in which case a pseudo-inverse of the stacked system is
    used instead.

    Args:
        A: M x n real matrix, n in {1, 2}
        D: Optional k x n regularizer (a 1-D array is a single row)
        mu: Regularization weight in [0, 1]
    """

    def __init__(self, A, D=None, mu=0.0):
        A = _as_columns(A)
        mu = float(mu)
        if not 0.0 <= mu <= 1.0:
            raise ValueError(f"mu must lie in [0, 1], got {mu}")
        n = A.shape[1]
        if A.shape[0] < n and (D is None or mu == 0.0):
            raise RankDeficient(f"{A.shape[0]} equations cannot determine {n} unknowns")

        stacked = A
        if D is not None and mu > 0.0:
            D = np.atleast_2d(np.asarray(D, dtype=float))
            if D.shape[1] != n:
                raise ValueError(f"regularizer has {D.shape[1]} columns, expected {n}")
            stacked = np.vstack([A, np.sqrt(mu) * D])
        else:
            D = None

        s = svdvals(stacked)
        if s[0] == 0.0 or s[-1] <= app_config.RANK_TOL * s[0]:
            raise RankDeficient(
                "current matrix is rank deficient (identical snapshots, a single "
                "nonzero current or a constant feeder-wide power factor)"
            )

        self.A = A
        self.n = n
        self.rows = A.shape[0]
        gram = stacked.T @ stacked
        self.gram_cond = float((s[0] / s[-1]) ** 2)
        if self.gram_cond <= app_config.GRAM_COND_LIMIT:
            self._operator = np.linalg.inv(gram) @ A.T
        else:
            logger.debug("Gram condition %.3g above limit, using pseudo-inverse", self.gram_cond)
            self._operator = np.linalg.pinv(stacked)[:, : self.rows]

    def solve(self, b):
        """
        Minimizer for one right-hand side

        Args:
            b: Real vector of length M

        Returns:
            numpy.ndarray of length n
        """
        b = np.asarray(b, dtype=float)
        if b.shape != (self.rows,):
            raise ValueError(f"right-hand side has shape {b.shape}, expected ({self.rows},)")
        return self._operator @ b


def lstsq_1col(a, b):
    """Single-unknown least squares, returns a float"""
    return float(LeastSquaresKernel(a).solve(b)[0])


def lstsq_2col(A, b):
    """
    Minimize ||b - A z||^2 over a real pair z

    Args:
        A: M x 2 real matrix with numerical rank 2
        b: Real vector of length M

    Returns:
        Tuple (z_re, z_im)

    Raises:
        RankDeficient: A has rank < 2
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[1] != 2:
        raise ValueError(f"expected an M x 2 matrix, got shape {A.shape}")
    z = LeastSquaresKernel(A).solve(b)
    return float(z[0]), float(z[1])


def regularized_lstsq(A, b, D, mu):
    """
    Minimize ||b - A z||^2 + mu ||D z||^2

    Args:
        A: M x 2 (or M x 1) real matrix
        b: Real vector of length M
        D: Regularizer, k x 2 matrix or a single 1 x 2 row
        mu: Weight in [0, 1]

    Returns:
        Tuple with one float per unknown

    Raises:
        RankDeficient: The stacked system [A; sqrt(mu) D] is rank deficient
    """
    z = LeastSquaresKernel(A, D=D, mu=mu).solve(b)
    return tuple(float(v) for v in z)
