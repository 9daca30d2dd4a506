"""B-spline bases on equally spaced knots, with difference penalties,
tensor products and identifiability transforms.

The basis construction follows the penalized-spline convention: the
domain is divided into equal segments, the boundary-to-boundary knots
are padded with ``degree`` extra knots on each side at the same
spacing, and the resulting basis has ``segments + degree`` functions.
Smoothness is controlled not by knot placement but by a difference
penalty on the coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import OutOfDomainError

__all__ = [
    "KnotVector",
    "BasisMatrix",
    "PenaltyMatrix",
    "ConstraintTransform",
    "make_knots",
    "bspline_basis",
    "difference_penalty",
    "tensor_basis",
    "tensor_penalty",
    "sum_to_zero_transform",
    "interaction_constraint_transform",
]


@dataclass(frozen=True)
class KnotVector:
    """Equally spaced knots covering ``[lo, hi]``.

    ``knots`` holds the interior boundary-to-boundary sequence plus
    ``degree`` padding knots on each side, all at the segment spacing.
    """

    lo: float
    hi: float
    segments: int
    degree: int
    knots: np.ndarray

    @property
    def dimension(self) -> int:
        """Number of B-spline basis functions supported on the domain."""
        return self.segments + self.degree

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / self.segments


@dataclass(frozen=True)
class BasisMatrix:
    """Evaluated basis: one row per observation, one column per function."""

    matrix: np.ndarray
    knots: tuple[KnotVector, ...]

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def univariate(cls, x: np.ndarray, kv: KnotVector) -> "BasisMatrix":
        return cls(matrix=bspline_basis(x, kv), knots=(kv,))

    @classmethod
    def tensor(cls, margins: Sequence["BasisMatrix"]) -> "BasisMatrix":
        matrix = tensor_basis([m.matrix for m in margins])
        knots = tuple(kv for m in margins for kv in m.knots)
        return cls(matrix=matrix, knots=knots)


@dataclass(frozen=True)
class PenaltyMatrix:
    """Coefficient penalty ``matrix`` with a factor ``root`` such that
    ``root.T @ root == matrix`` exactly."""

    matrix: np.ndarray
    root: np.ndarray
    order: int


@dataclass(frozen=True)
class ConstraintTransform:
    """Reparameterization absorbing linear constraints ``C @ beta = 0``.

    ``z`` has orthonormal columns spanning the null space of the
    constraint rows; a constrained basis is ``B @ z`` and constrained
    penalties are ``z.T @ P @ z``.
    """

    z: np.ndarray
    constraint: np.ndarray

    @property
    def free_dimension(self) -> int:
        return self.z.shape[1]

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        return matrix @ self.z


def make_knots(lo: float, hi: float, segments: int, degree: int = 3) -> KnotVector:
    """Build the equally spaced knot sequence for ``segments`` segments
    on ``[lo, hi]`` with ``degree`` padding knots on each side.
    """
    if not np.isfinite(lo) or not np.isfinite(hi) or not hi > lo:
        raise ValueError(f"degenerate domain [{lo}, {hi}]")
    if segments < 1:
        raise ValueError(f"segments must be >= 1, got {segments}")
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    h = (hi - lo) / segments
    knots = lo + h * np.arange(-degree, segments + degree + 1, dtype=float)
    # pin the boundary knots so domain checks are exact
    knots[degree] = lo
    knots[degree + segments] = hi
    knots.setflags(write=False)
    return KnotVector(lo=float(lo), hi=float(hi), segments=segments, degree=degree, knots=knots)


def bspline_basis(x: np.ndarray, kv: KnotVector) -> np.ndarray:
    """Evaluate every B-spline basis function at the points ``x``.

    Uses the Cox-de Boor recurrence, vectorized over observations.
    Rows sum to one everywhere on the domain; values outside
    ``[kv.lo, kv.hi]`` raise :class:`OutOfDomainError`.
    """
    x = np.asarray(x, dtype=float).ravel()
    bad = ~np.isfinite(x) | (x < kv.lo) | (x > kv.hi)
    if bad.any():
        offender = x[bad][0]
        raise OutOfDomainError(
            f"value {offender!r} outside basis domain [{kv.lo}, {kv.hi}]"
        )
    t = kv.knots
    # degree 0: indicators of [t_j, t_{j+1}), closed at the domain end
    b = ((x[:, None] >= t[None, :-1]) & (x[:, None] < t[None, 1:])).astype(float)
    at_hi = x == kv.hi
    if at_hi.any():
        b[at_hi, :] = 0.0
        b[at_hi, kv.degree + kv.segments - 1] = 1.0
    for d in range(1, kv.degree + 1):
        left = (x[:, None] - t[None, : -d - 1]) / (t[d:-1] - t[: -d - 1])
        right = (t[None, d + 1 :] - x[:, None]) / (t[d + 1 :] - t[1:-d])
        b = left * b[:, :-1] + right * b[:, 1:]
    return b


def difference_penalty(dimension: int, order: int = 2) -> PenaltyMatrix:
    """Difference penalty ``D.T @ D`` of the given order on coefficient
    vectors of length ``dimension``.

    The null space is exactly the polynomials of degree < ``order`` in
    the coefficient index, so order 2 leaves straight lines unpenalized.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if dimension <= order:
        raise ValueError(
            f"dimension {dimension} must exceed difference order {order}"
        )
    root = np.diff(np.eye(dimension), n=order, axis=0)
    return PenaltyMatrix(matrix=root.T @ root, root=root, order=order)


def tensor_basis(margins: Sequence[np.ndarray]) -> np.ndarray:
    """Row-wise tensor product of marginal basis matrices.

    Column order is C-style over the marginal indices: the first
    margin's index varies slowest. Row sums are products of the
    marginal row sums, so partitions of unity stay partitions of unity.
    """
    if len(margins) < 2:
        raise ValueError("tensor product needs at least two margins")
    rows = {m.shape[0] for m in margins}
    if len(rows) != 1:
        raise ValueError(f"margins disagree on row count: {sorted(rows)}")
    n = rows.pop()
    out = np.asarray(margins[0], dtype=float)
    for m in margins[1:]:
        out = (out[:, :, None] * np.asarray(m, dtype=float)[:, None, :]).reshape(n, -1)
    return out


def tensor_penalty(
    penalties: Sequence[PenaltyMatrix], dims: Sequence[int]
) -> list[PenaltyMatrix]:
    """Lift marginal penalties onto tensor-product coefficients.

    Direction ``k`` becomes ``I (x) ... (x) P_k (x) ... (x) I`` in the
    same column order as :func:`tensor_basis`, one penalty per margin.
    """
    if len(penalties) != len(dims):
        raise ValueError("one penalty per tensor dimension required")
    for k, (p, d) in enumerate(zip(penalties, dims)):
        if p.matrix.shape[0] != d:
            raise ValueError(
                f"penalty {k} has dimension {p.matrix.shape[0]}, expected {d}"
            )
    lifted = []
    for k, pen in enumerate(penalties):
        matrix = np.ones((1, 1))
        root = np.ones((1, 1))
        for j, d in enumerate(dims):
            matrix = np.kron(matrix, pen.matrix if j == k else np.eye(d))
            root = np.kron(root, pen.root if j == k else np.eye(d))
        lifted.append(PenaltyMatrix(matrix=matrix, root=root, order=pen.order))
    return lifted


def sum_to_zero_transform(basis: np.ndarray) -> ConstraintTransform:
    """Constraint transform forcing the fitted term to sum to zero over
    the observations the basis was evaluated on.

    The single constraint row is the vector of column sums; the
    returned ``z`` drops one degree of freedom.
    """
    b = basis.matrix if isinstance(basis, BasisMatrix) else np.asarray(basis, dtype=float)
    if b.ndim != 2 or b.shape[1] < 2:
        raise ValueError("basis must have at least two columns to constrain")
    c = b.sum(axis=0, keepdims=True)
    if not np.any(c):
        raise ValueError("constraint row is identically zero")
    z = linalg.null_space(c)
    return ConstraintTransform(z=z, constraint=c)


def interaction_constraint_transform(dims: Sequence[int]) -> ConstraintTransform:
    """Constraint transform for tensor-product interaction coefficients.

    Coefficients must sum to zero along every dimension, for every
    combination of indices in the other dimensions. The orthonormal
    null basis is built as the Kronecker product of the marginal
    sum-to-zero bases, leaving ``prod(d_k - 1)`` free coefficients.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise ValueError("interaction constraints need at least two margins")
    if any(d < 2 for d in dims):
        raise ValueError(
            f"marginal dimension 1 in {dims} leaves no free coefficients"
        )
    rows = []
    for k in range(len(dims)):
        block = np.ones((1, 1))
        for j, d in enumerate(dims):
            block = np.kron(block, np.ones((1, d)) if j == k else np.eye(d))
        rows.append(block)
    c = np.vstack(rows)
    z = np.ones((1, 1))
    for d in dims:
        z = np.kron(z, linalg.null_space(np.ones((1, d))))
    return ConstraintTransform(z=z, constraint=c)
