"""Coordinate model of the discrete Pontryagin bundle T*Q x Q.

Q is a plain R^n in one global chart. A point is x = (q, p, q+); tangent and
cotangent vectors split into matching (dq, dp, dq+) blocks. The two-form is
the negated pullback of the canonical form of T*Q, in blocks
-(u.dq . w.dp - u.dp . w.dq), so dq+ blocks never enter it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateConstraintError, DimensionMismatchError
from .linalg import RANK_CUTOFF, orthonormal_columns


_F64 = np.dtype(float)


def _block(x, name: str) -> np.ndarray:
    if type(x) is np.ndarray and x.dtype == _F64 and x.ndim == 1:
        return x.copy()
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise DimensionMismatchError("%s must be a 1-d vector, got shape %r" % (name, arr.shape))
    return arr.copy()


@dataclass(frozen=True)
class PontryaginPoint:
    """A point (q, p, q+): a covector (q, p) of T*Q plus a second configuration."""

    q: np.ndarray
    p: np.ndarray
    qplus: np.ndarray

    def __post_init__(self):
        q = _block(self.q, "q")
        p = _block(self.p, "p")
        qplus = _block(self.qplus, "qplus")
        if not (q.shape == p.shape == qplus.shape):
            raise DimensionMismatchError(
                "blocks must share one dimension, got %d / %d / %d"
                % (q.shape[0], p.shape[0], qplus.shape[0])
            )
        if not (np.isfinite(q).all() and np.isfinite(p).all() and np.isfinite(qplus).all()):
            raise ValueError("point entries must all be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "qplus", qplus)

    @classmethod
    def _trusted(cls, q: np.ndarray, p: np.ndarray, qplus: np.ndarray) -> "PontryaginPoint":
        # Internal fast path for freshly solved blocks: the caller guarantees
        # float64 1-d arrays of one dimension, finite entries, and that the
        # arrays are never mutated afterwards.
        self = object.__new__(cls)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "qplus", qplus)
        return self

    @property
    def dim(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True)
class TangentPd:
    """A tangent vector (dq, dp, dq+) at a point of the bundle."""

    dq: np.ndarray
    dp: np.ndarray
    dqplus: np.ndarray

    def __post_init__(self):
        dq = _block(self.dq, "dq")
        dp = _block(self.dp, "dp")
        dqplus = _block(self.dqplus, "dqplus")
        if not (dq.shape == dp.shape == dqplus.shape):
            raise DimensionMismatchError("tangent blocks must share one dimension")
        object.__setattr__(self, "dq", dq)
        object.__setattr__(self, "dp", dp)
        object.__setattr__(self, "dqplus", dqplus)

    @property
    def dim(self) -> int:
        return self.dq.shape[0]


@dataclass(frozen=True)
class CotangentPd:
    """A covector with blocks (bq, bp, bq+) dual to the tangent blocks."""

    bq: np.ndarray
    bp: np.ndarray
    bqplus: np.ndarray

    def __post_init__(self):
        bq = _block(self.bq, "bq")
        bp = _block(self.bp, "bp")
        bqplus = _block(self.bqplus, "bqplus")
        if not (bq.shape == bp.shape == bqplus.shape):
            raise DimensionMismatchError("cotangent blocks must share one dimension")
        object.__setattr__(self, "bq", bq)
        object.__setattr__(self, "bp", bp)
        object.__setattr__(self, "bqplus", bqplus)

    @property
    def dim(self) -> int:
        return self.bq.shape[0]

    def __call__(self, w: TangentPd) -> float:
        if w.dim != self.dim:
            raise DimensionMismatchError("covector dim %d, tangent dim %d" % (self.dim, w.dim))
        return float(self.bq @ w.dq + self.bp @ w.dp + self.bqplus @ w.dqplus)


class DiscreteCurve:
    """A finite sequence of bundle points with one common dimension."""

    def __init__(self, points: Sequence[PontryaginPoint]):
        points = tuple(points)
        if not points:
            raise DimensionMismatchError("a discrete curve needs at least one point")
        n = points[0].dim
        for k, pt in enumerate(points):
            if pt.dim != n:
                raise DimensionMismatchError(
                    "point %d has dimension %d, expected %d" % (k, pt.dim, n)
                )
        self.points = points
        self.dim = n

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, k):
        return self.points[k]

    def __iter__(self):
        return iter(self.points)


@dataclass(frozen=True)
class KinematicDistribution:
    """A velocity-constraint distribution given by its annihilator rows.

    ``annihilator(q)`` must return an m x n matrix of full row rank whose rows
    span the annihilator of the allowed velocities at q. m = 0 means no
    constraint.
    """

    n: int
    m: int
    annihilator: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.n < 1 or self.m < 0 or self.m > self.n:
            raise DimensionMismatchError("need 0 <= m <= n with n >= 1, got m=%d n=%d"
                                         % (self.m, self.n))
        if self.m > 0 and self.annihilator is None:
            raise ValueError("an annihilator function is required when m > 0")
        object.__setattr__(self, "_empty", np.zeros((0, self.n)))

    @classmethod
    def unconstrained(cls, n: int) -> "KinematicDistribution":
        return cls(n, 0, None)

    def matrix(self, q: np.ndarray) -> np.ndarray:
        """A(q), validated for shape and row rank."""
        if self.m == 0:
            return self._empty
        a = np.atleast_2d(np.asarray(self.annihilator(q), dtype=float))
        if a.shape != (self.m, self.n):
            raise DimensionMismatchError(
                "annihilator returned shape %r, expected (%d, %d)" % (a.shape, self.m, self.n)
            )
        s = np.linalg.svd(a, compute_uv=False)
        if s[0] == 0.0 or s[-1] <= RANK_CUTOFF * s[0]:
            raise DegenerateConstraintError(
                "annihilator loses row rank at q=%s (singular values %s)"
                % (np.array2string(np.asarray(q, dtype=float)), np.array2string(s))
            )
        return a

    def project_ker(self, q: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Orthogonal projection of the covector ``w`` onto ker A(q)."""
        if self.m == 0:
            return np.asarray(w, dtype=float)
        rows = orthonormal_columns(self.matrix(q).T)
        return w - rows @ (rows.T @ w)


def pontryagin_two_form(u: TangentPd, w: TangentPd) -> float:
    """Value of the bundle two-form on two tangent vectors; ignores dq+ blocks."""
    if u.dim != w.dim:
        raise DimensionMismatchError("tangent vectors of dimension %d and %d" % (u.dim, w.dim))
    return float(u.dp @ w.dq - u.dq @ w.dp)


def vertical_lift(x: PontryaginPoint, beta: np.ndarray) -> TangentPd:
    """Vertical lift of the covector beta at x: the tangent vector (0, beta, 0)."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.shape != (x.dim,):
        raise DimensionMismatchError("covector has shape %r, point dimension is %d"
                                     % (beta.shape, x.dim))
    zeros = np.zeros(x.dim)
    return TangentPd(zeros, beta, zeros)


def interior_product(v: TangentPd) -> CotangentPd:
    """The covector two_form(v, .) in blocks: (v.dp, -v.dq, 0)."""
    return CotangentPd(v.dp, -v.dq, np.zeros(v.dim))


def lift_annihilator(dist: KinematicDistribution, x: PontryaginPoint) -> np.ndarray:
    """Annihilator rows [A(q) | 0 | 0] of the lifted distribution at x.

    A tangent vector (dq, dp, dq+) lies in the lifted distribution exactly
    when A(q) dq = 0; the dp and dq+ blocks are unconstrained.
    """
    if x.dim != dist.n:
        raise DimensionMismatchError("point dimension %d, distribution dimension %d"
                                     % (x.dim, dist.n))
    a = dist.matrix(x.q)
    return np.hstack([a, np.zeros((a.shape[0], 2 * dist.n))])


def check_admissibility(curve: DiscreteCurve, tol: float = 1e-12) -> Optional[int]:
    """First index k with ||x_k.qplus - x_{k+1}.q||_inf > tol, or None if none.

    None means the curve satisfies the discrete second-order condition.
    """
    if len(curve) == 0:
        raise DimensionMismatchError("empty curve")
    if len(curve) == 1:
        return None
    ahead = np.stack([pt.qplus for pt in curve.points[:-1]])
    there = np.stack([pt.q for pt in curve.points[1:]])
    gaps = np.abs(ahead - there).max(axis=1)
    bad = np.nonzero(gaps > tol)[0]
    return int(bad[0]) if bad.size else None
