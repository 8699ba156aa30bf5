"""Shared data types for ensemble error-moment analysis.

The central object is a dense items-by-regressors prediction matrix. All
estimation downstream consumes only pairwise differences of its columns, so
the types here fix the one convention everything else depends on: the
canonical ordering of regressor pairs used to vectorize symmetric moment
matrices.

All types are immutable after construction (arrays are marked read-only),
so instances can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

__all__ = [
    "PredictionMatrix",
    "PairIndexMap",
    "MomentVector",
    "BiasVector",
    "CovarianceMatrix",
    "pair_index",
    "validate",
]

PairMode = Literal["diagonal", "strict"]

# validate() lists every non-finite entry up to this many, then summarizes.
_MAX_REPORTED_NONFINITE = 1000


def _frozen_array(values, dtype=np.float64, ndim: int | None = None) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-dimensional array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PredictionMatrix:
    """Aligned regressor outputs, one row per item and one column per regressor.

    Rows must refer to the same underlying item in every column. Column names
    are metadata only; regressor ids are the 0-based column positions.
    Construction enforces shape, not content: use :func:`validate` to check
    the numeric invariants (finite entries, at least two regressors).
    """

    data: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen_array(self.data, ndim=2))
        if self.names is not None:
            names = tuple(str(n) for n in self.names)
            if len(names) != self.data.shape[1]:
                raise ValueError(
                    f"got {len(names)} column names for {self.data.shape[1]} regressors"
                )
            object.__setattr__(self, "names", names)

    @property
    def n_items(self) -> int:
        return self.data.shape[0]

    @property
    def n_regressors(self) -> int:
        return self.data.shape[1]

    def column(self, r: int) -> np.ndarray:
        return self.data[:, r]

    def validate(self) -> list[str]:
        """Alias for :func:`validate` on this matrix."""
        return validate(self)


@dataclass(frozen=True)
class PairIndexMap:
    """Canonical enumeration of regressor pairs for a fixed ensemble size.

    Two orderings are maintained, both row-major lexicographic:

    * ``"diagonal"``: unordered pairs ``(r1, r2)`` with ``r1 <= r2``, length
      ``R*(R+1)/2``, used to vectorize symmetric moment matrices;
    * ``"strict"``: pairs with ``r1 < r2``, length ``R*(R-1)/2``, used to
      index observable pairwise statistics.

    Both maps are bijections, consistent with each other, and symmetric in
    their arguments.
    """

    n_regressors: int

    def __post_init__(self):
        if not isinstance(self.n_regressors, (int, np.integer)) or self.n_regressors < 1:
            raise ValueError(f"regressor count must be a positive integer, got {self.n_regressors!r}")
        object.__setattr__(self, "n_regressors", int(self.n_regressors))

    @property
    def n_diagonal(self) -> int:
        r = self.n_regressors
        return r * (r + 1) // 2

    @property
    def n_strict(self) -> int:
        r = self.n_regressors
        return r * (r - 1) // 2

    def length(self, mode: PairMode = "diagonal") -> int:
        _check_mode(mode)
        return self.n_diagonal if mode == "diagonal" else self.n_strict

    def index(self, r1: int, r2: int, mode: PairMode = "diagonal") -> int:
        """Canonical index of the unordered pair ``(r1, r2)``."""
        _check_mode(mode)
        r = self.n_regressors
        for rid in (r1, r2):
            if not 0 <= rid < r:
                raise ValueError(f"regressor id {rid} out of range for R={r}")
        lo, hi = (r1, r2) if r1 <= r2 else (r2, r1)
        if mode == "strict":
            if lo == hi:
                raise ValueError(f"strict pair index needs two distinct regressors, got ({r1}, {r2})")
            return lo * r - lo * (lo + 1) // 2 + (hi - lo - 1)
        return lo * r - lo * (lo - 1) // 2 + (hi - lo)

    def pair(self, index: int, mode: PairMode = "diagonal") -> tuple[int, int]:
        """Inverse of :meth:`index`: the pair stored at ``index``."""
        _check_mode(mode)
        n = self.length(mode)
        if not 0 <= index < n:
            raise ValueError(f"pair index {index} out of range for length {n}")
        r = self.n_regressors
        row_len = r if mode == "diagonal" else r - 1
        r1 = 0
        while index >= row_len:
            index -= row_len
            row_len -= 1
            r1 += 1
        r2 = r1 + index if mode == "diagonal" else r1 + 1 + index
        return (r1, r2)

    def pairs(self, mode: PairMode = "diagonal") -> list[tuple[int, int]]:
        """All pairs in canonical order."""
        _check_mode(mode)
        r = self.n_regressors
        if mode == "diagonal":
            return [(i, j) for i in range(r) for j in range(i, r)]
        return [(i, j) for i in range(r) for j in range(i + 1, r)]

    def diagonal_indices(self) -> np.ndarray:
        """Positions of the (r, r) entries inside the diagonal-mode vector."""
        return np.array([self.index(r, r) for r in range(self.n_regressors)], dtype=np.intp)


def _check_mode(mode: str) -> None:
    if mode not in ("diagonal", "strict"):
        raise ValueError(f"unknown pair mode {mode!r}; expected 'diagonal' or 'strict'")


def pair_index(n_regressors: int, r1: int, r2: int, mode: PairMode = "diagonal") -> int:
    """Canonical index of pair ``(r1, r2)`` in an ensemble of ``n_regressors``."""
    return PairIndexMap(n_regressors).index(r1, r2, mode)


@dataclass(frozen=True, eq=False)
class MomentVector:
    """Second error moments packed in the diagonal-inclusive pair order.

    Entry ``(r, r)`` is the mean squared error of regressor ``r``; entry
    ``(r1, r2)`` is the mean product of the two regressors' errors, so the
    vector is one triangle of a symmetric matrix. Estimated vectors may carry
    small negative diagonal entries; consumers decide whether to floor them.
    """

    values: np.ndarray
    n_regressors: int

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, ndim=1))
        pm = PairIndexMap(self.n_regressors)
        if len(self.values) != pm.n_diagonal:
            raise ValueError(
                f"moment vector for R={self.n_regressors} must have length "
                f"{pm.n_diagonal}, got {len(self.values)}"
            )

    @property
    def pair_map(self) -> PairIndexMap:
        return PairIndexMap(self.n_regressors)

    def get(self, r1: int, r2: int) -> float:
        return float(self.values[self.pair_map.index(r1, r2)])

    def diagonal(self) -> np.ndarray:
        """The R per-regressor mean squared errors."""
        return self.values[self.pair_map.diagonal_indices()].copy()

    def as_matrix(self) -> np.ndarray:
        """The full symmetric R-by-R moment matrix."""
        r = self.n_regressors
        out = np.zeros((r, r))
        for k, (i, j) in enumerate(self.pair_map.pairs("diagonal")):
            out[i, j] = self.values[k]
            out[j, i] = self.values[k]
        return out

    @classmethod
    def from_matrix(cls, matrix) -> "MomentVector":
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        scale = np.max(np.abs(m)) if m.size else 0.0
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * max(scale, 1.0)):
            raise ValueError("moment matrix must be symmetric")
        r = m.shape[0]
        pm = PairIndexMap(r)
        values = np.array([m[i, j] for (i, j) in pm.pairs("diagonal")])
        return cls(values=values, n_regressors=r)

    @classmethod
    def from_diagonal(cls, diagonal) -> "MomentVector":
        d = np.asarray(diagonal, dtype=np.float64).ravel()
        r = len(d)
        pm = PairIndexMap(r)
        values = np.zeros(pm.n_diagonal)
        values[pm.diagonal_indices()] = d
        return cls(values=values, n_regressors=r)

    @classmethod
    def zeros(cls, n_regressors: int) -> "MomentVector":
        pm = PairIndexMap(n_regressors)
        return cls(values=np.zeros(pm.n_diagonal), n_regressors=n_regressors)


@dataclass(frozen=True, eq=False)
class BiasVector:
    """First error moments, one per regressor.

    Only differences between entries are identified by prediction data, so
    any stored vector is one representative of the family ``values + c * 1``.
    The unobservable global offset has no field here by design; operations
    that return a ``BiasVector`` state which representative they pick.
    """

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, ndim=1))

    @property
    def n_regressors(self) -> int:
        return len(self.values)


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    """Symmetric R-by-R error covariance, ``moment(r1,r2) - bias(r1)*bias(r2)``."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, ndim=2))
        if self.values.shape[0] != self.values.shape[1]:
            raise ValueError(f"covariance matrix must be square, got shape {self.values.shape}")
        if not np.array_equal(self.values, self.values.T):
            raise ValueError("covariance matrix must be exactly symmetric")

    @property
    def n_regressors(self) -> int:
        return self.values.shape[0]


def validate(m: PredictionMatrix) -> list[str]:
    """Check prediction-matrix invariants, returning one message per violation.

    Violations are data rather than exceptions so callers can report every
    problem at once. An empty list means the matrix is usable. Non-finite
    entries are listed individually with their coordinates up to a cap of
    1000, then summarized.
    """
    out: list[str] = []
    if m.n_regressors < 2:
        out.append(f"regressor count R must be >= 2, got {m.n_regressors}")
    if m.n_items < 1:
        out.append(f"item count D must be >= 1, got {m.n_items}")
    bad = np.argwhere(~np.isfinite(m.data))
    for i, j in bad[:_MAX_REPORTED_NONFINITE]:
        out.append(f"non-finite entry at (item {i}, regressor {j}): {m.data[i, j]!r}")
    if len(bad) > _MAX_REPORTED_NONFINITE:
        out.append(f"... {len(bad) - _MAX_REPORTED_NONFINITE} further non-finite entries")
    return out
