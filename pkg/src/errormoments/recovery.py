"""Recovery of error moments and biases from pairwise statistics.

Three estimators share the same observable inputs:

* diagonal least squares: assumes cross-moments vanish and solves the
  R(R-1)/2 equations ``<d_i^2> + <d_j^2> = delta_sq[i,j]`` for the R
  per-regressor square moments;
* full basis pursuit: keeps every cross term and recovers all R(R+1)/2
  square moments from the same equations under a sparsity prior, since the
  system is underdetermined;
* bias recovery: solves the rank-deficient difference system for the R
  first moments, then picks the member of the one-dimensional solution
  family with minimal l1 norm.

The basis-pursuit solver is a deterministic ADMM iteration (constraint-set
projection alternated with soft thresholding) written for the small, dense
systems this problem produces.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import BiasVector, CovarianceMatrix, MomentVector, PairIndexMap
from .pairwise import PairwiseStats

__all__ = [
    "MODE_DIAGONAL",
    "MODE_FULL",
    "MODE_BIAS",
    "BIAS_SHIFT_NOTE",
    "L1SolverConfig",
    "SolverInfo",
    "RecoveryReport",
    "build_moment_design",
    "build_bias_design",
    "default_noise_budget",
    "basis_pursuit",
    "recover_moments_diagonal",
    "recover_moments_full",
    "recover_bias",
    "min_l1_shift",
    "assemble_covariance",
]

MODE_DIAGONAL = "diagonal-least-squares"
MODE_FULL = "full-basis-pursuit"
MODE_BIAS = "bias-l1"

BIAS_SHIFT_NOTE = (
    "bias estimates are identified only up to a global shift; when a majority "
    "of regressors share a common relative bias, the minority is blamed instead"
)


@dataclass(frozen=True)
class L1SolverConfig:
    """Settings for the basis-pursuit solver.

    ``noise_budget`` is the radius of the residual ball: 0 forces exact
    equality with the observed statistics, None selects a conservative
    data-driven default (see :func:`default_noise_budget`). ``polish``
    re-solves least squares on the detected support and keeps the result
    only when it improves both feasibility and the l1 objective.
    """

    tolerance: float = 1e-8
    max_iter: int = 50000
    noise_budget: float | None = None
    rho: float = 1.0
    polish: bool = True

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.noise_budget is not None and self.noise_budget < 0:
            raise ValueError(f"noise budget must be nonnegative, got {self.noise_budget}")
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")


@dataclass(frozen=True)
class SolverInfo:
    """Diagnostics of one basis-pursuit run."""

    iterations: int
    primal_residual: float
    dual_residual: float
    constraint_gap: float
    tolerance: float
    noise_budget: float
    rho: float
    converged: bool
    polished: bool = False


@dataclass(frozen=True, eq=False)
class RecoveryReport:
    """Estimates plus residual and solver diagnostics for one recovery run.

    ``values`` is a moment vector over the diagonal-inclusive pair order in
    full mode, the R diagonal moments in diagonal mode, and the R bias
    representative in bias mode. ``clamped`` flags regressors whose diagonal
    moment estimate came out negative; the values themselves are reported
    unclamped, and ``residual_norm`` always refers to the unclamped solution.
    """

    mode: str
    values: np.ndarray
    n_regressors: int
    residual_norm: float
    clamped: tuple[int, ...] = ()
    solver: SolverInfo | None = None
    null_space_dim: int | None = None
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def moment_vector(self) -> MomentVector:
        """The estimate as a MomentVector (moment modes only)."""
        if self.mode == MODE_FULL:
            return MomentVector(values=self.values, n_regressors=self.n_regressors)
        if self.mode == MODE_DIAGONAL:
            return MomentVector.from_diagonal(self.values)
        raise ValueError(f"report mode {self.mode!r} does not carry moments")

    def bias_vector(self) -> BiasVector:
        """The estimate as a BiasVector (bias mode only)."""
        if self.mode != MODE_BIAS:
            raise ValueError(f"report mode {self.mode!r} does not carry biases")
        return BiasVector(values=self.values)


def build_moment_design(n_regressors: int, mode: str = "diagonal") -> np.ndarray:
    """Design matrix mapping square moments to mean squared differences.

    One row per strict pair (i, j). In ``"diagonal"`` mode the columns are
    the R diagonal moments and the row holds +1 at i and +1 at j. In
    ``"full"`` mode the columns run over all R(R+1)/2 moments and the row
    additionally holds -2 at the (i, j) cross-moment column.
    """
    if mode == "diagonal":
        if n_regressors < 3:
            raise ValueError(
                f"diagonal mode needs at least 3 regressors (got {n_regressors}); "
                "with 2 the system has more unknowns than equations"
            )
        pm = PairIndexMap(n_regressors)
        a = np.zeros((pm.n_strict, n_regressors))
        for k, (i, j) in enumerate(pm.pairs("strict")):
            a[k, i] = 1.0
            a[k, j] = 1.0
        return a
    if mode == "full":
        if n_regressors < 2:
            raise ValueError(f"full mode needs at least 2 regressors, got {n_regressors}")
        pm = PairIndexMap(n_regressors)
        a = np.zeros((pm.n_strict, pm.n_diagonal))
        for k, (i, j) in enumerate(pm.pairs("strict")):
            a[k, pm.index(i, i)] = 1.0
            a[k, pm.index(j, j)] = 1.0
            a[k, pm.index(i, j)] = -2.0
        return a
    raise ValueError(f"unknown moment design mode {mode!r}; expected 'diagonal' or 'full'")


def build_bias_design(n_regressors: int) -> np.ndarray:
    """Design matrix mapping biases to mean differences: +1 at i, -1 at j.

    Its rank is R-1; the null space is spanned by the all-ones vector, which
    is exactly the unidentifiable global bias direction.
    """
    if n_regressors < 2:
        raise ValueError(f"bias recovery needs at least 2 regressors, got {n_regressors}")
    pm = PairIndexMap(n_regressors)
    a = np.zeros((pm.n_strict, n_regressors))
    for k, (i, j) in enumerate(pm.pairs("strict")):
        a[k, i] = 1.0
        a[k, j] = -1.0
    return a


def default_noise_budget(stats: PairwiseStats) -> float:
    """Conservative residual budget for finite-sample pairwise statistics.

    Scales the observed statistic vector by sqrt(log(R^2) / D), which sits
    comfortably above the sampling error of the mean squared differences for
    the item counts this library targets while still shrinking to 0 as the
    dataset grows. Plain number, override freely.
    """
    r = stats.n_regressors
    return float(np.linalg.norm(stats.delta_sq) * math.sqrt(math.log(r * r) / stats.n_items))


def _soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


class _ResidualBallProjector:
    """Projection onto {x : ||A x - b|| <= eps} for a fixed dense A.

    Uses one symmetric eigendecomposition of A A^T. For eps = 0 this is the
    affine projection onto {A x = b}; for eps > 0 the Lagrange multiplier of
    the ball constraint solves a scalar secular equation, handled with a
    safeguarded Newton iteration (the equation is convex and decreasing in
    the multiplier, so Newton from 0 converges monotonically).
    """

    def __init__(self, a: np.ndarray, b: np.ndarray, eps: float):
        self.a = a
        self.b = b
        self.eps = eps
        gram = a @ a.T
        s, u = np.linalg.eigh(gram)
        self.s = np.maximum(s, 0.0)
        self.u = u
        self.rank_tol = max(self.s.max(initial=0.0), 1.0) * max(a.shape) * np.finfo(np.float64).eps
        # Unreachable component of b: below the minimum attainable residual
        # no feasible point exists and the projection is undefined.
        bhat = u.T @ b
        self.min_residual = float(
            np.sqrt(np.sum(bhat[self.s <= self.rank_tol] ** 2))
        ) if len(b) else 0.0

    def check_feasible(self) -> None:
        slack = 1e-9 * (1.0 + float(np.linalg.norm(self.b)))
        if self.min_residual > self.eps + slack:
            raise ValueError(
                f"noise budget {self.eps:g} is below the minimum attainable "
                f"residual {self.min_residual:g}; the constraint set is empty"
            )

    def __call__(self, v: np.ndarray, radius: float | None = None) -> np.ndarray:
        eps = self.eps if radius is None else radius
        w = self.a @ v - self.b
        what = self.u.T @ w
        if eps == 0.0:
            coef = np.where(self.s > self.rank_tol, what / np.maximum(self.s, self.rank_tol), 0.0)
            return v - self.a.T @ (self.u @ coef)
        if float(what @ what) <= eps * eps:
            return v
        mu = self._solve_multiplier(what, eps)
        coef = mu * what / (1.0 + mu * self.s)
        return v - self.a.T @ (self.u @ coef)

    def _solve_multiplier(self, what: np.ndarray, eps: float) -> float:
        w2 = what * what
        target = eps * eps
        mu = 0.0
        for _ in range(200):
            denom = 1.0 + mu * self.s
            phi = float(np.sum(w2 / denom**2)) - target
            if phi <= target * 1e-14:
                break
            dphi = float(-2.0 * np.sum(self.s * w2 / denom**3))
            if dphi >= 0.0:
                break
            mu -= phi / dphi
        return mu


def basis_pursuit(
    design: np.ndarray,
    target: np.ndarray,
    noise_budget: float = 0.0,
    tolerance: float = 1e-8,
    max_iter: int = 50000,
    rho: float = 1.0,
    polish: bool = True,
) -> tuple[np.ndarray, SolverInfo]:
    """Minimize ||x||_1 subject to ||design @ x - target||_2 <= noise_budget.

    Deterministic ADMM with the splitting x = z: the x-update projects onto
    the residual ball (exact equality when the budget is 0), the z-update is
    soft thresholding, which keeps the iterate sparse. The problem is
    normalized by ||target||_inf so a fixed rho works across data scales.
    Stops when both the split residual and the dual residual fall below
    ``tolerance`` (with a relative term); on hitting ``max_iter`` the best
    iterate is still returned, flagged as not converged. With a positive
    budget the returned vector is projected into the residual ball, so its
    residual never exceeds the budget (at the price of tolerance-sized dust
    on otherwise-zero components).

    Returns the solution vector and a :class:`SolverInfo` with iteration
    count and final gaps.
    """
    a = np.ascontiguousarray(design, dtype=np.float64)
    b = np.ascontiguousarray(target, dtype=np.float64).ravel()
    if a.ndim != 2 or a.shape[0] != len(b):
        raise ValueError(f"design shape {a.shape} does not match target length {len(b)}")
    if noise_budget < 0:
        raise ValueError(f"noise budget must be nonnegative, got {noise_budget}")
    m, n = a.shape

    scale = float(np.max(np.abs(b))) if len(b) else 0.0
    if scale == 0.0:
        # Zero is feasible and l1-minimal.
        info = SolverInfo(
            iterations=0, primal_residual=0.0, dual_residual=0.0, constraint_gap=0.0,
            tolerance=tolerance, noise_budget=noise_budget, rho=rho, converged=True,
        )
        return np.zeros(n), info

    bs = b / scale
    eps = noise_budget / scale
    project = _ResidualBallProjector(a, bs, eps)
    project.check_feasible()

    x = np.zeros(n)
    z = np.zeros(n)
    u = np.zeros(n)
    thr = 1.0 / rho
    iterations = 0
    primal = dual = math.inf
    converged = False
    for iterations in range(1, max_iter + 1):
        x = project(z - u)
        z_prev = z
        z = _soft_threshold(x + u, thr)
        u = u + x - z
        primal = float(np.linalg.norm(x - z))
        dual = float(rho * np.linalg.norm(z - z_prev))
        if primal <= tolerance * (1.0 + float(np.linalg.norm(z))) and dual <= tolerance * (
            1.0 + float(rho * np.linalg.norm(u))
        ):
            converged = True
            break

    zs = z
    if eps > 0.0 and float(np.linalg.norm(a @ zs - bs)) > eps:
        # The split iterate can sit a tolerance-sized hair outside the ball.
        # Project it back in, with a relative backoff so rounding in the
        # projection itself cannot push the residual over the budget again.
        zs = project(zs, radius=eps * (1.0 - 1e-9))
    out = zs * scale
    polished = False
    if polish:
        refined = _polish(a, b, out, noise_budget)
        if refined is not None:
            out = refined
            polished = True
    residual = float(np.linalg.norm(a @ out - b))
    info = SolverInfo(
        iterations=iterations,
        primal_residual=primal * scale,
        dual_residual=dual * scale,
        constraint_gap=max(0.0, residual - noise_budget),
        tolerance=tolerance,
        noise_budget=noise_budget,
        rho=rho,
        converged=converged,
        polished=polished,
    )
    return out, info


def _polish(a: np.ndarray, b: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray | None:
    """Least squares on the detected support, accepted only when it does not
    worsen feasibility and does not increase the l1 objective."""
    top = float(np.max(np.abs(x)))
    if top == 0.0:
        return None
    support = np.abs(x) > max(1e-12, 1e-9 * top)
    if not support.any():
        return None
    w, *_ = np.linalg.lstsq(a[:, support], b, rcond=None)
    candidate = np.zeros_like(x)
    candidate[support] = w
    slack = 1e-12 * (1.0 + float(np.max(np.abs(b))))
    res_old = float(np.linalg.norm(a @ x - b))
    res_new = float(np.linalg.norm(a @ candidate - b))
    if res_new > max(eps, res_old) + slack:
        return None
    if float(np.sum(np.abs(candidate))) > float(np.sum(np.abs(x))) * (1.0 + 1e-9) + slack:
        return None
    return candidate


def recover_moments_diagonal(stats: PairwiseStats) -> RecoveryReport:
    """Least-squares recovery of the R diagonal moments, cross terms assumed 0.

    For R = 3 the system is square and invertible so the solution is exact;
    for larger R the design has full column rank and this is the unique
    least-squares minimizer. Negative estimates (possible from sampling
    noise) are reported as-is and flagged in ``clamped``.
    """
    a = build_moment_design(stats.n_regressors, "diagonal")
    x, *_ = np.linalg.lstsq(a, stats.delta_sq, rcond=None)
    residual = float(np.linalg.norm(a @ x - stats.delta_sq))
    clamped = tuple(int(r) for r in np.flatnonzero(x < 0.0))
    return RecoveryReport(
        mode=MODE_DIAGONAL,
        values=x,
        n_regressors=stats.n_regressors,
        residual_norm=residual,
        clamped=clamped,
    )


def recover_moments_full(stats: PairwiseStats, config: L1SolverConfig | None = None) -> RecoveryReport:
    """Basis-pursuit recovery of all R(R+1)/2 square moments.

    The system has R(R-1)/2 equations for R(R+1)/2 unknowns, so the sparsity
    prior on cross-moments is what makes the answer well defined. With a
    zero noise budget the equations are enforced exactly; otherwise the
    residual is kept inside the budget (data-driven default when the config
    leaves it unset). Non-convergence is reported through ``solver.converged``
    with the best iterate and its gaps, never silently.
    """
    cfg = config or L1SolverConfig()
    pm = PairIndexMap(stats.n_regressors)
    a = build_moment_design(stats.n_regressors, "full")
    budget = cfg.noise_budget if cfg.noise_budget is not None else default_noise_budget(stats)
    x, info = basis_pursuit(
        a,
        stats.delta_sq,
        noise_budget=budget,
        tolerance=cfg.tolerance,
        max_iter=cfg.max_iter,
        rho=cfg.rho,
        polish=cfg.polish,
    )
    residual = float(np.linalg.norm(a @ x - stats.delta_sq))
    diag_idx = pm.diagonal_indices()
    clamped = tuple(int(r) for r in np.flatnonzero(x[diag_idx] < 0.0))
    return RecoveryReport(
        mode=MODE_FULL,
        values=x,
        n_regressors=stats.n_regressors,
        residual_norm=residual,
        clamped=clamped,
        solver=info,
    )


def min_l1_shift(values: np.ndarray) -> float:
    """The scalar c minimizing ||values + c * 1||_1, exactly.

    The minimizer is -median(values); for even lengths the median interval
    is flat and its midpoint is returned, which keeps the choice
    deterministic and symmetric under relabeling.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if len(v) == 0:
        raise ValueError("cannot shift an empty vector")
    return float(-np.median(v))


def recover_bias(stats: PairwiseStats) -> RecoveryReport:
    """Recover per-regressor biases up to the unidentifiable global shift.

    Solves the difference system by minimum-norm least squares (the design
    is rank deficient by exactly one), then returns the representative of
    the solution family ``p + c * 1`` with minimal l1 norm, i.e. shifted by
    the negated median. The reported null-space dimension is R - rank.

    A warning is emitted on every call because the ambiguity is structural,
    not data dependent: when most regressors share the same bias, this
    estimator confidently blames the unbiased minority, and nothing in the
    observable differences can reveal that.
    """
    warnings.warn(BIAS_SHIFT_NOTE, UserWarning, stacklevel=2)
    a = build_bias_design(stats.n_regressors)
    p, _, rank, _ = np.linalg.lstsq(a, stats.delta, rcond=None)
    representative = p + min_l1_shift(p)
    residual = float(np.linalg.norm(a @ p - stats.delta))
    return RecoveryReport(
        mode=MODE_BIAS,
        values=representative,
        n_regressors=stats.n_regressors,
        residual_norm=residual,
        null_space_dim=int(stats.n_regressors - rank),
        notes=(BIAS_SHIFT_NOTE,),
    )


def assemble_covariance(moments: MomentVector, bias: BiasVector) -> CovarianceMatrix:
    """Combine second moments and biases into the error covariance matrix.

    Entry (r1, r2) is ``moment(r1, r2) - bias(r1) * bias(r2)``. With a bias
    representative rather than the true biases, the result is exact only up
    to the unrecoverable global shift.
    """
    if moments.n_regressors != bias.n_regressors:
        raise ValueError(
            f"moment vector is for R={moments.n_regressors} but bias vector "
            f"for R={bias.n_regressors}"
        )
    values = moments.as_matrix() - np.outer(bias.values, bias.values)
    return CovarianceMatrix(values=values)
