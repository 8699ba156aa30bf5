"""Synthetic regressor ensembles with controlled noise, bias, and correlation.

Every generated dataset keeps its hidden truth alongside the realized errors,
so any recovery result can be scored against what actually happened rather
than against distribution parameters. Errors follow an additive shared
component model: regressor r sees ``bias_r + own noise + sum of shared
components`` for every correlated pair it belongs to, which keeps the implied
moment matrix positive semidefinite with one parameter per pair.

Randomness comes from the Philox counter-based generator with one documented
stream per noise source (stream r for regressor r's own noise, stream
2**32 + p for the p-th correlated pair), so runs are reproducible from the
seed alone and committed test vectors stay stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BiasVector, MomentVector, PairIndexMap, PredictionMatrix
from .pairwise import compensated_mean
from .recovery import MODE_BIAS, MODE_DIAGONAL, MODE_FULL, RecoveryReport, min_l1_shift

__all__ = [
    "DISTRIBUTIONS",
    "SHARED_STREAM_BASE",
    "TRUTH_CONSTANT",
    "TRUTH_RAMP",
    "RegressorNoise",
    "CorrelatedPair",
    "NoiseSpec",
    "GroundTruthBundle",
    "ScoreRecord",
    "make_truth",
    "bundle_from_deltas",
    "generate",
    "score",
]

DISTRIBUTIONS = ("uniform", "gaussian")

TRUTH_CONSTANT = "constant"
TRUTH_RAMP = "ramp"

# Stream ids below this belong to per-regressor own noise; shared components
# for correlated pairs start here so the two families never collide.
SHARED_STREAM_BASE = 2**32


@dataclass(frozen=True)
class RegressorNoise:
    """Noise model of one regressor.

    ``scale`` is the uniform half-width or the gaussian standard deviation,
    in signal units. A uniform half-width w has variance w**2 / 3.
    """

    distribution: str = "gaussian"
    scale: float = 1.0
    bias: float = 0.0

    def variance(self) -> float:
        """Population variance of the own-noise component."""
        if self.distribution == "uniform":
            return self.scale**2 / 3.0
        return self.scale**2


@dataclass(frozen=True)
class CorrelatedPair:
    """A shared additive noise component injected into two regressors."""

    first: int
    second: int
    scale: float
    distribution: str = "gaussian"

    def variance(self) -> float:
        """Population variance of the shared component."""
        if self.distribution == "uniform":
            return self.scale**2 / 3.0
        return self.scale**2


@dataclass(frozen=True)
class NoiseSpec:
    """Full noise configuration of an ensemble."""

    regressors: tuple[RegressorNoise, ...]
    correlated_pairs: tuple[CorrelatedPair, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "regressors", tuple(self.regressors))
        object.__setattr__(self, "correlated_pairs", tuple(self.correlated_pairs))

    @property
    def n_regressors(self) -> int:
        return len(self.regressors)

    def validate(self) -> list[str]:
        """Collect violations; an empty list means the spec is usable."""
        problems = []
        if not self.regressors:
            problems.append("need at least one regressor")
        for r, reg in enumerate(self.regressors):
            if reg.distribution not in DISTRIBUTIONS:
                problems.append(
                    f"regressor {r}: unknown distribution {reg.distribution!r}; "
                    f"expected one of {DISTRIBUTIONS}"
                )
            if not (reg.scale >= 0):
                problems.append(f"regressor {r}: scale must be nonnegative, got {reg.scale}")
            if not math.isfinite(reg.bias):
                problems.append(f"regressor {r}: bias must be finite, got {reg.bias}")
        n = self.n_regressors
        for p, pair in enumerate(self.correlated_pairs):
            if pair.distribution not in DISTRIBUTIONS:
                problems.append(
                    f"pair {p}: unknown distribution {pair.distribution!r}; "
                    f"expected one of {DISTRIBUTIONS}"
                )
            if not (0 <= pair.first < n) or not (0 <= pair.second < n):
                problems.append(
                    f"pair {p}: regressor ids ({pair.first}, {pair.second}) out of "
                    f"range for {n} regressors"
                )
            elif pair.first == pair.second:
                problems.append(f"pair {p}: regressor ids must be distinct, got {pair.first} twice")
            if not (pair.scale >= 0):
                problems.append(f"pair {p}: scale must be nonnegative, got {pair.scale}")
        return problems

    def implied_moments(self) -> MomentVector:
        """Population second moments the spec implies, including bias products.

        Diagonal entry r is ``bias_r**2 + own variance + shared variances``;
        off-diagonal (r1, r2) is ``bias_r1 * bias_r2`` plus the variance of
        every shared component joining the two.
        """
        n = self.n_regressors
        biases = np.array([reg.bias for reg in self.regressors])
        matrix = np.outer(biases, biases)
        for r, reg in enumerate(self.regressors):
            matrix[r, r] += reg.variance()
        for pair in self.correlated_pairs:
            v = pair.variance()
            matrix[pair.first, pair.first] += v
            matrix[pair.second, pair.second] += v
            matrix[pair.first, pair.second] += v
            matrix[pair.second, pair.first] += v
        return MomentVector.from_matrix(matrix)

    def to_dict(self) -> dict:
        return {
            "regressors": [
                {"distribution": reg.distribution, "scale": reg.scale, "bias": reg.bias}
                for reg in self.regressors
            ],
            "correlated_pairs": [
                {
                    "first": pair.first,
                    "second": pair.second,
                    "scale": pair.scale,
                    "distribution": pair.distribution,
                }
                for pair in self.correlated_pairs
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSpec":
        try:
            regressors = tuple(
                RegressorNoise(
                    distribution=entry.get("distribution", "gaussian"),
                    scale=float(entry["scale"]),
                    bias=float(entry.get("bias", 0.0)),
                )
                for entry in data["regressors"]
            )
            pairs = tuple(
                CorrelatedPair(
                    first=int(entry["first"]),
                    second=int(entry["second"]),
                    scale=float(entry["scale"]),
                    distribution=entry.get("distribution", "gaussian"),
                )
                for entry in data.get("correlated_pairs", [])
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed noise spec: {exc}") from exc
        return cls(regressors=regressors, correlated_pairs=pairs)


@dataclass(frozen=True, eq=False)
class GroundTruthBundle:
    """Hidden truth and realized errors of one generated dataset.

    ``true_moments`` and ``true_biases`` are 1/D sample moments of the
    realized deltas, not the distribution parameters, so finite-sample
    recovery can be scored without statistical slack. ``reconstruct``
    returns the exact prediction matrix data (truth plus deltas evaluates
    bit-for-bit to the generated predictions).
    """

    truth: np.ndarray
    deltas: np.ndarray
    true_moments: MomentVector
    true_biases: BiasVector

    def __post_init__(self):
        truth = np.ascontiguousarray(self.truth, dtype=np.float64)
        deltas = np.ascontiguousarray(self.deltas, dtype=np.float64)
        if truth.ndim != 1:
            raise ValueError(f"truth must be 1-D, got shape {truth.shape}")
        if deltas.ndim != 2 or deltas.shape[0] != len(truth):
            raise ValueError(
                f"deltas shape {deltas.shape} does not match {len(truth)} truth values"
            )
        if self.true_moments.n_regressors != deltas.shape[1]:
            raise ValueError("true_moments regressor count does not match deltas")
        if self.true_biases.n_regressors != deltas.shape[1]:
            raise ValueError("true_biases regressor count does not match deltas")
        truth.setflags(write=False)
        deltas.setflags(write=False)
        object.__setattr__(self, "truth", truth)
        object.__setattr__(self, "deltas", deltas)

    @property
    def n_items(self) -> int:
        return len(self.truth)

    @property
    def n_regressors(self) -> int:
        return self.deltas.shape[1]

    def reconstruct(self) -> np.ndarray:
        """The prediction matrix data, rebuilt exactly as truth + deltas."""
        return self.truth[:, None] + self.deltas


@dataclass(frozen=True)
class ScoreRecord:
    """How one recovery report compares to the generating bundle."""

    mode: str
    max_abs_error: float
    rmse: float
    support_precision: float
    support_recall: float
    threshold: float
    n_true_support: int
    n_estimated_support: int

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "max_abs_error": self.max_abs_error,
            "rmse": self.rmse,
            "support_precision": self.support_precision,
            "support_recall": self.support_recall,
            "threshold": self.threshold,
            "n_true_support": self.n_true_support,
            "n_estimated_support": self.n_estimated_support,
        }


def make_truth(source: str, n_items: int) -> np.ndarray:
    """Built-in truth vectors: ``constant`` (0.5) or ``ramp`` (0 to 1)."""
    if n_items < 1:
        raise ValueError(f"need at least one item, got {n_items}")
    if source == TRUTH_CONSTANT:
        return np.full(n_items, 0.5)
    if source == TRUTH_RAMP:
        return np.linspace(0.0, 1.0, n_items)
    raise ValueError(
        f"unknown truth source {source!r}; expected {TRUTH_CONSTANT!r}, "
        f"{TRUTH_RAMP!r}, or an explicit vector"
    )


def _stream(seed: int, stream: int) -> np.random.Generator:
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw(distribution: str, scale: float, n_items: int, seed: int, stream: int) -> np.ndarray:
    rng = _stream(seed, stream)
    if distribution == "uniform":
        return rng.uniform(-scale, scale, n_items)
    return rng.normal(0.0, scale, n_items)


def bundle_from_deltas(truth: np.ndarray, deltas: np.ndarray) -> GroundTruthBundle:
    """Build a bundle around realized deltas, computing their sample moments."""
    truth = np.ascontiguousarray(truth, dtype=np.float64)
    deltas = np.ascontiguousarray(deltas, dtype=np.float64)
    n = deltas.shape[1]
    pm = PairIndexMap(n)
    moment_values = np.empty(pm.n_diagonal)
    for k, (r1, r2) in enumerate(pm.pairs("diagonal")):
        moment_values[k] = compensated_mean(deltas[:, r1] * deltas[:, r2])
    bias_values = np.array([compensated_mean(deltas[:, r]) for r in range(n)])
    return GroundTruthBundle(
        truth=truth,
        deltas=deltas,
        true_moments=MomentVector(values=moment_values, n_regressors=n),
        true_biases=BiasVector(values=bias_values),
    )


def generate(
    truth: str | np.ndarray,
    spec: NoiseSpec,
    n_items: int | None = None,
    seed: int = 0,
) -> tuple[PredictionMatrix, GroundTruthBundle]:
    """Generate a prediction matrix and its ground-truth bundle.

    ``truth`` is either a built-in source name (see :func:`make_truth`, which
    then requires ``n_items``) or an explicit truth vector, e.g. a flattened
    image channel. Deltas are stored as the recomputed difference between
    predictions and truth, so the reconstruction identity holds exactly in
    floating point, not just to rounding.
    """
    problems = spec.validate()
    if problems:
        raise ValueError("invalid noise spec: " + "; ".join(problems))
    if isinstance(truth, str):
        if n_items is None:
            raise ValueError(f"truth source {truth!r} needs an explicit n_items")
        truth_vec = make_truth(truth, n_items)
    else:
        truth_vec = np.ascontiguousarray(truth, dtype=np.float64).ravel()
        if n_items is not None and n_items != len(truth_vec):
            raise ValueError(
                f"n_items={n_items} conflicts with explicit truth of length {len(truth_vec)}"
            )
    d = len(truth_vec)
    if d < 1:
        raise ValueError("truth vector is empty")

    n = spec.n_regressors
    noise = np.zeros((d, n))
    for r, reg in enumerate(spec.regressors):
        noise[:, r] = reg.bias + _draw(reg.distribution, reg.scale, d, seed, stream=r)
    for p, pair in enumerate(spec.correlated_pairs):
        shared = _draw(pair.distribution, pair.scale, d, seed, stream=SHARED_STREAM_BASE + p)
        noise[:, pair.first] += shared
        noise[:, pair.second] += shared

    predictions = truth_vec[:, None] + noise
    deltas = predictions - truth_vec[:, None]
    bundle = bundle_from_deltas(truth_vec, deltas)
    return PredictionMatrix(data=predictions), bundle


def _support_scores(
    estimate: np.ndarray, true: np.ndarray, threshold: float
) -> tuple[float, float, int, int]:
    est = np.abs(estimate) > threshold
    tru = np.abs(true) > threshold
    tp = int(np.sum(est & tru))
    n_est = int(np.sum(est))
    n_tru = int(np.sum(tru))
    precision = tp / n_est if n_est else 1.0
    recall = tp / n_tru if n_tru else 1.0
    return precision, recall, n_tru, n_est


def score(
    report: RecoveryReport,
    bundle: GroundTruthBundle,
    threshold: float | None = None,
    reference: np.ndarray | None = None,
) -> ScoreRecord:
    """Score a recovery report against the bundle's realized sample moments.

    The default support threshold is 10**-3 times the largest true diagonal
    moment. Bias reports are compared after shifting the true biases to
    their own minimal-l1 representative, since the global offset is not
    recoverable from differences by construction.

    ``reference`` substitutes a different comparison vector of the same
    layout, e.g. population moments when judging support recovery: at large
    D every realized cross moment carries sampling noise above a small
    threshold, so realized sample moments are the wrong yardstick for
    sparsity structure.
    """
    if report.n_regressors != bundle.n_regressors:
        raise ValueError(
            f"report is for R={report.n_regressors} but bundle has R={bundle.n_regressors}"
        )
    if reference is not None:
        true = np.asarray(reference, dtype=np.float64).ravel()
        if len(true) != len(report.values):
            raise ValueError(
                f"reference has {len(true)} components but report has {len(report.values)}"
            )
    elif report.mode == MODE_FULL:
        true = bundle.true_moments.values
    elif report.mode == MODE_DIAGONAL:
        true = bundle.true_moments.diagonal()
    elif report.mode == MODE_BIAS:
        raw = bundle.true_biases.values
        true = raw + min_l1_shift(raw)
    else:
        raise ValueError(f"cannot score report mode {report.mode!r}")
    if threshold is None:
        threshold = 1e-3 * float(np.max(bundle.true_moments.diagonal()))
    errors = report.values - true
    precision, recall, n_tru, n_est = _support_scores(report.values, true, threshold)
    return ScoreRecord(
        mode=report.mode,
        max_abs_error=float(np.max(np.abs(errors))),
        rmse=float(np.sqrt(np.mean(errors * errors))),
        support_precision=precision,
        support_recall=recall,
        threshold=float(threshold),
        n_true_support=n_tru,
        n_estimated_support=n_est,
    )
