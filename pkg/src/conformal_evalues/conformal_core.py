"""Rank-based conformal machinery.

Conformal p-values, FDP estimates, the data-dependent BH threshold, the
per-repetition e-values built from that threshold, and their weighted
aggregation.  Larger scores are more outlier-like and every comparison is
``>=``.  An empty feasible set for the threshold is represented by
``math.inf``, which turns every e-value of that repetition into zero.
"""
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .seeding import keyed_rng

__all__ = [
    "INF_THRESHOLD",
    "FDPVariant",
    "ScoreSet",
    "EValueMatrix",
    "break_ties",
    "conformal_pvalues",
    "fdp_estimate",
    "bh_threshold",
    "evalues_at_threshold",
    "aggregate_evalues",
]

INF_THRESHOLD = math.inf


class FDPVariant(str, enum.Enum):
    PLUS_ONE = "plus_one"
    NO_PLUS_ONE = "no_plus_one"


def _as_scores(name, values):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class ScoreSet:
    """Calibration and test conformity scores from one repetition.

    Use :meth:`from_raw` to build one with tie-breaking jitter applied
    jointly to the pooled scores.
    """

    cal_scores: np.ndarray
    test_scores: np.ndarray
    repetition_index: int = 1

    def __post_init__(self):
        object.__setattr__(self, "cal_scores", _as_scores("cal_scores", self.cal_scores))
        object.__setattr__(self, "test_scores", _as_scores("test_scores", self.test_scores))

    @classmethod
    def from_raw(cls, cal_scores, test_scores, repetition_index=1, seed=0):
        cal = _as_scores("cal_scores", cal_scores)
        test = _as_scores("test_scores", test_scores)
        pooled = break_ties(np.concatenate([cal, test]), seed)
        return cls(pooled[: cal.size], pooled[cal.size:], repetition_index)

    @property
    def n_cal(self):
        return self.cal_scores.size

    @property
    def n_test(self):
        return self.test_scores.size

    def pooled(self):
        """Unordered union of calibration and test scores (sorted)."""
        return np.sort(np.concatenate([self.cal_scores, self.test_scores]))


@dataclass
class EValueMatrix:
    per_rep: np.ndarray
    aggregated: np.ndarray
    alpha_bh: float
    thresholds: np.ndarray
    weights: np.ndarray = field(default=None)


def break_ties(raw_scores, seed):
    """Add seeded jitter so that all scores become pairwise distinct.

    The jitter is uniform on ``(-delta, delta)`` with
    ``delta = 1e-9 * max(1, max|score|)``, shrunk below a quarter of the
    smallest gap between distinct values so the order of already-distinct
    scores is preserved.
    """
    scores = _as_scores("raw_scores", raw_scores)
    if scores.size == 0:
        return scores.copy()
    delta = 1e-9 * max(1.0, float(np.max(np.abs(scores))))
    uniq = np.unique(scores)
    if uniq.size > 1:
        min_gap = float(np.min(np.diff(uniq)))
        delta = min(delta, min_gap / 4.0)
    rng = keyed_rng(seed, purpose="break_ties")
    noise = rng.uniform(-delta, delta, size=scores.size)
    out = scores + noise
    if np.unique(out).size == out.size:
        return out
    # Gaps at float resolution: walk in (value, noise) order and step each
    # non-increasing entry up by one ulp.
    order = np.lexsort((noise, scores))
    y = out[order]
    for i in range(1, y.size):
        if y[i] <= y[i - 1]:
            y[i] = np.nextafter(y[i - 1], np.inf)
    out[order] = y
    return out


def conformal_pvalues(scores):
    """Relative rank of each test score among the calibration scores.

    ``p_j = (1 + #{i : cal_i >= test_j}) / (1 + n_cal)``
    """
    if scores.n_cal == 0:
        raise ValueError("empty calibration")
    cal_sorted = np.sort(scores.cal_scores)
    n_ge = scores.n_cal - np.searchsorted(cal_sorted, scores.test_scores, side="left")
    return (1.0 + n_ge) / (1.0 + scores.n_cal)


def _count_ge(sorted_values, t):
    return sorted_values.size - np.searchsorted(sorted_values, t, side="left")


def _fdp_curve(cal_sorted, test_sorted, t, variant):
    n_cal, n_test = cal_sorted.size, test_sorted.size
    cal_ge = _count_ge(cal_sorted, t).astype(float)
    test_ge = _count_ge(test_sorted, t).astype(float)
    if variant is FDPVariant.PLUS_ONE:
        num = (n_test / (1.0 + n_cal)) * (1.0 + cal_ge)
    else:
        num = (n_test / n_cal) * cal_ge
    with np.errstate(divide="ignore", invalid="ignore"):
        fdp = np.where(test_ge > 0, num / np.where(test_ge > 0, test_ge, 1.0), np.inf)
    return fdp


def fdp_estimate(t, scores, variant=FDPVariant.NO_PLUS_ONE):
    """Estimated false discovery proportion of the rule ``test >= t``.

    Returns ``inf`` when no test score reaches ``t``.
    """
    variant = FDPVariant(variant)
    fdp = _fdp_curve(
        np.sort(scores.cal_scores), np.sort(scores.test_scores),
        np.asarray([t], dtype=float), variant,
    )
    return float(fdp[0])


def bh_threshold(scores, alpha, variant=FDPVariant.NO_PLUS_ONE):
    """Smallest pooled score whose FDP estimate is at most ``alpha``.

    Returns ``INF_THRESHOLD`` when no candidate qualifies.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    variant = FDPVariant(variant)
    if scores.n_cal == 0:
        raise ValueError("empty calibration")
    cal_sorted = np.sort(scores.cal_scores)
    test_sorted = np.sort(scores.test_scores)
    candidates = np.unique(np.concatenate([cal_sorted, test_sorted]))
    fdp = _fdp_curve(cal_sorted, test_sorted, candidates, variant)
    ok = np.flatnonzero(fdp <= alpha)
    if ok.size == 0:
        return INF_THRESHOLD
    return float(candidates[ok[0]])


def evalues_at_threshold(scores, t_hat):
    """Rescaled rejection indicators at a fixed threshold.

    ``e_j = (1 + n_cal) * 1{test_j >= t_hat} / (1 + #{cal_i >= t_hat})``
    """
    if math.isinf(t_hat) and t_hat > 0:
        return np.zeros(scores.n_test)
    cal_ge = int(np.count_nonzero(scores.cal_scores >= t_hat))
    hit = scores.test_scores >= t_hat
    return np.where(hit, (1.0 + scores.n_cal) / (1.0 + cal_ge), 0.0)


def aggregate_evalues(per_rep, weights):
    """Weighted average of per-repetition e-values.

    ``weights`` is a :class:`~conformal_evalues.weighting.WeightVector` or a
    plain vector of normalized weights.
    """
    w = np.asarray(getattr(weights, "normalized", weights), dtype=float)
    per_rep = np.atleast_2d(np.asarray(per_rep, dtype=float))
    if per_rep.shape[0] != w.size:
        raise ValueError(
            f"dimension mismatch: {per_rep.shape[0]} repetitions but {w.size} weights"
        )
    return w @ per_rep
