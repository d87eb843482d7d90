"""Model weights for aggregating repetitions.

Every data-adaptive weight here is a function of the pooled (calibration and
test) score multiset only, which is what keeps the aggregated e-values valid.
"""
import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "WeightKind",
    "WeightingScheme",
    "WeightVector",
    "MAX_TTEST_WEIGHT",
    "uniform_weight",
    "ttest_weight",
    "trimmed_mean_weight",
    "trimmed_mean_log_weight",
    "normalize",
    "normalize_log",
]

# Perfect separation (zero pooled variance) caps the t-test weight here.
MAX_TTEST_WEIGHT = 1e12


class WeightKind(str, enum.Enum):
    UNIFORM = "uniform"
    TTEST = "ttest"
    TRIMMED_MEAN = "trimmed_mean"


@dataclass(frozen=True)
class WeightVector:
    raw: np.ndarray
    normalized: np.ndarray

    def __len__(self):
        return int(self.normalized.size)


def _n_top(gamma, n):
    # round before ceil so that e.g. 0.1 * 1500 does not become 151
    return math.ceil(round(gamma * n, 9))


def _sorted_pool(pooled_scores):
    s = np.sort(np.asarray(pooled_scores, dtype=float).ravel())
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s


def _check_gamma(gamma):
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")


def uniform_weight(K):
    """Equal weights ``1/K``."""
    if K < 1:
        raise ValueError("K must be at least 1")
    raw = np.ones(K)
    return WeightVector(raw, raw / K)


def ttest_weight(pooled_scores, gamma):
    """Absolute pooled two-sample t-statistic between the top ``ceil(gamma*N)``
    pooled scores and the rest.

    Parameters
    ----------
    pooled_scores : array_like
        Unordered union of calibration and test scores of one repetition.
    gamma : float
        Guess of the outlier proportion, in (0, 1).

    Returns
    -------
    float
        ``|t|``; ``MAX_TTEST_WEIGHT`` if both groups are constant but differ,
        0 if the two group means coincide.
    """
    _check_gamma(gamma)
    s = _sorted_pool(pooled_scores)
    n = s.size
    n2 = _n_top(gamma, n)
    n1 = n - n2
    if n1 == 0 or n2 == 0:
        raise ValueError("degenerate split")
    if n < 3:
        raise ValueError("need at least 3 scores")
    low, high = s[:n1], s[n1:]
    mu1, mu2 = low.mean(), high.mean()
    z = (np.sum((low - mu1) ** 2) + np.sum((high - mu2) ** 2)) / (n1 + n2 - 2)
    diff = mu1 - mu2
    if diff == 0.0:
        return 0.0
    if z == 0.0:
        return MAX_TTEST_WEIGHT
    t = diff / math.sqrt(z * (1.0 / n1 + 1.0 / n2))
    return min(abs(t), MAX_TTEST_WEIGHT)


def trimmed_mean_log_weight(pooled_scores, gamma):
    """Log of :func:`trimmed_mean_weight`, i.e. minus the sum of the
    ``N - ceil(gamma*N)`` smallest pooled scores."""
    _check_gamma(gamma)
    s = _sorted_pool(pooled_scores)
    n_keep = s.size - _n_top(gamma, s.size)
    if n_keep <= 0:
        raise ValueError("no scores left after trimming")
    # the trimmed statistic is a sum of the kept order statistics, not their mean
    return -float(np.sum(s[:n_keep]))


def trimmed_mean_weight(pooled_scores, gamma):
    return math.exp(trimmed_mean_log_weight(pooled_scores, gamma))


def normalize(raw):
    """Scale non-negative weights to sum to one (uniform if they are all 0)."""
    raw = np.asarray(raw, dtype=float).ravel()
    if raw.size == 0:
        raise ValueError("need at least one weight")
    if np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise ValueError("raw weights must be non-negative and finite")
    total = raw.sum()
    if total == 0.0:
        return WeightVector(raw, np.full(raw.size, 1.0 / raw.size))
    return WeightVector(raw, raw / total)


def normalize_log(log_raw):
    """Normalize weights given on the log scale.

    The stored ``raw`` vector is ``exp(log_raw - max(log_raw))``, i.e. the raw
    weights up to a common positive factor, which leaves the normalization
    unchanged and avoids underflow.
    """
    log_raw = np.asarray(log_raw, dtype=float).ravel()
    if log_raw.size == 0:
        raise ValueError("need at least one weight")
    if np.any(np.isnan(log_raw)) or np.any(log_raw == np.inf):
        raise ValueError("log weights must be finite or -inf")
    top = log_raw.max()
    if top == -np.inf:
        return normalize(np.zeros(log_raw.size))
    return normalize(np.exp(log_raw - top))


@dataclass(frozen=True)
class WeightingScheme:
    kind: WeightKind = WeightKind.UNIFORM
    gamma: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", WeightKind(self.kind))
        _check_gamma(self.gamma)

    def log_raw_weight(self, pooled_scores):
        """Log of the un-normalized weight of one repetition."""
        if self.kind is WeightKind.UNIFORM:
            return 0.0
        if self.kind is WeightKind.TTEST:
            w = ttest_weight(pooled_scores, self.gamma)
            return math.log(w) if w > 0 else -math.inf
        return trimmed_mean_log_weight(pooled_scores, self.gamma)

    def weights(self, pooled_per_rep):
        """Normalized weights for a sequence of pooled score vectors."""
        return normalize_log([self.log_raw_weight(p) for p in pooled_per_rep])
