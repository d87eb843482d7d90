"""BH on p-values and eBH on e-values.

Rejection sets hold 0-based test indices, sorted ascending.
"""
import enum
from dataclasses import dataclass

import numpy as np

__all__ = ["Method", "RejectionSet", "bh_filter", "ebh_filter"]


class Method(str, enum.Enum):
    BH = "BH"
    EBH = "EBH"


@dataclass(frozen=True)
class RejectionSet:
    indices: np.ndarray
    alpha: float
    method: Method
    n_test: int

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if idx.size and (idx[0] < 0 or idx[-1] >= self.n_test):
            raise ValueError("rejection indices out of range")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return int(self.indices.size)

    def mask(self):
        out = np.zeros(self.n_test, dtype=bool)
        out[self.indices] = True
        return out


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def bh_filter(pvalues, alpha):
    """Benjamini-Hochberg step-up procedure."""
    _check_alpha(alpha)
    p = np.asarray(pvalues, dtype=float)
    n = p.size
    if n == 0:
        return RejectionSet(np.empty(0, dtype=np.int64), alpha, Method.BH, 0)
    p_sorted = np.sort(p)
    passing = np.flatnonzero(p_sorted <= alpha * np.arange(1, n + 1) / n)
    if passing.size == 0:
        return RejectionSet(np.empty(0, dtype=np.int64), alpha, Method.BH, n)
    cutoff = p_sorted[passing[-1]]
    return RejectionSet(np.flatnonzero(p <= cutoff), alpha, Method.BH, n)


def ebh_filter(evalues, alpha):
    """eBH filter: reject the ``i_max`` largest e-values, where ``i_max`` is
    the largest ``i`` with ``e_(i) >= N / (alpha * i)`` (order statistics
    taken in decreasing order).  Ties at the cutoff are all rejected.
    """
    _check_alpha(alpha)
    e = np.asarray(evalues, dtype=float)
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValueError("e-values must be non-negative and finite")
    n = e.size
    if n == 0:
        return RejectionSet(np.empty(0, dtype=np.int64), alpha, Method.EBH, 0)
    e_desc = -np.sort(-e)
    ranks = np.arange(1, n + 1)
    passing = np.flatnonzero(e_desc >= n / (alpha * ranks))
    if passing.size == 0:
        return RejectionSet(np.empty(0, dtype=np.int64), alpha, Method.EBH, n)
    cutoff = e_desc[passing[-1]]
    return RejectionSet(np.flatnonzero(e >= cutoff), alpha, Method.EBH, n)
