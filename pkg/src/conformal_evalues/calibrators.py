"""Alternative e-value constructions: p-to-e calibrators and soft-rank
permutation e-values."""
import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CalibratorKind",
    "Calibrator",
    "SoftRankParams",
    "p_to_e",
    "soft_rank_evalue",
    "soft_rank_evalues",
    "DEFAULT_R_BINARY",
    "DEFAULT_R_ONE_CLASS",
]

DEFAULT_R_BINARY = 500.0
DEFAULT_R_ONE_CLASS = 75.0

_INV_E = math.exp(-1.0)
_SERIES_CUTOFF = 1.0 - 1e-4


class CalibratorKind(str, enum.Enum):
    SHAFER = "shafer"
    EPSILON = "epsilon"
    VS = "vs"
    INTEGRAL = "integral"


@dataclass(frozen=True)
class Calibrator:
    kind: CalibratorKind = CalibratorKind.SHAFER
    epsilon: float = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CalibratorKind(self.kind))
        if self.kind is CalibratorKind.EPSILON:
            if self.epsilon is None or not 0.0 < self.epsilon < 1.0:
                raise ValueError("epsilon calibrator needs epsilon in (0, 1)")
        elif self.epsilon is not None:
            raise ValueError("epsilon is only used by the epsilon calibrator")

    @property
    def is_valid(self):
        """False for VS, which does not produce valid e-values."""
        return self.kind is not CalibratorKind.VS

    def __call__(self, u):
        return p_to_e(u, self)


def _integral(u):
    out = np.empty_like(u)
    near_one = u > _SERIES_CUTOFF
    x = -np.log(u[near_one])
    out[near_one] = 0.5 + x / 6.0 + x * x / 24.0
    v = u[~near_one]
    lv = np.log(v)
    out[~near_one] = (1.0 - v + v * lv) / (v * lv * lv)
    return out


def p_to_e(u, kind=CalibratorKind.SHAFER):
    """Map p-values in (0, 1] to e-values.

    ``kind`` is a :class:`Calibrator` or a :class:`CalibratorKind`.  Scalars in
    give a float back; arrays give an array.
    """
    cal = kind if isinstance(kind, Calibrator) else Calibrator(kind)
    arr = np.asarray(u, dtype=float)
    if np.any(~(arr > 0.0)) or np.any(arr > 1.0):
        raise ValueError("p-values must lie in (0, 1]")
    flat = np.atleast_1d(arr).ravel()
    if cal.kind is CalibratorKind.SHAFER:
        out = 1.0 / np.sqrt(flat) - 1.0
    elif cal.kind is CalibratorKind.EPSILON:
        out = cal.epsilon * flat ** (cal.epsilon - 1.0)
    elif cal.kind is CalibratorKind.VS:
        out = np.ones_like(flat)
        small = flat <= _INV_E
        out[small] = -_INV_E / (flat[small] * np.log(flat[small]))
    else:
        out = _integral(flat)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


@dataclass(frozen=True)
class SoftRankParams:
    r: float = DEFAULT_R_ONE_CLASS

    def __post_init__(self):
        if not (math.isfinite(self.r) and self.r >= 0):
            raise ValueError("r must be finite and non-negative")


def _soft_transform(L, r):
    # Returns the transformed statistics up to a positive factor shared by
    # all pool members (the factor cancels in the e-value ratio).
    if r == 0:
        return L
    if r <= 50:
        return np.expm1(r * L)
    return np.exp(r * (L - 1.0)) - math.exp(-r)


def soft_rank_evalues(test_scores, cal_scores, params=SoftRankParams()):
    """Soft-rank e-value of every test score against the same calibration set.

    Each test score is pooled with the calibration scores, the pool is
    min-max normalized, soft-ranked with ``(exp(r*L) - exp(r*L_min)) / r``
    (``L - L_min`` when ``r = 0``) and the e-value is
    ``(n_cal + 1) * R_test / sum(R)``.  A constant pool gives 1.
    """
    cal = np.asarray(cal_scores, dtype=float).ravel()
    test = np.atleast_1d(np.asarray(test_scores, dtype=float)).ravel()
    if cal.size == 0:
        raise ValueError("empty calibration")
    r = float(params.r)
    lo = np.minimum(cal.min(), test)
    hi = np.maximum(cal.max(), test)
    span = hi - lo
    degenerate = span == 0
    safe_span = np.where(degenerate, 1.0, span)
    L_test = (test - lo) / safe_span
    L_cal = (cal[None, :] - lo[:, None]) / safe_span[:, None]
    R_test = _soft_transform(L_test, r)
    R_total = R_test + _soft_transform(L_cal, r).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        e = (cal.size + 1) * R_test / R_total
    return np.where(degenerate, 1.0, e)


def soft_rank_evalue(test_score, cal_scores, params=SoftRankParams()):
    return float(soft_rank_evalues([test_score], cal_scores, params)[0])
