"""Conformity-score models and score-file ingestion.

Two in-house scorers are provided, both deterministic:

* ``OneClassKnn``: mean Euclidean distance to the ``knn_k`` nearest training
  points.
* ``BinaryLogistic``: L2-penalized logistic regression fit by full-batch
  gradient descent from zero, scoring with the class-1 probability.  Rows are
  put in a canonical (lexicographic) order before fitting, so the fitted
  coefficients are bit-identical under any permutation of the input rows.

Pre-computed scores can be read from a CSV with :func:`ingest_scores`.
"""
import csv
import enum
import hashlib
import math
import re
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit, log_expit

from .conformal_core import ScoreSet
from .seeding import keyed_seed

__all__ = [
    "ScorerKind",
    "TrainSpec",
    "Scorer",
    "KnnScorer",
    "LogisticScorer",
    "ScoreFileError",
    "train_one_class",
    "train_binary",
    "score_batch",
    "logistic_loss_and_grad",
    "ingest_scores",
]


class ScorerKind(str, enum.Enum):
    ONE_CLASS_KNN = "one_class_knn"
    BINARY_LOGISTIC = "binary_logistic"
    EXTERNAL = "external"


@dataclass(frozen=True)
class TrainSpec:
    kind: ScorerKind = ScorerKind.BINARY_LOGISTIC
    knn_k: int = 5
    l2_lambda: float = 1.0
    learning_rate: float = 0.1
    max_iters: int = 500
    tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ScorerKind(self.kind))
        if self.knn_k < 1:
            raise ValueError("knn_k must be at least 1")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")


def _as_matrix(name, x):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-d matrix")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _canonical(x):
    """Rows sorted lexicographically by their coordinates."""
    if x.shape[0] == 0:
        return x
    order = np.lexsort(x.T[::-1])
    return np.ascontiguousarray(x[order])


def _fingerprint(spec, *arrays):
    h = hashlib.sha256(repr(sorted(asdict(spec).items())).encode())
    for a in arrays:
        h.update(np.ascontiguousarray(_canonical(a)).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class Scorer:
    kind: ScorerKind
    n_features: int
    train_fingerprint: str

    def score(self, points):
        raise NotImplementedError

    def _check(self, points):
        x = np.asarray(points, dtype=float)
        if x.size == 0:
            return np.empty((0, self.n_features))
        x = _as_matrix("points", x)
        if x.shape[1] != self.n_features:
            raise ValueError(
                f"dimension mismatch: scorer expects {self.n_features} features, "
                f"got {x.shape[1]}"
            )
        return x


@dataclass(frozen=True)
class KnnScorer(Scorer):
    train_points: np.ndarray = field(repr=False, default=None)
    k: int = 5

    def score(self, points):
        x = self._check(points)
        if x.shape[0] == 0:
            return np.empty(0)
        out = np.empty(x.shape[0])
        # chunked to bound the distance-matrix memory
        step = max(1, 2_000_000 // max(1, self.train_points.shape[0]))
        for start in range(0, x.shape[0], step):
            d = cdist(x[start:start + step], self.train_points)
            near = np.partition(d, self.k - 1, axis=1)[:, : self.k]
            out[start:start + step] = np.sort(near, axis=1).mean(axis=1)
        return out


@dataclass(frozen=True)
class LogisticScorer(Scorer):
    coef: np.ndarray = field(repr=False, default=None)
    intercept: float = 0.0
    n_iter: int = 0

    def decision_function(self, points):
        x = self._check(points)
        return x @ self.coef + self.intercept

    def score(self, points):
        return expit(self.decision_function(points))


def train_one_class(train_points, spec=TrainSpec(kind=ScorerKind.ONE_CLASS_KNN)):
    x = _as_matrix("train_points", train_points)
    if x.shape[0] <= spec.knn_k:
        raise ValueError(
            f"need more than knn_k={spec.knn_k} training points, got {x.shape[0]}"
        )
    return KnnScorer(
        kind=ScorerKind.ONE_CLASS_KNN,
        n_features=x.shape[1],
        train_fingerprint=_fingerprint(spec, x),
        train_points=_canonical(x),
        k=spec.knn_k,
    )


def logistic_loss_and_grad(params, x, y, l2_lambda):
    """Mean logistic loss plus ``l2_lambda/2 * |coef|^2`` and its gradient.

    ``params`` stacks the coefficients followed by the (unpenalized)
    intercept.
    """
    w, b = params[:-1], params[-1]
    z = x @ w + b
    loss = -np.mean(y * log_expit(z) + (1.0 - y) * log_expit(-z))
    loss += 0.5 * l2_lambda * float(w @ w)
    resid = (expit(z) - y) / x.shape[0]
    grad = np.empty_like(params)
    grad[:-1] = x.T @ resid + l2_lambda * w
    grad[-1] = resid.sum()
    return loss, grad


def train_binary(inlier_points, bag_points, spec=TrainSpec()):
    """Logistic regression separating inliers (label 0) from the bag (label 1).

    Full-batch gradient descent from zero with a fixed step, stopping after
    ``max_iters`` steps or when the gradient norm drops below ``tol``.
    """
    inl = _as_matrix("inlier_points", inlier_points)
    bag = _as_matrix("bag_points", bag_points)
    if inl.shape[0] == 0 or bag.shape[0] == 0:
        raise ValueError("both training groups must be non-empty")
    if inl.shape[1] != bag.shape[1]:
        raise ValueError(
            f"dimension mismatch: inliers have {inl.shape[1]} features, "
            f"bag has {bag.shape[1]}"
        )
    x = np.vstack([_canonical(inl), _canonical(bag)])
    y = np.concatenate([np.zeros(inl.shape[0]), np.ones(bag.shape[0])])
    params = np.zeros(x.shape[1] + 1)
    n_iter = 0
    for n_iter in range(1, spec.max_iters + 1):
        _, grad = logistic_loss_and_grad(params, x, y, spec.l2_lambda)
        if math.sqrt(float(grad @ grad)) < spec.tol:
            n_iter -= 1
            break
        params -= spec.learning_rate * grad
    return LogisticScorer(
        kind=ScorerKind.BINARY_LOGISTIC,
        n_features=x.shape[1],
        train_fingerprint=_fingerprint(spec, inl, bag),
        coef=params[:-1].copy(),
        intercept=float(params[-1]),
        n_iter=n_iter,
    )


def score_batch(scorer, points):
    return scorer.score(points)


class ScoreFileError(ValueError):
    pass


_SEED_RE = re.compile(r"^#\s*seed\s*[:=]\s*(-?\d+)\s*$")


def ingest_scores(path):
    """Read a score CSV (``repetition,role,score``) into one ScoreSet per
    repetition, sorted by repetition index.

    A leading comment line ``# seed: <int>`` sets the tie-breaking seed
    (default 0).  Ties are broken per repetition with a seed derived from it.
    """
    seed = 0
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = list(enumerate(fh, start=1))
    body = []
    for lineno, line in lines:
        stripped = line.strip()
        if stripped.startswith("#"):
            m = _SEED_RE.match(stripped)
            if m:
                seed = int(m.group(1))
            continue
        if stripped:
            body.append((lineno, line))
    if not body:
        raise ScoreFileError("no repetitions")
    header_line, header = body[0]
    fields = next(csv.reader([header]))
    fields = [f.strip() for f in fields]
    missing = {"repetition", "role", "score"} - set(fields)
    if missing:
        raise ScoreFileError(f"line {header_line}: missing columns {sorted(missing)}")
    col = {name: fields.index(name) for name in ("repetition", "role", "score")}
    for lineno, line in body[1:]:
        rec = next(csv.reader([line]))
        if len(rec) != len(fields):
            raise ScoreFileError(f"line {lineno}: expected {len(fields)} fields, got {len(rec)}")
        try:
            rep = int(rec[col["repetition"]])
        except ValueError:
            raise ScoreFileError(f"line {lineno}: bad repetition {rec[col['repetition']]!r}") from None
        role = rec[col["role"]].strip()
        if role not in ("cal", "test"):
            raise ScoreFileError(f"line {lineno}: role must be 'cal' or 'test', got {role!r}")
        try:
            value = float(rec[col["score"]])
        except ValueError:
            raise ScoreFileError(f"line {lineno}: bad score {rec[col['score']]!r}") from None
        if not math.isfinite(value):
            raise ScoreFileError(f"line {lineno}: score must be finite")
        rows.setdefault(rep, {"cal": [], "test": []})[role].append(value)
    if not rows:
        raise ScoreFileError("no repetitions")
    out = []
    n_test = None
    for rep in sorted(rows):
        cal, test = rows[rep]["cal"], rows[rep]["test"]
        if not cal:
            raise ScoreFileError(f"repetition {rep}: empty calibration")
        if not test:
            raise ScoreFileError(f"repetition {rep}: no test scores")
        if n_test is not None and len(test) != n_test:
            raise ScoreFileError("inconsistent test size")
        n_test = len(test)
        out.append(ScoreSet.from_raw(cal, test, repetition_index=rep, seed=keyed_seed(seed, rep, purpose="ingest_ties")))
    return out
