"""Synthetic benchmark data, dataset CSV I/O and reference splits."""
import csv
import math
from dataclasses import dataclass

import numpy as np

from .seeding import keyed_rng

__all__ = [
    "SyntheticConfig",
    "Dataset",
    "Subsample",
    "DatasetError",
    "generate_synthetic",
    "split_reference",
    "load_dataset",
    "save_dataset",
]


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    """Gaussian benchmark: inliers ~ N(0, I_d), outliers ~ N(mu, I_d) where
    the first ``signal_dims`` entries of ``mu`` equal ``amplitude``."""

    d: int = 100
    n_ref: int = 2000
    n_test: int = 1000
    outlier_prop: float = 0.1
    amplitude: float = 3.4
    signal_dims: int = 5
    seed: int = 0

    def __post_init__(self):
        if min(self.d, self.n_ref, self.n_test) < 1:
            raise ValueError("d, n_ref and n_test must be positive")
        if not 0 <= self.signal_dims <= self.d:
            raise ValueError("signal_dims must lie in [0, d]")
        if not 0.0 <= self.outlier_prop < 1.0:
            raise ValueError("outlier_prop must lie in [0, 1)")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")

    @property
    def n_outliers(self):
        return math.floor(self.n_test * self.outlier_prop)


@dataclass(frozen=True)
class Dataset:
    reference: np.ndarray
    test: np.ndarray
    test_labels: np.ndarray = None

    def __post_init__(self):
        ref = np.asarray(self.reference, dtype=float)
        test = np.asarray(self.test, dtype=float)
        if ref.ndim != 2 or test.ndim != 2:
            raise DatasetError("reference and test must be 2-d matrices")
        if ref.shape[1] != test.shape[1]:
            raise DatasetError("reference and test have different dimensions")
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "test", test)
        if self.test_labels is not None:
            labels = np.asarray(self.test_labels, dtype=bool)
            if labels.shape != (test.shape[0],):
                raise DatasetError("label vector length must equal n_test")
            object.__setattr__(self, "test_labels", labels)

    @property
    def n_ref(self):
        return self.reference.shape[0]

    @property
    def n_test(self):
        return self.test.shape[0]

    @property
    def d(self):
        return self.reference.shape[1]


def generate_synthetic(cfg):
    ref_rng = keyed_rng(cfg.seed, purpose="synthetic_reference")
    test_rng = keyed_rng(cfg.seed, purpose="synthetic_test")
    pos_rng = keyed_rng(cfg.seed, purpose="synthetic_positions")
    reference = ref_rng.standard_normal((cfg.n_ref, cfg.d))
    test = test_rng.standard_normal((cfg.n_test, cfg.d))
    labels = np.zeros(cfg.n_test, dtype=bool)
    labels[pos_rng.permutation(cfg.n_test)[: cfg.n_outliers]] = True
    test[np.ix_(labels, np.arange(cfg.signal_dims))] += cfg.amplitude
    return Dataset(reference, test, labels)


def split_reference(n_ref, n_cal, k, master_seed):
    """Random (train, cal) split of ``range(n_ref)`` for repetition ``k``.

    ``n_ref`` may also be a :class:`Dataset`.  The split depends only on
    ``(master_seed, k)``.  Both index arrays are returned sorted.
    """
    if isinstance(n_ref, Dataset):
        n_ref = n_ref.n_ref
    if not 0 < n_cal < n_ref:
        raise ValueError(f"n_cal must lie in (0, {n_ref}), got {n_cal}")
    perm = keyed_rng(master_seed, k, purpose="split_reference").permutation(n_ref)
    return np.sort(perm[n_cal:]), np.sort(perm[:n_cal])


@dataclass(frozen=True)
class Subsample:
    n_ref: int
    n_test: int
    outlier_prop: float
    seed: int = 0


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    feat = [h for h in header if h not in ("is_outlier", "role")]
    expected = [f"x{i}" for i in range(len(feat))]
    if not feat or feat != expected:
        raise DatasetError(f"{path}: feature columns must be x0..x{{d-1}}, got {feat}")
    idx = {h: i for i, h in enumerate(header)}
    x = np.empty((len(rows), len(feat)))
    labels = np.zeros(len(rows), dtype=bool) if "is_outlier" in idx else None
    roles = [] if "role" in idx else None
    for r, rec in enumerate(rows):
        lineno = r + 2
        if len(rec) != len(header):
            raise DatasetError(f"{path}: line {lineno}: expected {len(header)} fields")
        try:
            x[r] = [float(rec[idx[f]]) for f in feat]
        except ValueError:
            raise DatasetError(f"{path}: line {lineno}: non-numeric feature") from None
        if not np.all(np.isfinite(x[r])):
            raise DatasetError(f"{path}: line {lineno}: non-finite feature")
        if labels is not None:
            flag = rec[idx["is_outlier"]].strip()
            if flag not in ("0", "1"):
                raise DatasetError(f"{path}: line {lineno}: is_outlier must be 0 or 1")
            labels[r] = flag == "1"
        if roles is not None:
            role = rec[idx["role"]].strip()
            if role not in ("reference", "test"):
                raise DatasetError(f"{path}: line {lineno}: role must be reference or test")
            roles.append(role)
    return x, labels, roles


def load_dataset(path, subsample=None):
    """Load a dataset CSV (``x0,...,x{d-1}[,is_outlier][,role]``).

    Without ``subsample`` the file needs a ``role`` column.  With it,
    the reference set is drawn from inlier rows and the test set is drawn
    with ``floor(n_test * outlier_prop)`` outliers, disjoint from the
    reference.
    """
    x, labels, roles = _read_rows(path)
    if subsample is None:
        if roles is None:
            raise DatasetError(f"{path}: no 'role' column and no subsample request")
        is_ref = np.array([r == "reference" for r in roles], dtype=bool)
        if labels is not None and np.any(labels[is_ref]):
            raise DatasetError(f"{path}: reference rows must all be inliers")
        return Dataset(
            x[is_ref], x[~is_ref], None if labels is None else labels[~is_ref]
        )
    if labels is None:
        raise DatasetError(f"{path}: subsampling needs an is_outlier column")
    n_out = math.floor(subsample.n_test * subsample.outlier_prop)
    n_in_needed = subsample.n_ref + subsample.n_test - n_out
    inliers = np.flatnonzero(~labels)
    outliers = np.flatnonzero(labels)
    if inliers.size < n_in_needed or outliers.size < n_out:
        raise DatasetError(
            f"insufficient rows: need {n_in_needed} inliers and {n_out} outliers, "
            f"have {inliers.size} inliers and {outliers.size} outliers"
        )
    rng = keyed_rng(subsample.seed, purpose="subsample")
    inl = rng.permutation(inliers)
    outl = rng.permutation(outliers)[:n_out]
    ref_idx = inl[: subsample.n_ref]
    test_idx = rng.permutation(np.concatenate([inl[subsample.n_ref:n_in_needed], outl]))
    return Dataset(x[ref_idx], x[test_idx], labels[test_idx])


def save_dataset(dataset, path):
    """Write ``dataset`` in the CSV schema read by :func:`load_dataset`."""
    d = dataset.d
    labels = dataset.test_labels
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = [f"x{i}" for i in range(d)] + ["role"]
        if labels is not None:
            header.append("is_outlier")
        w.writerow(header)
        for row in dataset.reference:
            w.writerow([repr(float(v)) for v in row] + ["reference"] + (["0"] if labels is not None else []))
        for j, row in enumerate(dataset.test):
            extra = [str(int(labels[j]))] if labels is not None else []
            w.writerow([repr(float(v)) for v in row] + ["test"] + extra)
