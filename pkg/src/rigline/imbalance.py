"""Class-imbalance treatments: SMOTE oversampling, random undersampling,
and a minimum-expected-cost prediction wrapper."""

from dataclasses import dataclass

import numpy as np

from .baseline_learners import TrainedModel
from .dataset import Dataset, Standardizer, class_order
from .errors import ConfigError, SingleClassError


@dataclass(frozen=True)
class SmoteConfig:
    """k_neighbors: neighbor pool size; target_ratio: desired minority/majority
    count ratio (1.0 balances); seed drives every random draw."""

    k_neighbors: int = 5
    target_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if not 0.0 < self.target_ratio <= 1.0:
            raise ConfigError(
                f"target_ratio must be in (0,1], got {self.target_ratio}"
            )


def _two_class_split(d: Dataset):
    if not d.label_presence:
        raise SingleClassError("sampling needs a labeled dataset")
    classes = class_order(d.labels)
    if len(classes) == 1:
        raise SingleClassError(f"only one class present: {classes[0]}")
    if len(classes) > 2:
        raise ConfigError(f"sampling expects two classes, got {len(classes)}")
    idx = {c: np.flatnonzero(d.labels == c) for c in classes}
    counts = {c: len(idx[c]) for c in classes}
    minority = min(classes, key=lambda c: (counts[c], -classes.index(c)))
    majority = classes[0] if minority == classes[1] else classes[1]
    return minority, majority, idx


def smote(d: Dataset, cfg: SmoteConfig = SmoteConfig()) -> Dataset:
    """Append interpolated minority rows until minority/majority hits the
    target ratio (within one row).

    Each synthetic row is p + delta * (n - p) for a seeded-random minority
    row p, one of its k nearest minority neighbors n (Euclidean distance on
    standardized features, distance ties broken by row index), and delta
    uniform in [0,1]. Original rows stay in place as a prefix.
    """
    minority, majority, idx = _two_class_split(d)
    n_min = len(idx[minority])
    n_maj = len(idx[majority])
    if n_min <= cfg.k_neighbors:
        raise ConfigError(
            f"minority class has {n_min} rows; need more than k={cfg.k_neighbors}"
        )
    needed = int(round(cfg.target_ratio * n_maj)) - n_min
    if needed <= 0:
        return d

    Z = Standardizer().fit_transform(d.X)
    zmin = Z[idx[minority]]
    # Pairwise distances within the minority class; self excluded by +inf.
    sq = (
        np.sum(zmin * zmin, axis=1)[:, None]
        + np.sum(zmin * zmin, axis=1)[None, :]
        - 2.0 * (zmin @ zmin.T)
    )
    np.fill_diagonal(sq, np.inf)
    order = np.argsort(sq, axis=1, kind="stable")
    neighbors = order[:, : cfg.k_neighbors]

    rng = np.random.default_rng(cfg.seed)
    Xmin = d.X[idx[minority]]
    picks = rng.integers(n_min, size=needed)
    partner_slots = rng.integers(cfg.k_neighbors, size=needed)
    deltas = rng.uniform(0.0, 1.0, size=needed)
    P = Xmin[picks]
    N = Xmin[neighbors[picks, partner_slots]]
    synthetic = P + deltas[:, None] * (N - P)
    return d.append_rows(synthetic, [minority] * needed)


def undersample(d: Dataset, seed: int = 0) -> Dataset:
    """Drop seeded-random majority rows until both classes have equal counts.

    Minority rows and the relative order of survivors are untouched; balanced
    input comes back unchanged.
    """
    minority, majority, idx = _two_class_split(d)
    n_min = len(idx[minority])
    if len(idx[majority]) == n_min:
        return d
    rng = np.random.default_rng(seed)
    keep_maj = rng.choice(idx[majority], size=n_min, replace=False)
    keep = np.sort(np.concatenate([idx[minority], keep_maj]))
    return d.subset(keep)


class CostMatrix:
    """2x2 misclassification costs, cost[actual][predicted], zero diagonal."""

    def __init__(self, rows):
        m = np.asarray(rows, dtype=float)
        if m.shape != (2, 2):
            raise ConfigError(f"cost matrix must be 2x2, got shape {m.shape}")
        if m[0, 0] != 0.0 or m[1, 1] != 0.0:
            raise ConfigError("cost matrix diagonal must be zero")
        if m[0, 1] < 0 or m[1, 0] < 0:
            raise ConfigError("costs must be nonnegative")
        if m[0, 1] == 0.0 and m[1, 0] == 0.0:
            raise ConfigError("at least one off-diagonal cost must be positive")
        self.m = m

    @classmethod
    def from_off_diagonal(cls, first_as_second: float, second_as_first: float):
        return cls([[0.0, first_as_second], [second_as_first, 0.0]])

    @classmethod
    def from_file(cls, path: str):
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if len(lines) != 2:
            raise ConfigError(f"{path}: cost matrix file needs exactly two lines")
        rows = [[float(v) for v in ln.replace(",", " ").split()] for ln in lines]
        return cls(rows)

    def save(self, path: str) -> None:
        from .util import atomic_write_text

        atomic_write_text(
            path,
            "\n".join(
                " ".join(repr(float(v)) for v in row) for row in self.m
            )
            + "\n",
        )


def default_cost_matrix(d: Dataset) -> CostMatrix:
    """Misreading the minority class costs majority/minority; the reverse
    costs 1. Class index order follows class_order."""
    minority, majority, idx = _two_class_split(d)
    classes = class_order(d.labels)
    ratio = len(idx[majority]) / len(idx[minority])
    m = np.zeros((2, 2))
    min_i = classes.index(minority)
    maj_i = 1 - min_i
    m[min_i][maj_i] = ratio
    m[maj_i][min_i] = 1.0
    return CostMatrix(m)


class CostSensitiveModel(TrainedModel):
    """Wraps a probabilistic model; predicts the class minimizing expected
    cost instead of the probability argmax. Probabilities pass through."""

    learner = "costwrap"

    def __init__(self, base: TrainedModel, cm: CostMatrix):
        if len(base.classes) != 2:
            raise ConfigError("cost-sensitive wrapping expects a two-class model")
        super().__init__(base.classes)
        self.base = base
        self.cm = cm
        self.arity = getattr(base, "arity", None)

    def _proba_matrix(self, X):
        P = self.base.predict_proba(X)
        return P.reshape(1, -1) if P.ndim == 1 else P

    def ranking_scores(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        fn = getattr(self.base, "ranking_scores", None)
        return fn(X) if callable(fn) else self.base.predict_proba(X)

    def predict(self, x):
        P = self.predict_proba(x)
        single = P.ndim == 1
        if single:
            P = P.reshape(1, -1)
        expected = P @ self.cm.m  # column c: sum_a P(a) cost[a][c]
        picks = np.argmin(expected, axis=1)
        out = np.array([self.classes[int(i)] for i in picks])
        return str(out[0]) if single else out


def cost_sensitive_wrap(base: TrainedModel, cm: CostMatrix) -> CostSensitiveModel:
    return CostSensitiveModel(base, cm)
