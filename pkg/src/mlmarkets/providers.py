"""Belief providers: where agents get their per-instance class distributions.

Providers are either trained here (bootstrap-bagged CART trees, Gaussian naive
Bayes) or loaded from a JSON belief file produced elsewhere.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import BELIEF_FLOOR, UtilitySpec, clip_belief
from .errors import ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] = ()
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if X.ndim != 2:
            raise ValidationError(f"features must be a 2-d matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValidationError(f"expected {X.shape[0]} labels, got shape {y.shape}")
        if not np.all(np.isfinite(X)):
            raise ValidationError("features contain missing or non-finite values")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            raise ValidationError("labels must be integer class indices")
        y = y.astype(np.int64)
        class_names = tuple(self.class_names) or tuple(str(k) for k in range(int(y.max()) + 1 if y.size else 0))
        if y.size and (y.min() < 0 or y.max() >= len(class_names)):
            raise ValidationError(f"labels must lie in [0, {len(class_names)})")
        feature_names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(feature_names) != X.shape[1]:
            raise ValidationError("feature_names length does not match the feature count")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", feature_names)
        object.__setattr__(self, "class_names", class_names)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def take(self, index) -> Dataset:
        return Dataset(self.features[index], self.labels[index], self.feature_names, self.class_names)


def load_csv_dataset(path, label_column: str) -> tuple[Dataset, int]:
    """Read a numeric CSV with a header row.

    Rows with an empty or non-numeric feature cell, or an empty label, are
    dropped; the number dropped is returned alongside the dataset. Class names
    are the sorted distinct label strings.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if label_column not in header:
            raise ValidationError(f"{path}: label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
        feature_names = [h for j, h in enumerate(header) if j != label_idx]
        rows, labels, rejected = [], [], 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            label = row[label_idx].strip()
            try:
                values = [float(v) for j, v in enumerate(row) if j != label_idx]
            except ValueError:
                values = None
            if not label or values is None or not all(math.isfinite(v) for v in values):
                rejected += 1
                continue
            rows.append(values)
            labels.append(label)
    if rejected:
        log.warning("%s: rejected %d row(s) with missing values", path, rejected)
    class_names = sorted(set(labels), key=_label_sort_key)
    lookup = {name: k for k, name in enumerate(class_names)}
    data = Dataset(
        np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_names)),
        np.array([lookup[v] for v in labels], dtype=np.int64),
        tuple(feature_names),
        tuple(class_names),
    )
    if len(data) < 2:
        raise ValidationError(f"{path}: need at least 2 usable rows, got {len(data)}")
    return data, rejected


def _label_sort_key(s: str):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def make_blobs(
    n_samples: int = 600,
    n_classes: int = 3,
    n_features: int = 2,
    separation: float = 2.0,
    seed: int = 0,
) -> Dataset:
    """Class-conditional unit-variance Gaussian blobs.

    Class centres sit on a scaled simplex-like layout so that ``separation``
    controls overlap: small values give heavily overlapping classes.
    """
    if n_classes < 2 or n_samples < n_classes:
        raise ValidationError("need at least 2 classes and one sample per class")
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((n_classes, n_features))
    centres -= centres.mean(axis=0)
    scale = np.linalg.norm(centres, axis=1).mean()
    centres *= separation / max(scale, 1e-12)
    labels = np.arange(n_samples) % n_classes
    rng.shuffle(labels)
    X = centres[labels] + rng.standard_normal((n_samples, n_features))
    return Dataset(X, labels, class_names=tuple(f"c{k}" for k in range(n_classes)))


class BeliefProvider:
    """Anything that maps feature rows to class distributions."""

    kind = "abstract"
    num_classes: int
    num_features: int

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.num_features:
            raise ValidationError(f"{self.kind} provider expects {self.num_features} features, got {X.shape[1]}")
        return self.predict_proba(X)


# ---------------------------------------------------------------------------
# CART trees
# ---------------------------------------------------------------------------


def _gini_from_counts(counts: np.ndarray, totals: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = counts / totals[..., None]
    return 1.0 - np.sum(frac * frac, axis=-1)


def _best_split(X, y, n_classes, min_leaf):
    """Return ``(gain, feature, threshold)`` of the best Gini split, or None.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    n = y.shape[0]
    if n < 2 * min_leaf:
        return None
    parent = np.bincount(y, minlength=n_classes).astype(np.float64)
    parent_gini = 1.0 - np.sum((parent / n) ** 2)
    if parent_gini <= 0.0:
        return None
    onehot = np.eye(n_classes)[y]
    n_left = np.arange(1, n, dtype=np.float64)  # split after position i -> i + 1 on the left
    best = None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        left = np.cumsum(onehot[order], axis=0)[:-1]
        right = parent - left
        impurity = (n_left * _gini_from_counts(left, n_left) + (n - n_left) * _gini_from_counts(right, n - n_left)) / n
        valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        gains = np.where(valid, parent_gini - impurity, -np.inf)
        i = int(np.argmax(gains))
        gain = gains[i]
        if gain > 1e-12 and (best is None or gain > best[0] + 1e-12):
            best = (gain, f, 0.5 * (xs[i] + xs[i + 1]))
    return best


@dataclass
class _Tree:
    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)
    n_samples: list = field(default_factory=list)

    def add(self, value, n):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.n_samples.append(n)
        return len(self.value) - 1


class BaggedTreeProvider(BeliefProvider):
    """A CART tree grown on a bootstrap resample; leaves give Laplace-smoothed frequencies."""

    kind = "bagged_tree"

    def __init__(self, depth_limit: int, min_leaf: int, seed: int, num_classes: int, num_features: int,
                 pseudo_count: float = 1.0):
        self.depth_limit = depth_limit
        self.min_leaf = min_leaf
        self.seed = seed
        self.num_classes = num_classes
        self.num_features = num_features
        self.pseudo_count = pseudo_count
        self.sample_indices = None
        self._tree = _Tree()

    def fit(self, X, y, sample_indices=None):
        self.sample_indices = np.arange(len(y)) if sample_indices is None else np.asarray(sample_indices)
        Xb, yb = X[self.sample_indices], y[self.sample_indices]
        self._tree = _Tree()
        self._grow(Xb, yb, depth=0)
        self._arrays = (
            np.array(self._tree.feature),
            np.array(self._tree.threshold),
            np.array(self._tree.left),
            np.array(self._tree.right),
            np.array(self._tree.value),
        )
        return self

    def _leaf_value(self, y):
        counts = np.bincount(y, minlength=self.num_classes) + self.pseudo_count
        return counts / counts.sum()

    def _grow(self, X, y, depth):
        node = self._tree.add(self._leaf_value(y), len(y))
        if depth >= self.depth_limit:
            return node
        split = _best_split(X, y, self.num_classes, self.min_leaf)
        if split is None:
            return node
        _, f, thr = split
        go_left = X[:, f] <= thr
        self._tree.feature[node] = f
        self._tree.threshold[node] = thr
        self._tree.left[node] = self._grow(X[go_left], y[go_left], depth + 1)
        self._tree.right[node] = self._grow(X[~go_left], y[~go_left], depth + 1)
        return node

    @property
    def leaf_sizes(self) -> list[int]:
        return [n for n, f in zip(self._tree.n_samples, self._tree.feature) if f < 0]

    @property
    def num_leaves(self) -> int:
        return len(self.leaf_sizes)

    def predict_proba(self, X):
        feature, threshold, left, right, value = self._arrays
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = feature[node]
            active = f >= 0
            if not active.any():
                break
            idx = np.flatnonzero(active)
            fi = f[idx]
            goes_left = X[idx, fi] <= threshold[node[idx]]
            node[idx] = np.where(goes_left, left[node[idx]], right[node[idx]])
        return value[node]


def train_bagged_tree(train: Dataset, depth_limit: int, min_leaf: int, seed: int) -> BaggedTreeProvider:
    """Fit one tree on a size-N bootstrap resample of ``train`` drawn with ``seed``."""
    if depth_limit < 1 or min_leaf < 1:
        raise ValidationError("depth_limit and min_leaf must be >= 1")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(train), size=len(train))
    provider = BaggedTreeProvider(depth_limit, min_leaf, seed, train.num_classes, train.num_features)
    return provider.fit(train.features, train.labels, idx)


# ---------------------------------------------------------------------------
# Gaussian naive Bayes
# ---------------------------------------------------------------------------


class GaussianNBProvider(BeliefProvider):
    kind = "gaussian_nb"

    def __init__(self, means, variances, log_prior):
        self.means = means
        self.variances = variances
        self.log_prior = log_prior
        self.num_classes, self.num_features = means.shape

    def predict_proba(self, X):
        diff = X[:, None, :] - self.means[None]
        log_lik = -0.5 * np.sum(diff * diff / self.variances + np.log(2.0 * np.pi * self.variances), axis=2)
        joint = log_lik + self.log_prior
        joint -= joint.max(axis=1, keepdims=True)
        p = np.exp(joint)
        return p / p.sum(axis=1, keepdims=True)


def train_gaussian_nb(train: Dataset, var_floor: float = 1e-6) -> GaussianNBProvider:
    if not var_floor > 0.0:
        raise ValidationError("var_floor must be positive")
    C, F = train.num_classes, train.num_features
    means = np.zeros((C, F))
    variances = np.ones((C, F))
    counts = np.bincount(train.labels, minlength=C).astype(np.float64)
    for k in range(C):
        Xk = train.features[train.labels == k]
        if len(Xk):
            means[k] = Xk.mean(axis=0)
            variances[k] = Xk.var(axis=0)
    variances = np.maximum(variances, var_floor)
    with np.errstate(divide="ignore"):
        log_prior = np.log(counts / counts.sum())
    return GaussianNBProvider(means, variances, log_prior)


class PrecomputedProvider(BeliefProvider):
    """Wraps a fixed belief matrix; ``predict`` takes instance indices, not features."""

    kind = "precomputed"

    def __init__(self, beliefs: np.ndarray):
        self.beliefs = np.asarray(beliefs, dtype=np.float64)
        self.num_classes = self.beliefs.shape[1]
        self.num_features = 1

    def predict_proba(self, X):
        return self.beliefs[np.asarray(X, dtype=np.int64).ravel()]


def predict_beliefs(providers: Sequence[BeliefProvider], instances: Dataset, floor: float = BELIEF_FLOOR) -> np.ndarray:
    """Stack provider predictions into a clipped ``(N_A, N, N_G)`` belief array."""
    if not providers:
        raise ValidationError("need at least one provider")
    out = np.stack([p.predict(instances.features) for p in providers])
    if out.shape[2] > 1:
        out = np.array(clip_belief(out, floor))
    return out


# ---------------------------------------------------------------------------
# Belief interchange files
# ---------------------------------------------------------------------------


@dataclass
class BeliefFile:
    """Contents of a belief interchange file.

    ``beliefs`` has shape ``(N_A, N_T, N_G)``; ``wealths`` sum to one.
    """

    num_goods: int
    ids: tuple[str, ...]
    utilities: tuple[UtilitySpec, ...]
    wealths: np.ndarray
    beliefs: np.ndarray
    targets: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        doc = {
            "num_goods": self.num_goods,
            "agents": [
                {
                    "id": aid,
                    "utility": u.to_dict(),
                    "wealth": float(w),
                    "beliefs": b.tolist(),
                }
                for aid, u, w, b in zip(self.ids, self.utilities, self.wealths, self.beliefs)
            ],
        }
        if self.targets is not None:
            doc["targets"] = [int(t) for t in self.targets]
        return doc


def save_belief_file(bf: BeliefFile, path) -> None:
    Path(path).write_text(json.dumps(bf.to_json(), indent=1) + "\n")


def _parse_error(msg):
    return ValidationError(f"belief file: {msg}")


def load_belief_matrix(path, floor: float = BELIEF_FLOOR) -> BeliefFile:
    """Read and validate a belief interchange file.

    Rows that do not sum to one are renormalised (with a warning); negative or
    non-finite entries, ragged rows and bad ids are errors naming the agent
    and row.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise _parse_error(f"not valid JSON ({exc})") from exc
    return parse_belief_document(doc, floor)


def parse_belief_document(doc: dict, floor: float = BELIEF_FLOOR) -> BeliefFile:
    if not isinstance(doc, dict):
        raise _parse_error("top level must be an object")
    try:
        num_goods = int(doc["num_goods"])
        agents = doc["agents"]
    except (KeyError, TypeError, ValueError) as exc:
        raise _parse_error("need integer 'num_goods' and list 'agents'") from exc
    if num_goods < 1 or not isinstance(agents, list) or not agents:
        raise _parse_error("num_goods must be >= 1 and agents non-empty")

    warnings: list[str] = []
    ids, utilities, wealths, matrices = [], [], [], []
    n_rows = None
    for a_idx, agent in enumerate(agents):
        if not isinstance(agent, dict):
            raise _parse_error(f"agent #{a_idx} is not an object")
        aid = agent.get("id")
        if not isinstance(aid, str) or not aid:
            raise _parse_error(f"agent #{a_idx} has a missing or non-string id")
        if aid in ids:
            raise _parse_error(f"duplicate agent id {aid!r}")
        ids.append(aid)
        utilities.append(UtilitySpec.from_dict(agent.get("utility", {"family": "logarithmic"})))
        w = agent.get("wealth")
        wealths.append(None if w is None else float(w))
        rows = agent.get("beliefs")
        if not isinstance(rows, list) or not rows:
            raise _parse_error(f"agent {aid!r}: 'beliefs' must be a non-empty list of rows")
        if n_rows is None:
            n_rows = len(rows)
        elif len(rows) != n_rows:
            raise _parse_error(f"agent {aid!r}: has {len(rows)} rows, expected {n_rows}")
        mat = np.empty((n_rows, num_goods))
        for r, row in enumerate(rows):
            if not isinstance(row, list) or len(row) != num_goods:
                raise _parse_error(f"agent {aid!r}, row {r}: expected {num_goods} entries")
            try:
                vals = np.array(row, dtype=np.float64)
            except (TypeError, ValueError) as exc:
                raise _parse_error(f"agent {aid!r}, row {r}: non-numeric entry") from exc
            if not np.all(np.isfinite(vals)):
                raise _parse_error(f"agent {aid!r}, row {r}: non-finite entry")
            if np.any(vals < 0.0):
                raise _parse_error(f"agent {aid!r}, row {r}: negative probability")
            s = vals.sum()
            if s <= 0.0:
                raise _parse_error(f"agent {aid!r}, row {r}: all-zero row")
            if abs(s - 1.0) > 1e-9:
                warnings.append(f"agent {aid!r}, row {r}: sum {s:.6g} renormalised")
            mat[r] = vals / s
        matrices.append(mat)

    for msg in warnings:
        log.warning("belief file: %s", msg)

    if any(w is None for w in wealths):
        if not all(w is None for w in wealths):
            raise _parse_error("either every agent or no agent must specify a wealth")
        w_arr = np.full(len(ids), 1.0 / len(ids))
    else:
        w_arr = np.array(wealths)
        if np.any(w_arr < 0.0) or not np.all(np.isfinite(w_arr)) or w_arr.sum() <= 0.0:
            raise _parse_error("wealths must be finite, nonnegative and not all zero")
        w_arr = w_arr / w_arr.sum()

    beliefs = np.stack(matrices)
    if num_goods > 1:
        beliefs = np.array(clip_belief(beliefs, floor))

    targets = doc.get("targets")
    if targets is not None:
        try:
            targets = np.array(targets, dtype=np.int64)
        except (TypeError, ValueError) as exc:
            raise _parse_error("targets must be integers") from exc
        if targets.shape != (n_rows,):
            raise _parse_error(f"expected {n_rows} targets, got {targets.size}")
        if targets.size and (targets.min() < 0 or targets.max() >= num_goods):
            raise _parse_error(f"targets must lie in [0, {num_goods})")

    return BeliefFile(num_goods, tuple(ids), tuple(utilities), w_arr, beliefs, targets, warnings)
