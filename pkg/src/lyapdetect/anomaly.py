"""Isolation forest anomaly detector, implemented from scratch.

Scoring follows the standard construction: trees isolate points by uniform
random axis-aligned splits, anomalies sit at shallow depths, and the score
normalizes mean path length by the expected unsuccessful-search cost

    c(n) = 2 * H(n-1) - 2 * (n-1) / n,   H(k) = sum_{i=1..k} 1/i,

with c(1) = 0 and c(2) = 1. H is evaluated as an exact sum, not via the
log-plus-gamma asymptotic. Scores are 2**(-E[path]/c(subsample_size)),
monotone in isolation ease and bounded in (0, 1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np

from .features import FeatureMatrix

MODEL_FORMAT = "isolation-forest"
MODEL_VERSION = 1

DEFAULT_N_TREES = 100
DEFAULT_SUBSAMPLE = 256
DEFAULT_CONTAMINATION = 0.1
DEFAULT_THRESHOLD = 0.5


class AnomalyError(Exception):
    pass


class TooFewPointsError(AnomalyError):
    pass


class BadHyperparamError(AnomalyError):
    pass


class ModelFormatError(AnomalyError):
    pass


class Decision(Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@lru_cache(maxsize=None)
def average_path_length(n: int) -> float:
    """Expected search depth c(n) for a subtree holding n points."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    harmonic = math.fsum(1.0 / i for i in range(1, n))
    return 2.0 * harmonic - 2.0 * (n - 1) / n


@dataclass(frozen=True)
class Leaf:
    size: int


@dataclass(frozen=True)
class Split:
    feature: int
    value: float
    left: "Node"
    right: "Node"


Node = Leaf | Split


@dataclass
class IsolationForestModel:
    trees: list[Node]
    subsample_size: int
    n_trees: int
    train_seed: int
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if not (0.0 < self.threshold < 1.0):
            raise BadHyperparamError(f"threshold must lie in (0, 1), got {self.threshold}")


def _as_rows(features) -> np.ndarray:
    rows = features.rows if isinstance(features, FeatureMatrix) else np.asarray(features, np.float64)
    if rows.ndim != 2:
        raise BadHyperparamError(f"features must be 2-D, got shape {rows.shape}")
    return rows


def _grow(points: np.ndarray, depth: int, limit: int, rng: np.random.Generator) -> Node:
    n = len(points)
    if n <= 1 or depth >= limit:
        return Leaf(size=n)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    splittable = np.nonzero(hi > lo)[0]
    if len(splittable) == 0:
        return Leaf(size=n)
    feat = int(splittable[rng.integers(len(splittable))])
    value = rng.uniform(lo[feat], hi[feat])
    while not (lo[feat] < value < hi[feat]):
        value = rng.uniform(lo[feat], hi[feat])
    left_mask = points[:, feat] < value
    return Split(
        feature=feat,
        value=float(value),
        left=_grow(points[left_mask], depth + 1, limit, rng),
        right=_grow(points[~left_mask], depth + 1, limit, rng),
    )


def iforest_fit(
    features,
    n_trees: int = DEFAULT_N_TREES,
    subsample_size: int | None = None,
    seed: int = 0,
) -> IsolationForestModel:
    """Train an isolation forest.

    Each tree sees a without-replacement subsample of min(subsample_size, N)
    rows and grows to height limit ceil(log2(subsample)). Per-tree seeds are
    spawned from ``seed``, so results are reproducible and independent of
    tree build order.
    """
    rows = _as_rows(features)
    n = len(rows)
    if n < 2:
        raise TooFewPointsError(f"need at least 2 training points, got {n}")
    if n_trees < 1:
        raise BadHyperparamError(f"n_trees must be >= 1, got {n_trees}")
    if subsample_size is None:
        subsample_size = DEFAULT_SUBSAMPLE
    if subsample_size < 2:
        raise BadHyperparamError(f"subsample_size must be >= 2, got {subsample_size}")
    effective = min(subsample_size, n)
    limit = math.ceil(math.log2(effective))

    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        picks = rng.choice(n, size=effective, replace=False)
        trees.append(_grow(rows[picks], 0, limit, rng))
    return IsolationForestModel(
        trees=trees, subsample_size=effective, n_trees=n_trees, train_seed=seed
    )


def path_length(tree: Node, point: np.ndarray) -> float:
    """Traversal depth of ``point`` plus c(size) at the reached leaf."""
    depth = 0
    node = tree
    while isinstance(node, Split):
        node = node.left if point[node.feature] < node.value else node.right
        depth += 1
    return depth + average_path_length(node.size)


def anomaly_score(model: IsolationForestModel, point) -> float:
    """Score in (0, 1); larger means easier to isolate, i.e. more anomalous."""
    p = np.asarray(point, dtype=np.float64).ravel()
    mean_path = math.fsum(path_length(t, p) for t in model.trees) / len(model.trees)
    return float(2.0 ** (-mean_path / average_path_length(model.subsample_size)))


def anomaly_scores(model: IsolationForestModel, features) -> np.ndarray:
    rows = _as_rows(features)
    return np.array([anomaly_score(model, r) for r in rows])


def calibrate_threshold(
    model: IsolationForestModel, features, contamination: float = DEFAULT_CONTAMINATION
) -> float:
    """Score quantile that flags a ``contamination`` fraction of training data.

    Returns the (1 - contamination) empirical quantile (midpoint
    interpolation) of the training scores. Points scoring strictly above it
    are rejected, so contamination 0 accepts every training point.
    """
    if not (0.0 <= contamination < 1.0):
        raise BadHyperparamError(f"contamination must be in [0, 1), got {contamination}")
    scores = anomaly_scores(model, features)
    if scores.size == 0:
        raise TooFewPointsError("cannot calibrate on an empty feature set")
    return float(np.quantile(scores, 1.0 - contamination, method="midpoint"))


def decide(model: IsolationForestModel, point) -> Decision:
    """Reject iff the anomaly score strictly exceeds the model threshold."""
    return Decision.REJECT if anomaly_score(model, point) > model.threshold else Decision.ACCEPT


# ---------------------------------------------------------------------------
# serialization

def _node_to_dict(node: Node) -> dict:
    if isinstance(node, Leaf):
        return {"size": node.size}
    return {
        "feature": node.feature,
        "value": node.value,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(doc: dict) -> Node:
    if "size" in doc:
        return Leaf(size=int(doc["size"]))
    return Split(
        feature=int(doc["feature"]),
        value=float(doc["value"]),
        left=_node_from_dict(doc["left"]),
        right=_node_from_dict(doc["right"]),
    )


def model_to_json(model: IsolationForestModel) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "n_trees": model.n_trees,
        "subsample_size": model.subsample_size,
        "train_seed": model.train_seed,
        "threshold": model.threshold,
        "trees": [_node_to_dict(t) for t in model.trees],
    }
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str) -> IsolationForestModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not JSON: {exc}")
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"unexpected model format {doc.get('format')!r}")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    return IsolationForestModel(
        trees=[_node_from_dict(t) for t in doc["trees"]],
        subsample_size=int(doc["subsample_size"]),
        n_trees=int(doc["n_trees"]),
        train_seed=int(doc["train_seed"]),
        threshold=float(doc["threshold"]),
    )


def save_model(model: IsolationForestModel, path) -> None:
    Path(path).write_text(model_to_json(model) + "\n")


def load_model(path) -> IsolationForestModel:
    return model_from_json(Path(path).read_text())
