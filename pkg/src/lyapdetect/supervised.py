"""L2-regularized logistic detector and the leave-one-attack-out protocol."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureMatrix
from .metrics import RocCurve, roc

log = logging.getLogger(__name__)

MODEL_FORMAT = "logistic-model"
MODEL_VERSION = 1

# Armijo backtracking constants.
LINE_SEARCH_C = 1e-4
LINE_SEARCH_SHRINK = 0.5


class SupervisedError(Exception):
    pass


class SingleClassError(SupervisedError):
    pass


class TooFewAttacksError(SupervisedError):
    pass


class ModelFormatError(SupervisedError):
    pass


@dataclass(frozen=True)
class LogisticConfig:
    """Solver settings. ``seed`` is accepted for config uniformity; the
    solver itself is deterministic (zero init, full-batch steps)."""

    l2_penalty: float = 1e-4
    max_iters: int = 500
    tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.l2_penalty < 0:
            raise ValueError(f"l2_penalty must be >= 0, got {self.l2_penalty}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")


@dataclass
class LogisticModel:
    """Weights on standardized features plus the standardizer itself."""

    weights: np.ndarray
    bias: float
    means: np.ndarray
    stds: np.ndarray
    converged: bool
    loss_history: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class LoaoSplit:
    """One leave-one-attack-out fold: the held-out attack's evaluation set
    against a model trained on every other attack."""

    left_out: str
    train: FeatureMatrix
    train_labels: np.ndarray
    test: FeatureMatrix
    test_labels: np.ndarray


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _loss_and_grad(w, b, x, y, l2):
    z = x @ w + b
    # mean NLL, computed stably: log(1+exp(-|z|)) + max(z,0) - z*y
    nll = np.mean(np.logaddexp(0.0, z) - z * y)
    loss = nll + 0.5 * l2 * float(w @ w)
    p = _sigmoid(z)
    grad_w = x.T @ (p - y) / len(y) + l2 * w
    grad_b = float(np.mean(p - y))
    return loss, grad_w, grad_b


def logistic_fit(features, labels, config: LogisticConfig | None = None) -> LogisticModel:
    """Fit by full-batch gradient descent with Armijo backtracking.

    Features are standardized with training means and stds (constant columns
    keep std 1 so standardization stays well defined; their weights shrink
    to zero under the penalty). The bias is unpenalized. Non-convergence
    within ``max_iters`` logs a warning and returns the model with
    ``converged`` False.
    """
    if config is None:
        config = LogisticConfig()
    x = features.rows if isinstance(features, FeatureMatrix) else np.asarray(features, np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or len(y) != len(x):
        raise ValueError(f"features shape {x.shape} incompatible with {len(y)} labels")
    classes = np.unique(y)
    if not np.all(np.isin(classes, (0.0, 1.0))):
        raise ValueError(f"labels must be 0/1, got {classes}")
    if len(classes) < 2:
        raise SingleClassError("training labels contain a single class")

    means = x.mean(axis=0)
    stds = x.std(axis=0)
    stds = np.where(stds > 0, stds, 1.0)
    xs = (x - means) / stds

    w = np.zeros(x.shape[1])
    b = 0.0
    loss, grad_w, grad_b = _loss_and_grad(w, b, xs, y, config.l2_penalty)
    history = [loss]
    converged = False
    for _ in range(config.max_iters):
        grad_sq = float(grad_w @ grad_w) + grad_b * grad_b
        if np.sqrt(grad_sq) < config.tol:
            converged = True
            break
        step = 1.0
        accepted = False
        while step >= 1e-16:
            w_new = w - step * grad_w
            b_new = b - step * grad_b
            loss_new, gw_new, gb_new = _loss_and_grad(w_new, b_new, xs, y, config.l2_penalty)
            if loss_new <= loss - LINE_SEARCH_C * step * grad_sq:
                accepted = True
                break
            step *= LINE_SEARCH_SHRINK
        if not accepted:
            # no descent step at working precision; treat as converged-enough
            break
        w, b, loss, grad_w, grad_b = w_new, b_new, loss_new, gw_new, gb_new
        history.append(loss)
    if not converged:
        grad_sq = float(grad_w @ grad_w) + grad_b * grad_b
        converged = bool(np.sqrt(grad_sq) < config.tol)
    if not converged:
        log.warning("logistic solver stopped at max_iters=%d without meeting tol=%g",
                    config.max_iters, config.tol)
    return LogisticModel(
        weights=w, bias=b, means=means, stds=stds, converged=converged,
        loss_history=history,
    )


def logistic_score(model: LogisticModel, point) -> float:
    """Probability in (0, 1) that a feature row is adversarial."""
    p = (np.asarray(point, dtype=np.float64).ravel() - model.means) / model.stds
    return float(_sigmoid(np.atleast_1d(p @ model.weights + model.bias))[0])


def logistic_scores(model: LogisticModel, features) -> np.ndarray:
    x = features.rows if isinstance(features, FeatureMatrix) else np.asarray(features, np.float64)
    xs = (x - model.means) / model.stds
    return _sigmoid(xs @ model.weights + model.bias)


def make_loao_splits(
    natural: FeatureMatrix,
    per_attack: dict[str, FeatureMatrix],
    natural_train_fraction: float = 0.5,
) -> list[LoaoSplit]:
    """Build one split per attack.

    Natural rows are divided by index: the leading fraction trains, the rest
    evaluates, so train and test naturals never overlap. The held-out
    attack's rows appear only in its evaluation set.
    """
    if len(per_attack) < 2:
        raise TooFewAttacksError(f"need >= 2 attack sets, got {len(per_attack)}")
    if not (0.0 < natural_train_fraction < 1.0):
        raise ValueError(f"natural_train_fraction must be in (0,1), got {natural_train_fraction}")
    cut = int(round(len(natural) * natural_train_fraction))
    if cut < 1 or cut >= len(natural):
        raise ValueError(f"natural split {cut}/{len(natural)} leaves an empty side")
    nat_train = FeatureMatrix(rows=natural.rows[:cut], meta=natural.meta[:cut])
    nat_test = FeatureMatrix(rows=natural.rows[cut:], meta=natural.meta[cut:])

    splits = []
    for name in sorted(per_attack):
        others = [per_attack[a] for a in sorted(per_attack) if a != name]
        train_rows = np.vstack([nat_train.rows] + [o.rows for o in others])
        train_meta = list(nat_train.meta)
        for o in others:
            train_meta += list(o.meta)
        train_labels = np.concatenate(
            [np.zeros(len(nat_train))] + [np.ones(len(o)) for o in others]
        )
        held = per_attack[name]
        test_rows = np.vstack([nat_test.rows, held.rows])
        test_labels = np.concatenate([np.zeros(len(nat_test)), np.ones(len(held))])
        splits.append(
            LoaoSplit(
                left_out=name,
                train=FeatureMatrix(rows=train_rows, meta=train_meta),
                train_labels=train_labels,
                test=FeatureMatrix(rows=test_rows, meta=list(nat_test.meta) + list(held.meta)),
                test_labels=test_labels,
            )
        )
    return splits


def leave_one_attack_out(
    natural: FeatureMatrix,
    per_attack: dict[str, FeatureMatrix],
    config: LogisticConfig | None = None,
    natural_train_fraction: float = 0.5,
) -> dict[str, RocCurve]:
    """Generalization to unseen attacks: train on all-but-one, evaluate on it."""
    results = {}
    for split in make_loao_splits(natural, per_attack, natural_train_fraction):
        model = logistic_fit(split.train, split.train_labels, config)
        scores = logistic_scores(model, split.test)
        results[split.left_out] = roc(scores, split.test_labels.astype(int))
    return results


# ---------------------------------------------------------------------------
# serialization

def model_to_json(model: LogisticModel) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "weights": [float(v) for v in model.weights],
        "bias": float(model.bias),
        "means": [float(v) for v in model.means],
        "stds": [float(v) for v in model.stds],
        "converged": bool(model.converged),
    }
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str) -> LogisticModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not JSON: {exc}")
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"unexpected model format {doc.get('format')!r}")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    return LogisticModel(
        weights=np.array(doc["weights"], dtype=np.float64),
        bias=float(doc["bias"]),
        means=np.array(doc["means"], dtype=np.float64),
        stds=np.array(doc["stds"], dtype=np.float64),
        converged=bool(doc["converged"]),
    )


def save_model(model: LogisticModel, path) -> None:
    Path(path).write_text(model_to_json(model) + "\n")


def load_model(path) -> LogisticModel:
    return model_from_json(Path(path).read_text())
