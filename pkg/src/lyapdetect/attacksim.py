"""Linear softmax victim classifier and the fast gradient sign attack.

The victim is deliberately simple: a single linear layer with softmax
output, trained by mini-batch gradient descent on cross-entropy. Its loss
gradient with respect to the input is analytic, ``W^T (p - onehot(y))``,
which makes the attack exact and testable against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np

from .ingest import Adversarial, Image

log = logging.getLogger(__name__)


class AttackError(Exception):
    pass


class MissingLabelError(AttackError):
    pass


class SingleClassError(AttackError):
    pass


class BadEpsilonError(AttackError):
    pass


@dataclass(frozen=True)
class VictimConfig:
    lr: float = 0.5
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class FgsmParams:
    epsilon: float
    targeted: bool = False
    target: int | None = None

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0):
            raise BadEpsilonError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if self.targeted and self.target is None:
            raise ValueError("targeted attack needs a target class")


@dataclass
class SoftmaxModel:
    """weights: (n_classes, n_pixels); bias: (n_classes,)."""

    weights: np.ndarray
    bias: np.ndarray
    n_classes: int
    train_accuracy: float | None = None


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_train(images: list[Image], labels, config: VictimConfig | None = None) -> SoftmaxModel:
    """Train the victim. Weights start at zero, so zero epochs means uniform
    1/C predictions. The class count is inferred from the label range."""
    if config is None:
        config = VictimConfig()
    y = np.asarray(labels, dtype=np.intp)
    if len(images) != len(y) or len(y) == 0:
        raise ValueError(f"{len(images)} images vs {len(y)} labels")
    if y.min() < 0:
        raise ValueError("labels must be nonnegative class indices")
    n_classes = int(y.max()) + 1
    if len(np.unique(y)) < 2:
        raise SingleClassError("victim training needs at least two classes")
    x = np.stack([im.pixels.ravel(order="C") for im in images])
    n, n_pixels = x.shape

    w = np.zeros((n_classes, n_pixels))
    b = np.zeros(n_classes)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0

    rng = np.random.default_rng(config.seed)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            p = _softmax(x[batch] @ w.T + b)
            err = p - onehot[batch]
            w -= config.lr * (err.T @ x[batch]) / len(batch)
            b -= config.lr * err.mean(axis=0)

    accuracy = float(np.mean(np.argmax(x @ w.T + b, axis=1) == y))
    log.info("victim training accuracy: %.4f over %d images", accuracy, n)
    return SoftmaxModel(weights=w, bias=b, n_classes=n_classes, train_accuracy=accuracy)


def predict_proba(model: SoftmaxModel, image: Image) -> np.ndarray:
    return _softmax(model.weights @ image.pixels.ravel(order="C") + model.bias)


def cross_entropy(model: SoftmaxModel, image: Image, label: int) -> float:
    """Victim loss on one image; the quantity FGSM climbs or descends."""
    logits = model.weights @ image.pixels.ravel(order="C") + model.bias
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[label])


def loss_gradient(model: SoftmaxModel, image: Image, label: int) -> np.ndarray:
    """Analytic d(cross-entropy)/d(pixels), shape (height, width)."""
    if not (0 <= label < model.n_classes):
        raise ValueError(f"label {label} outside 0..{model.n_classes - 1}")
    p = predict_proba(model, image)
    p[label] -= 1.0
    return (model.weights.T @ p).reshape(image.pixels.shape)


def fgsm(model: SoftmaxModel, image: Image, params: FgsmParams) -> Image:
    """One-step sign attack, clipped to the valid pixel box.

    Untargeted: ascend the true-label loss, x + eps * sign(grad). Requires
    the image to carry its label. Targeted: descend the target-label loss,
    x - eps * sign(grad). Pixels whose gradient is exactly zero are left
    unchanged (sign 0).
    """
    if params.targeted:
        grad = loss_gradient(model, image, params.target)
        perturbed = image.pixels - params.epsilon * np.sign(grad)
    else:
        if image.label is None:
            raise MissingLabelError("untargeted attack needs the true label")
        grad = loss_gradient(model, image, image.label)
        perturbed = image.pixels + params.epsilon * np.sign(grad)
    return Image(
        pixels=np.clip(perturbed, 0.0, 1.0),
        label=image.label,
        provenance=Adversarial(attack="fgsm", targeted=params.targeted, target=params.target),
        image_id=image.image_id,
        meta=dict(image.meta),
    )
