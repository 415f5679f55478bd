"""Exponent feature matrices, CSV serialization, and 2-D PCA projection."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import Provenance, provenance_from_str, provenance_to_str
from .lyap import LyapunovSpectrum


class FeatureError(Exception):
    pass


class DimTooLargeError(FeatureError):
    pass


class DimMismatchError(FeatureError):
    pass


class DegenerateDataError(FeatureError):
    pass


class EmptyInputError(FeatureError):
    pass


@dataclass(frozen=True)
class RowMeta:
    """Identity carried along with one feature row."""

    image_id: str
    provenance: Provenance
    label: int | None = None


@dataclass
class FeatureMatrix:
    """N x D matrix of exponent features with per-row identity metadata."""

    rows: np.ndarray
    meta: list[RowMeta]

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise DimMismatchError(f"rows must be 2-D, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("feature rows must be finite")
        if len(self.meta) != rows.shape[0]:
            raise DimMismatchError(
                f"{rows.shape[0]} rows but {len(self.meta)} metadata entries"
            )
        self.rows = rows

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def build_features(
    spectra: list[LyapunovSpectrum], dim: int, meta: list[RowMeta]
) -> FeatureMatrix:
    """Stack the first ``dim`` exponents of each spectrum into a matrix.

    The usual choices are dim=2 (leading pair) and dim=4 (full spectrum at
    the default estimator size).
    """
    if not spectra:
        raise EmptyInputError("no spectra")
    if len(spectra) != len(meta):
        raise DimMismatchError(f"{len(spectra)} spectra but {len(meta)} metadata entries")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    shortest = min(len(s.exponents) for s in spectra)
    if dim > shortest:
        raise DimTooLargeError(f"dim={dim} but a spectrum has only {shortest} exponents")
    rows = np.stack([s.exponents[:dim] for s in spectra])
    return FeatureMatrix(rows=rows, meta=list(meta))


def l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two equally-shaped arrays (flattened)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatchError(f"shape {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a.ravel() - b.ravel()))


# ---------------------------------------------------------------------------
# PCA

@dataclass(frozen=True)
class PcaModel:
    """Mean, top-2 principal directions (rows), and their variances."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray


def pca_fit(features) -> PcaModel:
    """Fit a 2-component PCA by SVD of the centered matrix.

    Component sign is fixed so each direction's largest-magnitude entry is
    positive. ``explained_variance[k]`` is the sample variance (ddof=1) of
    projection column k. Data whose total variance vanishes (all rows equal
    to working precision) raises DegenerateDataError.
    """
    x = features.rows if isinstance(features, FeatureMatrix) else np.asarray(features, np.float64)
    n, d = x.shape
    if n < 2 or d < 2:
        raise DimMismatchError(f"PCA needs at least 2 rows and 2 columns, got {x.shape}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    scale = max(1.0, float(np.abs(x).max()))
    if s[0] <= 1e-12 * scale * np.sqrt(n):
        raise DegenerateDataError("all rows identical to working precision")
    components = vt[:2].copy()
    for k in range(2):
        if components[k, np.argmax(np.abs(components[k]))] < 0:
            components[k] = -components[k]
    explained = (s[:2] ** 2) / (n - 1)
    if len(explained) < 2:  # d >= 2 guarantees two singular values
        raise DimMismatchError("fewer than two singular values")
    return PcaModel(mean=mean, components=components, explained_variance=explained)


def pca_project(model: PcaModel, features) -> np.ndarray:
    """Project rows onto the two fitted directions; returns N x 2."""
    x = features.rows if isinstance(features, FeatureMatrix) else np.asarray(features, np.float64)
    if x.ndim != 2 or x.shape[1] != model.mean.shape[0]:
        raise DimMismatchError(
            f"features shape {x.shape} does not match model dimension {model.mean.shape[0]}"
        )
    return (x - model.mean) @ model.components.T


def silhouette_two_groups(points: np.ndarray, in_group_a) -> float | None:
    """Mean silhouette coefficient for a two-group split of 2-D points.

    Descriptive only (reported, never asserted): quantifies how separate the
    two provenance groups look in a projection. Returns None when either
    group has fewer than 2 members.
    """
    points = np.asarray(points, dtype=np.float64)
    mask = np.asarray(in_group_a, dtype=bool)
    if points.ndim != 2 or len(mask) != len(points):
        raise DimMismatchError("points and group mask disagree")
    a_idx = np.nonzero(mask)[0]
    b_idx = np.nonzero(~mask)[0]
    if len(a_idx) < 2 or len(b_idx) < 2:
        return None
    dists = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    scores = np.empty(len(points))
    for k in range(len(points)):
        own, other = (a_idx, b_idx) if mask[k] else (b_idx, a_idx)
        within = dists[k, own].sum() / (len(own) - 1)
        across = dists[k, other].mean()
        denom = max(within, across)
        scores[k] = 0.0 if denom == 0 else (across - within) / denom
    return float(scores.mean())


# ---------------------------------------------------------------------------
# CSV wire format

def feature_csv_header(dim: int) -> str:
    return ",".join(["id", "provenance", "label"] + [f"l{k + 1}" for k in range(dim)])


def write_feature_csv(features: FeatureMatrix, path) -> None:
    """Write ``id,provenance,label,l1..lD`` rows; label empty when unknown."""
    lines = [feature_csv_header(features.dim)]
    for row, meta in zip(features.rows, features.meta):
        label = "" if meta.label is None else str(meta.label)
        cells = [meta.image_id, provenance_to_str(meta.provenance), label]
        cells += [repr(float(v)) for v in row]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def read_feature_csv(path) -> FeatureMatrix:
    """Inverse of :func:`write_feature_csv`."""
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise EmptyInputError(f"empty feature CSV: {path}")
    header = lines[0].split(",")
    if header[:3] != ["id", "provenance", "label"]:
        raise ValueError(f"unexpected feature CSV header: {lines[0]!r}")
    dim = len(header) - 3
    if dim < 1:
        raise ValueError(f"feature CSV has no exponent columns: {lines[0]!r}")
    rows, meta = [], []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != 3 + dim:
            raise ValueError(f"feature CSV row has {len(cells)} cells, expected {3 + dim}")
        rows.append([float(c) for c in cells[3:]])
        meta.append(
            RowMeta(
                image_id=cells[0],
                provenance=provenance_from_str(cells[1]),
                label=int(cells[2]) if cells[2] else None,
            )
        )
    return FeatureMatrix(rows=np.array(rows, dtype=np.float64), meta=meta)
