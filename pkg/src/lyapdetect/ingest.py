"""Image ingestion and flattening.

Images are row-major pixel grids with float64 values in [0, 1]. Two on-disk
formats are supported: the classic IDX byte format (big-endian headers,
unsigned-byte pixels, normalized by exact division by 255) and a per-image
CSV format with a JSON sidecar carrying dimensions, label, and provenance.

Flattening maps a grid to a 1-D sequence by row-major order,
``series[i*width + j] == pixels[i, j]``; downstream modules treat that
sequence as a time series.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class IngestError(Exception):
    """Base class for ingestion failures."""


class BadMagicError(IngestError):
    pass


class TruncatedStreamError(IngestError):
    pass


class CountMismatchError(IngestError):
    pass


class UnreadableFileError(IngestError):
    pass


class BadDimensionsError(IngestError):
    pass


class OutOfRangePixelError(IngestError):
    pass


IDX_IMAGE_MAGIC = 0x00000803  # unsigned byte, rank 3
IDX_LABEL_MAGIC = 0x00000801  # unsigned byte, rank 1


# ---------------------------------------------------------------------------
# provenance

@dataclass(frozen=True)
class Legitimate:
    """An unmodified source image."""


@dataclass(frozen=True)
class Adversarial:
    """An image produced by an attack.

    ``target`` is the intended class for targeted attacks; it must be set
    when ``targeted`` is true.
    """

    attack: str
    targeted: bool = False
    target: int | None = None

    def __post_init__(self):
        if not self.attack or ":" in self.attack:
            raise ValueError(f"bad attack name: {self.attack!r}")
        if self.targeted and self.target is None:
            raise ValueError("targeted attack needs a target class")


@dataclass(frozen=True)
class Noisy:
    """A legitimate image passed through a declared noise model."""

    model: str

    def __post_init__(self):
        if not self.model or ":" in self.model:
            raise ValueError(f"bad noise model name: {self.model!r}")


Provenance = Legitimate | Adversarial | Noisy


def is_adversarial(p: Provenance) -> bool:
    return isinstance(p, Adversarial)


def provenance_to_str(p: Provenance) -> str:
    """Serialize provenance to a compact colon-separated tag."""
    if isinstance(p, Legitimate):
        return "legitimate"
    if isinstance(p, Adversarial):
        if p.targeted:
            return f"adversarial:{p.attack}:targeted:{p.target}"
        return f"adversarial:{p.attack}:untargeted"
    if isinstance(p, Noisy):
        return f"noisy:{p.model}"
    raise TypeError(f"not a provenance value: {p!r}")


def provenance_from_str(s: str) -> Provenance:
    """Inverse of :func:`provenance_to_str`."""
    parts = s.split(":")
    if parts == ["legitimate"]:
        return Legitimate()
    if parts[0] == "noisy" and len(parts) == 2:
        return Noisy(model=parts[1])
    if parts[0] == "adversarial":
        if len(parts) == 3 and parts[2] == "untargeted":
            return Adversarial(attack=parts[1], targeted=False)
        if len(parts) == 4 and parts[2] == "targeted":
            return Adversarial(attack=parts[1], targeted=True, target=int(parts[3]))
    raise ValueError(f"unparseable provenance tag: {s!r}")


# ---------------------------------------------------------------------------
# core types

@dataclass
class Image:
    """A pixel grid in [0, 1] with optional label and provenance.

    Out-of-range or non-finite pixels are rejected at construction, never
    clipped: values outside [0, 1] in ingested data indicate a scaling
    mistake that silent clipping would hide.
    """

    pixels: np.ndarray
    label: int | None = None
    provenance: Provenance = field(default_factory=Legitimate)
    image_id: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise BadDimensionsError(f"pixels must be a nonempty 2-D grid, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise OutOfRangePixelError("non-finite pixel value")
        if px.min() < 0.0 or px.max() > 1.0:
            raise OutOfRangePixelError(
                f"pixel values outside [0, 1]: min={px.min()}, max={px.max()}"
            )
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class TimeSeries:
    """A finite 1-D sample sequence."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or len(v) < 1:
            raise ValueError(f"series must be 1-D and nonempty, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("series contains non-finite values")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class Dataset:
    """A list of images sharing one geometry."""

    images: list[Image]
    name: str = "dataset"

    def __post_init__(self):
        dims = {(im.height, im.width) for im in self.images}
        if len(dims) > 1:
            raise BadDimensionsError(f"mixed image dimensions in dataset: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.images)


@dataclass(frozen=True)
class ProvenanceDescriptor:
    """How to interpret a directory of image files.

    ``scaling`` declares the stored value range: "none" for values already
    in [0, 1], "byte255" for byte-valued data divided by 255 on load.
    ``provenance``, when set, overrides any provenance tag in the sidecars.
    """

    scaling: str
    provenance: Provenance | None = None

    def __post_init__(self):
        if self.scaling not in ("none", "byte255"):
            raise ValueError(f"scaling must be 'none' or 'byte255', got {self.scaling!r}")


# ---------------------------------------------------------------------------
# IDX codec

def _read_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if isinstance(source, (str, Path)):
        try:
            return Path(source).read_bytes()
        except OSError as exc:
            raise UnreadableFileError(f"cannot read {source}: {exc}") from exc
    return source.read()


def parse_idx(image_source, label_source=None, name: str = "idx") -> Dataset:
    """Parse an IDX image stream (and optional IDX label stream) into a Dataset.

    Header layout, all fields big-endian 32-bit:

        images: magic 0x00000803 | count | height | width | pixels...
        labels: magic 0x00000801 | count | labels...

    Pixel bytes are normalized by exact division: ``value = byte / 255``.
    """
    data = _read_bytes(image_source)
    if len(data) < 16:
        raise TruncatedStreamError(f"image header needs 16 bytes, stream has {len(data)}")
    magic, count, height, width = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise BadMagicError(f"image magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")
    expected = 16 + count * height * width
    if len(data) != expected:
        raise TruncatedStreamError(
            f"image stream holds {len(data)} bytes, header implies {expected}"
        )

    labels: np.ndarray | None = None
    if label_source is not None:
        ldata = _read_bytes(label_source)
        if len(ldata) < 8:
            raise TruncatedStreamError(f"label header needs 8 bytes, stream has {len(ldata)}")
        lmagic, lcount = struct.unpack(">II", ldata[:8])
        if lmagic != IDX_LABEL_MAGIC:
            raise BadMagicError(f"label magic 0x{lmagic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}")
        if lcount != count:
            raise CountMismatchError(f"{count} images but {lcount} labels")
        if len(ldata) != 8 + lcount:
            raise TruncatedStreamError(
                f"label stream holds {len(ldata)} bytes, header implies {8 + lcount}"
            )
        labels = np.frombuffer(ldata, dtype=np.uint8, offset=8)

    raw = np.frombuffer(data, dtype=np.uint8, offset=16)
    grids = raw.reshape(count, height, width).astype(np.float64) / 255.0
    images = [
        Image(
            pixels=grids[k],
            label=int(labels[k]) if labels is not None else None,
            image_id=f"{name}-{k:05d}",
        )
        for k in range(count)
    ]
    return Dataset(images=images, name=name)


def write_idx(dataset: Dataset) -> tuple[bytes, bytes | None]:
    """Serialize a dataset back to IDX bytes; inverse of :func:`parse_idx`.

    Returns ``(image_bytes, label_bytes)``; the label stream is None unless
    every image carries a label. Pixels are de-normalized by rounding
    ``value * 255`` to the nearest byte.
    """
    if not dataset.images:
        raise BadDimensionsError("cannot serialize an empty dataset")
    h, w = dataset.images[0].height, dataset.images[0].width
    out = bytearray(struct.pack(">IIII", IDX_IMAGE_MAGIC, len(dataset.images), h, w))
    for im in dataset.images:
        out += np.round(im.pixels * 255.0).astype(np.uint8).tobytes()
    label_bytes = None
    if all(im.label is not None for im in dataset.images):
        lout = bytearray(struct.pack(">II", IDX_LABEL_MAGIC, len(dataset.images)))
        lout += bytes(im.label for im in dataset.images)
        label_bytes = bytes(lout)
    return bytes(out), label_bytes


# ---------------------------------------------------------------------------
# flattening

def flatten(image: Image) -> TimeSeries:
    """Row-major flattening: sample i*width + j is pixel (i, j)."""
    return TimeSeries(values=image.pixels.ravel(order="C"))


def unflatten(series, height: int, width: int, **image_kwargs) -> Image:
    """Reshape a flat sequence back to an image grid; inverse of flatten."""
    values = np.asarray(getattr(series, "values", series), dtype=np.float64)
    if values.ndim != 1 or len(values) != height * width:
        raise BadDimensionsError(
            f"series of length {values.size} does not fill a {height}x{width} grid"
        )
    return Image(pixels=values.reshape(height, width), **image_kwargs)


# ---------------------------------------------------------------------------
# per-image CSV + JSON sidecar directories

def _scale_values(values: np.ndarray, scaling: str, source: str) -> np.ndarray:
    if scaling == "byte255":
        values = values / 255.0
    if not np.all(np.isfinite(values)):
        raise OutOfRangePixelError(f"{source}: non-finite pixel value")
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise OutOfRangePixelError(
            f"{source}: values outside [0, 1] after scaling={scaling!r} "
            f"(min={values.min()}, max={values.max()})"
        )
    return values


def load_image_dir(path, descriptor: ProvenanceDescriptor) -> Dataset:
    """Load a directory of per-image files.

    Each image is either ``<stem>.csv`` (one row of height*width values) or
    ``<stem>.bin`` (raw unsigned bytes), with a required ``<stem>.json``
    sidecar ``{"height": ..., "width": ..., "label": ..., "provenance": ...}``.
    Files are loaded in sorted stem order; the stem becomes the image id.
    """
    root = Path(path)
    if not root.is_dir():
        raise UnreadableFileError(f"not a directory: {root}")
    payloads = sorted(
        [p for p in root.iterdir() if p.suffix in (".csv", ".bin")],
        key=lambda p: p.stem,
    )
    if not payloads:
        raise UnreadableFileError(f"no .csv or .bin image files in {root}")

    images = []
    for p in payloads:
        sidecar = p.with_suffix(".json")
        try:
            side = json.loads(sidecar.read_text())
        except FileNotFoundError:
            raise UnreadableFileError(f"missing sidecar for {p.name}: {sidecar.name}")
        except (OSError, json.JSONDecodeError) as exc:
            raise UnreadableFileError(f"bad sidecar {sidecar.name}: {exc}")
        try:
            height, width = int(side["height"]), int(side["width"])
        except (KeyError, TypeError, ValueError):
            raise BadDimensionsError(f"sidecar {sidecar.name} lacks integer height/width")

        if p.suffix == ".csv":
            try:
                row = p.read_text().strip()
                values = np.array([float(tok) for tok in row.split(",")], dtype=np.float64)
            except (OSError, ValueError) as exc:
                raise UnreadableFileError(f"bad CSV {p.name}: {exc}")
        else:
            try:
                values = np.frombuffer(p.read_bytes(), dtype=np.uint8).astype(np.float64)
            except OSError as exc:
                raise UnreadableFileError(f"bad binary file {p.name}: {exc}")
        if values.size != height * width:
            raise BadDimensionsError(
                f"{p.name}: {values.size} values for a {height}x{width} grid"
            )
        values = _scale_values(values, descriptor.scaling, p.name)

        if descriptor.provenance is not None:
            prov = descriptor.provenance
        elif side.get("provenance"):
            prov = provenance_from_str(side["provenance"])
        else:
            prov = Legitimate()
        label = side.get("label")
        images.append(
            Image(
                pixels=values.reshape(height, width),
                label=int(label) if label is not None else None,
                provenance=prov,
                image_id=p.stem,
                meta={k: v for k, v in side.items()
                      if k not in ("height", "width", "label", "provenance")},
            )
        )
    return Dataset(images=images, name=root.name)


def save_image_dir(dataset: Dataset, path, scaling: str = "none") -> list[str]:
    """Write a dataset as per-image CSV files with JSON sidecars.

    With scaling "byte255" values are stored as rounded integers in 0..255;
    with "none" they are stored as full-precision decimal reprs. Returns the
    written file names (sorted, payload and sidecar interleaved).
    """
    if scaling not in ("none", "byte255"):
        raise ValueError(f"scaling must be 'none' or 'byte255', got {scaling!r}")
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    for k, im in enumerate(dataset.images):
        stem = im.image_id if im.image_id is not None else f"{dataset.name}-{k:05d}"
        flat = im.pixels.ravel(order="C")
        if scaling == "byte255":
            row = ",".join(str(int(v)) for v in np.round(flat * 255.0).astype(np.uint8))
        else:
            row = ",".join(repr(float(v)) for v in flat)
        (root / f"{stem}.csv").write_text(row + "\n")
        side = {
            "height": im.height,
            "width": im.width,
            "label": im.label,
            "provenance": provenance_to_str(im.provenance),
        }
        for key in sorted(im.meta):
            if key not in side:
                side[key] = im.meta[key]
        (root / f"{stem}.json").write_text(json.dumps(side, sort_keys=True) + "\n")
        written += [f"{stem}.csv", f"{stem}.json"]
    return written
