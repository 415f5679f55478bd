"""Regenerate the frozen handwritten-digit IDX fixtures under tests/data/.

The fixtures are derived from the UCI optical digits bundled with
scikit-learn (1797 images, 8x8, intensity 0..16): a seeded shuffle picks 600
images, each is bilinearly upscaled to 28x28, byte-quantized, and the result
is written as IDX image/label files. Tests consume the committed files; this
script only needs to run again if the fixture recipe changes.

Requires scikit-learn and scipy, which are NOT test dependencies.

Usage: python3 tools/make_digit_fixtures.py
"""

from pathlib import Path
import struct

import numpy as np
from scipy.ndimage import zoom
from sklearn.datasets import load_digits

N_IMAGES = 600
SHUFFLE_SEED = 12345
SCALE = 3.5  # 8 -> 28

OUT_DIR = Path(__file__).resolve().parent.parent / "tests" / "data"
IMAGES_PATH = OUT_DIR / "digits-images-idx3-ubyte"
LABELS_PATH = OUT_DIR / "digits-labels-idx1-ubyte"


def main() -> None:
    bunch = load_digits()
    rng = np.random.default_rng(SHUFFLE_SEED)
    order = rng.permutation(len(bunch.images))[:N_IMAGES]

    grids = []
    for idx in order:
        small = bunch.images[idx] / 16.0
        big = zoom(small, SCALE, order=1)
        assert big.shape == (28, 28), big.shape
        grids.append(np.round(np.clip(big, 0.0, 1.0) * 255.0).astype(np.uint8))
    labels = bunch.target[order].astype(np.uint8)

    OUT_DIR.mkdir(parents=True, exist_ok=True)
    with open(IMAGES_PATH, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(grids), 28, 28))
        for g in grids:
            fh.write(g.tobytes())
    with open(LABELS_PATH, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(labels.tobytes())
    counts = np.bincount(labels, minlength=10)
    print(f"wrote {len(grids)} images to {IMAGES_PATH}")
    print(f"labels per class: {counts.tolist()}")


if __name__ == "__main__":
    main()
