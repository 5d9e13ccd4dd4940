"""Synthetic fixture data: textured backgrounds with low-contrast shapes.

The shapes sit in roughly the same brightness range as the background so
the foreground is cued by texture statistics rather than raw intensity,
which is the regime the guidance features are meant to help with. Fixtures
are generated on demand (tests, quickstart) and never shipped as binaries.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
from PIL import Image


def _smooth_noise(rng: np.random.Generator, size: int, grain: int) -> np.ndarray:
    coarse = rng.random((grain, grain)).astype(np.float32)
    img = Image.fromarray(coarse, mode="F").resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32)


def _ellipse_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    cy = rng.uniform(0.4, 0.6) * size
    cx = rng.uniform(0.4, 0.6) * size
    ry = rng.uniform(0.26, 0.38) * size
    rx = rng.uniform(0.26, 0.38) * size
    theta = rng.uniform(0.0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size]
    y = yy - cy
    x = xx - cx
    ct, st = np.cos(theta), np.sin(theta)
    u = (x * ct + y * st) / rx
    v = (-x * st + y * ct) / ry
    return (u * u + v * v <= 1.0).astype(np.float32)


def make_sample(rng: np.random.Generator, size: int = 64):
    """One (image (H, W, 3) in [0, 1], mask (H, W) {0, 1}) pair.

    The foreground shares the background's smooth brightness field and is
    cued only by fine-grained texture, so intensity alone barely separates
    it (texture camouflage).
    """
    background = 0.35 + 0.35 * _smooth_noise(rng, size, grain=max(3, size // 16))
    mask = _ellipse_mask(rng, size)
    fine = rng.random((size, size)).astype(np.float32) - 0.5
    composite = background * (1.0 - mask) + (background + 0.35 * fine) * mask
    channels = []
    for _ in range(3):
        tint = 1.0 + 0.04 * (rng.random() - 0.5)
        channels.append(np.clip(composite * tint, 0.0, 1.0))
    image = np.stack(channels, axis=2)
    return image.astype(np.float32), mask


def generate_fixture(root, n_images: int = 8, size: int = 64, seed: int = 0) -> list:
    """Write images/ and masks/ PNG pairs under root; returns the stems."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    stems = []
    for k in range(n_images):
        stem = f"sample_{k:03d}"
        image, mask = make_sample(rng, size)
        Image.fromarray(
            np.floor(image * 255.0 + 0.5).astype(np.uint8), mode="RGB"
        ).save(root / "images" / f"{stem}.png")
        Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(
            root / "masks" / f"{stem}.png"
        )
        stems.append(stem)
    return stems


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="generate synthetic fixture data")
    parser.add_argument("--out", required=True, help="fixture root directory")
    parser.add_argument("--n", type=int, default=8)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    stems = generate_fixture(args.out, args.n, args.size, args.seed)
    print(f"wrote {len(stems)} image/mask pairs under {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
