"""Dataset ingestion and split protocols.

A dataset root holds an images/ and a masks/ folder (names configurable);
samples pair by file stem. The camouflage training split concatenates
records from multiple roots (CAMO train + the camouflage part of COD10K
train). When a root's directory name reveals a known benchmark, the record
count is checked against the published split size and mismatches are logged.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ValidationError
from .metrics import IMAGE_EXTENSIONS

logger = logging.getLogger(__name__)

TASKS = ("camouflage", "shadow", "polyp")
SPLITS = ("train", "test")

# Published split sizes, keyed by a lowercase substring of the root name.
KNOWN_DATASET_COUNTS = {
    "cod10k": {"train": 3040, "test": 2026},
    "camo": {"train": 1000, "test": 250},
    "chameleon": {"test": 76},
    "istd": {"train": 1330, "test": 540},
    "kvasir": {"train": 880, "test": 120},
}


@dataclass(frozen=True)
class SampleRecord:
    stem: str
    image_path: str
    mask_path: str
    task: str
    split: str


@dataclass
class DatasetManifest:
    records: list
    source_datasets: list
    task: str
    split: str
    resize_to: int = 64

    def __len__(self) -> int:
        return len(self.records)

    def to_json(self) -> str:
        payload = {
            "task": self.task,
            "split": self.split,
            "resize_to": self.resize_to,
            "source_datasets": self.source_datasets,
            "records": [
                {
                    "stem": r.stem,
                    "image_path": r.image_path,
                    "mask_path": r.mask_path,
                    "task": r.task,
                    "split": r.split,
                }
                for r in self.records
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        payload = json.loads(text)
        records = [SampleRecord(**r) for r in payload["records"]]
        return cls(
            records=records,
            source_datasets=payload["source_datasets"],
            task=payload["task"],
            split=payload["split"],
            resize_to=payload["resize_to"],
        )


def _detect_dataset(root: Path) -> str | None:
    name = root.as_posix().lower()
    for key in KNOWN_DATASET_COUNTS:
        if key in name:
            return key
    return None


def _index_dir(directory: Path) -> dict:
    if not directory.is_dir():
        raise ValidationError(f"not a directory: {directory}")
    out = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() in IMAGE_EXTENSIONS and p.stem not in out:
            out[p.stem] = p
    return out


def build_manifest(
    roots,
    task: str,
    split: str,
    resize_to: int = 64,
    images_dirname: str = "images",
    masks_dirname: str = "masks",
) -> DatasetManifest:
    """Scan dataset roots into a manifest with deterministic record order.

    Records are ordered lexicographically by stem within each root and
    concatenated in root order. Images without a mask abort the scan; known
    benchmark roots with unexpected counts only log a warning. File contents
    are not decoded here.
    """
    if task not in TASKS:
        raise ValidationError(f"task must be one of {TASKS}, got {task!r}")
    if split not in SPLITS:
        raise ValidationError(f"split must be one of {SPLITS}, got {split!r}")
    records: list[SampleRecord] = []
    sources: list[str] = []
    seen_stems: dict[str, str] = {}
    for root in [Path(r) for r in roots]:
        images = _index_dir(root / images_dirname)
        masks = _index_dir(root / masks_dirname)
        unmatched = sorted(set(images) - set(masks))
        if unmatched:
            raise ValidationError(
                f"{root}: missing masks for {len(unmatched)} images: "
                + ", ".join(unmatched[:20])
                + ("..." if len(unmatched) > 20 else "")
            )
        for stem, image_path in images.items():
            if stem in seen_stems:
                raise ValidationError(
                    f"duplicate stem {stem!r} in split {split!r} "
                    f"(first seen under {seen_stems[stem]})"
                )
            seen_stems[stem] = str(root)
            records.append(
                SampleRecord(
                    stem=stem,
                    image_path=str(image_path),
                    mask_path=str(masks[stem]),
                    task=task,
                    split=split,
                )
            )
        sources.append(str(root))
        known = _detect_dataset(root)
        if known is not None:
            expected = KNOWN_DATASET_COUNTS[known].get(split)
            if expected is not None and len(images) != expected:
                logger.warning(
                    "%s looks like %s %s but has %d records (published split has %d)",
                    root, known, split, len(images), expected,
                )
    return DatasetManifest(
        records=records,
        source_datasets=sources,
        task=task,
        split=split,
        resize_to=resize_to,
    )


def load_sample(record: SampleRecord, resize_to: int):
    """Load one record as (image (H, W, 3) float32 in [0, 1], mask (H, W) {0, 1}).

    The image is bilinearly resized and grayscale inputs are replicated to
    three channels; the mask is nearest-neighbor resized then thresholded.
    """
    try:
        with Image.open(record.image_path) as img:
            img = img.convert("RGB").resize((resize_to, resize_to), Image.BILINEAR)
            image = np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, SyntaxError) as exc:
        raise OSError(f"cannot decode image {record.image_path}: {exc}") from exc
    try:
        with Image.open(record.mask_path) as msk:
            msk = msk.convert("L").resize((resize_to, resize_to), Image.NEAREST)
            mask_raw = np.asarray(msk, dtype=np.float32) / 255.0
    except (OSError, SyntaxError) as exc:
        raise OSError(f"cannot decode mask {record.mask_path}: {exc}") from exc
    levels = np.unique(mask_raw)
    if levels.size > 2:
        logger.warning("mask %s has %d gray levels; thresholding at 128",
                       record.mask_path, levels.size)
    mask = (mask_raw >= 0.5).astype(np.float32)
    return image, mask


def to_chw_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, C) float array in [0, 1] to a (C, H, W) float32 tensor."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValidationError(f"expected (H, W, C) image, got shape {arr.shape}")
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))


def load_batch(records, resize_to: int, hflip_flags=None):
    """Stack records into (images (B, 3, R, R), masks (B, R, R)) tensors."""
    images, masks = [], []
    for i, rec in enumerate(records):
        image, mask = load_sample(rec, resize_to)
        if hflip_flags is not None and hflip_flags[i]:
            image = image[:, ::-1, :].copy()
            mask = mask[:, ::-1].copy()
        images.append(to_chw_tensor(image))
        masks.append(torch.from_numpy(mask))
    return torch.stack(images), torch.stack(masks)


def iter_epoch_batches(manifest: DatasetManifest, batch_size: int, rng: np.random.Generator | None):
    """Yield record batches for one epoch; shuffled when an rng is given."""
    order = np.arange(len(manifest.records))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        yield [manifest.records[i] for i in order[start : start + batch_size]]
