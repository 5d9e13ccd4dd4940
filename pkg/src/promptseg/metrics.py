"""Binary segmentation metrics.

Implements the structure measure, mean enhanced-alignment measure, weighted
F-beta, MAE, balanced error rate, Dice and IoU over soft predictions in
[0, 1] against strictly binary ground truth.

Conventions used throughout (the test-suite oracles follow the same ones):

* binarization is ``value >= threshold``;
* the enhanced-alignment measure averages thresholds t/255 for t in 0..255
  and divides the enhanced-matrix sum by the pixel count, so a perfect
  match scores exactly 1;
* rounding is floor(x + 0.5), never banker's rounding;
* the weighted F-beta error-dependency term propagates each background
  pixel's error from its nearest foreground pixel, ties resolved toward the
  smallest column index, then the smallest row index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import convolve, distance_transform_edt

from .errors import ValidationError

_EPS = float(np.spacing(1))

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def _check_pair(pred: np.ndarray, gt: np.ndarray):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValidationError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    if pred.ndim != 2:
        raise ValidationError(f"expected 2D maps, got {pred.ndim}D")
    if not set(np.unique(gt)).issubset({0.0, 1.0}):
        raise ValidationError("gt must be strictly binary")
    return pred, gt


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute pixel difference."""
    pred, gt = _check_pair(pred, gt)
    return float(np.abs(pred - gt).mean())


def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = float(values.mean())
    sigma = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + _EPS)


def _ssim_block(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    x = float(pred.mean())
    y = float(gt.mean())
    if n > 1:
        sigma_x = float(((pred - x) ** 2).sum() / (n - 1))
        sigma_y = float(((gt - y) ** 2).sum() / (n - 1))
        sigma_xy = float(((pred - x) * (gt - y)).sum() / (n - 1))
    else:
        sigma_x = sigma_y = sigma_xy = 0.0
    a = 4.0 * x * y * sigma_xy
    b = (x * x + y * y) * (sigma_x + sigma_y)
    if a != 0.0:
        return a / (b + _EPS)
    return 1.0 if b == 0.0 else 0.0


def _gt_centroid_cut(gt: np.ndarray) -> tuple[int, int]:
    """Split point (row, col) one past the foreground centroid."""
    rows, cols = np.nonzero(gt)
    cy = _round_half_up(float(rows.mean()))
    cx = _round_half_up(float(cols.mean()))
    return cy + 1, cx + 1


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    """Structure measure: alpha * object term + (1-alpha) * region term.

    All-background gt scores 1 - mean(pred); all-foreground scores
    mean(pred). The region term splits both maps into four blocks at the gt
    centroid and area-weights a mean/covariance similarity per block.
    """
    pred, gt = _check_pair(pred, gt)
    mu = float(gt.mean())
    if mu == 0.0:
        return 1.0 - float(pred.mean())
    if mu == 1.0:
        return float(pred.mean())

    s_obj = mu * _object_score(pred[gt == 1]) + (1.0 - mu) * _object_score(
        (1.0 - pred)[gt == 0]
    )

    cy, cx = _gt_centroid_cut(gt)
    h, w = gt.shape
    total = float(h * w)
    s_reg = 0.0
    for rs, cs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        p_blk, g_blk = pred[rs, cs], gt[rs, cs]
        s_reg += (p_blk.size / total) * _ssim_block(p_blk, g_blk)

    return max(0.0, alpha * s_obj + (1.0 - alpha) * s_reg)


def e_measure_mean(pred: np.ndarray, gt: np.ndarray) -> float:
    """Enhanced-alignment measure averaged over 256 binarization thresholds."""
    pred, gt = _check_pair(pred, gt)
    n = gt.size
    fg = int(gt.sum())
    d_gt = gt - gt.mean()
    total = 0.0
    for t in range(256):
        binarized = (pred >= t / 255.0).astype(np.float64)
        if fg == 0:
            total += float((1.0 - binarized).mean())
        elif fg == n:
            total += float(binarized.mean())
        else:
            d_pred = binarized - binarized.mean()
            align = 2.0 * d_gt * d_pred / (d_gt**2 + d_pred**2 + _EPS)
            total += float((((align + 1.0) ** 2) / 4.0).mean())
    return total / 256.0


def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    half = (size - 1) / 2.0
    y, x = np.ogrid[-half : half + 1, -half : half + 1]
    k = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    k[k < np.finfo(k.dtype).eps * k.max()] = 0.0
    return k / k.sum()


def weighted_fbeta(pred: np.ndarray, gt: np.ndarray, beta2: float = 1.0) -> float:
    """Weighted F-beta with dependency- and distance-weighted errors.

    Defined as 0 when the ground truth has no foreground.
    """
    pred, gt = _check_pair(pred, gt)
    gt_b = gt.astype(bool)
    if not gt_b.any():
        return 0.0

    err = np.abs(pred - gt)
    dist, idx = distance_transform_edt(~gt_b, return_indices=True)
    dep_err = err.copy()
    bg = ~gt_b
    dep_err[bg] = err[idx[0][bg], idx[1][bg]]
    # Edge-replicated padding: a constant error field blurs to itself, so an
    # all-wrong foreground keeps zero weighted recall at image borders too.
    blurred = convolve(dep_err, _gaussian_kernel(), mode="nearest")
    min_err = err.copy()
    take = gt_b & (blurred < err)
    min_err[take] = blurred[take]
    weight = np.ones_like(gt)
    weight[bg] = 2.0 - np.exp(math.log(0.5) / 5.0 * dist[bg])
    weighted_err = min_err * weight

    fg_count = float(gt.sum())
    tp_w = fg_count - float(weighted_err[gt_b].sum())
    fp_w = float(weighted_err[bg].sum())
    recall = 1.0 - float(weighted_err[gt_b].mean())
    precision = tp_w / (tp_w + fp_w + _EPS)
    return float(
        (1.0 + beta2) * precision * recall / (beta2 * precision + recall + _EPS)
    )


def _confusion(pred: np.ndarray, gt: np.ndarray, threshold: float):
    binarized = pred >= threshold
    gt_b = gt.astype(bool)
    tp = int(np.count_nonzero(binarized & gt_b))
    fn = int(np.count_nonzero(~binarized & gt_b))
    tn = int(np.count_nonzero(~binarized & ~gt_b))
    fp = int(np.count_nonzero(binarized & ~gt_b))
    return tp, fn, tn, fp


def ber_from_counts(tp: int, fn: int, tn: int, fp: int) -> float:
    pos_acc = tp / (tp + fn) if (tp + fn) else 1.0
    neg_acc = tn / (tn + fp) if (tn + fp) else 1.0
    return 100.0 * (1.0 - 0.5 * (pos_acc + neg_acc))


def ber(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> float:
    """Balanced error rate in [0, 100]; an absent class counts as accuracy 1."""
    pred, gt = _check_pair(pred, gt)
    return ber_from_counts(*_confusion(pred, gt, threshold))


def dice_iou(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5):
    """(Dice, IoU) over the thresholded prediction; (1, 1) when both empty."""
    pred, gt = _check_pair(pred, gt)
    binarized = pred >= threshold
    gt_b = gt.astype(bool)
    inter = int(np.count_nonzero(binarized & gt_b))
    p = int(np.count_nonzero(binarized))
    g = int(np.count_nonzero(gt_b))
    if p == 0 and g == 0:
        return 1.0, 1.0
    dice = 2.0 * inter / (p + g)
    union = p + g - inter
    iou = inter / union if union else 1.0
    return float(dice), float(iou)


@dataclass
class MetricReport:
    s_alpha: float
    e_phi: float
    f_beta_w: float
    mae: float
    ber: float
    mdice: float
    miou: float
    task: str = ""
    num_images: int = 0
    per_image: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "s_alpha": self.s_alpha,
            "e_phi": self.e_phi,
            "f_beta_w": self.f_beta_w,
            "mae": self.mae,
            "ber": self.ber,
            "mdice": self.mdice,
            "miou": self.miou,
            "task": self.task,
            "num_images": self.num_images,
            "per_image": self.per_image,
        }


PRIMARY_METRIC = {"camouflage": "s_alpha", "shadow": "ber", "polyp": "mdice"}
# Higher is better for every primary metric except BER.
METRIC_SIGN = {"s_alpha": 1.0, "e_phi": 1.0, "f_beta_w": 1.0, "mdice": 1.0,
               "miou": 1.0, "mae": -1.0, "ber": -1.0}


def compute_image_metrics(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> dict:
    d, i = dice_iou(pred, gt, threshold)
    tp, fn, tn, fp = _confusion(pred, gt, threshold)
    return {
        "mae": mae(pred, gt),
        "s_alpha": s_measure(pred, gt),
        "e_phi": e_measure_mean(pred, gt),
        "f_beta_w": weighted_fbeta(pred, gt),
        "dice": d,
        "iou": i,
        "ber": ber_from_counts(tp, fn, tn, fp),
        "counts": (tp, fn, tn, fp),
    }


def aggregate_reports(records: list, task: str = "") -> MetricReport:
    """Dataset report: per-image means, except BER which pools confusion counts."""
    if not records:
        raise ValidationError("no images to aggregate")
    tp = sum(r["counts"][0] for r in records)
    fn = sum(r["counts"][1] for r in records)
    tn = sum(r["counts"][2] for r in records)
    fp = sum(r["counts"][3] for r in records)
    per_image = [{k: v for k, v in r.items() if k != "counts"} for r in records]
    mean = lambda key: float(np.mean([r[key] for r in records]))
    return MetricReport(
        s_alpha=mean("s_alpha"),
        e_phi=mean("e_phi"),
        f_beta_w=mean("f_beta_w"),
        mae=mean("mae"),
        ber=ber_from_counts(tp, fn, tn, fp),
        mdice=mean("dice"),
        miou=mean("iou"),
        task=task,
        num_images=len(records),
        per_image=per_image,
    )


def load_mask_image(path) -> np.ndarray:
    """Load an image file as a float64 grayscale map in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64)
    return arr / 255.0


def _resize_pred(pred: np.ndarray, shape) -> np.ndarray:
    if pred.shape == tuple(shape):
        return pred
    img = Image.fromarray(pred.astype(np.float32), mode="F")
    img = img.resize((shape[1], shape[0]), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64)


def _stem_index(directory: Path) -> dict:
    files = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() in IMAGE_EXTENSIONS and p.stem not in files:
            files[p.stem] = p
    return files


def evaluate_dataset(
    pred_dir,
    gt_dir,
    task: str = "",
    threshold: float = 0.5,
    allow_missing: bool = False,
) -> MetricReport:
    """Evaluate a folder of prediction maps against a folder of gt masks.

    Files pair by stem. Predictions are resized (bilinear) to the gt
    resolution when they differ. Missing predictions abort the run unless
    allow_missing is set.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gt_files = _stem_index(gt_dir)
    if not gt_files:
        raise ValidationError(f"no ground-truth images found in {gt_dir}")
    pred_files = _stem_index(pred_dir)
    missing = sorted(set(gt_files) - set(pred_files))
    if missing and not allow_missing:
        raise ValidationError(
            f"missing predictions for {len(missing)} ground-truth files: "
            + ", ".join(missing)
        )

    records = []
    for stem, gt_path in gt_files.items():
        if stem not in pred_files:
            continue
        gt = (load_mask_image(gt_path) >= 0.5).astype(np.float64)
        pred = np.clip(_resize_pred(load_mask_image(pred_files[stem]), gt.shape), 0.0, 1.0)
        rec = compute_image_metrics(pred, gt, threshold)
        rec["stem"] = stem
        records.append(rec)
    if not records:
        raise ValidationError("no prediction/ground-truth pairs to evaluate")
    return aggregate_reports(records, task=task)
