"""Training loop: AdamW over adapters, decoder and the guidance projection,
cosine-decayed learning rate, per-epoch evaluation, checkpointing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .data import DatasetManifest, iter_epoch_batches, load_batch
from .errors import NonFiniteLossError, ValidationError
from .metrics import (
    METRIC_SIGN,
    PRIMARY_METRIC,
    MetricReport,
    aggregate_reports,
    compute_image_metrics,
    evaluate_dataset,
    load_mask_image,
)
from .model import AdaptedSegmenter
from .objectives import LossConfig, loss_for_task, task_loss
from .tensorio import read_archive, write_archive

DEFAULT_EPOCHS = {"camouflage": 20, "shadow": 90, "polyp": 120}


@dataclass(frozen=True)
class TrainConfig:
    task: str
    epochs: int | None = None
    lr0: float = 2e-4
    weight_decay: float = 0.0
    warmup_steps: int = 0
    batch_size: int = 2
    seed: int = 0
    deterministic: bool = True
    eval_every: int = 1
    hflip_augment: bool = False
    loss: LossConfig | None = None

    def __post_init__(self):
        if self.task not in DEFAULT_EPOCHS:
            raise ValidationError(f"unknown task {self.task!r}")
        if self.epochs is not None and self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr0 <= 0:
            raise ValidationError(f"lr0 must be > 0, got {self.lr0}")
        if self.warmup_steps < 0:
            raise ValidationError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ValidationError(f"eval_every must be >= 1, got {self.eval_every}")

    def resolved(self) -> "TrainConfig":
        out = self
        if out.epochs is None:
            out = replace(out, epochs=DEFAULT_EPOCHS[out.task])
        if out.loss is None:
            out = replace(out, loss=loss_for_task(out.task))
        return out

    def to_dict(self) -> dict:
        cfg = self.resolved()
        return {
            "task": cfg.task,
            "epochs": cfg.epochs,
            "lr0": cfg.lr0,
            "weight_decay": cfg.weight_decay,
            "warmup_steps": cfg.warmup_steps,
            "batch_size": cfg.batch_size,
            "seed": cfg.seed,
            "deterministic": cfg.deterministic,
            "eval_every": cfg.eval_every,
            "hflip_augment": cfg.hflip_augment,
            "loss": {
                "kind": cfg.loss.kind,
                "iou_weight": cfg.loss.iou_weight,
                "epsilon": cfg.loss.epsilon,
            },
        }


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """lr0 * (1 + cos(pi * step / total_steps)) / 2."""
    if total_steps < 1:
        raise ValidationError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def scheduled_lr(step: int, total_steps: int, lr0: float, warmup_steps: int = 0) -> float:
    """Cosine schedule with an optional linear ramp over the first steps."""
    lr = cosine_lr(step, total_steps, lr0)
    if warmup_steps > 0 and step < warmup_steps:
        lr *= (step + 1) / warmup_steps
    return lr


@dataclass
class TrainState:
    model: AdaptedSegmenter
    optimizer: torch.optim.AdamW
    config: TrainConfig
    total_steps: int
    step: int = 0
    encoder_sha: str = ""


def _audit_parameter_identity(model: AdaptedSegmenter, optimizer) -> None:
    """The optimizer must own exactly the trainable set and no encoder tensor."""
    opt_ids = {id(p) for group in optimizer.param_groups for p in group["params"]}
    expected = {id(p) for p in model.trainable_params()}
    if opt_ids != expected:
        raise RuntimeError(
            "optimizer parameter set does not match adapters + decoder + "
            "guidance projection"
        )
    encoder_ids = {id(p) for p in model.encoder.parameters()}
    if opt_ids & encoder_ids:
        raise RuntimeError("optimizer would update frozen encoder parameters")
    for p in model.encoder.parameters():
        if p.requires_grad:
            raise RuntimeError("encoder parameter left trainable")


def create_train_state(
    model: AdaptedSegmenter, config: TrainConfig, total_steps: int
) -> TrainState:
    config = config.resolved()
    optimizer = torch.optim.AdamW(
        model.trainable_params(), lr=config.lr0, weight_decay=config.weight_decay
    )
    _audit_parameter_identity(model, optimizer)
    return TrainState(
        model=model,
        optimizer=optimizer,
        config=config,
        total_steps=total_steps,
        encoder_sha=model.encoder_checksum(),
    )


def train_step(state: TrainState, batch) -> tuple[TrainState, float]:
    """One optimization step over (images, masks, stems)."""
    images, masks, stems = batch
    lr = scheduled_lr(
        state.step, state.total_steps, state.config.lr0, state.config.warmup_steps
    )
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.model.train()
    pred = state.model(images)
    loss = task_loss(state.config.loss, pred, masks)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NonFiniteLossError(value, state.step, stems)
    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()
    state.step += 1
    return state, value


@torch.no_grad()
def predict_probability_maps(model: AdaptedSegmenter, manifest: DatasetManifest,
                             batch_size: int = 4) -> dict:
    """stem -> probability map (H, W) float for every manifest record."""
    model.eval()
    out = {}
    for records in iter_epoch_batches(manifest, batch_size, rng=None):
        images, _ = load_batch(records, manifest.resize_to)
        probs = model(images)
        for rec, prob in zip(records, probs):
            out[rec.stem] = prob.numpy()
    return out


def save_probability_png(path, prob: np.ndarray) -> None:
    """8-bit probability map; pixel = floor(255 * p + 0.5)."""
    from PIL import Image

    arr = np.floor(np.clip(prob, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def evaluate_split(
    model: AdaptedSegmenter,
    manifest: DatasetManifest,
    pred_dir,
    threshold: float = 0.5,
    batch_size: int = 4,
) -> MetricReport:
    """Write predictions as PNGs and score them against the manifest masks.

    When all mask files live in one directory the folder-level
    evaluate_dataset path is used; manifests spanning several roots fall
    back to per-record scoring with the same aggregation.
    """
    pred_dir = Path(pred_dir)
    pred_dir.mkdir(parents=True, exist_ok=True)
    maps = predict_probability_maps(model, manifest, batch_size)
    for stem, prob in maps.items():
        save_probability_png(pred_dir / f"{stem}.png", prob)

    mask_dirs = {str(Path(r.mask_path).parent) for r in manifest.records}
    if len(mask_dirs) == 1:
        return evaluate_dataset(
            pred_dir, mask_dirs.pop(), task=manifest.task,
            threshold=threshold, allow_missing=True,
        )
    records = []
    for rec in manifest.records:
        gt = (load_mask_image(rec.mask_path) >= 0.5).astype(np.float64)
        pred = maps[rec.stem]
        if pred.shape != gt.shape:
            from .metrics import _resize_pred

            pred = np.clip(_resize_pred(pred, gt.shape), 0.0, 1.0)
        entry = compute_image_metrics(pred, gt, threshold)
        entry["stem"] = rec.stem
        records.append(entry)
    return aggregate_reports(records, task=manifest.task)


def save_checkpoint(path, state: TrainState, epoch: int, extra_meta: dict | None = None) -> None:
    """Adapters, decoder, guidance projection and optimizer state; never the
    encoder weights, only their checksum."""
    tensors = {}
    for prefix, module in state.model.trainable_modules().items():
        for name, t in module.state_dict().items():
            tensors[f"{prefix}.{name}"] = t.detach().cpu().numpy()
    opt_state = state.optimizer.state_dict()["state"]
    for idx, entry in opt_state.items():
        for key, val in entry.items():
            arr = val.detach().cpu().numpy() if torch.is_tensor(val) else np.asarray(val)
            tensors[f"optimizer.{idx}.{key}"] = arr
    meta = {
        "step": state.step,
        "epoch": epoch,
        "total_steps": state.total_steps,
        "config": state.config.to_dict(),
        "encoder_sha": state.encoder_sha,
    }
    if extra_meta:
        meta.update(extra_meta)
    write_archive(path, tensors, meta)


def load_checkpoint(path):
    """Return (tensors, meta) for a checkpoint archive."""
    return read_archive(path)


def load_model_weights(model: AdaptedSegmenter, tensors: dict) -> None:
    """Copy a checkpoint's trainable tensors into the model."""
    for prefix, module in model.trainable_modules().items():
        updates = {}
        for name, t in module.state_dict().items():
            key = f"{prefix}.{name}"
            if key not in tensors:
                raise ValidationError(f"checkpoint is missing tensor {key}")
            updates[name] = torch.from_numpy(tensors[key]).to(t.dtype)
        module.load_state_dict(updates)


def restore_checkpoint(state: TrainState, path, force: bool = False) -> dict:
    """Load a checkpoint into an existing train state; refuses on a config
    snapshot mismatch unless force is set."""
    tensors, meta = read_archive(path)
    snapshot = meta.get("config", {})
    current = state.config.to_dict()
    if snapshot != current and not force:
        diffs = sorted(
            k for k in set(snapshot) | set(current) if snapshot.get(k) != current.get(k)
        )
        raise ValidationError(
            f"checkpoint config does not match current config (fields: {', '.join(diffs)}); "
            "pass force to override"
        )
    if meta.get("encoder_sha") and meta["encoder_sha"] != state.encoder_sha:
        raise ValidationError(
            "frozen-encoder checksum mismatch between checkpoint and rebuilt model"
        )
    load_model_weights(state.model, tensors)
    opt_sd = state.optimizer.state_dict()
    opt_entries: dict[int, dict] = {}
    for key, arr in tensors.items():
        if not key.startswith("optimizer."):
            continue
        _, idx, field_name = key.split(".", 2)
        opt_entries.setdefault(int(idx), {})[field_name] = torch.from_numpy(arr)
    opt_sd["state"] = opt_entries
    state.optimizer.load_state_dict(opt_sd)
    state.step = int(meta["step"])
    state.total_steps = int(meta["total_steps"])
    return meta


def _epoch_rng(config: TrainConfig, epoch: int) -> np.random.Generator:
    if config.deterministic:
        return np.random.default_rng((config.seed * 1_000_003 + epoch) % (2**63))
    return np.random.default_rng()


def fit(
    model: AdaptedSegmenter,
    train_manifest: DatasetManifest,
    eval_manifest: DatasetManifest | None,
    config: TrainConfig,
    out_dir,
    resume_from=None,
    force: bool = False,
    max_steps: int | None = None,
    run_meta: dict | None = None,
) -> tuple[TrainState, list]:
    """Run the full training recipe; returns the final state and history.

    Writes a JSON-lines log (one record per step, one per evaluation), a
    last checkpoint every epoch and a best checkpoint by the task's primary
    metric. max_steps optionally truncates the schedule's total step count
    for short runs; the cosine schedule follows the truncated total.
    """
    config = config.resolved()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.deterministic:
        torch.manual_seed(config.seed)

    steps_per_epoch = max(1, math.ceil(len(train_manifest) / config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)
    state = create_train_state(model, config, total_steps)

    log_mode = "w"
    if resume_from is not None:
        restore_checkpoint(state, resume_from, force=force)
        log_mode = "a"

    primary = PRIMARY_METRIC[config.task]
    sign = METRIC_SIGN[primary]
    best_score = -math.inf
    history: list[dict] = []
    log_path = out_dir / "train_log.jsonl"

    with open(log_path, log_mode) as log:
        def emit(record: dict) -> None:
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()

        epoch = state.step // steps_per_epoch
        while state.step < total_steps:
            rng = _epoch_rng(config, epoch)
            for records in iter_epoch_batches(train_manifest, config.batch_size, rng):
                if state.step >= total_steps:
                    break
                flips = (
                    rng.random(len(records)) < 0.5
                    if config.hflip_augment
                    else None
                )
                images, masks = load_batch(records, train_manifest.resize_to, flips)
                lr = scheduled_lr(state.step, total_steps, config.lr0, config.warmup_steps)
                state, loss = train_step(
                    state, (images, masks, [r.stem for r in records])
                )
                emit({"type": "step", "step": state.step, "epoch": epoch,
                      "lr": lr, "loss": loss})
            epoch += 1
            last_epoch = state.step >= total_steps
            if eval_manifest is not None and (epoch % config.eval_every == 0 or last_epoch):
                report = evaluate_split(
                    state.model, eval_manifest, out_dir / "eval_predictions"
                )
                entry = {k: v for k, v in report.to_dict().items() if k != "per_image"}
                emit({"type": "eval", "step": state.step, "epoch": epoch,
                      "metrics": entry})
                history.append({"epoch": epoch, "step": state.step, "metrics": entry})
                score = sign * entry[primary]
                if score > best_score:
                    best_score = score
                    extra = {"best_metric": primary, "best_value": entry[primary]}
                    if run_meta:
                        extra["run"] = run_meta
                    save_checkpoint(out_dir / "best.ckpt", state, epoch, extra)
            save_checkpoint(
                out_dir / "last.ckpt", state, epoch,
                {"run": run_meta} if run_meta else None,
            )
    return state, history
