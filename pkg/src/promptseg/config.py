"""Run configuration: a single YAML document driving the whole pipeline.

Loading resolves every default so the effective configuration can be echoed
back as a file that reproduces the run exactly. Validation collects
field-level messages instead of stopping at the first problem.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .backbone import PRESETS, get_preset
from .errors import ConfigError
from .objectives import LOSS_KINDS, LossConfig, loss_for_task
from .trainer import DEFAULT_EPOCHS, TrainConfig

OUTPUT_ROOT_ENV = "PROMPTSEG_OUTPUT_ROOT"


@dataclass
class RunConfig:
    task: str
    output_dir: str
    seed: int = 0
    deterministic: bool = True
    preset: str = "toy_64"
    weights: str | None = None
    adapter_mid_dim: int = 32
    adapter_init: str = "zero_up"
    adapters_enabled: bool = True
    mask_ratio: float = 0.25
    composition_weights: tuple = (1.0, 1.0)
    resize_to: int | None = None
    train_roots: list = field(default_factory=list)
    test_roots: list = field(default_factory=list)
    images_dirname: str = "images"
    masks_dirname: str = "masks"
    train: TrainConfig | None = None

    def resolved_resize(self) -> int:
        if self.resize_to is not None:
            return self.resize_to
        return get_preset(self.preset).resize_to

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "deterministic": self.deterministic,
            "model": {
                "preset": self.preset,
                "weights": self.weights,
                "adapter_mid_dim": self.adapter_mid_dim,
                "adapter_init": self.adapter_init,
                "adapters_enabled": self.adapters_enabled,
                "mask_ratio": self.mask_ratio,
                "composition_weights": list(self.composition_weights),
            },
            "data": {
                "train_roots": list(self.train_roots),
                "test_roots": list(self.test_roots),
                "images_dirname": self.images_dirname,
                "masks_dirname": self.masks_dirname,
                "resize_to": self.resolved_resize(),
            },
            "train": self.train.to_dict() if self.train else None,
        }


def _as_mapping(value, errors, key):
    if value is None:
        return {}
    if not isinstance(value, dict):
        errors[key] = f"expected a mapping, got {type(value).__name__}"
        return {}
    return value


def load_run_config(path, require_roots: bool = True) -> RunConfig:
    """Parse and validate a YAML run configuration.

    Raises ConfigError carrying one message per offending field.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError({"config": f"file not found: {path}"})
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError({"config": f"invalid YAML: {exc}"}) from exc
    if not isinstance(raw, dict):
        raise ConfigError({"config": "top level must be a mapping"})

    errors: dict[str, str] = {}
    task = raw.get("task")
    if task not in DEFAULT_EPOCHS:
        errors["task"] = f"must be one of {sorted(DEFAULT_EPOCHS)}, got {task!r}"

    output_dir = raw.get("output_dir")
    if not output_dir or not isinstance(output_dir, str):
        errors["output_dir"] = "required string"
    else:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not os.path.isabs(output_dir):
            output_dir = str(Path(root) / output_dir)

    model = _as_mapping(raw.get("model"), errors, "model")
    preset = model.get("preset", "toy_64")
    if preset not in PRESETS:
        errors["model.preset"] = f"unknown preset {preset!r}; known: {sorted(PRESETS)}"
    weights = model.get("weights")
    if weights is not None and not Path(weights).exists():
        errors["model.weights"] = f"file not found: {weights}"
    mask_ratio = model.get("mask_ratio", 0.25)
    if not isinstance(mask_ratio, (int, float)) or not 0.0 <= float(mask_ratio) < 1.0:
        errors["model.mask_ratio"] = f"must be in [0, 1), got {mask_ratio!r}"
    adapter_init = model.get("adapter_init", "zero_up")
    if adapter_init not in ("zero_up", "small_random"):
        errors["model.adapter_init"] = f"must be zero_up or small_random, got {adapter_init!r}"
    adapter_mid_dim = model.get("adapter_mid_dim", 32)
    if not isinstance(adapter_mid_dim, int) or adapter_mid_dim < 1:
        errors["model.adapter_mid_dim"] = f"must be a positive integer, got {adapter_mid_dim!r}"
    comp_weights = model.get("composition_weights", [1.0, 1.0])
    if (
        not isinstance(comp_weights, (list, tuple))
        or len(comp_weights) != 2
        or not all(isinstance(w, (int, float)) for w in comp_weights)
    ):
        errors["model.composition_weights"] = (
            f"must be two numbers (hfc weight, patch-embed weight), got {comp_weights!r}"
        )
        comp_weights = [1.0, 1.0]

    data = _as_mapping(raw.get("data"), errors, "data")
    train_roots = data.get("train_roots", []) or []
    test_roots = data.get("test_roots", []) or []
    for key, roots in (("data.train_roots", train_roots), ("data.test_roots", test_roots)):
        if not isinstance(roots, list):
            errors[key] = f"expected a list of directories, got {type(roots).__name__}"
            continue
        for r in roots:
            if not Path(r).is_dir():
                errors[f"{key}[{r}]"] = "directory does not exist"
    if require_roots and isinstance(train_roots, list) and not train_roots:
        errors["data.train_roots"] = "at least one training root is required"
    resize_to = data.get("resize_to")
    if resize_to is not None and (not isinstance(resize_to, int) or resize_to < 8):
        errors["data.resize_to"] = f"must be an integer >= 8, got {resize_to!r}"
    elif resize_to is not None and preset in PRESETS:
        patch = PRESETS[preset].encoder.patch_size
        if resize_to % patch:
            errors["data.resize_to"] = (
                f"{resize_to} is not divisible by the {preset} patch size {patch}"
            )

    train_raw = _as_mapping(raw.get("train"), errors, "train")
    loss_raw = _as_mapping(train_raw.get("loss"), errors, "train.loss")
    loss_kind = loss_raw.get("kind")
    if loss_kind is not None and loss_kind not in LOSS_KINDS:
        errors["train.loss.kind"] = f"must be one of {LOSS_KINDS}, got {loss_kind!r}"

    train_cfg = None
    if task in DEFAULT_EPOCHS and not errors:
        default_loss = loss_for_task(task)
        loss_cfg = LossConfig(
            kind=loss_raw.get("kind", default_loss.kind),
            iou_weight=float(loss_raw.get("iou_weight", default_loss.iou_weight)),
            epsilon=float(loss_raw.get("epsilon", default_loss.epsilon)),
        )
        train_cfg = TrainConfig(
            task=task,
            epochs=train_raw.get("epochs"),
            lr0=float(train_raw.get("lr0", 2e-4)),
            weight_decay=float(train_raw.get("weight_decay", 0.0)),
            warmup_steps=int(train_raw.get("warmup_steps", 0)),
            batch_size=int(train_raw.get("batch_size", 2)),
            seed=int(raw.get("seed", 0)),
            deterministic=bool(raw.get("deterministic", True)),
            eval_every=int(train_raw.get("eval_every", 1)),
            hflip_augment=bool(train_raw.get("hflip_augment", False)),
            loss=loss_cfg,
        ).resolved()

    if errors:
        raise ConfigError(errors)

    # Preset dims must accept the adapter width; AdapterConfig re-validates.
    return RunConfig(
        task=task,
        output_dir=output_dir,
        seed=int(raw.get("seed", 0)),
        deterministic=bool(raw.get("deterministic", True)),
        preset=preset,
        weights=weights,
        adapter_mid_dim=adapter_mid_dim,
        adapter_init=adapter_init,
        adapters_enabled=bool(model.get("adapters_enabled", True)),
        mask_ratio=float(mask_ratio),
        composition_weights=tuple(float(w) for w in comp_weights),
        resize_to=resize_to,
        train_roots=[str(r) for r in train_roots],
        test_roots=[str(r) for r in test_roots],
        images_dirname=str(data.get("images_dirname", "images")),
        masks_dirname=str(data.get("masks_dirname", "masks")),
        train=train_cfg,
    )


def write_effective_config(config: RunConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)


def effective_config_yaml(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=True)
