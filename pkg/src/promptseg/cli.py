"""Command-line entry point.

Subcommands: train, eval, predict, extract-prompts, report.
Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbone import get_preset
from .config import (
    RunConfig,
    effective_config_yaml,
    load_run_config,
    write_effective_config,
)
from .data import build_manifest, to_chw_tensor
from .errors import ConfigError, NonFiniteLossError, ValidationError
from .metrics import IMAGE_EXTENSIONS, evaluate_dataset
from .model import build_model
from .prompts import FrequencyMaskSpec, extract_hfc
from .report import LogParseError, write_report
from .tensorio import read_archive, write_tensor_file
from .trainer import (
    evaluate_split,
    fit,
    load_model_weights,
    save_probability_png,
)

logger = logging.getLogger("promptseg")


def _refuse_existing(path: Path, overwrite: bool, what: str) -> None:
    if path.exists() and not overwrite:
        raise RuntimeError(f"{what} already exists at {path}; pass --overwrite to replace it")


def _build_from_config(cfg: RunConfig):
    return build_model(
        cfg.preset,
        seed=cfg.seed,
        adapter_mid_dim=cfg.adapter_mid_dim,
        adapter_init=cfg.adapter_init,
        mask_ratio=cfg.mask_ratio,
        composition_weights=cfg.composition_weights,
        prompts_enabled=cfg.adapters_enabled,
        weights_file=cfg.weights,
        image_size=cfg.resolved_resize(),
    )


def _run_meta(cfg: RunConfig) -> dict:
    return {
        "preset": cfg.preset,
        "seed": cfg.seed,
        "weights": cfg.weights,
        "adapter_mid_dim": cfg.adapter_mid_dim,
        "adapter_init": cfg.adapter_init,
        "adapters_enabled": cfg.adapters_enabled,
        "mask_ratio": cfg.mask_ratio,
        "composition_weights": list(cfg.composition_weights),
        "resize_to": cfg.resolved_resize(),
    }


def _apply_cli_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        if cfg.train is not None:
            cfg.train = replace(cfg.train, seed=args.seed)
    if getattr(args, "deterministic", False):
        cfg.deterministic = True
        if cfg.train is not None:
            cfg.train = replace(cfg.train, deterministic=True)
    return cfg


def cmd_train(args) -> int:
    cfg = _apply_cli_overrides(load_run_config(args.config), args)
    out_dir = Path(cfg.output_dir)
    _refuse_existing(out_dir / "effective_config.yaml", args.overwrite, "a run")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, out_dir / "effective_config.yaml")
    print(effective_config_yaml(cfg), end="")

    resize = cfg.resolved_resize()
    train_manifest = build_manifest(
        cfg.train_roots, cfg.task, "train", resize,
        cfg.images_dirname, cfg.masks_dirname,
    )
    eval_manifest = None
    if cfg.test_roots:
        eval_manifest = build_manifest(
            cfg.test_roots, cfg.task, "test", resize,
            cfg.images_dirname, cfg.masks_dirname,
        )
    (out_dir / "train_manifest.json").write_text(train_manifest.to_json())

    model = _build_from_config(cfg)
    try:
        state, history = fit(
            model,
            train_manifest,
            eval_manifest,
            cfg.train,
            out_dir,
            resume_from=args.resume,
            force=args.force,
            max_steps=args.max_steps,
            run_meta=_run_meta(cfg),
        )
    except NonFiniteLossError as exc:
        dump = {"loss": exc.loss_value, "step": exc.step, "batch_stems": exc.batch_stems}
        (out_dir / "nonfinite_batch.json").write_text(json.dumps(dump, indent=2))
        logger.error("aborted: %s (diagnostic written to nonfinite_batch.json)", exc)
        return 1

    if eval_manifest is not None:
        report = evaluate_split(state.model, eval_manifest, out_dir / "predictions")
        (out_dir / "metric_report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True)
        )
        print(f"final {report.task or cfg.task} report: " + json.dumps(
            {k: round(v, 6) for k, v in report.to_dict().items()
             if isinstance(v, float)}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    report = evaluate_dataset(
        args.pred_dir, args.gt_dir, task=args.task,
        threshold=args.threshold, allow_missing=args.allow_missing,
    )
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(payload)
    out_path = Path(args.out) if args.out else Path(args.pred_dir) / "metric_report.json"
    out_path.write_text(payload)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fields = ["stem", "mae", "s_alpha", "e_phi", "f_beta_w", "dice", "iou", "ber"]
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in report.per_image:
                writer.writerow({k: row[k] for k in fields})
    return 0


def _list_input_images(path: Path) -> list:
    if path.is_dir():
        files = [p for p in sorted(path.iterdir()) if p.suffix.lower() in IMAGE_EXTENSIONS]
        if not files:
            raise RuntimeError(f"no images found in {path}")
        return files
    if not path.exists():
        raise RuntimeError(f"input not found: {path}")
    return [path]


def _load_image_resized(path: Path, size: int) -> torch.Tensor:
    with Image.open(path) as img:
        img = img.convert("RGB").resize((size, size), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    return to_chw_tensor(arr)


def cmd_predict(args) -> int:
    tensors, meta = read_archive(args.checkpoint)
    run = meta.get("run")
    if not run:
        raise RuntimeError(
            f"checkpoint {args.checkpoint} carries no model recipe; it was not "
            "written by the training command"
        )
    model = build_model(
        run["preset"],
        seed=run["seed"],
        adapter_mid_dim=run["adapter_mid_dim"],
        adapter_init=run["adapter_init"],
        mask_ratio=run["mask_ratio"],
        composition_weights=tuple(run["composition_weights"]),
        prompts_enabled=run["adapters_enabled"],
        weights_file=run.get("weights"),
        image_size=run["resize_to"],
    )
    if meta.get("encoder_sha") and model.encoder_checksum() != meta["encoder_sha"]:
        logger.error("frozen-encoder checksum mismatch against checkpoint record")
        return 1
    load_model_weights(model, tensors)
    model.eval()

    out_dir = Path(args.out_dir)
    _refuse_existing(out_dir, args.overwrite, "a prediction directory")
    out_dir.mkdir(parents=True, exist_ok=True)
    size = run["resize_to"]
    for image_path in _list_input_images(Path(args.input)):
        x = _load_image_resized(image_path, size).unsqueeze(0)
        with torch.no_grad():
            prob = model(x)[0].numpy()
        save_probability_png(out_dir / f"{image_path.stem}.png", prob)
    return 0


def cmd_extract_prompts(args) -> int:
    if args.config:
        cfg = load_run_config(args.config, require_roots=False)
        model = _build_from_config(cfg)
    else:
        model = build_model(args.preset, seed=args.seed or 0)
    model.eval()
    spec = FrequencyMaskSpec(args.tau)

    image_path = Path(args.image)
    size = model.encoder.config.image_size
    x = _load_image_resized(image_path, size)
    image_np = x.permute(1, 2, 0).numpy()

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hfc = extract_hfc(image_np, spec)
    hfc_png = out_dir / f"{image_path.stem}_hfc.png"
    Image.fromarray(np.floor(hfc * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(hfc_png)

    model.mask_ratio = spec.mask_ratio
    with torch.no_grad():
        feature = model.guidance_features(x.unsqueeze(0))[0].numpy()
    feature_path = out_dir / f"{image_path.stem}_feature.bin"
    write_tensor_file(feature_path, feature)
    print(f"wrote {hfc_png} and {feature_path} (feature shape {feature.shape})")
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.out_dir)
    _refuse_existing(out_dir / "summary.csv", args.overwrite, "a report")
    rows = write_report(args.log, out_dir)
    for row in rows:
        print(f"{row['metric']}: best={row['best']:.6g} final={row['final']:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptseg",
        description="adapter-based visual prompt tuning for binary segmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train from a YAML run configuration")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--deterministic", action="store_true")
    p_train.add_argument("--overwrite", action="store_true")
    p_train.add_argument("--force", action="store_true",
                         help="resume despite a config snapshot mismatch")
    p_train.add_argument("--resume", default=None, help="checkpoint to resume from")
    p_train.add_argument("--max-steps", type=int, default=None,
                         help="truncate the schedule to this many steps")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a folder of predictions")
    p_eval.add_argument("--pred-dir", required=True)
    p_eval.add_argument("--gt-dir", required=True)
    p_eval.add_argument("--task", default="", choices=["", "camouflage", "shadow", "polyp"])
    p_eval.add_argument("--threshold", type=float, default=0.5)
    p_eval.add_argument("--allow-missing", action="store_true")
    p_eval.add_argument("--out", default=None, help="metric report JSON path")
    p_eval.add_argument("--csv", default=None, help="optional per-image CSV path")
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="write probability-map PNGs")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--input", required=True, help="image file or directory")
    p_pred.add_argument("--out-dir", required=True)
    p_pred.add_argument("--overwrite", action="store_true")
    p_pred.set_defaults(func=cmd_predict)

    p_ext = sub.add_parser("extract-prompts", help="dump guidance features for an image")
    p_ext.add_argument("--image", required=True)
    p_ext.add_argument("--tau", type=float, default=0.25,
                       help="fraction of the centered spectrum to remove")
    p_ext.add_argument("--out-dir", required=True)
    p_ext.add_argument("--config", default=None)
    p_ext.add_argument("--preset", default="toy_64")
    p_ext.add_argument("--seed", type=int, default=0)
    p_ext.set_defaults(func=cmd_extract_prompts)

    p_rep = sub.add_parser("report", help="plots and summary from a training log")
    p_rep.add_argument("--log", required=True)
    p_rep.add_argument("--out-dir", required=True)
    p_rep.add_argument("--overwrite", action="store_true")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LogParseError as exc:
        print(f"error: malformed training log, {exc}", file=sys.stderr)
        return 1
    except (ValidationError, RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
