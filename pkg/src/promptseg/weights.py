"""Backbone weight files.

Weights travel in the keyed tensor archive format (see tensorio). Official
segment-anything ``.pth`` checkpoints are also accepted: their tensor names
are translated to internal names, the encoder maps completely, and whatever
part of the official mask decoder lines up by name and shape is used to
initialize ours. Everything skipped or left fresh is reported by name.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch

from .backbone import (
    Decoder,
    Encoder,
    ModelPreset,
    init_decoder,
    init_encoder,
)
from .errors import WeightLoadError
from .tensorio import read_archive, write_archive


@dataclass
class LoadReport:
    loaded: list = field(default_factory=list)
    missing: list = field(default_factory=list)      # model tensors not in the file
    unexpected: list = field(default_factory=list)   # file tensors with no model slot

    def summary(self) -> str:
        return (
            f"loaded {len(self.loaded)} tensors, "
            f"{len(self.missing)} missing, {len(self.unexpected)} unexpected"
        )


def translate_official_name(name: str) -> str | None:
    """Map a segment-anything checkpoint tensor name to an internal name.

    Returns None for tensors we have no slot for (prompt encoder, IoU head,
    multi-mask tokens).
    """
    if name.startswith("image_encoder.neck."):
        return "decoder.neck." + name[len("image_encoder.neck."):]
    if name.startswith("image_encoder."):
        return "encoder." + name[len("image_encoder."):]
    if name.startswith("mask_decoder.transformer."):
        return "decoder." + name[len("mask_decoder.transformer."):]
    if name.startswith("mask_decoder.output_upscaling."):
        return "decoder.output_upscaling." + name[len("mask_decoder.output_upscaling."):]
    if name.startswith("mask_decoder.output_hypernetworks_mlps.0."):
        return "decoder.mask_mlp." + name[len("mask_decoder.output_hypernetworks_mlps.0."):]
    return None


def _read_weight_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"weight file not found: {path}")
    if path.suffix in (".pth", ".pt"):
        state = torch.load(path, map_location="cpu", weights_only=True)
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        out = {}
        for name, tensor in state.items():
            internal = translate_official_name(name)
            if internal is not None:
                out[internal] = tensor.float()
        return out
    tensors, _ = read_archive(path)
    return {k: torch.from_numpy(v) for k, v in tensors.items()}


def save_weights(path, encoder: Encoder, decoder: Decoder, meta: dict | None = None) -> None:
    tensors = {}
    for name, t in encoder.state_dict().items():
        tensors["encoder." + name] = t.detach().cpu().numpy()
    for name, t in decoder.state_dict().items():
        tensors["decoder." + name] = t.detach().cpu().numpy()
    write_archive(path, tensors, meta or {})


def apply_weights(encoder: Encoder, decoder: Decoder, tensors: dict) -> LoadReport:
    report = LoadReport()
    mismatched = []
    targets = {}
    for name, t in encoder.state_dict().items():
        targets["encoder." + name] = (encoder, name, t)
    for name, t in decoder.state_dict().items():
        targets["decoder." + name] = (decoder, name, t)

    enc_updates, dec_updates = {}, {}
    for full_name, (module, local_name, current) in targets.items():
        if full_name not in tensors:
            report.missing.append(full_name)
            continue
        src = tensors[full_name]
        if tuple(src.shape) != tuple(current.shape):
            mismatched.append(
                f"{full_name}: file {tuple(src.shape)} vs model {tuple(current.shape)}"
            )
            continue
        dest = enc_updates if module is encoder else dec_updates
        dest[local_name] = src.to(current.dtype)
        report.loaded.append(full_name)
    report.unexpected = sorted(set(tensors) - set(targets))

    if mismatched:
        raise WeightLoadError(
            "shape mismatch for tensors:\n  " + "\n  ".join(mismatched),
            bad_tensors=mismatched,
        )
    encoder.load_state_dict(enc_updates, strict=False)
    decoder.load_state_dict(dec_updates, strict=False)
    return report


def load_pretrained(preset: ModelPreset, weight_file, seed: int = 0):
    """Build the backbone from a preset and load a weight file into it.

    Returns (encoder, decoder, LoadReport). The encoder comes back frozen,
    the decoder trainable. Tensors absent from the file keep their
    seed-keyed initialization and are listed in the report.
    """
    encoder = init_encoder(preset.encoder, seed)
    decoder = init_decoder(preset.decoder_config(), seed + 1)
    tensors = _read_weight_file(weight_file)
    report = apply_weights(encoder, decoder, tensors)
    encoder.freeze()
    return encoder, decoder, report
