"""Full segmentation model: guidance extraction, adapters, frozen encoder,
trainable decoder."""

from __future__ import annotations

import torch
import torch.nn as nn

from .adapter import AdapterConfig, AdapterStack, init_adapters, trainable_parameters
from .backbone import (
    Decoder,
    Encoder,
    ModelPreset,
    get_preset,
    init_decoder,
    init_encoder,
    parameter_checksum,
)
from .errors import ValidationError
from .prompts import HfcEmbedder, compose_prompts, extract_patch_embedding, high_freq_components
from .weights import load_pretrained


class AdaptedSegmenter(nn.Module):
    """Frozen ViT encoder steered by per-layer prompts, with a tuned decoder.

    The prompt source is the weighted sum of the high-frequency components
    (through a trainable patch projection) and the frozen patch embedding;
    each block's adapter maps it to that block's prompt. With
    prompts_enabled=False the prompts are dropped entirely, which is the
    ablation baseline.
    """

    def __init__(
        self,
        encoder: Encoder,
        decoder: Decoder,
        adapters: AdapterStack,
        hfc_embed: HfcEmbedder,
        mask_ratio: float = 0.25,
        composition_weights=(1.0, 1.0),
        prompts_enabled: bool = True,
    ):
        super().__init__()
        if not encoder.frozen:
            raise ValidationError("encoder must be frozen before model assembly")
        if adapters.num_layers != encoder.config.depth:
            raise ValidationError(
                f"{adapters.num_layers} adapters for encoder depth {encoder.config.depth}"
            )
        self.encoder = encoder
        self.decoder = decoder
        self.adapters = adapters
        self.hfc_embed = hfc_embed
        self.mask_ratio = float(mask_ratio)
        self.composition_weights = tuple(float(w) for w in composition_weights)
        self.prompts_enabled = prompts_enabled

    def guidance_features(self, images: torch.Tensor) -> torch.Tensor:
        """Composed adapter input for a (B, C, H, W) batch."""
        hfc = high_freq_components(images, self.mask_ratio)
        f_hfc = self.hfc_embed(hfc)
        f_pe = extract_patch_embedding(images, self.encoder)
        return compose_prompts([f_hfc, f_pe], self.composition_weights)

    def layer_prompts(self, images: torch.Tensor):
        features = self.guidance_features(images)
        return [self.adapters(features, i) for i in range(self.adapters.num_layers)]

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """Per-pixel foreground probabilities (B, H, W) at input resolution."""
        prompts = self.layer_prompts(images) if self.prompts_enabled else None
        embedding = self.encoder(images, prompts)
        return self.decoder(embedding, images.shape[-2:])

    def trainable_modules(self) -> dict:
        return {
            "adapters": self.adapters,
            "decoder": self.decoder,
            "hfc_embed": self.hfc_embed,
        }

    def trainable_params(self) -> list:
        params = trainable_parameters(self.adapters)
        params.extend(self.decoder.parameters())
        params.extend(self.hfc_embed.parameters())
        return params

    def encoder_checksum(self) -> str:
        return parameter_checksum(self.encoder)


def build_model(
    preset: str | ModelPreset,
    seed: int = 0,
    adapter_mid_dim: int = 32,
    adapter_init: str = "zero_up",
    mask_ratio: float = 0.25,
    composition_weights=(1.0, 1.0),
    prompts_enabled: bool = True,
    weights_file=None,
    image_size: int | None = None,
) -> AdaptedSegmenter:
    """Assemble the model for a preset with seed-keyed initialization.

    With the same preset, seed and image size this is bit-reproducible,
    which is what lets a checkpoint verify the rebuilt frozen encoder by
    checksum. An optional weight file initializes encoder and decoder
    (see weights); image_size rebuilds the preset at another resolution.
    """
    if isinstance(preset, str):
        preset = get_preset(preset)
    if image_size is not None:
        preset = preset.with_image_size(image_size)
    if weights_file is not None:
        encoder, decoder, _ = load_pretrained(preset, weights_file, seed=seed)
    else:
        encoder = init_encoder(preset.encoder, seed)
        decoder = init_decoder(preset.decoder_config(), seed + 1)
    adapter_cfg = AdapterConfig(
        num_layers=preset.encoder.depth,
        input_dim=preset.encoder.embed_dim,
        out_dim=preset.encoder.embed_dim,
        mid_dim=adapter_mid_dim,
        init_scheme=adapter_init,
    )
    adapters = init_adapters(adapter_cfg, seed + 2)
    hfc_embed = HfcEmbedder(
        patch_size=preset.encoder.patch_size,
        in_channels=preset.encoder.in_channels,
        embed_dim=preset.encoder.embed_dim,
    )
    hfc_embed.reset_parameters(torch.Generator().manual_seed(seed + 3))
    return AdaptedSegmenter(
        encoder=encoder,
        decoder=decoder,
        adapters=adapters,
        hfc_embed=hfc_embed,
        mask_ratio=mask_ratio,
        composition_weights=composition_weights,
        prompts_enabled=prompts_enabled,
    )
