"""Task-guidance feature extraction.

Two guidance signals are produced from an input image: its high-frequency
components (low frequencies zeroed in the Fourier domain) and the frozen
backbone's patch-embedding tokens. Both live in token space (N x D) and are
combined by a weighted elementwise sum before feeding the adapters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ValidationError

# Residuals whose total range is below this are treated as constant and map
# to an all-zero output instead of being amplified by the min-max rescale.
_CONSTANT_RANGE_EPS = 1e-12


@dataclass(frozen=True)
class FrequencyMaskSpec:
    """Fraction of the centered spectrum to remove, per axis."""

    mask_ratio: float = 0.25

    def __post_init__(self):
        if not (0.0 <= self.mask_ratio < 1.0):
            raise ValidationError(
                f"mask_ratio must be in [0, 1), got {self.mask_ratio}"
            )


def _mask_extent(size: int, ratio: float) -> int:
    """Number of frequency bins removed along one axis: ceil(ratio * size)."""
    v = ratio * size
    nearest = round(v)
    if abs(v - nearest) < 1e-9:  # snap float dirt like 0.1*10 = 1.0000000000000002
        return int(nearest)
    return int(math.ceil(v))


def _mask_bounds(size: int, ratio: float) -> tuple[int, int]:
    extent = _mask_extent(size, ratio)
    start = size // 2 - extent // 2  # keep the zero-frequency bin inside
    return start, start + extent


def hfc_residual(x: torch.Tensor, mask_ratio: float) -> torch.Tensor:
    """Un-normalized high-frequency residual of a (B, C, H, W) batch.

    Per channel: 2D FFT, zero a centered rectangle of the shifted spectrum
    (ceil(ratio*H) x ceil(ratio*W) bins around the zero-frequency bin),
    inverse FFT, real part. Computed in float64 and cast back.
    """
    if not (0.0 <= mask_ratio < 1.0):
        raise ValidationError(f"mask_ratio must be in [0, 1), got {mask_ratio}")
    if x.ndim != 4:
        raise ValidationError(f"expected (B, C, H, W) input, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h < 2 or w < 2:
        raise ValidationError(f"image must be at least 2x2, got {h}x{w}")
    if not torch.isfinite(x).all():
        raise ValidationError("input contains non-finite values")

    x64 = x.to(torch.float64)
    spec = torch.fft.fftshift(torch.fft.fft2(x64, dim=(-2, -1)), dim=(-2, -1))
    h0, h1 = _mask_bounds(h, mask_ratio)
    w0, w1 = _mask_bounds(w, mask_ratio)
    spec[..., h0:h1, w0:w1] = 0
    residual = torch.fft.ifft2(
        torch.fft.ifftshift(spec, dim=(-2, -1)), dim=(-2, -1)
    ).real
    return residual.to(x.dtype)


def high_freq_components(x: torch.Tensor, mask_ratio: float) -> torch.Tensor:
    """High-frequency components of a (B, C, H, W) batch, rescaled to [0, 1].

    The rescale is per sample over all channels; residuals with no range
    (constant images under any positive ratio) come back as zeros.
    """
    residual = hfc_residual(x.to(torch.float64), mask_ratio)
    flat = residual.flatten(1)
    lo = flat.min(dim=1).values.view(-1, 1, 1, 1)
    hi = flat.max(dim=1).values.view(-1, 1, 1, 1)
    span = hi - lo
    constant = span <= _CONSTANT_RANGE_EPS
    out = torch.where(
        constant,
        torch.zeros_like(residual),
        (residual - lo) / torch.where(constant, torch.ones_like(span), span),
    )
    return out.to(x.dtype)


def _validate_image_array(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValidationError(
            f"expected an (H, W, C) image with 1 or 3 channels, got shape {arr.shape}"
        )
    return arr


def extract_hfc(image: np.ndarray, spec: FrequencyMaskSpec) -> np.ndarray:
    """High-frequency components of one (H, W, C) image, in [0, 1].

    Output dtype follows the input (float64 in, float64 out).
    """
    arr = _validate_image_array(image)
    dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
    x = torch.from_numpy(np.ascontiguousarray(arr, dtype=dtype)).permute(2, 0, 1)[None]
    out = high_freq_components(x, spec.mask_ratio)
    return out[0].permute(1, 2, 0).numpy()


class HfcEmbedder(nn.Module):
    """Trainable linear projection of an HFC image into token space.

    The image is cut into non-overlapping patch_size x patch_size patches in
    row-major order; each patch is flattened channel-major and projected to
    the backbone embedding width.
    """

    def __init__(self, patch_size: int, in_channels: int, embed_dim: int):
        super().__init__()
        self.patch_size = patch_size
        self.in_channels = in_channels
        self.embed_dim = embed_dim
        self.proj = nn.Linear(in_channels * patch_size * patch_size, embed_dim)

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        bound = 1.0 / math.sqrt(self.proj.in_features)
        with torch.no_grad():
            self.proj.weight.uniform_(-bound, bound, generator=generator)
            self.proj.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValidationError(
                f"expected (B, {self.in_channels}, H, W) input, got {tuple(x.shape)}"
            )
        h, w = x.shape[-2:]
        if h % self.patch_size or w % self.patch_size:
            raise ValidationError(
                f"image size {h}x{w} not divisible by patch size {self.patch_size}"
            )
        patches = F.unfold(x, self.patch_size, stride=self.patch_size)  # B, C*P*P, N
        return self.proj(patches.transpose(1, 2))  # B, N, D


def extract_patch_embedding(images: torch.Tensor, encoder) -> torch.Tensor:
    """Frozen patch-embedding tokens (B, N, D) for a (B, C, H, W) batch.

    No gradient reaches the encoder: the result is detached and the encoder
    parameters are frozen by construction.
    """
    if images.ndim != 4:
        raise ValidationError(f"expected (B, C, H, W) input, got {tuple(images.shape)}")
    with torch.no_grad():
        tokens = encoder.patch_tokens(images)
    return tokens.detach()


def compose_prompts(features: Sequence, weights: Sequence[float] | None = None):
    """Weighted elementwise sum of equally shaped token features."""
    if len(features) == 0:
        raise ValidationError("compose_prompts needs at least one feature")
    if weights is None:
        weights = [1.0] * len(features)
    if len(weights) != len(features):
        raise ValidationError(
            f"{len(weights)} weights for {len(features)} features"
        )
    ref_shape = tuple(features[0].shape)
    for f in features[1:]:
        if tuple(f.shape) != ref_shape:
            raise ValidationError(
                f"feature shape {tuple(f.shape)} does not match {ref_shape}"
            )
    out = features[0] * weights[0]
    for f, w in zip(features[1:], weights[1:]):
        out = out + f * w
    return out
