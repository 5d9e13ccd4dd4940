"""Frozen ViT encoder and trainable mask decoder.

The encoder is a plain ViT with windowed attention in most blocks and global
attention at a configured set of block indices. Per-layer prompts are added
to each block's input tokens, so all-zero prompts reproduce the plain
encoder exactly. The decoder is a small two-way transformer driven by a
single learned output token (no point/box prompt tokens) followed by an
upscaling mask head; it is the only backbone part that trains.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ValidationError


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 32
    depth: int = 4
    num_heads: int = 4
    window_size: int = 2
    global_attn_indices: tuple = (1, 3)
    mlp_ratio: float = 4.0
    in_channels: int = 3
    use_abs_pos: bool = True
    use_rel_pos: bool = False

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValidationError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads:
            raise ValidationError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        bad = [i for i in self.global_attn_indices if not 0 <= i < self.depth]
        if bad:
            raise ValidationError(f"global attention indices out of range: {bad}")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid_size * self.grid_size


@dataclass(frozen=True)
class DecoderConfig:
    embed_dim: int
    token_grid: tuple
    dim: int = 32
    num_heads: int = 4
    depth: int = 1
    mlp_dim: int = 64

    def __post_init__(self):
        if self.dim % 8:
            raise ValidationError(f"decoder dim must be divisible by 8, got {self.dim}")
        if self.dim % self.num_heads:
            raise ValidationError(
                f"decoder dim {self.dim} not divisible by num_heads {self.num_heads}"
            )


class LayerNorm2d(nn.Module):
    """Channel-wise LayerNorm for (B, C, H, W) maps."""

    def __init__(self, num_channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(num_channels))
        self.bias = nn.Parameter(torch.zeros(num_channels))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        u = x.mean(1, keepdim=True)
        s = (x - u).pow(2).mean(1, keepdim=True)
        x = (x - u) / torch.sqrt(s + self.eps)
        return self.weight[:, None, None] * x + self.bias[:, None, None]


class MLPBlock(nn.Module):
    def __init__(self, dim: int, hidden_dim: int):
        super().__init__()
        self.lin1 = nn.Linear(dim, hidden_dim)
        self.lin2 = nn.Linear(hidden_dim, dim)
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(self.act(self.lin1(x)))


def window_partition(x: torch.Tensor, window_size: int):
    """Split (B, H, W, C) into (B*nW, ws, ws, C) windows, padding if needed."""
    b, h, w, c = x.shape
    pad_h = (window_size - h % window_size) % window_size
    pad_w = (window_size - w % window_size) % window_size
    if pad_h or pad_w:
        x = F.pad(x, (0, 0, 0, pad_w, 0, pad_h))
    hp, wp = h + pad_h, w + pad_w
    x = x.view(b, hp // window_size, window_size, wp // window_size, window_size, c)
    windows = x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window_size, window_size, c)
    return windows, (hp, wp)


def window_unpartition(windows, window_size, pad_hw, hw):
    hp, wp = pad_hw
    h, w = hw
    b = windows.shape[0] // (hp * wp // window_size // window_size)
    x = windows.view(b, hp // window_size, wp // window_size, window_size, window_size, -1)
    x = x.permute(0, 1, 3, 2, 4, 5).reshape(b, hp, wp, -1)
    if hp > h or wp > w:
        x = x[:, :h, :w, :].contiguous()
    return x


def get_rel_pos(q_size: int, k_size: int, rel_pos: torch.Tensor) -> torch.Tensor:
    max_rel_dist = 2 * max(q_size, k_size) - 1
    if rel_pos.shape[0] != max_rel_dist:
        resized = F.interpolate(
            rel_pos.reshape(1, rel_pos.shape[0], -1).permute(0, 2, 1),
            size=max_rel_dist,
            mode="linear",
        )
        resized = resized.reshape(-1, max_rel_dist).permute(1, 0)
    else:
        resized = rel_pos
    q_coords = torch.arange(q_size)[:, None] * max(k_size / q_size, 1.0)
    k_coords = torch.arange(k_size)[None, :] * max(q_size / k_size, 1.0)
    relative = (q_coords - k_coords) + (k_size - 1) * max(q_size / k_size, 1.0)
    return resized[relative.long()]


def add_decomposed_rel_pos(attn, q, rel_pos_h, rel_pos_w, q_size, k_size):
    q_h, q_w = q_size
    k_h, k_w = k_size
    rh = get_rel_pos(q_h, k_h, rel_pos_h)
    rw = get_rel_pos(q_w, k_w, rel_pos_w)
    b, _, dim = q.shape
    r_q = q.reshape(b, q_h, q_w, dim)
    rel_h = torch.einsum("bhwc,hkc->bhwk", r_q, rh)
    rel_w = torch.einsum("bhwc,wkc->bhwk", r_q, rw)
    attn = (
        attn.view(b, q_h, q_w, k_h, k_w)
        + rel_h[:, :, :, :, None]
        + rel_w[:, :, :, None, :]
    ).view(b, q_h * q_w, k_h * k_w)
    return attn


class Attention(nn.Module):
    """Multi-head self-attention over a (B, H, W, C) token grid."""

    def __init__(self, dim, num_heads, use_rel_pos=False, input_size=None):
        super().__init__()
        self.num_heads = num_heads
        head_dim = dim // num_heads
        self.scale = head_dim**-0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)
        self.use_rel_pos = use_rel_pos
        if use_rel_pos:
            if input_size is None:
                raise ValidationError("relative positions need a fixed input size")
            self.rel_pos_h = nn.Parameter(torch.zeros(2 * input_size[0] - 1, head_dim))
            self.rel_pos_w = nn.Parameter(torch.zeros(2 * input_size[1] - 1, head_dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, w, _ = x.shape
        qkv = self.qkv(x).reshape(b, h * w, 3, self.num_heads, -1).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.reshape(3, b * self.num_heads, h * w, -1).unbind(0)
        attn = (q * self.scale) @ k.transpose(-2, -1)
        if self.use_rel_pos:
            attn = add_decomposed_rel_pos(
                attn, q, self.rel_pos_h, self.rel_pos_w, (h, w), (h, w)
            )
        attn = attn.softmax(dim=-1)
        x = (
            (attn @ v)
            .view(b, self.num_heads, h, w, -1)
            .permute(0, 2, 3, 1, 4)
            .reshape(b, h, w, -1)
        )
        return self.proj(x)


class Block(nn.Module):
    """Pre-norm transformer block with windowed or global attention."""

    def __init__(self, dim, num_heads, mlp_ratio, window_size, use_rel_pos, input_size):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(
            dim,
            num_heads,
            use_rel_pos=use_rel_pos,
            input_size=input_size if window_size == 0 else (window_size, window_size),
        )
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = MLPBlock(dim, int(dim * mlp_ratio))
        self.window_size = window_size

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        shortcut = x
        x = self.norm1(x)
        if self.window_size > 0:
            h, w = x.shape[1], x.shape[2]
            x, pad_hw = window_partition(x, self.window_size)
        x = self.attn(x)
        if self.window_size > 0:
            x = window_unpartition(x, self.window_size, pad_hw, (h, w))
        x = shortcut + x
        return x + self.mlp(self.norm2(x))


class PatchEmbed(nn.Module):
    def __init__(self, patch_size, in_channels, embed_dim):
        super().__init__()
        self.proj = nn.Conv2d(in_channels, embed_dim, patch_size, stride=patch_size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(x).permute(0, 2, 3, 1)  # B, H', W', C


class Encoder(nn.Module):
    """ViT image encoder with per-block prompt injection. Frozen after init."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.patch_embed = PatchEmbed(config.patch_size, config.in_channels, config.embed_dim)
        g = config.grid_size
        self.pos_embed = (
            nn.Parameter(torch.zeros(1, g, g, config.embed_dim))
            if config.use_abs_pos
            else None
        )
        self.blocks = nn.ModuleList(
            Block(
                dim=config.embed_dim,
                num_heads=config.num_heads,
                mlp_ratio=config.mlp_ratio,
                window_size=0 if i in config.global_attn_indices else config.window_size,
                use_rel_pos=config.use_rel_pos,
                input_size=(g, g),
            )
            for i in range(config.depth)
        )
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "Encoder":
        for p in self.parameters():
            p.requires_grad_(False)
        self._frozen = True
        return self

    def _check_input(self, x: torch.Tensor) -> None:
        c = self.config
        if x.ndim != 4 or x.shape[1] != c.in_channels:
            raise ValidationError(
                f"expected (B, {c.in_channels}, H, W) input, got {tuple(x.shape)}"
            )
        if x.shape[-2] != c.image_size or x.shape[-1] != c.image_size:
            raise ValidationError(
                f"input {x.shape[-2]}x{x.shape[-1]} does not match configured "
                f"image size {c.image_size}"
            )

    def patch_tokens(self, x: torch.Tensor) -> torch.Tensor:
        """Patch-embedding tokens (B, N, D), before positions."""
        self._check_input(x)
        t = self.patch_embed(x)
        return t.reshape(t.shape[0], -1, t.shape[-1])

    def forward(self, x: torch.Tensor, prompts=None) -> torch.Tensor:
        """Encode an image batch, adding prompts[i] to block i's input tokens."""
        self._check_input(x)
        t = self.patch_embed(x)
        b, gh, gw, d = t.shape
        if self.pos_embed is not None:
            t = t + self.pos_embed
        if prompts is not None:
            if len(prompts) != len(self.blocks):
                raise ValidationError(
                    f"{len(prompts)} prompts for {len(self.blocks)} blocks"
                )
            prompts = [self._as_grid(p, b, gh, gw, d, i) for i, p in enumerate(prompts)]
        for i, blk in enumerate(self.blocks):
            if prompts is not None:
                t = t + prompts[i]
            t = blk(t)
        return t.reshape(b, gh * gw, d)

    @staticmethod
    def _as_grid(p, b, gh, gw, d, i):
        if p.ndim == 2:
            p = p.unsqueeze(0).expand(b, -1, -1)
        if p.ndim != 3 or p.shape[-2] != gh * gw or p.shape[-1] != d:
            raise ValidationError(
                f"prompt {i} has shape {tuple(p.shape)}, expected "
                f"({b}, {gh * gw}, {d})"
            )
        return p.reshape(b, gh, gw, d)


class ProjAttention(nn.Module):
    """Attention with separate q/k/v inputs and optional internal downsampling."""

    def __init__(self, dim, num_heads, downsample_rate=1):
        super().__init__()
        inner = dim // downsample_rate
        if inner % num_heads:
            raise ValidationError(
                f"attention inner dim {inner} not divisible by {num_heads} heads"
            )
        self.num_heads = num_heads
        self.q_proj = nn.Linear(dim, inner)
        self.k_proj = nn.Linear(dim, inner)
        self.v_proj = nn.Linear(dim, inner)
        self.out_proj = nn.Linear(inner, dim)

    def _split(self, x):
        b, n, c = x.shape
        return x.reshape(b, n, self.num_heads, c // self.num_heads).transpose(1, 2)

    def forward(self, q, k, v):
        q = self._split(self.q_proj(q))
        k = self._split(self.k_proj(k))
        v = self._split(self.v_proj(v))
        scale = q.shape[-1] ** -0.5
        attn = (q @ k.transpose(-2, -1)) * scale
        attn = attn.softmax(dim=-1)
        out = attn @ v
        b, _, n, _ = out.shape
        return self.out_proj(out.transpose(1, 2).reshape(b, n, -1))


class TwoWayBlock(nn.Module):
    """Token/image cross-attention block of the mask decoder."""

    def __init__(self, dim, num_heads, mlp_dim, skip_first_layer_pe=False):
        super().__init__()
        self.self_attn = ProjAttention(dim, num_heads)
        self.norm1 = nn.LayerNorm(dim)
        self.cross_attn_token_to_image = ProjAttention(dim, num_heads, downsample_rate=2)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MLPBlock(dim, mlp_dim)
        self.norm3 = nn.LayerNorm(dim)
        self.norm4 = nn.LayerNorm(dim)
        self.cross_attn_image_to_token = ProjAttention(dim, num_heads, downsample_rate=2)
        self.skip_first_layer_pe = skip_first_layer_pe

    def forward(self, tokens, image, token_pe, image_pe):
        if self.skip_first_layer_pe:
            tokens = self.self_attn(q=tokens, k=tokens, v=tokens)
        else:
            q = tokens + token_pe
            tokens = tokens + self.self_attn(q=q, k=q, v=tokens)
        tokens = self.norm1(tokens)

        q = tokens + token_pe
        k = image + image_pe
        tokens = tokens + self.cross_attn_token_to_image(q=q, k=k, v=image)
        tokens = self.norm2(tokens)

        tokens = tokens + self.mlp(tokens)
        tokens = self.norm3(tokens)

        q = tokens + token_pe
        k = image + image_pe
        image = image + self.cross_attn_image_to_token(q=k, k=q, v=tokens)
        image = self.norm4(image)
        return tokens, image


class DecoderMLP(nn.Module):
    # GELU (not ReLU) keeps every activation smooth, so finite-difference
    # gradient checks hold at any parameter point.
    def __init__(self, dim, out_dim, num_layers=3):
        super().__init__()
        dims = [dim] * num_layers + [out_dim]
        self.layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(num_layers)
        )

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.gelu(x)
        return x


class Decoder(nn.Module):
    """Mask decoder: single learned output token, two-way transformer, and a
    dynamic (token-conditioned) upscaling head producing per-pixel
    probabilities."""

    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.config = config
        dim = config.dim
        gh, gw = config.token_grid
        self.neck = nn.Sequential(
            nn.Conv2d(config.embed_dim, dim, 1, bias=False),
            LayerNorm2d(dim),
            nn.Conv2d(dim, dim, 3, padding=1, bias=False),
            LayerNorm2d(dim),
        )
        self.image_pe = nn.Parameter(torch.zeros(1, gh * gw, dim))
        self.out_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.layers = nn.ModuleList(
            TwoWayBlock(dim, config.num_heads, config.mlp_dim, skip_first_layer_pe=(i == 0))
            for i in range(config.depth)
        )
        self.final_attn_token_to_image = ProjAttention(dim, config.num_heads, downsample_rate=2)
        self.norm_final_attn = nn.LayerNorm(dim)
        self.output_upscaling = nn.Sequential(
            nn.ConvTranspose2d(dim, dim // 4, 2, stride=2),
            LayerNorm2d(dim // 4),
            nn.GELU(),
            nn.ConvTranspose2d(dim // 4, dim // 8, 2, stride=2),
            nn.GELU(),
        )
        self.mask_mlp = DecoderMLP(dim, dim // 8)

    def forward(self, embedding: torch.Tensor, out_size) -> torch.Tensor:
        gh, gw = self.config.token_grid
        if embedding.ndim != 3 or embedding.shape[-1] != self.config.embed_dim:
            raise ValidationError(
                f"expected (B, N, {self.config.embed_dim}) embedding, got "
                f"{tuple(embedding.shape)}"
            )
        if embedding.shape[1] != gh * gw:
            raise ValidationError(
                f"embedding has {embedding.shape[1]} tokens, expected {gh * gw}"
            )
        b = embedding.shape[0]
        img = embedding.transpose(1, 2).reshape(b, -1, gh, gw)
        img = self.neck(img)
        image = img.flatten(2).transpose(1, 2)  # B, N, dim
        image_pe = self.image_pe.expand(b, -1, -1)
        token_pe = self.out_token.expand(b, -1, -1)
        tokens = self.out_token.expand(b, -1, -1)

        for layer in self.layers:
            tokens, image = layer(tokens, image, token_pe, image_pe)
        q = tokens + token_pe
        k = image + image_pe
        tokens = tokens + self.final_attn_token_to_image(q=q, k=k, v=image)
        tokens = self.norm_final_attn(tokens)

        up = self.output_upscaling(image.transpose(1, 2).reshape(b, -1, gh, gw))
        hyper = self.mask_mlp(tokens[:, 0, :])  # B, dim//8
        logits = torch.einsum("bc,bchw->bhw", hyper, up)
        logits = F.interpolate(
            logits.unsqueeze(1), size=tuple(out_size), mode="bilinear", align_corners=False
        ).squeeze(1)
        return torch.sigmoid(logits)


def encode(encoder: Encoder, images: torch.Tensor, prompts=None) -> torch.Tensor:
    return encoder(images, prompts)


def decode(decoder: Decoder, embedding: torch.Tensor, out_size) -> torch.Tensor:
    return decoder(embedding, out_size)


def _seeded_init(module: nn.Module, generator: torch.Generator) -> None:
    """Deterministic re-initialization of every parameter in module order."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
            fan_in = m.weight.shape[1] * (
                m.weight.shape[2] * m.weight.shape[3] if m.weight.ndim == 4 else 1
            )
            if isinstance(m, nn.ConvTranspose2d):
                fan_in = m.weight.shape[0] * m.weight.shape[2] * m.weight.shape[3]
            bound = 1.0 / math.sqrt(max(1, fan_in))
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, (nn.LayerNorm, LayerNorm2d)):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()


def init_encoder(config: EncoderConfig, seed: int) -> Encoder:
    """Build and freeze an encoder with seed-keyed weights."""
    enc = Encoder(config)
    g = torch.Generator().manual_seed(seed)
    _seeded_init(enc, g)
    if enc.pos_embed is not None:
        with torch.no_grad():
            enc.pos_embed.normal_(0.0, 0.02, generator=g)
    return enc.freeze()


def init_decoder(config: DecoderConfig, seed: int) -> Decoder:
    dec = Decoder(config)
    g = torch.Generator().manual_seed(seed)
    _seeded_init(dec, g)
    with torch.no_grad():
        dec.out_token.normal_(0.0, 0.02, generator=g)
        dec.image_pe.normal_(0.0, 0.02, generator=g)
        # Unit bias keeps the mask-head token vector away from zero at init;
        # with both dot-product factors small the head starts at a saddle.
        dec.mask_mlp.layers[-1].bias.fill_(1.0)
    return dec


def parameter_checksum(module: nn.Module) -> str:
    """SHA-256 over all parameters/buffers in sorted name order (float32)."""
    digest = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        digest.update(name.encode("utf-8"))
        arr = state[name].detach().cpu().contiguous().numpy().astype(np.float32)
        digest.update(arr.tobytes())
    return digest.hexdigest()


@dataclass(frozen=True)
class ModelPreset:
    name: str
    encoder: EncoderConfig
    decoder_dim: int
    decoder_heads: int
    decoder_depth: int
    decoder_mlp_dim: int
    resize_to: int

    def with_image_size(self, image_size: int) -> "ModelPreset":
        """Same architecture at a different input resolution."""
        if image_size == self.encoder.image_size:
            return self
        from dataclasses import replace

        return replace(
            self,
            encoder=replace(self.encoder, image_size=image_size),
            resize_to=image_size,
        )

    def decoder_config(self) -> DecoderConfig:
        g = self.encoder.grid_size
        return DecoderConfig(
            embed_dim=self.encoder.embed_dim,
            token_grid=(g, g),
            dim=self.decoder_dim,
            num_heads=self.decoder_heads,
            depth=self.decoder_depth,
            mlp_dim=self.decoder_mlp_dim,
        )


PRESETS = {
    "toy_64": ModelPreset(
        name="toy_64",
        encoder=EncoderConfig(
            image_size=64,
            patch_size=8,
            embed_dim=32,
            depth=4,
            num_heads=4,
            window_size=2,
            global_attn_indices=(1, 3),
        ),
        decoder_dim=32,
        decoder_heads=4,
        decoder_depth=1,
        decoder_mlp_dim=64,
        resize_to=64,
    ),
    "toy_128": ModelPreset(
        name="toy_128",
        encoder=EncoderConfig(
            image_size=128,
            patch_size=16,
            embed_dim=64,
            depth=6,
            num_heads=4,
            window_size=4,
            global_attn_indices=(1, 3, 5),
        ),
        decoder_dim=64,
        decoder_heads=4,
        decoder_depth=1,
        decoder_mlp_dim=128,
        resize_to=128,
    ),
    "vit_h_sam": ModelPreset(
        name="vit_h_sam",
        encoder=EncoderConfig(
            image_size=1024,
            patch_size=16,
            embed_dim=1280,
            depth=32,
            num_heads=16,
            window_size=14,
            global_attn_indices=(7, 15, 23, 31),
            use_rel_pos=True,
        ),
        decoder_dim=256,
        decoder_heads=8,
        decoder_depth=2,
        decoder_mlp_dim=2048,
        resize_to=1024,
    ),
}


def get_preset(name: str) -> ModelPreset:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return PRESETS[name]
