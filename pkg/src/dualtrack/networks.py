"""Neural trajectory estimators: local 3D encoder, global 2D encoder, fusion.

Shape conventions:

- full-resolution clips enter as ``(B, N, H, W)`` float32 with H and W
  divisible by 16; the local encoder reduces space by exactly 16x and
  keeps the temporal length N.
- downsampled context frames enter as ``(B, K, h, w)`` together with the
  absolute frame indices they were taken from; positional information
  always comes from those indices, never from array position.
- every model maps a clip of N frames to ``(B, N-1, 6)`` relative motion
  parameters, one per adjacent pair of *provided* frames.

The local encoder sees only a bounded temporal neighborhood per output
step (``temporal_extent`` frames); the global encoder attends across the
entire sweep. Fusion queries the global summary from the local states
with cross-attention.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math

import torch
import torch.nn.functional as F
from torch import nn

VARIANTS = ("local_only", "coupled", "dual")
SPATIAL_FACTOR = 16
MAX_TEMPORAL_EXTENT = 9


def sinusoidal_encoding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos features of scalar positions; (..., dim)."""
    if dim % 2 != 0:
        raise ValueError("encoding dim must be even")
    pos = positions.to(torch.get_default_dtype())[..., None]
    half = torch.arange(dim // 2, dtype=pos.dtype, device=pos.device)
    freq = torch.exp(-math.log(10000.0) * 2.0 * half / dim)
    angles = pos * freq
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


def grid_encoding(h: int, w: int, dim: int, device, dtype) -> torch.Tensor:
    """Fixed 2D positional features for an (h*w, dim) token grid."""
    ys = torch.arange(h, device=device, dtype=dtype)
    xs = torch.arange(w, device=device, dtype=dtype)
    enc_y = sinusoidal_encoding(ys, dim // 2)
    enc_x = sinusoidal_encoding(xs, dim - dim // 2)
    full = torch.cat([
        enc_y[:, None, :].expand(h, w, dim // 2),
        enc_x[None, :, :].expand(h, w, dim - dim // 2),
    ], dim=-1)
    return full.reshape(h * w, dim)


@dataclasses.dataclass(frozen=True)
class LocalEncoderConfig:
    """3D CNN over contiguous frames plus attention pooling to one vector."""

    channels: tuple = (8, 16, 32, 64)
    temporal_kernels: tuple = (3, 3, 1, 1)
    embed_dim: int = 64
    pool_heads: int = 4
    causal: bool = False

    def __post_init__(self):
        if len(self.channels) != 4 or len(self.temporal_kernels) != 4:
            raise ValueError("expected 4 stages of channels and temporal kernels")
        if any(k % 2 == 0 or k < 1 for k in self.temporal_kernels):
            raise ValueError("temporal kernels must be odd and positive")
        if self.temporal_extent > MAX_TEMPORAL_EXTENT:
            raise ValueError(f"temporal extent {self.temporal_extent} exceeds {MAX_TEMPORAL_EXTENT}")
        if self.embed_dim % self.pool_heads != 0:
            raise ValueError("embed_dim must divide evenly into pool heads")

    @property
    def temporal_radius(self) -> int:
        return sum((k - 1) // 2 for k in self.temporal_kernels)

    @property
    def temporal_extent(self) -> int:
        return 2 * self.temporal_radius + 1


@dataclasses.dataclass(frozen=True)
class GlobalEncoderConfig:
    """Per-frame 2D backbone plus temporal self-attention across the sweep."""

    backbone_channels: tuple = (8, 16, 32, 64)
    embed_dim: int = 64
    ffn_dim: int = 128
    num_layers: int = 2
    num_heads: int = 4

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0 or self.embed_dim % 2 != 0:
            raise ValueError("embed_dim must be even and divisible by num_heads")


@dataclasses.dataclass(frozen=True)
class FusionConfig:
    """Interposer re-encoding of global tokens plus a cross-attention decoder."""

    embed_dim: int = 64
    ffn_dim: int = 128
    num_layers: int = 2
    num_heads: int = 4
    interposer_dim: int = 64
    interposer_ffn: int = 32
    interposer_layers: int = 4
    interposer_heads: int = 4
    global_stride: int = 8

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0 or self.embed_dim % 2 != 0:
            raise ValueError("embed_dim must be even and divisible by num_heads")
        if self.interposer_dim % self.interposer_heads != 0 or self.interposer_dim % 2 != 0:
            raise ValueError("interposer_dim must be even and divisible by its heads")
        if self.global_stride < 1:
            raise ValueError("global_stride must be >= 1")


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    variant: str = "dual"
    local: LocalEncoderConfig = LocalEncoderConfig()
    global_branch: GlobalEncoderConfig = GlobalEncoderConfig()
    fusion: FusionConfig = FusionConfig()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


def config_hash(config: ModelConfig) -> str:
    """Stable 12-hex-digit digest of a model configuration."""
    payload = json.dumps(dataclasses.asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def desk_model_config(variant: str = "dual") -> ModelConfig:
    """Small preset sized for CPU training on the synthetic benchmark."""
    return ModelConfig(
        variant=variant,
        local=LocalEncoderConfig(),
        global_branch=GlobalEncoderConfig(),
        fusion=FusionConfig(
            interposer_dim=64, interposer_ffn=32,
            interposer_layers=2, interposer_heads=4,
        ),
    )


def paper_model_config(variant: str = "dual") -> ModelConfig:
    """Full-scale preset: wide encoders, deep fusion, small interposer."""
    return ModelConfig(
        variant=variant,
        local=LocalEncoderConfig(channels=(64, 128, 256, 512), embed_dim=512, pool_heads=8),
        global_branch=GlobalEncoderConfig(
            backbone_channels=(64, 128, 256, 512),
            embed_dim=512, ffn_dim=1024, num_layers=8, num_heads=8,
        ),
        fusion=FusionConfig(
            embed_dim=512, ffn_dim=1024, num_layers=8, num_heads=8,
            interposer_dim=64, interposer_ffn=32,
            interposer_layers=4, interposer_heads=4,
        ),
    )


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


class _TemporalBlock(nn.Module):
    """Residual 3D block; only the first conv may look across time."""

    def __init__(self, in_ch: int, out_ch: int, spatial_stride: int,
                 temporal_kernel: int, causal: bool):
        super().__init__()
        self.t_pad = temporal_kernel - 1
        self.causal = causal
        self.conv1 = nn.Conv3d(
            in_ch, out_ch, (temporal_kernel, 3, 3),
            stride=(1, spatial_stride, spatial_stride), padding=(0, 1, 1), bias=False,
        )
        self.bn1 = nn.BatchNorm3d(out_ch)
        self.conv2 = nn.Conv3d(out_ch, out_ch, (1, 3, 3), padding=(0, 1, 1), bias=False)
        self.bn2 = nn.BatchNorm3d(out_ch)
        if spatial_stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv3d(in_ch, out_ch, 1, stride=(1, spatial_stride, spatial_stride), bias=False),
                nn.BatchNorm3d(out_ch),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.t_pad:
            pad = (0, 0, 0, 0, self.t_pad, 0) if self.causal else \
                (0, 0, 0, 0, self.t_pad // 2, self.t_pad - self.t_pad // 2)
            y = F.pad(x, pad)
        else:
            y = x
        y = F.relu(self.bn1(self.conv1(y)))
        y = self.bn2(self.conv2(y))
        return F.relu(y + self.shortcut(x))


class LocalCNN(nn.Module):
    """Spatiotemporal feature extractor: space /16, time preserved."""

    def __init__(self, cfg: LocalEncoderConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.stem = nn.Sequential(
            nn.Conv3d(1, c[0], (1, 7, 7), stride=(1, 2, 2), padding=(0, 3, 3), bias=False),
            nn.BatchNorm3d(c[0]),
            nn.ReLU(inplace=True),
        )
        stages = []
        in_ch = c[0]
        for i, (out_ch, tk) in enumerate(zip(c, cfg.temporal_kernels)):
            spatial_stride = 1 if i == 0 else 2
            stages.append(_TemporalBlock(in_ch, out_ch, spatial_stride, tk, cfg.causal))
            stages.append(_TemporalBlock(out_ch, out_ch, 1, 1, cfg.causal))
            in_ch = out_ch
        self.stages = nn.Sequential(*stages)
        self.out_channels = c[-1]

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, N, H, W) -> (B, C, N, H/16, W/16)."""
        if frames.ndim != 4:
            raise ValueError("expected (B, N, H, W) frames")
        if frames.shape[-2] % SPATIAL_FACTOR or frames.shape[-1] % SPATIAL_FACTOR:
            raise ValueError(f"frame size must be divisible by {SPATIAL_FACTOR}")
        return self.stages(self.stem(frames[:, None]))


class SpatialAttentionPool(nn.Module):
    """Collapse each frame's spatial grid into one vector via a learned query."""

    def __init__(self, channels: int, dim: int, heads: int):
        super().__init__()
        self.proj = nn.Linear(channels, dim)
        self.query = nn.Parameter(torch.zeros(1, 1, dim))
        nn.init.normal_(self.query, std=0.02)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, 2 * dim), nn.ReLU(), nn.Linear(2 * dim, dim))

    def forward(self, maps: torch.Tensor) -> torch.Tensor:
        """(B, C, N, h, w) -> (B, N, dim)."""
        b, c, n, h, w = maps.shape
        tokens = maps.permute(0, 2, 3, 4, 1).reshape(b * n, h * w, c)
        tokens = self.proj(tokens)
        tokens = tokens + grid_encoding(h, w, tokens.shape[-1], tokens.device, tokens.dtype)
        q = self.query.expand(b * n, 1, -1).to(tokens.dtype)
        pooled, _ = self.attn(self.norm1(q), tokens, tokens, need_weights=False)
        pooled = q + pooled
        pooled = pooled + self.ffn(self.norm2(pooled))
        return pooled.reshape(b, n, -1)


class LocalEncoder(nn.Module):
    """3D CNN plus spatial pooling; one state vector per input frame."""

    def __init__(self, cfg: LocalEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.cnn = LocalCNN(cfg)
        self.pool = SpatialAttentionPool(self.cnn.out_channels, cfg.embed_dim, cfg.pool_heads)

    @property
    def temporal_extent(self) -> int:
        return self.cfg.temporal_extent

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return self.pool(self.cnn(frames))


class Conv2DBackbone(nn.Module):
    """Default per-frame feature extractor for downsampled context frames."""

    def __init__(self, channels: tuple = (8, 16, 32, 64)):
        super().__init__()
        layers = []
        in_ch = 1
        for i, out_ch in enumerate(channels):
            stride = 1 if i == 0 else 2
            layers += [
                nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False),
                nn.BatchNorm2d(out_ch),
                nn.ReLU(inplace=True),
                nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
                nn.BatchNorm2d(out_ch),
                nn.ReLU(inplace=True),
            ]
            in_ch = out_ch
        self.body = nn.Sequential(*layers)
        self.out_dim = channels[-1]

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """(M, 1, h, w) -> (M, out_dim)."""
        return self.body(frames).mean(dim=(-2, -1))


class TemporalTransformer(nn.Module):
    """Self-attention across frames; order comes only from index encodings."""

    def __init__(self, dim: int, ffn: int, layers: int, heads: int):
        super().__init__()
        layer = nn.TransformerEncoderLayer(
            d_model=dim, nhead=heads, dim_feedforward=ffn,
            batch_first=True, norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=layers,
                                             enable_nested_tensor=False)

    def forward(self, tokens, indices, index_scale: float = 1.0, mask=None):
        x = tokens + sinusoidal_encoding(indices * index_scale, tokens.shape[-1]).to(tokens.dtype)
        padding = None if mask is None else ~mask
        return self.encoder(x, src_key_padding_mask=padding)


class GlobalEncoder(nn.Module):
    """Sweep-level context: independent per-frame embeddings, then attention.

    Any module mapping (M, 1, h, w) to (M, D) with an ``out_dim`` attribute
    can replace the default backbone.
    """

    def __init__(self, cfg: GlobalEncoderConfig, backbone: nn.Module | None = None):
        super().__init__()
        self.cfg = cfg
        self.backbone = backbone if backbone is not None else Conv2DBackbone(cfg.backbone_channels)
        out_dim = getattr(self.backbone, "out_dim", None)
        if out_dim is None:
            raise ValueError("backbone must expose an out_dim attribute")
        self.proj = nn.Linear(out_dim, cfg.embed_dim)
        self.temporal = TemporalTransformer(cfg.embed_dim, cfg.ffn_dim, cfg.num_layers, cfg.num_heads)

    def embed_frames(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, K, h, w) -> (B, K, embed_dim), strictly frame-by-frame."""
        b, k, h, w = frames.shape
        feats = self.backbone(frames.reshape(b * k, 1, h, w))
        return self.proj(feats).reshape(b, k, -1)

    def forward(self, frames, indices, mask=None):
        return self.temporal(self.embed_frames(frames), indices, mask=mask)


class FusionModule(nn.Module):
    """Cross-attention decoder reading global context into local states.

    Positions on both sides are encoded from absolute frame indices scaled
    by 1/global_stride, so consecutive global tokens sit one unit apart and
    local states land on the fractional grid between them.
    """

    def __init__(self, cfg: FusionConfig, local_dim: int, global_dim: int):
        super().__init__()
        self.cfg = cfg
        self.local_proj = nn.Linear(local_dim, cfg.embed_dim)
        self.interposer_in = nn.Linear(global_dim, cfg.interposer_dim)
        inter_layer = nn.TransformerEncoderLayer(
            d_model=cfg.interposer_dim, nhead=cfg.interposer_heads,
            dim_feedforward=cfg.interposer_ffn, batch_first=True, norm_first=True,
        )
        self.interposer = nn.TransformerEncoder(inter_layer, num_layers=cfg.interposer_layers,
                                                enable_nested_tensor=False)
        self.interposer_out = nn.Linear(cfg.interposer_dim, cfg.embed_dim)
        self.decoder = nn.ModuleList([
            nn.TransformerDecoderLayer(
                d_model=cfg.embed_dim, nhead=cfg.num_heads, dim_feedforward=cfg.ffn_dim,
                batch_first=True, norm_first=True,
            )
            for _ in range(cfg.num_layers)
        ])

    def forward(self, local_states, local_indices, global_tokens, global_indices,
                local_mask=None, global_mask=None):
        scale = 1.0 / self.cfg.global_stride
        dim = self.cfg.embed_dim
        q = self.local_proj(local_states)
        q = q + sinusoidal_encoding(local_indices * scale, dim).to(q.dtype)
        m = self.interposer_in(global_tokens)
        m = m + sinusoidal_encoding(global_indices * scale, self.cfg.interposer_dim).to(m.dtype)
        m = self.interposer(m, src_key_padding_mask=None if global_mask is None else ~global_mask)
        m = self.interposer_out(m)
        m = m + sinusoidal_encoding(global_indices * scale, dim).to(m.dtype)
        tgt_pad = None if local_mask is None else ~local_mask
        mem_pad = None if global_mask is None else ~global_mask
        x = q
        for layer in self.decoder:
            x = layer(x, m, tgt_key_padding_mask=tgt_pad, memory_key_padding_mask=mem_pad)
        return x


class DualTrackModel(nn.Module):
    """Trajectory estimator; variants share the local encoder and head shape.

    - ``local_only``: local encoder -> head.
    - ``coupled``: global tokens are the local states at the subsampled
      positions (no second image encoder), then fusion -> head.
    - ``dual``: separate global image encoder, then fusion -> head.
    """

    def __init__(self, config: ModelConfig, backbone: nn.Module | None = None):
        super().__init__()
        self.config = config
        self.local_encoder = LocalEncoder(config.local)
        if config.variant == "dual":
            self.global_encoder = GlobalEncoder(config.global_branch, backbone)
        else:
            self.global_encoder = None
        if config.variant == "coupled":
            self.coupled_proj = nn.Linear(config.local.embed_dim, config.global_branch.embed_dim)
            self.coupled_temporal = TemporalTransformer(
                config.global_branch.embed_dim, config.global_branch.ffn_dim,
                config.global_branch.num_layers, config.global_branch.num_heads,
            )
        if config.variant in ("coupled", "dual"):
            self.fusion = FusionModule(
                config.fusion, config.local.embed_dim, config.global_branch.embed_dim)
            head_dim = config.fusion.embed_dim
        else:
            self.fusion = None
            head_dim = config.local.embed_dim
        self.head = nn.Linear(head_dim, 6)

    def forward(self, frames, indices, global_frames=None, global_indices=None,
                frame_mask=None, global_mask=None):
        """Predict (B, N-1, 6) adjacent-frame motions for an N-frame clip."""
        states = self.local_encoder(frames)
        return self.fuse(states, indices, global_frames, global_indices,
                         frame_mask, global_mask)

    def fuse(self, states, indices, global_frames=None, global_indices=None,
             frame_mask=None, global_mask=None):
        """Everything after the local encoder; ``states`` is (B, N, D)."""
        variant = self.config.variant
        if variant == "local_only":
            fused = states
        elif variant == "dual":
            if global_frames is None or global_indices is None:
                raise ValueError("dual variant requires global frames and indices")
            tokens = self.global_encoder(global_frames, global_indices, mask=global_mask)
            fused = self.fusion(states, indices, tokens, global_indices,
                                local_mask=frame_mask, global_mask=global_mask)
        else:  # coupled
            if global_indices is None:
                raise ValueError("coupled variant requires global indices")
            # Gathering by offset assumes the local clip is contiguous.
            if bool((indices[:, -1] - indices[:, 0] + 1 != indices.shape[1]).any()):
                raise ValueError("coupled variant requires a contiguous local clip")
            offsets = global_indices - indices[:, :1]
            if offsets.min() < 0 or offsets.max() >= states.shape[1]:
                raise ValueError("coupled global indices must fall inside the local clip")
            gathered = torch.take_along_dim(states, offsets[..., None].long(), dim=1)
            tokens = self.coupled_temporal(self.coupled_proj(gathered), global_indices,
                                           mask=global_mask)
            fused = self.fusion(states, indices, tokens, global_indices,
                                local_mask=frame_mask, global_mask=global_mask)
        return self.head(fused[:, :-1])


def build_model(config: ModelConfig, backbone: nn.Module | None = None) -> DualTrackModel:
    return DualTrackModel(config, backbone=backbone)
