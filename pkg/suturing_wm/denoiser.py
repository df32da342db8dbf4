"""
Spatiotemporal transformer predicting flow-matching velocity.

Latent cells become tokens (linear in-projection plus factorized 3D
sinusoidal positions and a per-frame time embedding). One condition token,
class embedding plus time embedding, is prepended to the sequence. Blocks
are pre-LN with QK-normalized attention and can be skipped by index.
"""

__all__ = [
    "DenoiserConfig",
    "ConditioningSignal",
    "NULL_CONDITION",
    "Denoiser",
    "VelocityFn",
    "denoise",
    "embed_condition",
    "apply_first_frame_conditioning",
    "sinusoidal_embedding",
    "positional_embedding_3d",
    "save_denoiser",
    "load_denoiser",
]

import dataclasses
import math
from pathlib import Path
from typing import AbstractSet, Callable, Optional

import torch
from einops import rearrange
from torch import nn

from suturing_wm.checkpoint import load_checkpoint, save_checkpoint
from suturing_wm.errors import (
    ConfigError,
    CorruptCheckpoint,
    InvalidLayerIndex,
    PreconditionError,
    ShapeError,
)
from suturing_wm.taxonomy import (
    NULL_CLASS_INDEX,
    NUM_CLASSES,
    ClassIds,
    class_index,
    parse_caption,
)

DENOISER_KIND = "denoiser"


@dataclasses.dataclass(frozen=True)
class DenoiserConfig:
    """
    Attributes
    ----------
    latent_channels: Channels of the latents the model denoises.
    layers: Number of transformer blocks.
    model_width: Token width.
    heads: Attention heads; must divide model_width.
    mlp_ratio: Feed-forward hidden width over model_width.
    qk_normalization: L2-normalize queries and keys before attention.
    """
    latent_channels: int = 8
    layers: int = 4
    model_width: int = 96
    heads: int = 4
    mlp_ratio: float = 4.0
    qk_normalization: bool = True

    def __post_init__(self):
        for field in ("latent_channels", "layers", "model_width", "heads"):
            if int(getattr(self, field)) < 1:
                raise ConfigError(f"denoiser.{field}", f"must be >= 1, got {getattr(self, field)}")  # noqa: E501
        if self.model_width % self.heads:
            raise ConfigError("denoiser.model_width",
                              f"{self.model_width} is not divisible by heads={self.heads}")  # noqa: E501
        if self.model_width % 2 or self.model_width < 6:
            raise ConfigError("denoiser.model_width",
                              f"must be even and >= 6 for 3D positions, got {self.model_width}")  # noqa: E501
        if self.mlp_ratio <= 0:
            raise ConfigError("denoiser.mlp_ratio", f"must be positive, got {self.mlp_ratio}")  # noqa: E501

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True, eq=False)
class ConditioningSignal:
    """
    What a generation is conditioned on.

    Attributes
    ----------
    class_ids: (quality, action, task), or None for the null condition.
    first_frame_latent: (1, H', W', C_lat) clean latent of frame 0, present
        for image-to-video only.
    conditioning_mask: (T',) mask, 1.0 on latent frames that are given
        clean and excluded from the loss.
    """
    class_ids: Optional[ClassIds] = None
    first_frame_latent: Optional[torch.Tensor] = None
    conditioning_mask: Optional[torch.Tensor] = None

    @classmethod
    def from_caption(cls, caption: str) -> "ConditioningSignal":
        return cls(class_ids=parse_caption(caption))

    @classmethod
    def with_first_frame(cls, class_ids: Optional[ClassIds],
                         first_frame_latent: torch.Tensor,
                         latent_frames: int) -> "ConditioningSignal":
        """
        Image-to-video conditioning: frame 0 is clean, the rest is denoised.
        """
        if first_frame_latent.ndim == 3:
            first_frame_latent = first_frame_latent.unsqueeze(0)
        mask = torch.zeros(latent_frames, dtype=first_frame_latent.dtype)
        mask[0] = 1.0
        return cls(class_ids, first_frame_latent, mask)

    @property
    def image_to_video(self) -> bool:
        return self.first_frame_latent is not None

    @property
    def class_index(self) -> int:
        """
        Embedding row of the class triple; NULL_CLASS_INDEX for the null
        condition.

        Raises:
            UnknownClassId: if the triple is outside the taxonomy.
        """
        if self.class_ids is None:
            return NULL_CLASS_INDEX
        return class_index(*self.class_ids)

    def dropped(self) -> "ConditioningSignal":
        """Same signal with the class replaced by the null condition."""
        return dataclasses.replace(self, class_ids=None)

    def frame_mask(self, latent_frames: int) -> torch.Tensor:
        if self.conditioning_mask is not None:
            if self.conditioning_mask.shape != (latent_frames,):
                raise ShapeError(
                    f"conditioning mask has shape {tuple(self.conditioning_mask.shape)}, "  # noqa: E501
                    f"expected ({latent_frames},)")
            return self.conditioning_mask
        mask = torch.zeros(latent_frames)
        if self.image_to_video:
            mask[0] = 1.0
        return mask


NULL_CONDITION = ConditioningSignal()


def sinusoidal_embedding(positions: torch.Tensor, dim: int,
                         max_period: float = 10000.0) -> torch.Tensor:
    """
    Sine/cosine features of scalar positions.

    Args:
        positions (torch.Tensor): (...,) positions.
        dim (int): even feature size.

    Returns:
        torch.Tensor: (..., dim), sines first.
    """
    half = dim // 2
    freqs = torch.exp(-math.log(max_period)
                      * torch.arange(half, dtype=positions.dtype, device=positions.device) / half)  # noqa: E501
    args = positions[..., None] * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def positional_embedding_3d(frames: int, height: int, width: int, dim: int,
                            dtype: torch.dtype = torch.float32,
                            device: torch.device | str | None = None) -> torch.Tensor:  # noqa: E501
    """
    Factorized 3D sinusoidal positions over (t', h', w').

    t' and h' get 2 * (dim // 6) features each, w' gets the rest.

    Returns:
        torch.Tensor: (frames, height, width, dim)
    """
    d_t = d_h = 2 * (dim // 6)
    d_w = dim - d_t - d_h

    def axis(n: int, d: int) -> torch.Tensor:
        return sinusoidal_embedding(torch.arange(n, dtype=dtype, device=device), d)  # noqa: E501

    e_t = axis(frames, d_t)[:, None, None, :].expand(frames, height, width, d_t)  # noqa: E501
    e_h = axis(height, d_h)[None, :, None, :].expand(frames, height, width, d_h)  # noqa: E501
    e_w = axis(width, d_w)[None, None, :, :].expand(frames, height, width, d_w)  # noqa: E501
    return torch.cat([e_t, e_h, e_w], dim=-1)


class TimeEmbedding(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.width = width
        self.mlp = nn.Sequential(nn.Linear(width, width), nn.SiLU(), nn.Linear(width, width))  # noqa: E501

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.mlp(sinusoidal_embedding(t * 1000.0, self.width))


class Attention(nn.Module):
    """
    Multi-head self-attention with optional QK normalization.

    ``qk_hook``, when set, is called with the (q, k) tensors that enter the
    attention product.
    """

    def __init__(self, width: int, heads: int, qk_normalization: bool = True):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.qk_normalization = qk_normalization
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        if qk_normalization:
            self.logit_scale = nn.Parameter(torch.full((heads, 1, 1), math.log(10.0)))  # noqa: E501
        self.qk_hook: Optional[Callable[[torch.Tensor, torch.Tensor], None]] = None  # noqa: E501

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = rearrange(self.qkv(x), "b n (three h d) -> three b h n d",
                            three=3, h=self.heads)
        if self.qk_normalization:
            q = nn.functional.normalize(q, dim=-1, eps=1e-6)
            k = nn.functional.normalize(k, dim=-1, eps=1e-6)
            scale = self.logit_scale.exp()
        else:
            scale = self.head_dim ** -0.5
        if self.qk_hook is not None:
            self.qk_hook(q, k)
        attn = torch.softmax((q @ k.transpose(-2, -1)) * scale, dim=-1)
        out = rearrange(attn @ v, "b h n d -> b n (h d)")
        return self.proj(out)


class FeedForward(nn.Module):
    def __init__(self, width: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(width, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        width = config.model_width
        self.norm1 = nn.LayerNorm(width)
        self.attn = Attention(width, config.heads, config.qk_normalization)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = FeedForward(width, int(round(width * config.mlp_ratio)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class Denoiser(nn.Module):
    """
    Velocity-predicting transformer over (B, T', H', W', C_lat) latents.
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        width = config.model_width
        self.in_proj = nn.Linear(config.latent_channels, width)
        self.time_embedding = TimeEmbedding(width)
        # row NULL_CLASS_INDEX is the unconditional embedding
        self.class_embedding = nn.Embedding(NUM_CLASSES + 1, width)
        self.blocks = nn.ModuleList([Block(config) for _ in range(config.layers)])  # noqa: E501
        self.norm_out = nn.LayerNorm(width)
        self.proj_out = nn.Linear(width, config.latent_channels)

    @property
    def num_layers(self) -> int:
        return len(self.blocks)

    def check_skip_layers(self, skip_layers: AbstractSet[int]) -> None:
        bad = sorted(i for i in skip_layers if not 0 <= int(i) < self.num_layers)  # noqa: E501
        if bad:
            raise InvalidLayerIndex(
                f"skip layers {bad} out of range for a {self.num_layers}-layer denoiser")  # noqa: E501

    def forward(self,
                x: torch.Tensor,
                t: torch.Tensor,
                class_index: torch.Tensor,
                frame_mask: Optional[torch.Tensor] = None,
                skip_layers: AbstractSet[int] = frozenset()) -> torch.Tensor:
        """
        Args:
            x (torch.Tensor): (B, T', H', W', C_lat) noised latents.
            t (torch.Tensor): (B,) flow times in [0, 1].
            class_index (torch.Tensor): (B,) embedding rows.
            frame_mask (torch.Tensor, optional): (B, T') 1.0 on clean frames,
                which are embedded at t = 0.
            skip_layers (AbstractSet[int]): blocks that are not applied.

        Returns:
            torch.Tensor: velocity, same shape as x.
        """
        if x.ndim != 5 or x.shape[-1] != self.config.latent_channels:
            raise ShapeError(
                f"expected (B, T', H', W', {self.config.latent_channels}) latents, "  # noqa: E501
                f"got {tuple(x.shape)}")
        self.check_skip_layers(skip_layers)
        b, frames, height, width, _ = x.shape
        t = t.to(x.dtype)
        if frame_mask is None:
            frame_mask = torch.zeros(b, frames, dtype=x.dtype, device=x.device)
        t_frame = t[:, None] * (1.0 - frame_mask.to(x.dtype))

        h = self.in_proj(x)
        h = h + positional_embedding_3d(frames, height, width, self.config.model_width,  # noqa: E501
                                        dtype=x.dtype, device=x.device)
        h = h + self.time_embedding(t_frame)[:, :, None, None, :]
        tokens = rearrange(h, "b t h w d -> b (t h w) d")

        cond = self.class_embedding(class_index.to(x.device)) + self.time_embedding(t)  # noqa: E501
        seq = torch.cat([cond[:, None, :], tokens], dim=1)
        for i, block in enumerate(self.blocks):
            if i in skip_layers:
                continue
            seq = block(seq)
        out = self.proj_out(self.norm_out(seq[:, 1:]))
        return rearrange(out, "b (t h w) c -> b t h w c", t=frames, h=height, w=width)  # noqa: E501


# (x_t, t, cond, skip_layers) -> velocity, for one unbatched latent
VelocityFn = Callable[[torch.Tensor, float, ConditioningSignal, AbstractSet[int]], torch.Tensor]  # noqa: E501


def denoise(model: Denoiser,
            x_t: torch.Tensor,
            t: float,
            cond: ConditioningSignal,
            skip_layers: AbstractSet[int] = frozenset()) -> torch.Tensor:
    """
    Velocity for a single latent.

    Args:
        model (Denoiser): denoiser, with or without an attached adapter.
        x_t (torch.Tensor): (T', H', W', C_lat) noised latent.
        t (float): flow time in [0, 1].
        cond (ConditioningSignal): conditioning.
        skip_layers (AbstractSet[int]): blocks to skip.

    Raises:
        ShapeError: if x_t does not fit the model.
        InvalidLayerIndex: if a skip index names no block.

    Returns:
        torch.Tensor: velocity with the shape of x_t.
    """
    if x_t.ndim != 4:
        raise ShapeError(f"expected a (T', H', W', C) latent, got {tuple(x_t.shape)}")  # noqa: E501
    if not 0.0 <= float(t) <= 1.0:
        raise PreconditionError(f"t must be in [0, 1], got {t}")
    frames = x_t.shape[0]
    index = torch.tensor([cond.class_index], dtype=torch.long)
    mask = cond.frame_mask(frames).to(device=x_t.device, dtype=x_t.dtype)[None]  # noqa: E501
    time = torch.full((1,), float(t), dtype=x_t.dtype, device=x_t.device)
    return model(x_t[None], time, index, mask, skip_layers)[0]


def embed_condition(model: Denoiser, cond: ConditioningSignal) -> torch.Tensor:
    """
    Class embedding of a conditioning signal.

    Raises:
        UnknownClassId: if the class triple is outside the taxonomy.

    Returns:
        torch.Tensor: (model_width,) vector; the null condition has its own
            learned row.
    """
    index = torch.tensor([cond.class_index], dtype=torch.long,
                         device=model.class_embedding.weight.device)
    return model.class_embedding(index)[0]


def apply_first_frame_conditioning(x_t: torch.Tensor,
                                   cond: ConditioningSignal) -> torch.Tensor:
    """
    Replace latent frame 0 with the clean conditioning frame.

    Args:
        x_t (torch.Tensor): (T', H', W', C) latent, optionally batched.
        cond (ConditioningSignal): image-to-video conditioning.

    Raises:
        PreconditionError: if cond carries no first frame.
        ShapeError: if the conditioning frame does not fit x_t.

    Returns:
        torch.Tensor: new tensor, frames >= 1 untouched.
    """
    if cond.first_frame_latent is None:
        raise PreconditionError("first-frame conditioning needs cond.first_frame_latent")  # noqa: E501
    frame = cond.first_frame_latent
    if tuple(frame.shape) != (1,) + tuple(x_t.shape[-3:]):
        raise ShapeError(
            f"first frame latent {tuple(frame.shape)} does not fit latent "
            f"{tuple(x_t.shape)}")
    out = x_t.clone()
    out[..., 0, :, :, :] = frame[0].to(dtype=x_t.dtype, device=x_t.device)
    return out


def save_denoiser(model: Denoiser, path: str | Path) -> Path:
    return save_checkpoint(model.state_dict(), path, DENOISER_KIND, model.config.to_dict())  # noqa: E501


def load_denoiser(path: str | Path) -> Denoiser:
    """
    Raises:
        CorruptCheckpoint: if the tensors do not fit the saved config.
    """
    tensors, saved = load_checkpoint(path, DENOISER_KIND)
    try:
        model = Denoiser(DenoiserConfig(**saved))
        model.load_state_dict(tensors, strict=True)
    except (TypeError, RuntimeError, ConfigError) as e:
        raise CorruptCheckpoint(f"{path}: tensors do not fit the saved denoiser config ({e})") from e  # noqa: E501
    model.eval()
    return model
