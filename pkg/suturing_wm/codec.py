"""
Compressive video autoencoder.

Pixel clips (T, H, W, 3) map to latents (T', H', W', C_lat) with
T' = 1 + (T - 1) / f_t, H' = H / f_s and W' = W / f_s. Frame 0 gets its own
latent frame, every following group of f_t frames shares one, so latent
frame 0 depends on pixel frame 0 only.
"""

__all__ = [
    "CodecConfig",
    "VideoCodec",
    "CodecTrainResult",
    "latent_shape",
    "encode",
    "decode",
    "train_codec",
    "save_codec",
    "load_codec",
]

import dataclasses
from pathlib import Path
from typing import Sequence

import torch
from einops import rearrange
from torch import nn
from tqdm import tqdm

from suturing_wm.checkpoint import check_config, load_checkpoint, save_checkpoint
from suturing_wm.dataset import DatasetManifest
from suturing_wm.errors import ConfigError, CorruptCheckpoint, PreconditionError, ShapeError  # noqa: E501
from suturing_wm.logger import logger

CODEC_KIND = "codec"


@dataclasses.dataclass(frozen=True)
class CodecConfig:
    """
    Attributes
    ----------
    spatial_compression: f_s, pixels per latent cell along each side.
    temporal_compression: f_t, pixel frames per latent frame after frame 0.
    latent_channels: C_lat.
    hidden_channels: Width of the token-local encoder and decoder MLPs.
    parameter_budget: Upper bound on the codec parameter count.
    """
    spatial_compression: int = 8
    temporal_compression: int = 4
    latent_channels: int = 8
    hidden_channels: int = 128
    parameter_budget: int = 1_000_000

    def __post_init__(self):
        for field in ("spatial_compression", "temporal_compression",
                      "latent_channels", "hidden_channels", "parameter_budget"):  # noqa: E501
            if int(getattr(self, field)) < 1:
                raise ConfigError(f"codec.{field}", f"must be >= 1, got {getattr(self, field)}")  # noqa: E501

    @property
    def patch_dim(self) -> int:
        return self.spatial_compression ** 2 * 3

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def latent_shape(video_shape: Sequence[int], config: CodecConfig) -> tuple[int, int, int, int]:  # noqa: E501
    """
    Latent shape of a pixel clip shape.

    Args:
        video_shape (Sequence[int]): (T, H, W, 3).
        config (CodecConfig): codec config.

    Raises:
        ShapeError: naming the violated divisibility.

    Returns:
        tuple[int, int, int, int]: (T', H', W', C_lat).
    """
    if len(video_shape) != 4 or video_shape[-1] != 3:
        raise ShapeError(f"expected a (T, H, W, 3) clip, got {tuple(video_shape)}")  # noqa: E501
    t, h, w, _ = (int(s) for s in video_shape)
    fs, ft = config.spatial_compression, config.temporal_compression
    if t < 1:
        raise ShapeError(f"clip needs at least one frame, got T={t}")
    if h % fs:
        raise ShapeError(f"height {h} is not divisible by f_s={fs}")
    if w % fs:
        raise ShapeError(f"width {w} is not divisible by f_s={fs}")
    if (t - 1) % ft:
        raise ShapeError(f"frame count {t}: T-1={t - 1} is not divisible by f_t={ft}")  # noqa: E501
    return 1 + (t - 1) // ft, h // fs, w // fs, config.latent_channels


def _mlp(d_in: int, hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, hidden), nn.GELU(), nn.Linear(hidden, d_out))  # noqa: E501


class VideoCodec(nn.Module):
    """
    Token-local autoencoder over spatiotemporal patches.

    Latents are multiplied by ``latent_scale`` after encoding and divided by
    it before decoding; train_codec sets it so training latents have unit
    standard deviation.
    """

    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config
        ft, c = config.temporal_compression, config.latent_channels
        hidden, patch = config.hidden_channels, config.patch_dim
        self.first_proj = _mlp(patch, hidden, c)
        self.group_proj = _mlp(ft * patch, hidden, c)
        self.first_out = _mlp(c, hidden, patch)
        self.group_out = _mlp(c, hidden, ft * patch)
        self.register_buffer("latent_scale", torch.ones(()))

        count = sum(p.numel() for p in self.parameters())
        if count > config.parameter_budget:
            raise ConfigError(
                "codec.parameter_budget",
                f"codec needs {count} parameters, budget is {config.parameter_budget}")  # noqa: E501

    def encode(self, clip: torch.Tensor) -> torch.Tensor:
        """
        Args:
            clip (torch.Tensor): (T, H, W, 3) or batched (B, T, H, W, 3).

        Returns:
            torch.Tensor: (T', H', W', C_lat), batched if the input was.
        """
        batched = clip.ndim == 5
        x = clip if batched else clip.unsqueeze(0)
        if x.ndim != 5:
            raise ShapeError(f"expected a (T, H, W, 3) clip, got {tuple(clip.shape)}")  # noqa: E501
        latent_shape(x.shape[1:], self.config)
        fs, ft = self.config.spatial_compression, self.config.temporal_compression  # noqa: E501

        x = rearrange(x, "b t (h p) (w q) c -> b t h w (p q c)", p=fs, q=fs)
        parts = [self.first_proj(x[:, :1])]
        if x.shape[1] > 1:
            groups = rearrange(x[:, 1:], "b (n f) h w d -> b n h w (f d)", f=ft)  # noqa: E501
            parts.append(self.group_proj(groups))
        z = torch.cat(parts, dim=1) * self.latent_scale
        return z if batched else z[0]

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        """
        Args:
            latent (torch.Tensor): (T', H', W', C_lat) or batched.

        Returns:
            torch.Tensor: (T, H, W, 3) in [-1, 1], batched if the input was.
        """
        batched = latent.ndim == 5
        z = latent if batched else latent.unsqueeze(0)
        if z.ndim != 5 or z.shape[-1] != self.config.latent_channels:
            raise ShapeError(
                f"expected a (T', H', W', {self.config.latent_channels}) latent, "  # noqa: E501
                f"got {tuple(latent.shape)}")
        fs, ft = self.config.spatial_compression, self.config.temporal_compression  # noqa: E501

        z = z / self.latent_scale
        parts = [self.first_out(z[:, :1])]
        if z.shape[1] > 1:
            groups = self.group_out(z[:, 1:])
            parts.append(rearrange(groups, "b n h w (f d) -> b (n f) h w d", f=ft))  # noqa: E501
        x = torch.tanh(torch.cat(parts, dim=1))
        x = rearrange(x, "b t h w (p q c) -> b t (h p) (w q) c", p=fs, q=fs, c=3)  # noqa: E501
        return x if batched else x[0]

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(clip))


def encode(clip: torch.Tensor, codec: VideoCodec) -> torch.Tensor:
    return codec.encode(clip)


def decode(latent: torch.Tensor, codec: VideoCodec) -> torch.Tensor:
    return codec.decode(latent)


@dataclasses.dataclass
class CodecTrainResult:
    """
    Attributes
    ----------
    codec: Trained codec in eval mode.
    losses: Pixel reconstruction MSE per step.
    """
    codec: VideoCodec
    losses: list[float]


def _group_by_shape(clips: Sequence[torch.Tensor]) -> list[list[int]]:
    groups: dict[tuple[int, ...], list[int]] = {}
    for i, clip in enumerate(clips):
        groups.setdefault(tuple(clip.shape), []).append(i)
    return list(groups.values())


def train_codec(
        clips: DatasetManifest | Sequence[torch.Tensor],
        config: CodecConfig,
        steps: int,
        seed: int = 0,
        learning_rate: float = 2e-3,
        batch_size: int = 4,
        device: str | torch.device = "cpu") -> CodecTrainResult:
    """
    Train a codec on pixel reconstruction.

    Each step draws one clip, fills the batch with clips of the same shape
    and takes an Adam step on the pixel MSE. Initialisation and batch
    draws depend only on ``seed``.

    Args:
        clips (DatasetManifest | Sequence[torch.Tensor]): training clips.
        config (CodecConfig): codec config.
        steps (int): optimisation steps, at least 1.
        seed (int): seed of initialisation and batch draws.
        learning_rate (float): Adam learning rate.
        batch_size (int): clips per step.
        device (str | torch.device): training device.

    Returns:
        CodecTrainResult: codec and per-step loss curve.
    """
    if steps < 1:
        raise PreconditionError(f"steps must be >= 1, got {steps}")
    if isinstance(clips, DatasetManifest):
        clips = [record.load() for record in clips]
    clips = [c.to(device=device, dtype=torch.float32) for c in clips]
    if not clips:
        raise PreconditionError("train_codec needs at least one clip")
    for clip in clips:
        latent_shape(clip.shape, config)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        codec = VideoCodec(config)
    codec.to(device)
    codec.train()
    optimizer = torch.optim.Adam(codec.parameters(), lr=learning_rate)
    generator = torch.Generator().manual_seed(seed)
    owner = {i: g for g in _group_by_shape(clips) for i in g}

    logger.info(f"Training codec for {steps} steps on {len(clips)} clips")  # noqa  # pylint: disable=logging-fstring-interpolation
    losses: list[float] = []
    for _ in tqdm(range(steps), desc="train-codec", leave=False):
        anchor = int(torch.randint(len(clips), (1,), generator=generator))
        group = owner[anchor]
        picks = torch.randint(len(group), (batch_size - 1,), generator=generator).tolist()  # noqa: E501
        batch = torch.stack([clips[anchor]] + [clips[group[p]] for p in picks])
        loss = torch.mean((codec(batch) - batch) ** 2)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        losses.append(float(loss.detach()))

    codec.eval()
    with torch.no_grad():
        latents = torch.cat([codec.encode(c).reshape(-1) for c in clips])
        codec.latent_scale.fill_(1.0 / max(float(latents.std()), 1e-6))
    logger.info(f"Codec trained: loss {losses[0]:.5f} -> {losses[-1]:.5f}, latent scale {float(codec.latent_scale):.4f}")  # noqa  # pylint: disable=logging-fstring-interpolation
    return CodecTrainResult(codec=codec, losses=losses)


def save_codec(codec: VideoCodec, path: str | Path) -> Path:
    return save_checkpoint(codec.state_dict(), path, CODEC_KIND, codec.config.to_dict())  # noqa: E501


def load_codec(path: str | Path, config: CodecConfig | None = None) -> VideoCodec:  # noqa: E501
    """
    Load a codec checkpoint.

    Args:
        path (str | Path): checkpoint file.
        config (CodecConfig | None): expected config. When given, every
            field must match the saved one.

    Raises:
        CorruptCheckpoint: on unreadable files, a field that differs from
            ``config``, or tensors that do not fit the saved config.
    """
    tensors, saved = load_checkpoint(path, CODEC_KIND)
    if config is not None:
        check_config(saved, config.to_dict(), CorruptCheckpoint, source=str(path))  # noqa: E501
    try:
        codec = VideoCodec(CodecConfig(**saved))
        codec.load_state_dict(tensors, strict=True)
    except (TypeError, RuntimeError, ConfigError) as e:
        raise CorruptCheckpoint(f"{path}: tensors do not fit the saved codec config ({e})") from e  # noqa: E501
    codec.eval()
    return codec
