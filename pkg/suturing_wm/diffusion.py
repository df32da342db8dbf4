"""
Flow matching: training objective, training loop and the Euler sampler.

The forward process interpolates between data x0 and noise x1:
    x_t = (1 - t) * x0 + t * x1
and the model learns the constant velocity v = x1 - x0. Sampling starts at
pure noise (t = 1) and integrates dx/dt = v back to t = 0.
"""

__all__ = [
    "TrainMode",
    "TrainConfig",
    "FlowMatchSample",
    "TrainResult",
    "flow_matching_loss",
    "smooth_losses",
    "train",
    "sample",
    "generate_video",
]

import contextlib
import dataclasses
import json
import math
import time
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import torch
from tqdm import tqdm

from suturing_wm.adapters import LoRAAdapter, LoRAConfig, attached, detach, inject  # noqa: E501
from suturing_wm.buckets import ResolutionBucket
from suturing_wm.codec import VideoCodec, latent_shape
from suturing_wm.dataset import DatasetManifest
from suturing_wm.denoiser import (
    ConditioningSignal,
    Denoiser,
    VelocityFn,
    apply_first_frame_conditioning,
)
from suturing_wm.errors import ConfigError, EmptyManifest, PreconditionError, ShapeError  # noqa: E501
from suturing_wm.guidance import GuidanceConfig, guided_velocity
from suturing_wm.logger import logger
from suturing_wm.taxonomy import parse_caption

# (x_t, t, class_index, frame_mask) -> velocity, all batched
BatchVelocityFn = Callable[[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]  # noqa: E501


class TrainMode(str, Enum):
    """
    Enum class for what training updates

    Attributes
    ----------
    FULL_FINETUNE: Every denoiser parameter.
    LORA: Only a freshly injected adapter; the base stays frozen.
    """
    FULL_FINETUNE = "full_finetune"
    LORA = "lora"

    def __str__(self):
        return self.value


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """
    Attributes
    ----------
    mode: full_finetune or lora.
    epochs: Passes over the manifest when steps is not set.
    batch_size: Latents per step.
    learning_rate: AdamW learning rate.
    weight_decay: AdamW weight decay.
    condition_dropout_prob: Probability of training a sample on the null
        condition.
    seed: Seed of adapter init, batch draws, t, noise and dropout.
    steps: Explicit step count, overrides epochs.
    """
    mode: TrainMode = TrainMode.LORA
    epochs: int = 3
    batch_size: int = 1
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    condition_dropout_prob: float = 0.1
    seed: int = 0
    steps: Optional[int] = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", TrainMode(self.mode))
        except ValueError as e:
            raise ConfigError("train.mode", f"unknown mode {self.mode!r}") from e
        if int(self.epochs) < 1:
            raise ConfigError("train.epochs", f"must be >= 1, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ConfigError("train.batch_size", f"must be >= 1, got {self.batch_size}")  # noqa: E501
        if not float(self.learning_rate) > 0:
            raise ConfigError("train.learning_rate", f"must be positive, got {self.learning_rate}")  # noqa: E501
        if not 0.0 <= float(self.condition_dropout_prob) <= 1.0:
            raise ConfigError("train.condition_dropout_prob",
                              f"must be in [0, 1], got {self.condition_dropout_prob}")  # noqa: E501
        if self.steps is not None and int(self.steps) < 1:
            raise ConfigError("train.steps", f"must be >= 1, got {self.steps}")

    def total_steps(self, dataset_size: int) -> int:
        if self.steps is not None:
            return int(self.steps)
        return self.epochs * math.ceil(dataset_size / self.batch_size)


@dataclasses.dataclass(frozen=True, eq=False)
class FlowMatchSample:
    """
    One point on the straight path between data and noise.

    Attributes
    ----------
    x0: Data latent.
    x1: Gaussian noise latent.
    t: Flow time, broadcastable against x0.
    x_t: (1 - t) * x0 + t * x1
    v_target: x1 - x0
    """
    x0: torch.Tensor
    x1: torch.Tensor
    t: torch.Tensor
    x_t: torch.Tensor
    v_target: torch.Tensor

    @classmethod
    def interpolate(cls, x0: torch.Tensor, x1: torch.Tensor,
                    t: torch.Tensor) -> "FlowMatchSample":
        if x0.shape != x1.shape:
            raise ShapeError(f"data {tuple(x0.shape)} and noise {tuple(x1.shape)} differ")  # noqa: E501
        t = t.to(x0.dtype)
        return cls(x0=x0, x1=x1, t=t, x_t=(1.0 - t) * x0 + t * x1, v_target=x1 - x0)  # noqa: E501


def flow_matching_loss(
        model: Denoiser | BatchVelocityFn,
        batch: Sequence[tuple[torch.Tensor, ConditioningSignal]],
        generator: torch.Generator,
        condition_dropout_prob: float = 0.1,
        t: Optional[torch.Tensor | float] = None,
        noise: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Flow-matching loss of a batch.

    For every sample a time t ~ U[0, 1], Gaussian noise and a dropout coin
    are drawn from ``generator`` in that order. Dropped samples are trained
    on the null condition. Image-to-video samples get their clean frame 0
    re-imposed, and the frames their mask flags as clean are left out of
    the loss. The loss is the squared velocity error summed over channels,
    averaged over the remaining latent positions and the batch.

    Args:
        model (Denoiser | BatchVelocityFn): velocity model.
        batch (Sequence[tuple[torch.Tensor, ConditioningSignal]]): clean
            latents (T', H', W', C) with their conditioning.
        generator (torch.Generator): CPU generator for all draws.
        condition_dropout_prob (float): null-condition probability.
        t (torch.Tensor | float, optional): fixed flow time(s) instead of draws.
        noise (torch.Tensor, optional): fixed (B, T', H', W', C) noise.

    Raises:
        PreconditionError: if the batch is empty.
        ShapeError: if the latents differ in shape.

    Returns:
        torch.Tensor: scalar loss.
    """
    if len(batch) == 0:
        raise PreconditionError("flow_matching_loss needs a nonempty batch")
    shapes = {tuple(x0.shape) for x0, _ in batch}
    if len(shapes) != 1:
        raise ShapeError(f"batch latents differ in shape: {sorted(shapes)}")
    x0 = torch.stack([x for x, _ in batch])
    b, frames = x0.shape[0], x0.shape[1]

    t_draw = torch.rand(b, generator=generator, dtype=torch.float64)
    x1_draw = torch.randn(x0.shape, generator=generator, dtype=torch.float64)
    drop = torch.rand(b, generator=generator, dtype=torch.float64) < condition_dropout_prob  # noqa: E501
    if t is not None:
        t_draw = torch.as_tensor(t, dtype=torch.float64).expand(b).clone()
    if noise is not None:
        if tuple(noise.shape) != tuple(x0.shape):
            raise ShapeError(f"noise {tuple(noise.shape)} does not fit latents {tuple(x0.shape)}")  # noqa: E501
        x1_draw = noise
    times = t_draw.to(device=x0.device, dtype=x0.dtype)
    x1 = x1_draw.to(device=x0.device, dtype=x0.dtype)

    conds = [c.dropped() if bool(d) else c for (_, c), d in zip(batch, drop)]
    fm = FlowMatchSample.interpolate(x0, x1, times.view(b, 1, 1, 1, 1))
    x_t = torch.stack([
        apply_first_frame_conditioning(x, c) if c.image_to_video else x
        for x, c in zip(fm.x_t, conds)
    ])
    mask = torch.stack([c.frame_mask(frames) for c in conds]).to(device=x0.device, dtype=x0.dtype)  # noqa: E501
    index = torch.tensor([c.class_index for c in conds], dtype=torch.long, device=x0.device)  # noqa: E501

    prediction = model(x_t, times, index, mask)
    error = ((prediction - fm.v_target) ** 2).sum(dim=-1)
    weight = (1.0 - mask)[:, :, None, None].expand_as(error)
    return (error * weight).sum() / weight.sum().clamp_min(1.0)


def smooth_losses(losses: Sequence[float], window: int = 20) -> list[float]:
    """Trailing moving average of a loss curve."""
    out, total = [], 0.0
    for i, loss in enumerate(losses):
        total += loss
        if i >= window:
            total -= losses[i - window]
        out.append(total / min(i + 1, window))
    return out


@dataclasses.dataclass
class TrainResult:
    """
    Attributes
    ----------
    denoiser: The trained (full_finetune) or untouched (lora) base model,
        with no adapter attached.
    adapter: Trained adapter in lora mode, None in full_finetune mode.
    losses: Loss per step.
    """
    denoiser: Denoiser
    adapter: Optional[LoRAAdapter]
    losses: list[float]


def _encode_manifest(manifest: DatasetManifest, codec: VideoCodec, image_to_video: bool,  # noqa: E501
                     device: torch.device) -> list[tuple[torch.Tensor, ConditioningSignal]]:  # noqa: E501
    items = []
    codec.eval()
    with torch.no_grad():
        for record in manifest:
            z = codec.encode(record.load().to(device))
            classes = record.annotation.classes
            if image_to_video:
                cond = ConditioningSignal.with_first_frame(classes, z[:1], z.shape[0])  # noqa: E501
            else:
                cond = ConditioningSignal(class_ids=classes)
            items.append((z, cond))
    return items


def train(
        manifest: DatasetManifest,
        codec: VideoCodec,
        denoiser: Denoiser,
        config: TrainConfig,
        lora: Optional[LoRAConfig] = None,
        image_to_video: bool = False,
        metrics_path: Optional[str | Path] = None) -> TrainResult:
    """
    Train the denoiser with the flow-matching loss.

    Clips are encoded once with the frozen codec. Each step draws one
    latent, fills the batch with latents of the same shape and takes an
    AdamW step. In full_finetune mode the denoiser is updated in place; in
    lora mode an adapter is injected, trained and detached again, leaving
    every base tensor untouched.

    Args:
        manifest (DatasetManifest): training clips.
        codec (VideoCodec): trained codec.
        denoiser (Denoiser): model to train.
        config (TrainConfig): training settings.
        lora (LoRAConfig, optional): adapter settings for lora mode.
        image_to_video (bool): condition every clip on its first frame.
        metrics_path (str | Path, optional): line-delimited metrics log
            (step, loss, seconds).

    Raises:
        EmptyManifest: if the manifest has no records.

    Returns:
        TrainResult: model, adapter and loss curve.
    """
    if len(manifest) == 0:
        raise EmptyManifest("cannot train on an empty manifest")
    device = next(denoiser.parameters()).device
    items = _encode_manifest(manifest, codec, image_to_video, device)
    steps = config.total_steps(len(items))

    groups: dict[tuple[int, ...], list[int]] = {}
    for i, (z, _) in enumerate(items):
        groups.setdefault(tuple(z.shape), []).append(i)

    adapter: Optional[LoRAAdapter] = None
    if config.mode is TrainMode.LORA:
        lora = lora or LoRAConfig()
        denoiser.requires_grad_(False)
        adapter = inject(denoiser, lora.targets or None, lora.rank, lora.alpha, config.seed)  # noqa: E501
        params = list(adapter.parameters())
    else:
        denoiser.requires_grad_(True)
        params = list(denoiser.parameters())
    optimizer = torch.optim.AdamW(params, lr=config.learning_rate,
                                  weight_decay=config.weight_decay)
    generator = torch.Generator().manual_seed(config.seed)

    metrics = open(metrics_path, "w", encoding="utf-8") if metrics_path else None  # noqa: E501  # pylint: disable=consider-using-with
    logger.info(f"Training denoiser ({config.mode}) for {steps} steps on {len(items)} clips")  # noqa  # pylint: disable=logging-fstring-interpolation
    losses: list[float] = []
    start = time.perf_counter()
    denoiser.train()
    try:
        for step in tqdm(range(steps), desc=f"train-{config.mode}", leave=False):  # noqa: E501
            anchor = int(torch.randint(len(items), (1,), generator=generator))
            group = groups[tuple(items[anchor][0].shape)]
            picks = torch.randint(len(group), (config.batch_size - 1,), generator=generator).tolist()  # noqa: E501
            batch = [items[anchor]] + [items[group[p]] for p in picks]
            loss = flow_matching_loss(denoiser, batch, generator, config.condition_dropout_prob)  # noqa: E501
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            value = float(loss.detach())
            losses.append(value)
            logger.debug(f"step {step} loss {value:.5f}")  # noqa  # pylint: disable=logging-fstring-interpolation
            if metrics is not None:
                metrics.write(json.dumps({"step": step, "loss": value,
                                          "seconds": time.perf_counter() - start}) + "\n")  # noqa: E501
    finally:
        if metrics is not None:
            metrics.close()
        if adapter is not None:
            detach(denoiser, adapter)
        denoiser.requires_grad_(True)
        denoiser.eval()

    smoothed = smooth_losses(losses)
    logger.info(f"Training finished: smoothed loss {smoothed[0]:.4f} -> {smoothed[-1]:.4f}")  # noqa  # pylint: disable=logging-fstring-interpolation
    return TrainResult(denoiser=denoiser, adapter=adapter, losses=losses)


def sample(
        model: Denoiser | VelocityFn,
        cond: ConditioningSignal,
        guidance: GuidanceConfig,
        steps: int,
        shape: Sequence[int],
        seed: int,
        adapter: Optional[LoRAAdapter] = None,
        noise: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Euler integration from noise (t = 1) to data (t = 0).

    With h = 1 / steps, step i evaluates the guided velocity at
    t = 1 - i * h and sets x <- x - h * v. Image-to-video conditioning
    re-imposes the clean frame 0 before the first step and after every step.

    Args:
        model (Denoiser | VelocityFn): denoiser or single-latent velocity fn.
        cond (ConditioningSignal): conditioning.
        guidance (GuidanceConfig): guidance settings.
        steps (int): number of Euler steps, at least 1.
        shape (Sequence[int]): latent shape (T', H', W', C).
        seed (int): seed of the starting noise.
        adapter (LoRAAdapter, optional): attached for the whole integration.
        noise (torch.Tensor, optional): explicit starting point.

    Raises:
        InvalidGuidance: if the guidance config is inconsistent.

    Returns:
        torch.Tensor: latent at t = 0.
    """
    if steps < 1:
        raise PreconditionError(f"steps must be >= 1, got {steps}")
    if len(shape) != 4:
        raise ShapeError(f"expected a (T', H', W', C) latent shape, got {tuple(shape)}")  # noqa: E501
    guidance.validate(model.num_layers if isinstance(model, Denoiser) else None)  # noqa: E501

    if isinstance(model, Denoiser):
        reference = next(model.parameters())
        device, dtype = reference.device, reference.dtype
    else:
        device, dtype = torch.device("cpu"), torch.float32
    if noise is not None:
        if tuple(noise.shape) != tuple(shape):
            raise ShapeError(f"noise {tuple(noise.shape)} does not match shape {tuple(shape)}")  # noqa: E501
        x = noise.clone().to(device=device)
    else:
        generator = torch.Generator().manual_seed(seed)
        x = torch.randn(tuple(shape), generator=generator, dtype=torch.float32).to(device=device, dtype=dtype)  # noqa: E501

    if cond.image_to_video:
        x = apply_first_frame_conditioning(x, cond)
    h = 1.0 / steps
    was_training = isinstance(model, Denoiser) and model.training
    if isinstance(model, Denoiser):
        model.eval()
    context = attached(model, adapter) if isinstance(model, Denoiser) else contextlib.nullcontext()  # noqa: E501
    with torch.no_grad(), context:
        for i in range(steps):
            t = 1.0 - i * h
            v = guided_velocity(model, x, t, cond, guidance)
            x = x - h * v
            if cond.image_to_video:
                x = apply_first_frame_conditioning(x, cond)
    if was_training:
        model.train()
    return x


def generate_video(
        model: Denoiser,
        codec: VideoCodec,
        caption: str,
        guidance: GuidanceConfig,
        steps: int,
        bucket: ResolutionBucket,
        seed: int,
        adapter: Optional[LoRAAdapter] = None,
        first_frame: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Caption (and optional first frame) to pixel clip.

    Args:
        model (Denoiser): denoiser.
        codec (VideoCodec): codec matching the denoiser's latents.
        caption (str): sub-stitch caption.
        guidance (GuidanceConfig): guidance settings.
        steps (int): sampler steps.
        bucket (ResolutionBucket): output resolution and length.
        seed (int): sampler seed.
        adapter (LoRAAdapter, optional): adapter used while sampling.
        first_frame (torch.Tensor, optional): (H, W, 3) frame in [-1, 1];
            switches to image-to-video.

    Raises:
        MalformedCaption: if the caption does not follow the template.
        ShapeError: if the bucket or the first frame breaks a shape law.

    Returns:
        torch.Tensor: (T, H, W, 3) clip in [-1, 1].
    """
    classes = parse_caption(caption)
    shape = latent_shape(bucket.video_shape, codec.config)
    if first_frame is not None:
        expected = (bucket.height, bucket.width, 3)
        if tuple(first_frame.shape) != expected:
            raise ShapeError(f"first frame {tuple(first_frame.shape)} does not fit bucket {bucket}")  # noqa: E501
        with torch.no_grad():
            z0 = codec.encode(first_frame[None].to(next(codec.parameters()).device))  # noqa: E501
        cond = ConditioningSignal.with_first_frame(classes, z0, shape[0])
    else:
        cond = ConditioningSignal(class_ids=classes)
    latent = sample(model, cond, guidance, steps, shape, seed, adapter=adapter)
    with torch.no_grad():
        video = codec.decode(latent.to(next(codec.parameters()).dtype))
    return video.clamp(-1.0, 1.0)
