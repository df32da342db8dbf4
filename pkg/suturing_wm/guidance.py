"""
Guided velocity: classifier-free guidance for text-to-video and
spatiotemporal skip guidance for image-to-video.
"""

__all__ = [
    "GuidanceMode",
    "GuidanceConfig",
    "default_skip_layers",
    "cfg_combine",
    "stg_combine",
    "guided_velocity",
    "as_velocity_fn",
]

import dataclasses
import functools
from enum import Enum
from typing import AbstractSet, Iterable

import torch

from suturing_wm.adapters import LoRAAdapter, attached
from suturing_wm.denoiser import ConditioningSignal, Denoiser, VelocityFn, denoise  # noqa: E501
from suturing_wm.errors import InvalidGuidance, InvalidLayerIndex, ShapeError


class GuidanceMode(str, Enum):
    """
    Enum class for the guidance applied at sampling time

    Attributes
    ----------
    NONE: Conditional velocity only.
    CFG: Classifier-free guidance against the null condition.
    STG: Skip guidance against a forward pass with layers skipped.
    """
    NONE = "none"
    CFG = "cfg"
    STG = "stg"

    def __str__(self):
        return self.value


def default_skip_layers(num_layers: int) -> frozenset[int]:
    """
    Middle third of the blocks, never empty for num_layers >= 1.
    """
    third = num_layers // 3
    return frozenset(range(third, num_layers - third))


@dataclasses.dataclass(frozen=True)
class GuidanceConfig:
    """
    Attributes
    ----------
    mode: none, cfg or stg.
    scale: Guidance scale.
    skip_layers: Blocks skipped by the weak branch (stg only).
    """
    mode: GuidanceMode = GuidanceMode.NONE
    scale: float = 1.0
    skip_layers: frozenset[int] = frozenset()

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", GuidanceMode(self.mode))
        except ValueError as e:
            raise InvalidGuidance(f"unknown guidance mode {self.mode!r}") from e
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "skip_layers", frozenset(int(i) for i in self.skip_layers))  # noqa: E501

    @classmethod
    def cfg(cls, scale: float = 3.0) -> "GuidanceConfig":
        return cls(GuidanceMode.CFG, scale)

    @classmethod
    def stg(cls, scale: float = 1.0, skip_layers: Iterable[int] = ()) -> "GuidanceConfig":  # noqa: E501
        return cls(GuidanceMode.STG, scale, frozenset(skip_layers))

    def validate(self, num_layers: int | None = None) -> None:
        """
        Raises:
            InvalidGuidance: if stg has no skip layers.
            InvalidLayerIndex: if a skip layer names no block.
        """
        if self.mode is GuidanceMode.STG and not self.skip_layers:
            raise InvalidGuidance("stg guidance needs a nonempty skip_layers set")  # noqa: E501
        if num_layers is not None:
            bad = sorted(i for i in self.skip_layers if not 0 <= i < num_layers)
            if bad:
                raise InvalidLayerIndex(
                    f"skip layers {bad} out of range for {num_layers} blocks")

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "scale": self.scale,
                "skip_layers": sorted(self.skip_layers)}


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"velocity shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")  # noqa: E501


def cfg_combine(v_cond: torch.Tensor, v_uncond: torch.Tensor, scale: float) -> torch.Tensor:  # noqa: E501
    """v_uncond + scale * (v_cond - v_uncond)"""
    _check_shapes(v_cond, v_uncond)
    if scale == 1.0:
        return v_cond.clone()
    if scale == 0.0:
        return v_uncond.clone()
    return v_uncond + scale * (v_cond - v_uncond)


def stg_combine(v_cond: torch.Tensor, v_skip: torch.Tensor, scale: float) -> torch.Tensor:  # noqa: E501
    """v_cond + scale * (v_cond - v_skip)"""
    _check_shapes(v_cond, v_skip)
    if scale == 0.0:
        return v_cond.clone()
    return v_cond + scale * (v_cond - v_skip)


def as_velocity_fn(model: Denoiser | VelocityFn) -> VelocityFn:
    if isinstance(model, Denoiser):
        return functools.partial(denoise, model)
    return model


def guided_velocity(
        model: Denoiser | VelocityFn,
        x_t: torch.Tensor,
        t: float,
        cond: ConditioningSignal,
        config: GuidanceConfig,
        adapter: LoRAAdapter | None = None) -> torch.Tensor:
    """
    Guided velocity for one latent.

    none runs one conditional pass. cfg adds a pass with the class replaced
    by the null condition (first-frame conditioning is kept) and combines
    with cfg_combine. stg adds a conditional pass with config.skip_layers
    skipped and combines with stg_combine.

    Args:
        model (Denoiser | VelocityFn): denoiser or single-latent velocity fn.
        x_t (torch.Tensor): (T', H', W', C) noised latent.
        t (float): flow time.
        cond (ConditioningSignal): conditioning.
        config (GuidanceConfig): guidance settings.
        adapter (LoRAAdapter | None): attached to a Denoiser for the call.

    Raises:
        InvalidGuidance: if stg has no skip layers.

    Returns:
        torch.Tensor: guided velocity.
    """
    config.validate(model.num_layers if isinstance(model, Denoiser) else None)
    if adapter is not None and isinstance(model, Denoiser):
        with attached(model, adapter):
            return guided_velocity(model, x_t, t, cond, config)

    velocity = as_velocity_fn(model)
    empty: AbstractSet[int] = frozenset()
    v_cond = velocity(x_t, t, cond, empty)
    if config.mode is GuidanceMode.NONE:
        return v_cond
    if config.mode is GuidanceMode.CFG:
        v_uncond = velocity(x_t, t, cond.dropped(), empty)
        return cfg_combine(v_cond, v_uncond, config.scale)
    v_skip = velocity(x_t, t, cond, config.skip_layers)
    return stg_combine(v_cond, v_skip, config.scale)
