__all__ = [
    "ModelProfile",
    "ProfileInfo",
    "profile_info",
    "default_guidance",
]

from dataclasses import dataclass
from enum import Enum

from suturing_wm.buckets import ResolutionBucket, TrainingBucket
from suturing_wm.guidance import GuidanceConfig, GuidanceMode, default_skip_layers  # noqa: E501


class ModelProfile(str, Enum):
    """
    Enum class for the base-model profile a run imitates

    Attributes
    ----------
    LTX_T2V: LTX-style text-to-video.
    LTX_I2V: LTX-style image-to-video.
    HUNYUAN_T2V: Hunyuan-style text-to-video.
    """
    LTX_T2V = "ltx-t2v"
    LTX_I2V = "ltx-i2v"
    HUNYUAN_T2V = "hunyuan-t2v"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class ProfileInfo:
    image_to_video: bool
    guidance_mode: GuidanceMode
    guidance_scale: float
    epochs: int
    buckets: tuple[ResolutionBucket, ...]


_PROFILES = {
    ModelProfile.LTX_T2V: ProfileInfo(
        image_to_video=False,
        guidance_mode=GuidanceMode.CFG,
        guidance_scale=3.0,
        epochs=3,
        buckets=(TrainingBucket.T2V.value,),
    ),
    ModelProfile.HUNYUAN_T2V: ProfileInfo(
        image_to_video=False,
        guidance_mode=GuidanceMode.CFG,
        guidance_scale=6.0,
        epochs=3,
        buckets=(TrainingBucket.T2V.value,),
    ),
    ModelProfile.LTX_I2V: ProfileInfo(
        image_to_video=True,
        guidance_mode=GuidanceMode.STG,
        guidance_scale=1.0,
        epochs=30,
        buckets=(TrainingBucket.I2V_LANDSCAPE.value,
                 TrainingBucket.I2V_WIDE.value,
                 TrainingBucket.I2V_LONG.value),
    ),
}


def profile_info(profile: ModelProfile | str) -> ProfileInfo:
    return _PROFILES[ModelProfile(profile)]


def default_guidance(profile: ModelProfile | str, num_layers: int) -> GuidanceConfig:  # noqa: E501
    """
    Guidance a profile samples with; stg skips the middle third of blocks.
    """
    info = profile_info(profile)
    if info.guidance_mode is GuidanceMode.STG:
        return GuidanceConfig.stg(info.guidance_scale, default_skip_layers(num_layers))  # noqa: E501
    return GuidanceConfig(info.guidance_mode, info.guidance_scale)
