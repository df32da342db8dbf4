__all__ = ["ResolutionBucket", "TrainingBucket", "parse_bucket"]

import dataclasses
import re
from enum import Enum

from suturing_wm.errors import ConfigError, ShapeError


@dataclasses.dataclass(frozen=True)
class ResolutionBucket:
    """
    Dataclass for a training / generation resolution bucket

    Attributes
    ----------

    width: Frame width in pixels.
    height: Frame height in pixels.
    frame_count: Number of frames.
    """
    width: int
    height: int
    frame_count: int

    def __str__(self):
        return f"{self.width}x{self.height}x{self.frame_count}"

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.width, self.height, self.frame_count

    @property
    def video_shape(self) -> tuple[int, int, int, int]:
        """(T, H, W, C) of a pixel clip in this bucket."""
        return self.frame_count, self.height, self.width, 3

    def scaled(self, spatial_divisor: int, multiple: int = 8) -> "ResolutionBucket":
        """
        Shrink the spatial size, keeping the frame count.

        Args:
            spatial_divisor (int): factor to divide width and height by.
            multiple (int): round each side to the nearest positive multiple.

        Returns:
            ResolutionBucket: the scaled bucket.
        """
        def _round(v: int) -> int:
            return max(multiple, int(round(v / spatial_divisor / multiple)) * multiple)  # noqa: E501
        return ResolutionBucket(_round(self.width), _round(self.height),
                                self.frame_count)

    def validate(self, spatial_compression: int, temporal_compression: int) -> None:  # noqa: E501
        """
        Check the bucket against the codec shape laws.

        Raises:
            ShapeError: when W or H is not divisible by the spatial factor, or
                the frame count is not 1 modulo the temporal factor.
        """
        if self.width % spatial_compression or self.height % spatial_compression:  # noqa: E501
            raise ShapeError(
                f"bucket {self}: width and height must be divisible by "
                f"f_s={spatial_compression}")
        if (self.frame_count - 1) % temporal_compression:
            raise ShapeError(
                f"bucket {self}: frame_count-1 must be divisible by "
                f"f_t={temporal_compression}")


class TrainingBucket(Enum):
    """
    Enum class for the full-scale resolution buckets

    Attributes
    ----------

    T2V: Text-to-video training resolution.
    I2V_LANDSCAPE: Image-to-video bucket, 49 frames.
    I2V_WIDE: Image-to-video bucket, 65 frames.
    I2V_LONG: Image-to-video bucket, 121 frames.
    """
    T2V = ResolutionBucket(768, 512, 49)
    I2V_LANDSCAPE = ResolutionBucket(1024, 576, 49)
    I2V_WIDE = ResolutionBucket(960, 444, 65)
    I2V_LONG = ResolutionBucket(512, 288, 121)

    def __str__(self):
        return str(self.value)


_BUCKET_RE = re.compile(r"\s*(\d+)\s*[xX×]\s*(\d+)\s*[xX×]\s*(\d+)\s*")


def parse_bucket(text: str, field: str = "bucket") -> ResolutionBucket:
    """
    Parse the W x H x T text form used on the command line.

    Args:
        text (str): e.g. "64x64x17".
        field (str): config field reported on error.

    Raises:
        ConfigError: if the text is not three positive integers.
    """
    m = _BUCKET_RE.fullmatch(str(text))
    if m is None:
        raise ConfigError(field, f"expected WxHxT, got {text!r}")
    w, h, t = (int(g) for g in m.groups())
    if min(w, h, t) < 1:
        raise ConfigError(field, f"all bucket dimensions must be positive, got {text!r}")  # noqa: E501
    return ResolutionBucket(w, h, t)
