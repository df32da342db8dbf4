"""
Frozen oracle for synthetic clips: recovers (quality, task) from the needle
trajectory without looking at any model.
"""

__all__ = [
    "OracleConfig",
    "needle_track",
    "trajectory_jerk",
    "oracle_classify",
    "calibrate_jerk_threshold",
]

import dataclasses
import math
from typing import Sequence

import numpy as np
import torch

from suturing_wm.errors import NoTrackableObject
from suturing_wm.logger import logger
from suturing_wm.simulator import NEEDLE_CHANNEL, ToyClipSpec, synthesize_toy_clip
from suturing_wm.taxonomy import Quality, SubStitchAnnotation, Task, all_classes


@dataclasses.dataclass(frozen=True)
class OracleConfig:
    """
    Attributes
    ----------
    jerk_threshold: Mean per-frame jerk (in units of the short frame side)
        above which a clip is non-ideal. Calibrated once and frozen.
    intensity_threshold: Needle-channel intensity in [0, 1] a pixel needs
        to count as part of the blob.
    min_pixels: Minimum blob size per frame.
    edge_frames: Frames averaged at each end for the net displacement.
    """
    jerk_threshold: float = 0.03
    intensity_threshold: float = 0.5
    min_pixels: int = 3
    edge_frames: int = 3


def needle_track(clip: torch.Tensor, config: OracleConfig = OracleConfig()) -> np.ndarray:  # noqa: E501
    """
    Intensity-weighted needle centroid per frame.

    Args:
        clip (torch.Tensor): (T, H, W, 3) values in [-1, 1].
        config (OracleConfig): oracle settings.

    Raises:
        NoTrackableObject: if any frame has too few needle pixels.

    Returns:
        np.ndarray: (T, 2) centroids (x, y) in pixels.
    """
    needle = ((clip[..., NEEDLE_CHANNEL].detach().to(torch.float64).cpu().numpy() + 1.0) / 2.0)  # noqa: E501
    thr = config.intensity_threshold
    weights = np.clip((needle - thr) / (1.0 - thr), 0.0, 1.0)
    counts = (weights > 0).sum(axis=(1, 2))
    if len(counts) == 0 or counts.min() < config.min_pixels:
        raise NoTrackableObject(
            f"needle blob missing: min {int(counts.min(initial=0))} pixels per frame, "  # noqa: E501
            f"need {config.min_pixels}")
    height, width = needle.shape[1:]
    yy, xx = np.mgrid[0:height, 0:width]
    total = weights.sum(axis=(1, 2))
    cx = (weights * xx).sum(axis=(1, 2)) / total
    cy = (weights * yy).sum(axis=(1, 2)) / total
    return np.stack([cx, cy], axis=1)


def trajectory_jerk(track: np.ndarray, scale: float) -> float:
    """
    Mean norm of the third finite difference of a centroid track.

    Args:
        track (np.ndarray): (T, 2) centroids in pixels.
        scale (float): length unit, the short frame side.

    Returns:
        float: 0.0 for tracks shorter than four frames.
    """
    if len(track) < 4:
        return 0.0
    jerk = np.diff(track / scale, n=3, axis=0)
    return float(np.linalg.norm(jerk, axis=1).mean())


def oracle_classify(clip: torch.Tensor,
                    config: OracleConfig = OracleConfig()) -> tuple[Quality, Task]:  # noqa: E501
    """
    Classify a synthetic clip by its needle trajectory.

    The task is the sign of the net horizontal centroid displacement
    (rightward is railroad), the quality comes from the jerk statistic
    against the frozen threshold.

    Args:
        clip (torch.Tensor): (T, H, W, 3) values in [-1, 1].
        config (OracleConfig): frozen oracle settings.

    Raises:
        NoTrackableObject: if blob extraction fails.

    Returns:
        tuple[Quality, Task]: recovered labels.
    """
    track = needle_track(clip, config)
    k = max(1, min(config.edge_frames, len(track) // 2))
    dx = track[-k:, 0].mean() - track[:k, 0].mean()
    task = Task.RAILROAD if dx >= 0 else Task.BACKHAND
    jerk = trajectory_jerk(track, float(min(clip.shape[1], clip.shape[2])))
    quality = Quality.NON_IDEAL if jerk > config.jerk_threshold else Quality.IDEAL  # noqa: E501
    return quality, task


def calibrate_jerk_threshold(
        seeds_per_class: int = 100,
        width: int = 64,
        height: int = 64,
        frame_count: int = 17,
        config: OracleConfig = OracleConfig(),
        seeds: Sequence[int] | None = None) -> float:
    """
    Calibrate the jerk threshold on generator output.

    Returns the geometric mean of the mean ideal jerk and the mean
    non-ideal jerk. The result is meant to be stored in config once; the
    oracle never recalibrates itself.
    """
    seeds = list(seeds) if seeds is not None else list(range(seeds_per_class))
    jerks: dict[Quality, list[float]] = {Quality.IDEAL: [], Quality.NON_IDEAL: []}  # noqa: E501
    for quality, action, task in all_classes():
        annotation = SubStitchAnnotation("calibration", task, action, quality, 0.0, 1.0)  # noqa: E501
        for seed in seeds:
            clip = synthesize_toy_clip(ToyClipSpec(annotation, seed, width, height, frame_count))  # noqa: E501
            track = needle_track(clip, config)
            jerks[quality].append(trajectory_jerk(track, float(min(width, height))))  # noqa: E501
    ideal = float(np.mean(jerks[Quality.IDEAL]))
    non_ideal = float(np.mean(jerks[Quality.NON_IDEAL]))
    threshold = math.sqrt(ideal * non_ideal)
    logger.info(f"Calibrated jerk threshold {threshold:.5f} (ideal mean {ideal:.5f}, non-ideal mean {non_ideal:.5f})")  # noqa  # pylint: disable=logging-fstring-interpolation
    return threshold
