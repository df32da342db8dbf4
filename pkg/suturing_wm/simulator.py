"""
Procedural suturing clips.

Renders a curved needle arc (red channel), a horizontal tissue line (green
channel) and a flat background (blue channel). The action selects the motion
phase, the task selects the travel direction and the quality selects between
a smooth rotating circular-arc path and a jittery straight non-rotating one.
"""

__all__ = ["ToyClipSpec", "NeedlePath", "needle_path", "render_clip", "synthesize_toy_clip"]  # noqa: E501

import dataclasses
import math

import numpy as np
import torch

from suturing_wm.buckets import ResolutionBucket
from suturing_wm.storage import from_uint8
from suturing_wm.taxonomy import Action, Quality, SubStitchAnnotation, Task

NEEDLE_CHANNEL = 0
TISSUE_CHANNEL = 1
BACKGROUND_CHANNEL = 2

TISSUE_LEVEL = 0.6
NEEDLE_RADIUS = 0.12
NEEDLE_THICKNESS = 0.045
BACKGROUND_VALUE = 0.0
ARC_BULGE = 0.15
START_JITTER = 0.04
PATH_JITTER = 0.025

# railroad geometry in unit coordinates (x right, y down); backhand mirrors x.
# (start, end, rotation over the clip)
# Positioning reorients the arc almost in place. Its short drift is what
# carries the travel direction on non-rotating non-ideal paths.
_PHASES: dict[Action, tuple[tuple[float, float], tuple[float, float], float]] = {
    Action.POSITIONING: ((0.36, 0.30), (0.46, 0.30), -math.pi / 2),
    Action.TARGETING: ((0.25, 0.20), (0.50, 0.45), -math.pi / 6),
    Action.DRIVING: ((0.30, 0.45), (0.70, 0.72), -math.pi / 2),
    Action.WITHDRAWAL: ((0.45, 0.70), (0.75, 0.35), -math.pi / 3),
}


@dataclasses.dataclass(frozen=True)
class ToyClipSpec:
    """
    Full description of a synthetic clip. Rendering is a pure function of it.

    Attributes
    ----------
    annotation: Class label (task, action, quality) to render.
    seed: Seed of the per-clip variation and jitter.
    width: Frame width in pixels.
    height: Frame height in pixels.
    frame_count: Number of frames.
    """
    annotation: SubStitchAnnotation
    seed: int
    width: int = 64
    height: int = 64
    frame_count: int = 17

    @classmethod
    def for_bucket(cls, annotation: SubStitchAnnotation, seed: int,
                   bucket: ResolutionBucket) -> "ToyClipSpec":
        return cls(annotation, seed, bucket.width, bucket.height, bucket.frame_count)  # noqa: E501


@dataclasses.dataclass(frozen=True)
class NeedlePath:
    """Per-frame needle centre (unit coordinates) and arc orientation."""
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray


def _circular_arc(a: np.ndarray, b: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:  # noqa: E501
    chord = b - a
    c = float(np.hypot(*chord))
    h = ARC_BULGE * c
    n = np.array([-chord[1], chord[0]]) / c
    if n[1] < 0:
        n = -n
    radius = (c * c / 4.0 + h * h) / (2.0 * h)
    center = (a + b) / 2.0 - n * (radius - h)
    a0 = math.atan2(a[1] - center[1], a[0] - center[0])
    a1 = math.atan2(b[1] - center[1], b[0] - center[0])
    sweep = (a1 - a0 + math.pi) % (2.0 * math.pi) - math.pi
    angles = a0 + s * sweep
    return center[0] + radius * np.cos(angles), center[1] + radius * np.sin(angles)  # noqa: E501


def needle_path(spec: ToyClipSpec) -> NeedlePath:
    """
    Trajectory of the needle for a clip spec.

    Args:
        spec (ToyClipSpec): clip description.

    Returns:
        NeedlePath: one entry per frame.
    """
    a = spec.annotation
    rng = np.random.default_rng(spec.seed)
    (sx, sy), (ex, ey), rotation = _PHASES[a.action]
    start = np.array([sx, sy]) + rng.uniform(-START_JITTER, START_JITTER, 2)
    end = np.array([ex, ey]) + rng.uniform(-START_JITTER, START_JITTER, 2)
    jitter = rng.normal(0.0, PATH_JITTER, (spec.frame_count, 2))

    n = spec.frame_count
    s = np.arange(n, dtype=np.float64) / max(n - 1, 1)
    theta0 = math.pi / 2.0
    if a.quality is Quality.IDEAL:
        x, y = _circular_arc(start, end, s)
        theta = theta0 + s * rotation
    else:
        x = start[0] + s * (end[0] - start[0]) + jitter[:, 0]
        y = start[1] + s * (end[1] - start[1]) + jitter[:, 1]
        theta = np.full(n, theta0)

    if a.task is Task.BACKHAND:
        x = 1.0 - x
        theta = math.pi - theta
    return NeedlePath(x=x, y=y, theta=theta)


def render_clip(path: NeedlePath, width: int, height: int) -> np.ndarray:
    """
    Rasterise a needle path into (T, H, W, 3) uint8 frames.
    """
    scale = min(width, height)
    radius = NEEDLE_RADIUS * scale
    half_thickness = max(NEEDLE_THICKNESS * scale / 2.0, 0.75)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)

    frames = np.empty((len(path.x), height, width, 3), dtype=np.float64)
    frames[..., BACKGROUND_CHANNEL] = BACKGROUND_VALUE

    tissue_y = TISSUE_LEVEL * (height - 1)
    tissue = np.clip(1.5 - np.abs(yy - tissue_y), 0.0, 1.0)
    frames[..., TISSUE_CHANNEL] = 2.0 * tissue - 1.0

    for i, (cx, cy, theta) in enumerate(zip(path.x, path.y, path.theta)):
        px = np.clip(cx * (width - 1), radius, width - 1 - radius)
        py = np.clip(cy * (height - 1), radius, height - 1 - radius)
        dx, dy = xx - px, yy - py
        rho = np.hypot(dx, dy)
        delta = (np.arctan2(dy, dx) - theta + math.pi) % (2.0 * math.pi) - math.pi  # noqa: E501
        on_arc = np.abs(delta) <= math.pi / 2.0
        needle = np.clip(1.0 - np.abs(rho - radius) / half_thickness, 0.0, 1.0)
        frames[i, ..., NEEDLE_CHANNEL] = 2.0 * np.where(on_arc, needle, 0.0) - 1.0  # noqa: E501

    return np.round((frames + 1.0) * 127.5).astype(np.uint8)


def synthesize_toy_clip(spec: ToyClipSpec) -> torch.Tensor:
    """
    Render a synthetic sub-stitch clip.

    Args:
        spec (ToyClipSpec): clip description.

    Returns:
        torch.Tensor: (T, H, W, 3) float32 in [-1, 1], on the 8-bit grid so
            that frame-directory storage is lossless.
    """
    return from_uint8(render_clip(needle_path(spec), spec.width, spec.height))
