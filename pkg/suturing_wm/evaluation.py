"""
Evaluation: pixel L2 reconstruction, mean-of-runs latency and class
adherence scored by the synthetic-clip oracle.
"""

__all__ = [
    "PIXEL_RANGE",
    "EvalReport",
    "l2_reconstruction",
    "benchmark_latency",
    "class_adherence",
    "wilson_interval",
    "reconstruction_protocol",
    "format_table",
]

import dataclasses
import math
import time
from typing import Any, Callable, Optional, Sequence

import torch
from omegaconf import OmegaConf

from suturing_wm.adapters import LoRAAdapter
from suturing_wm.buckets import ResolutionBucket
from suturing_wm.codec import VideoCodec
from suturing_wm.dataset import ClipRecord
from suturing_wm.denoiser import Denoiser
from suturing_wm.diffusion import generate_video
from suturing_wm.errors import NoTrackableObject, PreconditionError, ShapeError  # noqa: E501
from suturing_wm.guidance import GuidanceConfig
from suturing_wm.logger import logger
from suturing_wm.oracle import OracleConfig, oracle_classify
from suturing_wm.taxonomy import ClassIds, caption_for_classes, generate_caption  # noqa: E501

# pixels are mapped from [-1, 1] to this range before L2 is taken
PIXEL_RANGE = (0.0, 1.0)


@dataclasses.dataclass
class EvalReport:
    """
    One evaluated model configuration.

    Attributes
    ----------
    model: Row label, usually the profile name and training mode.
    l2_loss: Mean pixel L2 reconstruction loss in the [0, 1] range.
    latency_mean_s: Mean generation latency in seconds.
    latency_runs: Number of timed runs.
    latency_samples: Raw per-run latencies in seconds.
    class_adherence: Fraction of generations the oracle labels as prompted.
    fingerprint: Model hash, guidance mode and scale, steps, bucket and
        pixel range the numbers were produced with.
    """
    model: str
    l2_loss: Optional[float] = None
    latency_mean_s: Optional[float] = None
    latency_runs: int = 0
    latency_samples: list[float] = dataclasses.field(default_factory=list)
    class_adherence: Optional[float] = None
    fingerprint: dict[str, Any] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.latency_mean_s is not None and self.latency_runs < 1:
            raise PreconditionError(f"latency_runs must be >= 1, got {self.latency_runs}")  # noqa: E501
        if self.class_adherence is not None and not 0.0 <= self.class_adherence <= 1.0:  # noqa: E501
            raise PreconditionError(f"class_adherence must be in [0, 1], got {self.class_adherence}")  # noqa: E501

    def to_text(self) -> str:
        return OmegaConf.to_yaml(OmegaConf.create(dataclasses.asdict(self)))

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        data = OmegaConf.to_container(OmegaConf.create(text), resolve=True)
        return cls(**data)


def l2_reconstruction(generated: torch.Tensor, ground_truth: torch.Tensor) -> float:  # noqa: E501
    """
    Mean squared pixel error after mapping [-1, 1] to [0, 1].

    Raises:
        ShapeError: if the clips differ in shape.
    """
    if generated.shape != ground_truth.shape:
        raise ShapeError(
            f"generated {tuple(generated.shape)} and ground truth "
            f"{tuple(ground_truth.shape)} differ in shape")
    a = (generated.detach().to(torch.float64) + 1.0) / 2.0
    b = (ground_truth.detach().to(torch.float64) + 1.0) / 2.0
    return float(torch.mean((a - b) ** 2))


def benchmark_latency(generation: Callable[[], Any], runs: int = 10,
                      warmup: int = 1) -> tuple[float, list[float]]:
    """
    Time a generation closure end to end.

    ``warmup`` untimed runs precede ``runs`` timed ones. Runs are strictly
    sequential.

    Args:
        generation (Callable[[], Any]): sampling plus decode.
        runs (int): timed runs, at least 1.
        warmup (int): untimed runs.

    Returns:
        tuple[float, list[float]]: mean seconds and the per-run samples.
    """
    if runs < 1:
        raise PreconditionError(f"runs must be >= 1, got {runs}")
    for _ in range(warmup):
        generation()
    samples = []
    for _ in range(runs):
        start = time.perf_counter()
        generation()
        samples.append(time.perf_counter() - start)
    return sum(samples) / len(samples), samples


def class_adherence(
        model: Denoiser,
        codec: VideoCodec,
        guidance: GuidanceConfig,
        classes: Sequence[ClassIds],
        seeds_per_class: int,
        steps: int,
        bucket: ResolutionBucket,
        adapter: Optional[LoRAAdapter] = None,
        oracle: OracleConfig = OracleConfig(),
        seed: int = 0) -> float:
    """
    Fraction of generations whose oracle (quality, task) matches the prompt.

    Clip j of class i is sampled with seed ``seed + i * seeds_per_class + j``.
    A clip the oracle cannot track counts as a miss.

    Args:
        model (Denoiser): denoiser.
        codec (VideoCodec): codec.
        guidance (GuidanceConfig): guidance settings.
        classes (Sequence[ClassIds]): prompted classes, at least one.
        seeds_per_class (int): generations per class.
        steps (int): sampler steps.
        bucket (ResolutionBucket): generation bucket.
        adapter (LoRAAdapter, optional): adapter used while sampling.
        oracle (OracleConfig): frozen oracle settings.
        seed (int): first sampler seed.

    Returns:
        float: adherence in [0, 1].
    """
    if len(classes) == 0:
        raise PreconditionError("class_adherence needs at least one class")
    if seeds_per_class < 1:
        raise PreconditionError(f"seeds_per_class must be >= 1, got {seeds_per_class}")  # noqa: E501
    hits, total = 0, 0
    for i, classes_i in enumerate(classes):
        caption = caption_for_classes(classes_i)
        quality, _, task = classes_i
        for j in range(seeds_per_class):
            clip = generate_video(model, codec, caption, guidance, steps, bucket,
                                  seed + i * seeds_per_class + j, adapter=adapter)  # noqa: E501
            total += 1
            try:
                found = oracle_classify(clip, oracle)
            except NoTrackableObject as e:
                logger.warning(f"Oracle miss for {caption!r} seed {seed + i * seeds_per_class + j}: {e}")  # noqa  # pylint: disable=logging-fstring-interpolation
                continue
            if found == (quality, task):
                hits += 1
    logger.info(f"Class adherence {hits}/{total}")  # noqa  # pylint: disable=logging-fstring-interpolation
    return hits / total


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:  # noqa: E501
    """
    Wilson score interval of a binomial proportion.

    Returns:
        tuple[float, float]: (low, high), both in [0, 1].
    """
    if n < 1:
        raise PreconditionError(f"n must be >= 1, got {n}")
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def reconstruction_protocol(
        model: Denoiser,
        codec: VideoCodec,
        held_out: Sequence[ClipRecord],
        guidance: GuidanceConfig,
        steps: int,
        seed: int,
        image_to_video: bool,
        adapter: Optional[LoRAAdapter] = None) -> float:
    """
    Mean L2 between generations and held-out clips.

    Each held-out clip is regenerated from its own caption at its own
    resolution and length with seed ``seed + index``. Image-to-video
    generations are also conditioned on the clip's first frame.

    Returns:
        float: mean L2 over the held-out clips.
    """
    if len(held_out) == 0:
        raise PreconditionError("reconstruction_protocol needs held-out clips")
    losses = []
    for index, record in enumerate(held_out):
        clip = record.load()
        bucket = ResolutionBucket(*record.dims)
        first_frame = clip[0] if image_to_video else None
        generated = generate_video(model, codec, generate_caption(record.annotation),  # noqa: E501
                                   guidance, steps, bucket, seed + index,
                                   adapter=adapter, first_frame=first_frame)
        losses.append(l2_reconstruction(generated, clip))
    return sum(losses) / len(losses)


def format_table(reports: Sequence[EvalReport]) -> str:
    """
    Rows of (model, loss, time), one per report.
    """
    def cell(value: Optional[float], fmt: str) -> str:
        return "-" if value is None else format(value, fmt)

    rows = [("Model", "Loss (L2 Reconstruction)", "Inference Time (s)")]
    rows += [(r.model, cell(r.l2_loss, ".5f"), cell(r.latency_mean_s, ".3f")) for r in reports]  # noqa: E501
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = [" | ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)
