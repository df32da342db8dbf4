from pathlib import Path

import pytest
import torch

from suturing_wm import (
    Action,
    ClipRecord,
    CodecConfig,
    Denoiser,
    DenoiserConfig,
    LoRAConfig,
    Quality,
    ResolutionBucket,
    SubStitchAnnotation,
    Task,
    ToyClipSpec,
    TrainConfig,
    VideoCodec,
    all_classes,
    build_manifest,
    generate_caption,
    synthesize_toy_clip,
    train,
    train_codec,
    write_frames,
)
from suturing_wm.run_config import CodecTrainingConfig

ROOT = Path(__file__).parent
DESK_CONFIG = ROOT / "configs" / "desk.yaml"

# 16x16x5 clips encode to (2, 2, 2, 4) latents with the tiny codec
TINY_BUCKET = ResolutionBucket(16, 16, 5)
DESK_BUCKET = ResolutionBucket(64, 64, 17)


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: acceptance-scale runs, deselected unless -m slow")


def annotation_for(quality=Quality.IDEAL, action=Action.DRIVING,
                   task=Task.RAILROAD, session_id="session",
                   start=0.0, end=1.0) -> SubStitchAnnotation:
    return SubStitchAnnotation(session_id, task, action, quality, start, end)


def toy_clip(quality=Quality.IDEAL, action=Action.DRIVING, task=Task.RAILROAD,
             seed=0, bucket=DESK_BUCKET) -> torch.Tensor:
    spec = ToyClipSpec.for_bucket(annotation_for(quality, action, task), seed, bucket)  # noqa: E501
    return synthesize_toy_clip(spec)


def write_toy_manifest(directory: Path, classes, bucket=TINY_BUCKET, seeds=(0,)):  # noqa: E501
    records = []
    for ci, (quality, action, task) in enumerate(classes):
        for seed in seeds:
            clip_id = f"clip_{ci:02d}_{seed}"
            annotation = annotation_for(quality, action, task, session_id=clip_id)  # noqa: E501
            clip = synthesize_toy_clip(ToyClipSpec.for_bucket(annotation, seed, bucket))  # noqa: E501
            write_frames(clip, directory / clip_id)
            records.append(ClipRecord(clip_id, str(directory / clip_id),
                                      generate_caption(annotation), annotation,
                                      bucket.width, bucket.height,
                                      bucket.frame_count))
    return build_manifest(records, [bucket], 4)


@pytest.fixture
def tiny_codec_config() -> CodecConfig:
    return CodecConfig(spatial_compression=8, temporal_compression=4,
                       latent_channels=4, hidden_channels=32)


@pytest.fixture
def tiny_codec(tiny_codec_config) -> VideoCodec:
    torch.manual_seed(0)
    return VideoCodec(tiny_codec_config).eval()


@pytest.fixture
def tiny_denoiser_config() -> DenoiserConfig:
    return DenoiserConfig(latent_channels=4, layers=3, model_width=24, heads=2)


@pytest.fixture
def tiny_denoiser(tiny_denoiser_config) -> Denoiser:
    torch.manual_seed(0)
    return Denoiser(tiny_denoiser_config).eval()


@pytest.fixture
def tiny_manifest(tmp_path):
    classes = [
        (Quality.IDEAL, Action.DRIVING, Task.RAILROAD),
        (Quality.NON_IDEAL, Action.DRIVING, Task.BACKHAND),
        (Quality.IDEAL, Action.WITHDRAWAL, Task.BACKHAND),
        (Quality.NON_IDEAL, Action.POSITIONING, Task.RAILROAD),
    ]
    return write_toy_manifest(tmp_path / "clips", classes)


@pytest.fixture(scope="session")
def desk_manifest(tmp_path_factory):
    """Eight clips at the desk bucket, one per ideal class."""
    return write_toy_manifest(tmp_path_factory.mktemp("desk_clips"),
                              all_classes()[:8], bucket=DESK_BUCKET)


@pytest.fixture(scope="session")
def desk_codec(desk_manifest) -> VideoCodec:
    training = CodecTrainingConfig()
    return train_codec(desk_manifest, CodecConfig(), training.steps, 0,
                       training.learning_rate, training.batch_size).codec.eval()  # noqa: E501


@pytest.fixture(scope="session")
def acceptance_model(tmp_path_factory):
    """
    Desk model trained on 128 synthetic clips for 2,000 lora steps.

    Returns:
        tuple: (denoiser, codec, adapter).
    """
    manifest = write_toy_manifest(tmp_path_factory.mktemp("acceptance_clips"),
                                  all_classes(), bucket=DESK_BUCKET, seeds=range(8))  # noqa: E501
    training = CodecTrainingConfig()
    codec = train_codec(manifest, CodecConfig(), training.steps, 0,
                        training.learning_rate, training.batch_size).codec.eval()  # noqa: E501
    torch.manual_seed(0)
    denoiser = Denoiser(DenoiserConfig())
    result = train(manifest, codec, denoiser, TrainConfig(steps=2000), lora=LoRAConfig())  # noqa: E501
    return result.denoiser.eval(), codec, result.adapter
