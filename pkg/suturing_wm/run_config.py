"""
Hierarchical run configuration.

A YAML file (see configs/desk.yaml) is merged with dotlist overrides and
converted section by section into the typed configs the modules use. Every
validation failure is a ConfigError naming the dotted field.
"""

__all__ = [
    "CodecTrainingConfig",
    "SamplingConfig",
    "DataConfig",
    "EvalConfig",
    "RunConfig",
    "load_run_config",
]

import dataclasses
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence

from omegaconf import DictConfig, OmegaConf
from omegaconf.errors import OmegaConfBaseException

from suturing_wm.adapters import LoRAConfig
from suturing_wm.buckets import ResolutionBucket, parse_bucket
from suturing_wm.codec import CodecConfig
from suturing_wm.denoiser import DenoiserConfig
from suturing_wm.diffusion import TrainConfig
from suturing_wm.errors import ConfigError, InvalidGuidance, InvalidLayerIndex, ShapeError  # noqa: E501
from suturing_wm.guidance import GuidanceConfig, GuidanceMode, default_skip_layers  # noqa: E501
from suturing_wm.oracle import OracleConfig
from suturing_wm.profiles import ModelProfile, profile_info

SECTIONS = ("profile", "seed", "output_dir", "codec", "denoiser", "train", "lora",
            "guidance", "sampling", "data", "oracle", "eval")


@dataclasses.dataclass(frozen=True)
class CodecTrainingConfig:
    steps: int = 500
    learning_rate: float = 2e-3
    batch_size: int = 4


@dataclasses.dataclass(frozen=True)
class SamplingConfig:
    """
    Attributes
    ----------
    steps: Euler steps per generation.
    bucket: Generation resolution and length.
    """
    steps: int = 30
    bucket: ResolutionBucket = ResolutionBucket(64, 64, 17)


@dataclasses.dataclass(frozen=True)
class DataConfig:
    """
    Attributes
    ----------
    buckets: Declared resolution buckets.
    seeds_per_class: Synthetic training clips per class and bucket.
    holdout_seeds_per_class: Synthetic held-out clips per class and bucket.
    fps: Frame rate assigned to synthetic and generated clips.
    """
    buckets: tuple[ResolutionBucket, ...] = (ResolutionBucket(64, 64, 17),)
    seeds_per_class: int = 8
    holdout_seeds_per_class: int = 1
    fps: float = 8.0


@dataclasses.dataclass(frozen=True)
class EvalConfig:
    """
    Attributes
    ----------
    latency_runs: Timed runs per latency measurement.
    seeds_per_class: Generations per class for adherence.
    """
    latency_runs: int = 10
    seeds_per_class: int = 20


@dataclasses.dataclass(frozen=True)
class RunConfig:
    profile: ModelProfile
    seed: int
    output_dir: Path
    image_to_video: bool
    codec: CodecConfig
    codec_training: CodecTrainingConfig
    denoiser: DenoiserConfig
    train: TrainConfig
    lora: LoRAConfig
    guidance: GuidanceConfig
    sampling: SamplingConfig
    data: DataConfig
    oracle: OracleConfig
    eval: EvalConfig
    resolved: DictConfig = dataclasses.field(repr=False, compare=False)

    def to_yaml(self) -> str:
        """The merged config, defaults included."""
        return OmegaConf.to_yaml(self.resolved)


def _build(section: str, cls: type, values: dict[str, Any]) -> Any:
    known = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"{section}.{key}", "unknown field")
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(section, str(e)) from e


def _int(values: dict[str, Any], section: str, *keys: str, minimum: int = 1) -> None:  # noqa: E501
    for key in keys:
        if key not in values:
            continue
        name = f"{section}.{key}" if section else key
        try:
            values[key] = int(values[key])
        except (TypeError, ValueError) as e:
            raise ConfigError(name, f"expected an integer, got {values[key]!r}") from e  # noqa: E501
        if values[key] < minimum:
            raise ConfigError(name, f"must be >= {minimum}, got {values[key]}")  # noqa: E501


def _plain(value: Any) -> Any:
    """Typed config value as YAML-ready primitives."""
    if isinstance(value, ResolutionBucket):
        return str(value)
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}  # noqa: E501
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (set, frozenset)):
        return sorted(_plain(v) for v in value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value


def _omit(values: dict[str, Any], *keys: str) -> dict[str, Any]:
    return {k: v for k, v in values.items() if k not in keys}


def _section(cfg: dict[str, Any], name: str) -> dict[str, Any]:
    value = cfg.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(name, f"expected a mapping, got {value!r}")
    return dict(value)


def load_run_config(path: str | Path,
                    overrides: Sequence[str] = (),
                    default_output_dir: Optional[str | Path] = None) -> RunConfig:  # noqa: E501
    """
    Load, merge and validate a run config.

    Args:
        path (str | Path): YAML config file.
        overrides (Sequence[str]): dotlist overrides such as
            "guidance.scale=6.0".
        default_output_dir (str | Path, optional): used when output_dir
            is null.

    Raises:
        ConfigError: naming the first invalid field.

    Returns:
        RunConfig: validated config.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"{path} does not exist")
    try:
        merged = OmegaConf.merge(OmegaConf.load(path), OmegaConf.from_dotlist(list(overrides)))  # noqa: E501
        cfg = OmegaConf.to_container(merged, resolve=True)
    except (OmegaConfBaseException, ValueError) as e:
        raise ConfigError("config", str(e)) from e
    except Exception as e:  # yaml parse errors
        raise ConfigError("config", f"{path}: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level must be a mapping")
    for key in cfg:
        if key not in SECTIONS:
            raise ConfigError(str(key), "unknown field")

    try:
        profile = ModelProfile(cfg.get("profile") or ModelProfile.LTX_T2V)
    except ValueError as e:
        raise ConfigError("profile", f"unknown profile {cfg.get('profile')!r}") from e  # noqa: E501
    info = profile_info(profile)
    _int(cfg, "", "seed", minimum=0)
    seed = int(cfg.get("seed") or 0)

    output_dir = cfg.get("output_dir") or default_output_dir
    if not output_dir:
        raise ConfigError("output_dir", "no output directory configured")
    output_dir = Path(output_dir)
    if output_dir.exists() and not output_dir.is_dir():
        raise ConfigError("output_dir", f"{output_dir} exists and is not a directory")  # noqa: E501

    codec_values = _section(cfg, "codec")
    training_values = codec_values.pop("training", None) or {}
    codec = _build("codec", CodecConfig, codec_values)
    _int(training_values, "codec.training", "steps", "batch_size")
    codec_training = _build("codec.training", CodecTrainingConfig, training_values)  # noqa: E501

    denoiser_values = _section(cfg, "denoiser")
    if "latent_channels" in denoiser_values:
        raise ConfigError("denoiser.latent_channels", "set codec.latent_channels instead")  # noqa: E501
    denoiser = _build("denoiser", DenoiserConfig,
                      {**denoiser_values, "latent_channels": codec.latent_channels})  # noqa: E501

    train_values = _section(cfg, "train")
    image_to_video = train_values.pop("image_to_video", None)
    image_to_video = info.image_to_video if image_to_video is None else bool(image_to_video)  # noqa: E501
    if train_values.get("epochs") is None:
        train_values["epochs"] = info.epochs
    if "seed" in train_values:
        raise ConfigError("train.seed", "set the top-level seed instead")
    train = _build("train", TrainConfig, {**train_values, "seed": seed})

    lora_values = _section(cfg, "lora")
    lora_values["targets"] = tuple(lora_values.get("targets") or ())
    lora = _build("lora", LoRAConfig, lora_values)

    guidance_values = _section(cfg, "guidance")
    mode = guidance_values.get("mode") or info.guidance_mode
    scale = guidance_values.get("scale")
    scale = info.guidance_scale if scale is None else scale
    skip = guidance_values.get("skip_layers") or ()
    try:
        mode = GuidanceMode(mode)
    except ValueError as e:
        raise ConfigError("guidance.mode", f"unknown mode {mode!r}") from e
    if mode is GuidanceMode.STG and not skip:
        skip = default_skip_layers(denoiser.layers)
    unknown = set(guidance_values) - {"mode", "scale", "skip_layers"}
    if unknown:
        raise ConfigError(f"guidance.{sorted(unknown)[0]}", "unknown field")
    try:
        guidance = GuidanceConfig(mode, float(scale), frozenset(int(i) for i in skip))  # noqa: E501
        guidance.validate(denoiser.layers)
    except (InvalidGuidance, InvalidLayerIndex, TypeError, ValueError) as e:
        raise ConfigError("guidance.skip_layers", str(e)) from e

    sampling_values = _section(cfg, "sampling")
    _int(sampling_values, "sampling", "steps")
    if "bucket" in sampling_values:
        sampling_values["bucket"] = parse_bucket(sampling_values["bucket"], "sampling.bucket")  # noqa: E501
    sampling = _build("sampling", SamplingConfig, sampling_values)

    data_values = _section(cfg, "data")
    if "buckets" in data_values:
        data_values["buckets"] = tuple(
            parse_bucket(b, f"data.buckets[{i}]") for i, b in enumerate(data_values["buckets"] or []))  # noqa: E501
        if not data_values["buckets"]:
            raise ConfigError("data.buckets", "at least one bucket is required")  # noqa: E501
    _int(data_values, "data", "seeds_per_class")
    _int(data_values, "data", "holdout_seeds_per_class", minimum=0)
    data = _build("data", DataConfig, data_values)

    for i, bucket in enumerate(data.buckets):
        try:
            bucket.validate(codec.spatial_compression, codec.temporal_compression)  # noqa: E501
        except ShapeError as e:
            raise ConfigError(f"data.buckets[{i}]", str(e)) from e
    try:
        sampling.bucket.validate(codec.spatial_compression, codec.temporal_compression)  # noqa: E501
    except ShapeError as e:
        raise ConfigError("sampling.bucket", str(e)) from e

    oracle = _build("oracle", OracleConfig, _section(cfg, "oracle"))
    eval_values = _section(cfg, "eval")
    _int(eval_values, "eval", "latency_runs", "seeds_per_class")
    evaluation = _build("eval", EvalConfig, eval_values)

    resolved = OmegaConf.create({
        "profile": profile.value,
        "seed": seed,
        "output_dir": str(output_dir),
        "codec": {**_plain(codec), "training": _plain(codec_training)},
        "denoiser": _omit(_plain(denoiser), "latent_channels"),
        "train": {**_omit(_plain(train), "seed"), "image_to_video": image_to_video},  # noqa: E501
        "lora": _plain(lora),
        "guidance": guidance.to_dict(),
        "sampling": _plain(sampling),
        "data": _plain(data),
        "oracle": _plain(oracle),
        "eval": _plain(evaluation),
    })
    return RunConfig(
        profile=profile,
        seed=seed,
        output_dir=output_dir,
        image_to_video=image_to_video,
        codec=codec,
        codec_training=codec_training,
        denoiser=denoiser,
        train=train,
        lora=lora,
        guidance=guidance,
        sampling=sampling,
        data=data,
        oracle=oracle,
        eval=evaluation,
        resolved=resolved,
    )
