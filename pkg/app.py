import argparse
import json
import logging
import shutil
import sys
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

import suturing_wm as sw
from config import Config
from suturing_wm.run_config import RunConfig, load_run_config

# Setup logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunPaths:
    """Artifact layout under the output directory"""
    root: Path

    @property
    def data_dir(self) -> Path:
        return self.root / "data"

    @property
    def clips_dir(self) -> Path:
        return self.data_dir / "clips"

    @property
    def manifest(self) -> Path:
        return self.data_dir / "manifest.jsonl"

    @property
    def heldout_manifest(self) -> Path:
        return self.data_dir / "heldout.jsonl"

    @property
    def annotations(self) -> Path:
        return self.data_dir / "annotations.jsonl"

    @property
    def model_dir(self) -> Path:
        return self.root / "model"

    @property
    def codec(self) -> Path:
        return self.model_dir / sw.CODEC_FILE

    @property
    def denoiser(self) -> Path:
        return self.model_dir / sw.DENOISER_FILE

    @property
    def adapter(self) -> Path:
        return self.model_dir / sw.ADAPTER_FILE

    @property
    def codec_metrics(self) -> Path:
        return self.model_dir / "codec_metrics.jsonl"

    @property
    def train_metrics(self) -> Path:
        return self.model_dir / "train_metrics.jsonl"

    @property
    def generated_dir(self) -> Path:
        return self.root / "generated"

    @property
    def eval_report(self) -> Path:
        return self.root / "eval" / "report.yaml"

    @property
    def bench_report(self) -> Path:
        return self.root / "bench" / "report.yaml"


def claim(path: Path, force: bool) -> Path:
    """
    Make sure a command may write an artifact.

    Args:
        path (Path): artifact file or directory.
        force (bool): remove an existing artifact instead of refusing.

    Raises:
        ArtifactExists: if the artifact exists and force is not set.

    Returns:
        Path: the artifact path.
    """
    if path.exists():
        if not force:
            raise sw.ArtifactExists(f"{path} already exists; rerun with --force to overwrite")  # noqa: E501
        logger.warning(f"Overwriting {path}")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    return path


def require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise sw.ArtifactMissing(f"{path} not found; run `{producer}` first")
    return path


def load_model(cfg: RunConfig, paths: RunPaths) -> sw.SuturingWorldModel:
    require(paths.codec, "train-codec")
    require(paths.denoiser, "train")
    model = sw.SuturingWorldModel.load(paths.model_dir)
    model.codec.to(Config.DEVICE)
    model.denoiser.to(Config.DEVICE)
    return model


def fingerprint(cfg: RunConfig, model: sw.SuturingWorldModel) -> dict:
    return {
        "profile": cfg.profile.value,
        "train_mode": cfg.train.mode.value,
        "model_hash": model.parameter_hash(),
        "adapter_hash": sw.parameter_hash(model.adapter) if model.adapter is not None else None,  # noqa: E501
        "guidance_mode": cfg.guidance.mode.value,
        "guidance_scale": cfg.guidance.scale,
        "skip_layers": sorted(cfg.guidance.skip_layers),
        "steps": cfg.sampling.steps,
        "bucket": str(cfg.sampling.bucket),
        "pixel_range": list(sw.PIXEL_RANGE),
    }


def synth_data(cfg: RunConfig, args: argparse.Namespace) -> None:
    """Render the synthetic training and held-out sets"""
    paths = RunPaths(cfg.output_dir)
    claim(paths.data_dir, args.force)

    records, heldout, annotations = [], [], []
    per_class = cfg.data.seeds_per_class + cfg.data.holdout_seeds_per_class
    for bucket in cfg.data.buckets:
        for ci, (quality, action, task) in enumerate(sw.all_classes()):
            for k in range(per_class):
                clip_id = f"synth_{bucket}_{ci:02d}_{k:04d}"
                annotation = sw.SubStitchAnnotation(
                    clip_id, task, action, quality, 0.0,
                    bucket.frame_count / cfg.data.fps)
                clip_seed = cfg.seed * 1_000_003 + ci * 10_007 + k
                clip = sw.synthesize_toy_clip(sw.ToyClipSpec.for_bucket(annotation, clip_seed, bucket))  # noqa: E501
                clip_dir = paths.clips_dir / clip_id
                sw.write_frames(clip, clip_dir)
                record = sw.ClipRecord(
                    clip_id=clip_id,
                    frames_path=str(clip_dir),
                    caption=sw.generate_caption(annotation),
                    annotation=annotation,
                    width=bucket.width,
                    height=bucket.height,
                    frame_count=bucket.frame_count,
                )
                annotations.append(annotation)
                (records if k < cfg.data.seeds_per_class else heldout).append(record)  # noqa: E501

    ft = cfg.codec.temporal_compression
    sw.write_manifest(sw.build_manifest(records, cfg.data.buckets, ft), paths.manifest)  # noqa: E501
    if heldout:
        sw.write_manifest(sw.build_manifest(heldout, cfg.data.buckets, ft), paths.heldout_manifest)  # noqa: E501
    sw.write_annotations(annotations, paths.annotations)
    logger.info(f"Synthesized {len(records)} training and {len(heldout)} held-out clips")  # noqa: E501


def ingest(cfg: RunConfig, args: argparse.Namespace) -> None:
    """Cut annotated session videos into captioned clips"""
    if not args.annotations:
        raise sw.ConfigError("annotations", "ingest needs --annotations")
    if not args.sessions:
        raise sw.ConfigError("sessions", "ingest needs --sessions")
    paths = RunPaths(cfg.output_dir)
    by_session: OrderedDict[str, list] = OrderedDict()
    for annotation in sw.read_annotations(args.annotations):
        by_session.setdefault(annotation.session_id, []).append(annotation)

    claim(paths.data_dir, args.force)
    fps = args.fps or cfg.data.fps
    records = []
    for session_id, annotations in by_session.items():
        frames = sw.read_frames(Path(args.sessions) / session_id)
        records += sw.cut_clips(frames, annotations, fps, paths.clips_dir)
    manifest = sw.build_manifest(records, cfg.data.buckets, cfg.codec.temporal_compression)  # noqa: E501
    sw.write_manifest(manifest, paths.manifest)
    sw.write_annotations([a for group in by_session.values() for a in group], paths.annotations)  # noqa: E501


def train_codec(cfg: RunConfig, args: argparse.Namespace) -> None:
    """Train the video codec on the manifest"""
    paths = RunPaths(cfg.output_dir)
    manifest = sw.read_manifest(require(paths.manifest, "synth-data"))
    claim(paths.codec, args.force)
    claim(paths.codec_metrics, args.force)

    training = cfg.codec_training
    result = sw.train_codec(manifest, cfg.codec, training.steps, cfg.seed,
                            training.learning_rate, training.batch_size,
                            device=Config.DEVICE)
    sw.save_codec(result.codec, paths.codec)
    with open(paths.codec_metrics, "w", encoding="utf-8") as f:
        for step, loss in enumerate(result.losses):
            f.write(json.dumps({"step": step, "loss": loss}) + "\n")


def train(cfg: RunConfig, args: argparse.Namespace) -> None:
    """Train the denoiser (lora or full_finetune)"""
    paths = RunPaths(cfg.output_dir)
    require(paths.codec, "train-codec")
    manifest = sw.read_manifest(require(paths.manifest, "synth-data"))
    claim(paths.denoiser, args.force)
    if paths.adapter.exists():
        claim(paths.adapter, args.force)
    claim(paths.train_metrics, args.force)

    codec = sw.load_codec(paths.codec, cfg.codec).to(Config.DEVICE)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        denoiser = sw.Denoiser(cfg.denoiser)
    denoiser.to(Config.DEVICE)
    base_hash = sw.parameter_hash(denoiser)

    result = sw.train(manifest, codec, denoiser, cfg.train, lora=cfg.lora,
                      image_to_video=cfg.image_to_video,
                      metrics_path=paths.train_metrics)
    sw.save_denoiser(result.denoiser, paths.denoiser)
    if result.adapter is not None:
        sw.save_adapter(result.adapter, paths.adapter)
        if sw.parameter_hash(result.denoiser) != base_hash:
            raise sw.SuturingError("lora training changed the base denoiser")
    logger.info(f"Denoiser hash {sw.parameter_hash(result.denoiser)}")


def read_first_frame(path: str, bucket: sw.ResolutionBucket) -> torch.Tensor:
    if Path(path).suffix.lower() not in Config.ALLOWED_EXTENSIONS:
        raise sw.ConfigError("first_frame", f"{path} is not a {'/'.join(sorted(Config.ALLOWED_EXTENSIONS))} file")  # noqa: E501
    if not Path(path).is_file():
        raise sw.ArtifactMissing(f"first frame {path} not found")
    with Image.open(path) as img:
        frame = sw.from_uint8(np.asarray(img.convert("RGB"), dtype=np.uint8)[None])[0]  # noqa: E501
    if tuple(frame.shape) != (bucket.height, bucket.width, 3):
        raise sw.ConfigError("first_frame", f"{path} is {frame.shape[1]}x{frame.shape[0]}, bucket is {bucket}")  # noqa: E501
    return frame


def generate(cfg: RunConfig, args: argparse.Namespace) -> None:
    """Generate clips for a caption"""
    if not args.caption:
        raise sw.ConfigError("caption", "generate needs --caption")
    classes = sw.parse_caption(args.caption)
    if args.count < 1:
        raise sw.ConfigError("count", f"must be >= 1, got {args.count}")
    paths = RunPaths(cfg.output_dir)
    model = load_model(cfg, paths)
    bucket = cfg.sampling.bucket
    first_frame = read_first_frame(args.first_frame, bucket) if args.first_frame else None  # noqa: E501
    if cfg.image_to_video and first_frame is None:
        logger.warning("Image-to-video profile without --first-frame; generating from the caption only")  # noqa: E501

    name = args.name or f"class{sw.class_index(*classes):02d}_seed{cfg.seed}"
    target = claim(paths.generated_dir / name, args.force)
    records = []
    for k in range(args.count):
        seed = cfg.seed + k
        video = model.generate(args.caption, cfg.guidance, cfg.sampling.steps,
                               bucket, seed, first_frame=first_frame)
        clip_id = f"{name}_{k:04d}"
        clip_dir = target / f"{k:04d}"
        sw.write_frames(video, clip_dir)
        if args.export:
            sw.export_container(video, target / f"{k:04d}.npz")
        annotation = sw.SubStitchAnnotation(
            clip_id, classes[2], classes[1], classes[0], 0.0,
            bucket.frame_count / cfg.data.fps)
        records.append(sw.ClipRecord(clip_id, str(clip_dir), args.caption,
                                     annotation, bucket.width, bucket.height,
                                     bucket.frame_count))

    sw.write_manifest(sw.DatasetManifest(records, [bucket]), target / "manifest.jsonl")  # noqa: E501
    metadata = {
        "caption": args.caption,
        "seeds": [cfg.seed + k for k in range(args.count)],
        "first_frame": args.first_frame,
        "image_to_video": first_frame is not None,
        **fingerprint(cfg, model),
    }
    with open(target / "metadata.json", "w", encoding="utf-8") as f:
        json.dump(metadata, f, indent=2)
    logger.info(f"Generated {args.count} clip(s) in {target}")


def evaluate(cfg: RunConfig, args: argparse.Namespace) -> None:
    """L2 on held-out clips, oracle adherence and latency"""
    paths = RunPaths(cfg.output_dir)
    if cfg.data.holdout_seeds_per_class == 0 and not paths.heldout_manifest.exists():  # noqa: E501
        raise sw.ConfigError("data.holdout_seeds_per_class",
                             "evaluate needs held-out clips; synthesize with at least one holdout seed")  # noqa: E501
    model = load_model(cfg, paths)
    heldout = sw.read_manifest(require(paths.heldout_manifest, "synth-data"))
    claim(paths.eval_report, args.force)
    before = model.parameter_hash()

    l2 = sw.reconstruction_protocol(model.denoiser, model.codec, list(heldout),
                                    cfg.guidance, cfg.sampling.steps, cfg.seed,
                                    cfg.image_to_video, adapter=model.adapter)
    classes = sw.all_classes()
    adherence = sw.class_adherence(model.denoiser, model.codec, cfg.guidance,
                                   classes, cfg.eval.seeds_per_class,
                                   cfg.sampling.steps, cfg.sampling.bucket,
                                   adapter=model.adapter, oracle=cfg.oracle,
                                   seed=cfg.seed)
    n = len(classes) * cfg.eval.seeds_per_class
    low, high = sw.wilson_interval(round(adherence * n), n)
    logger.info(f"Class adherence {adherence:.3f} (95% interval {low:.3f}-{high:.3f}, chance 0.25)")  # noqa: E501

    caption = sw.caption_for_classes(classes[0])
    mean, samples = sw.benchmark_latency(
        lambda: model.generate(caption, cfg.guidance, cfg.sampling.steps,
                               cfg.sampling.bucket, cfg.seed),
        runs=cfg.eval.latency_runs)
    if model.parameter_hash() != before:
        raise sw.SuturingError("evaluation changed the model parameters")

    write_report(sw.EvalReport(
        model=f"{cfg.profile.value} ({cfg.train.mode.value})",
        l2_loss=l2,
        latency_mean_s=mean,
        latency_runs=len(samples),
        latency_samples=samples,
        class_adherence=adherence,
        fingerprint=fingerprint(cfg, model),
    ), paths.eval_report)


def bench(cfg: RunConfig, args: argparse.Namespace) -> None:
    """Latency only"""
    paths = RunPaths(cfg.output_dir)
    model = load_model(cfg, paths)
    claim(paths.bench_report, args.force)
    caption = args.caption or sw.caption_for_classes(sw.all_classes()[0])
    sw.parse_caption(caption)
    mean, samples = sw.benchmark_latency(
        lambda: model.generate(caption, cfg.guidance, cfg.sampling.steps,
                               cfg.sampling.bucket, cfg.seed),
        runs=cfg.eval.latency_runs)
    write_report(sw.EvalReport(
        model=f"{cfg.profile.value} ({cfg.train.mode.value})",
        latency_mean_s=mean,
        latency_runs=len(samples),
        latency_samples=samples,
        fingerprint=fingerprint(cfg, model),
    ), paths.bench_report)


def write_report(report: sw.EvalReport, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_text(), encoding="utf-8")
    logger.info("\n" + sw.format_table([report]))
    logger.info(f"Wrote report to {path}")


COMMANDS = {
    "synth-data": synth_data,
    "ingest": ingest,
    "train-codec": train_codec,
    "train": train,
    "generate": generate,
    "evaluate": evaluate,
    "bench": bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Suturing world model pipeline")  # noqa: E501
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", default=Config.DEFAULT_RUN_CONFIG)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--guidance", choices=[m.value for m in sw.GuidanceMode])  # noqa: E501
    parser.add_argument("--scale", type=float)
    parser.add_argument("--skip-layers", help="comma separated block indices")  # noqa: E501
    parser.add_argument("--steps", type=int, help="sampler steps")
    parser.add_argument("--bucket", help="WxHxT")
    parser.add_argument("--caption")
    parser.add_argument("--first-frame", help="PNG frame for image-to-video")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--count", type=int, default=1, help="clips to generate")  # noqa: E501
    parser.add_argument("--name", help="generation directory name")
    parser.add_argument("--export", action="store_true", help="also write .npz containers")  # noqa: E501
    parser.add_argument("--annotations", help="annotation file for ingest")
    parser.add_argument("--sessions", help="directory of session frame directories for ingest")  # noqa: E501
    parser.add_argument("--fps", type=float, help="session frame rate for ingest")  # noqa: E501
    parser.add_argument("--force", action="store_true", help="overwrite existing artifacts")  # noqa: E501
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",  # noqa: E501
                        help="config override, e.g. train.mode=full_finetune")
    return parser


def overrides_from_args(args: argparse.Namespace) -> list[str]:
    overrides = []
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.guidance is not None:
        overrides.append(f"guidance.mode={args.guidance}")
    if args.scale is not None:
        overrides.append(f"guidance.scale={args.scale}")
    if args.skip_layers is not None:
        overrides.append(f"guidance.skip_layers=[{args.skip_layers}]")
    if args.steps is not None:
        overrides.append(f"sampling.steps={args.steps}")
    if args.bucket is not None:
        overrides.append(f"sampling.bucket={args.bucket}")
    if args.out is not None:
        overrides.append(f"output_dir={args.out}")
    return overrides + list(args.set)


def run(args: argparse.Namespace) -> int:
    """
    Run one pipeline command.

    Returns:
        int: 0 on success, 1 on a validation error, 2 on a runtime error.
    """
    try:
        cfg = load_run_config(args.config, overrides_from_args(args), Config.OUTPUT_DIR)  # noqa: E501
        logger.info(f"Resolved config:\n{cfg.to_yaml()}")
        COMMANDS[args.command](cfg, args)
    except sw.PreconditionError as e:
        logger.error(f"{args.command} failed validation: {e}")
        return 1
    except sw.SuturingError as e:
        logger.error(f"{args.command} failed: {e}")
        return 2
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly: {e}")
        return 2
    return 0


def main(argv: list[str] | None = None) -> int:
    return run(build_parser().parse_args(argv))


if __name__ == '__main__':
    sys.exit(main())
