"""
Clip records, the dataset manifest, and cutting annotated session videos
into captioned clips.
"""

__all__ = [
    "ClipRecord",
    "DatasetManifest",
    "cut_clips",
    "build_manifest",
    "read_manifest",
    "write_manifest",
    "read_annotations",
    "write_annotations",
]

import dataclasses
import json
import math
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import torch

from suturing_wm.buckets import ResolutionBucket, parse_bucket
from suturing_wm.errors import BucketMismatch, PreconditionError, SpanOutOfRange
from suturing_wm.logger import logger
from suturing_wm.storage import read_frames, write_frames
from suturing_wm.taxonomy import SubStitchAnnotation, generate_caption


@dataclasses.dataclass(frozen=True)
class ClipRecord:
    """
    A captioned clip stored as a frame directory.

    Attributes
    ----------
    clip_id: Unique clip identifier.
    frames_path: Directory of numbered PNG frames.
    caption: Caption generated from the annotation.
    annotation: Expert label the clip was cut from.
    width: Frame width in pixels.
    height: Frame height in pixels.
    frame_count: Number of frames.
    """
    clip_id: str
    frames_path: str
    caption: str
    annotation: SubStitchAnnotation
    width: int
    height: int
    frame_count: int

    def __post_init__(self):
        if self.frame_count < 1 or self.width < 1 or self.height < 1:
            raise PreconditionError(
                f"clip {self.clip_id}: dims must be positive, got "
                f"{self.width}x{self.height}x{self.frame_count}")
        if self.caption != generate_caption(self.annotation):
            raise PreconditionError(
                f"clip {self.clip_id}: caption does not match its annotation")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.width, self.height, self.frame_count

    def load(self) -> torch.Tensor:
        return read_frames(self.frames_path)

    def to_line(self) -> str:
        a = self.annotation
        return json.dumps({
            "clip_id": self.clip_id,
            "frames_path": self.frames_path,
            "caption": self.caption,
            "task": a.task.value,
            "action": a.action.value,
            "quality": a.quality.value,
            "width": self.width,
            "height": self.height,
            "frame_count": self.frame_count,
            "session_id": a.session_id,
            "start_time": a.start_time,
            "end_time": a.end_time,
        }, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ClipRecord":
        annotation = SubStitchAnnotation(
            session_id=str(d.get("session_id", d["clip_id"])),
            task=d["task"],
            action=d["action"],
            quality=d["quality"],
            start_time=float(d.get("start_time", 0.0)),
            end_time=float(d.get("end_time", 1.0)),
        )
        return cls(
            clip_id=str(d["clip_id"]),
            frames_path=str(d["frames_path"]),
            caption=str(d["caption"]),
            annotation=annotation,
            width=int(d["width"]),
            height=int(d["height"]),
            frame_count=int(d["frame_count"]),
        )


class DatasetManifest:
    """
    Ordered index of clip records over a set of resolution buckets.
    """

    def __init__(self, records: Sequence[ClipRecord],
                 buckets: Sequence[ResolutionBucket]) -> None:
        self.records: list[ClipRecord] = list(records)
        self.buckets: list[ResolutionBucket] = list(buckets)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ClipRecord]:
        return iter(self.records)

    def __getitem__(self, ind: int) -> ClipRecord:
        return self.records[ind]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return (self.records == other.records
                and [b.dims for b in self.buckets] == [b.dims for b in other.buckets])  # noqa: E501

    def bucket_of(self, record: ClipRecord) -> ResolutionBucket:
        """
        Get the bucket a record belongs to.

        Raises:
            BucketMismatch: if no bucket matches the record dims.
        """
        for bucket in self.buckets:
            if bucket.dims == record.dims:
                return bucket
        raise BucketMismatch(record.clip_id, record.dims)

    def by_bucket(self) -> dict[ResolutionBucket, list[ClipRecord]]:
        groups: dict[ResolutionBucket, list[ClipRecord]] = {b: [] for b in self.buckets}  # noqa: E501
        for record in self.records:
            groups[self.bucket_of(record)].append(record)
        return groups

    def to_lines(self) -> list[str]:
        """
        Header line with the declared buckets in order, then one line per
        record.
        """
        header = json.dumps({"buckets": [str(b) for b in self.buckets]})
        return [header] + [r.to_line() for r in self.records]

    @classmethod
    def parse_lines(cls, lines: Iterable[str]) -> "DatasetManifest":
        """
        Parse the output of `to_lines`. Without a bucket header, buckets are
        the distinct record dims in first-seen order.
        """
        rows = [json.loads(line) for line in lines if line.strip()]
        declared = None
        if rows and "buckets" in rows[0] and "clip_id" not in rows[0]:
            declared = [parse_bucket(b, f"buckets[{i}]")
                        for i, b in enumerate(rows.pop(0)["buckets"])]
        records = [ClipRecord.from_dict(row) for row in rows]
        if declared is not None:
            return cls(records, declared)
        buckets: list[ResolutionBucket] = []
        for r in records:
            bucket = ResolutionBucket(*r.dims)
            if bucket not in buckets:
                buckets.append(bucket)
        return cls(records, buckets)


def cut_clips(
        session_frames: torch.Tensor,
        annotations: Sequence[SubStitchAnnotation],
        fps: float,
        output_dir: str | Path) -> list[ClipRecord]:
    """
    Cut one clip per annotation out of a session video.

    The frame range of a span [start, end) is
    [floor(start * fps), floor(end * fps)), so adjacent annotations never
    share frames.

    Args:
        session_frames (torch.Tensor): (N, H, W, 3) session video.
        annotations (Sequence[SubStitchAnnotation]): labels on the session.
        fps (float): session frame rate.
        output_dir (str | Path): directory receiving one frame directory
            per clip.

    Raises:
        SpanOutOfRange: if a span ends after the last session frame or
            covers less than one frame.

    Returns:
        list[ClipRecord]: one record per annotation, in annotation order.
    """
    if fps <= 0:
        raise PreconditionError(f"fps must be positive, got {fps}")
    n_frames, height, width = (int(s) for s in session_frames.shape[:3])
    spans = []
    for a in annotations:
        start = math.floor(a.start_time * fps)
        end = math.floor(a.end_time * fps)
        if start < 0 or end > n_frames:
            raise SpanOutOfRange(
                f"{a.session_id} [{a.start_time}s, {a.end_time}s) needs frames "  # noqa: E501
                f"{start}..{end - 1} but the session has {n_frames} frames")
        if end <= start:
            raise SpanOutOfRange(
                f"{a.session_id} [{a.start_time}s, {a.end_time}s) covers no frame at {fps} fps")  # noqa: E501
        spans.append((start, end))

    output_dir = Path(output_dir)
    records = []
    for index, (a, (start, end)) in enumerate(zip(annotations, spans)):
        clip_id = f"{a.session_id}_{index:04d}"
        clip_dir = output_dir / clip_id
        write_frames(session_frames[start:end], clip_dir)
        records.append(ClipRecord(
            clip_id=clip_id,
            frames_path=str(clip_dir),
            caption=generate_caption(a),
            annotation=a,
            width=width,
            height=height,
            frame_count=end - start,
        ))
    logger.info(f"Cut {len(records)} clips from {len(annotations)} annotations")  # noqa  # pylint: disable=logging-fstring-interpolation
    return records


def build_manifest(
        records: Sequence[ClipRecord],
        buckets: Sequence[ResolutionBucket],
        temporal_compression: int = 4) -> DatasetManifest:
    """
    Build a manifest, checking every record against the declared buckets.

    Args:
        records (Sequence[ClipRecord]): clips in their stable order.
        buckets (Sequence[ResolutionBucket]): declared buckets.
        temporal_compression (int): codec f_t; bucket frame counts must be
            1 modulo this value.

    Raises:
        BucketMismatch: naming the first clip whose dims match no bucket.
        ShapeError: if a bucket breaks the frame-count law.
    """
    for bucket in buckets:
        bucket.validate(1, temporal_compression)
    manifest = DatasetManifest(records, buckets)
    for record in records:
        manifest.bucket_of(record)
    return manifest


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for line in manifest.to_lines():
            f.write(line + "\n")
    logger.info(f"Wrote manifest with {len(manifest)} records to {path}")  # noqa  # pylint: disable=logging-fstring-interpolation
    return path


def read_manifest(path: str | Path) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as f:
        return DatasetManifest.parse_lines(f)


def read_annotations(path: str | Path) -> list[SubStitchAnnotation]:
    """
    Read line-delimited annotations (session_id, task, action, quality,
    start_time, end_time per line).
    """
    with open(path, "r", encoding="utf-8") as f:
        return [SubStitchAnnotation.from_dict(json.loads(line))
                for line in f if line.strip()]


def write_annotations(annotations: Iterable[SubStitchAnnotation],
                      path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for a in annotations:
            f.write(json.dumps(a.to_dict()) + "\n")
    return path
