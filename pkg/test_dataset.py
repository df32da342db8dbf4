import numpy as np
import pytest
import torch

from suturing_wm import (
    ArtifactMissing,
    BucketMismatch,
    ClipRecord,
    ConfigError,
    DatasetManifest,
    ResolutionBucket,
    ShapeError,
    SpanOutOfRange,
    TrainingBucket,
    build_manifest,
    cut_clips,
    export_container,
    from_uint8,
    generate_caption,
    list_frames,
    parse_bucket,
    read_annotations,
    read_frames,
    read_manifest,
    write_annotations,
    write_frames,
    write_manifest,
)
from conftest import annotation_for, toy_clip


def _session(frames=100, height=16, width=16):
    # frame i is filled with value i so clip ranges are easy to read back
    values = np.arange(frames, dtype=np.uint8)[:, None, None, None]
    return from_uint8(np.broadcast_to(values, (frames, height, width, 3)).copy())  # noqa: E501


def _first_values(clip: torch.Tensor) -> list[int]:
    return [int(round((float(f[0, 0, 0]) + 1.0) * 127.5)) for f in clip]


def test_cut_clips_frame_range(tmp_path):
    a = annotation_for(start=1.0, end=2.0)
    records = cut_clips(_session(), [a], 10.0, tmp_path)
    assert len(records) == 1
    record = records[0]
    assert record.frame_count == 10
    assert record.caption == generate_caption(a)
    assert _first_values(record.load()) == list(range(10, 20))


def test_cut_clips_adjacent_spans_share_no_frame(tmp_path):
    spans = [annotation_for(start=0.0, end=1.05), annotation_for(start=1.05, end=2.0)]  # noqa: E501
    first, second = cut_clips(_session(), spans, 10.0, tmp_path)
    assert _first_values(first.load())[-1] == 9
    assert _first_values(second.load())[0] == 10


def test_cut_clips_edge_cases(tmp_path):
    assert cut_clips(_session(), [], 10.0, tmp_path) == []
    with pytest.raises(SpanOutOfRange):
        cut_clips(_session(), [annotation_for(start=9.5, end=11.0)], 10.0, tmp_path)  # noqa: E501
    with pytest.raises(SpanOutOfRange):
        cut_clips(_session(), [annotation_for(start=1.0, end=1.05)], 10.0, tmp_path)  # noqa: E501


def _record(tmp_path, clip_id, bucket):
    a = annotation_for(session_id=clip_id)
    return ClipRecord(clip_id, str(tmp_path / clip_id), generate_caption(a), a,
                      bucket.width, bucket.height, bucket.frame_count)


def test_build_manifest_and_round_trip(tmp_path):
    bucket = ResolutionBucket(64, 64, 17)
    records = [_record(tmp_path, f"c{i}", bucket) for i in range(3)]
    manifest = build_manifest(records, [bucket])
    assert len(manifest) == 3
    assert manifest.buckets == [bucket]
    assert [r.clip_id for r in manifest] == ["c0", "c1", "c2"]

    path = write_manifest(manifest, tmp_path / "manifest.jsonl")
    assert read_manifest(path) == manifest


def test_manifest_round_trip_keeps_declared_buckets(tmp_path):
    small, large = ResolutionBucket(16, 16, 5), ResolutionBucket(32, 32, 9)
    unused = ResolutionBucket(48, 48, 13)
    records = [_record(tmp_path, "a", large), _record(tmp_path, "b", small)]
    manifest = build_manifest(records, [small, large, unused])

    back = read_manifest(write_manifest(manifest, tmp_path / "manifest.jsonl"))  # noqa: E501
    assert back == manifest
    assert back.buckets == [small, large, unused]
    assert [r.clip_id for r in back] == ["a", "b"]
    assert back.by_bucket()[unused] == []


def test_manifest_without_bucket_header(tmp_path):
    bucket = ResolutionBucket(16, 16, 5)
    lines = [_record(tmp_path, "a", bucket).to_line()]
    manifest = DatasetManifest.parse_lines(lines)
    assert manifest.buckets == [bucket]
    assert len(manifest) == 1


def test_build_manifest_bucket_mismatch(tmp_path):
    odd = _record(tmp_path, "odd", ResolutionBucket(48, 48, 17))
    with pytest.raises(BucketMismatch) as e:
        build_manifest([odd], [ResolutionBucket(64, 64, 17)])
    assert e.value.clip_id == "odd"
    assert "odd" in str(e.value)


def test_build_manifest_rejects_bad_frame_count(tmp_path):
    with pytest.raises(ShapeError):
        build_manifest([], [ResolutionBucket(64, 64, 18)], temporal_compression=4)  # noqa: E501


def test_manifest_groups_by_bucket(tmp_path):
    small, large = ResolutionBucket(16, 16, 5), ResolutionBucket(64, 64, 17)
    records = [_record(tmp_path, "a", small), _record(tmp_path, "b", large),
               _record(tmp_path, "c", small)]
    groups = DatasetManifest(records, [small, large]).by_bucket()
    assert [r.clip_id for r in groups[small]] == ["a", "c"]
    assert [r.clip_id for r in groups[large]] == ["b"]


def test_caption_must_match_annotation(tmp_path):
    a = annotation_for()
    with pytest.raises(ValueError):
        ClipRecord("x", str(tmp_path), "An ideal clip of a needle positioning action during a railroad task.",  # noqa: E501
                   a, 16, 16, 5)


def test_annotations_round_trip(tmp_path):
    annotations = [annotation_for(session_id="s1", start=0.0, end=1.0),
                   annotation_for(session_id="s1", start=1.0, end=2.5)]
    path = write_annotations(annotations, tmp_path / "a.jsonl")
    assert read_annotations(path) == annotations


def test_frames_are_lossless(tmp_path):
    clip = toy_clip()
    paths = write_frames(clip, tmp_path / "clip")
    assert [p.name for p in paths][:2] == ["00000.png", "00001.png"]
    assert len(list_frames(tmp_path / "clip")) == 17
    assert torch.equal(read_frames(tmp_path / "clip"), clip)


def test_read_frames_missing(tmp_path):
    with pytest.raises(ArtifactMissing):
        read_frames(tmp_path / "nothing")


def test_export_container(tmp_path):
    clip = toy_clip()
    path = export_container(clip, tmp_path / "clip.npz")
    with np.load(path) as archive:
        frames = archive["frames"]
    assert frames.shape == (17, 64, 64, 3)
    assert torch.equal(from_uint8(frames), clip)


def test_parse_bucket():
    assert parse_bucket("64x64x17") == ResolutionBucket(64, 64, 17)
    assert str(parse_bucket(" 96 x 64 x 49 ")) == "96x64x49"
    with pytest.raises(ConfigError) as e:
        parse_bucket("64x64", "sampling.bucket")
    assert e.value.field == "sampling.bucket"


def test_scaled_training_buckets():
    scaled = {b.name: b.value.scaled(8) for b in TrainingBucket}
    assert scaled["T2V"] == ResolutionBucket(96, 64, 49)
    assert scaled["I2V_LANDSCAPE"] == ResolutionBucket(128, 72, 49)
    assert scaled["I2V_WIDE"] == ResolutionBucket(120, 56, 65)
    assert scaled["I2V_LONG"] == ResolutionBucket(64, 32, 121)
    for bucket in scaled.values():
        bucket.validate(8, 8)


def test_bucket_validate_frame_law():
    for frames in (49, 65, 121):
        ResolutionBucket(64, 64, frames).validate(8, 8)
    with pytest.raises(ShapeError):
        ResolutionBucket(64, 64, 48).validate(8, 8)
    with pytest.raises(ShapeError):
        ResolutionBucket(60, 64, 49).validate(8, 8)
