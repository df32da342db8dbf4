import pytest
import torch

from suturing_wm import (
    Action,
    ArtifactMissing,
    CodecConfig,
    ConfigError,
    CorruptCheckpoint,
    PreconditionError,
    Quality,
    ShapeError,
    Task,
    VideoCodec,
    decode,
    encode,
    latent_shape,
    load_codec,
    save_codec,
    train_codec,
)
from suturing_wm.checkpoint import parameter_hash
from conftest import TINY_BUCKET, toy_clip


@pytest.mark.parametrize("video, config, expected", [
    ((49, 512, 768, 3), CodecConfig(32, 8, 128, 16, 10_000_000), (7, 16, 24, 128)),
    ((17, 64, 64, 3), CodecConfig(), (5, 8, 8, 8)),
    ((49, 64, 96, 3), CodecConfig(8, 8), (7, 8, 12, 8)),
    ((121, 32, 64, 3), CodecConfig(8, 8), (16, 4, 8, 8)),
    ((1, 8, 8, 3), CodecConfig(), (1, 1, 1, 8)),
])
def test_latent_shape_law(video, config, expected):
    assert latent_shape(video, config) == expected


@pytest.mark.parametrize("video, word", [
    ((18, 64, 64, 3), "T-1"),
    ((17, 60, 64, 3), "height"),
    ((17, 64, 60, 3), "width"),
])
def test_latent_shape_errors_name_the_law(video, word):
    with pytest.raises(ShapeError, match=word):
        latent_shape(video, CodecConfig())


def test_frame_count_law_over_random_lengths():
    g = torch.Generator().manual_seed(0)
    for _ in range(500):
        frames = int(torch.randint(1, 257, (1,), generator=g))
        ft = [1, 2, 4, 8][int(torch.randint(4, (1,), generator=g))]
        config = CodecConfig(8, ft)
        if (frames - 1) % ft:
            with pytest.raises(ShapeError, match="T-1"):
                latent_shape((frames, 16, 24, 3), config)
            continue
        latent_frames, h, w, c = latent_shape((frames, 16, 24, 3), config)
        assert (latent_frames - 1) * ft + 1 == frames
        assert (h, w, c) == (2, 3, 8)


def test_decoded_length_over_random_lengths(tiny_codec):
    g = torch.Generator().manual_seed(1)
    for _ in range(5):
        frames = 1 + 4 * int(torch.randint(0, 8, (1,), generator=g))
        z = torch.randn(latent_shape((frames, 8, 8, 3), tiny_codec.config), generator=g)  # noqa: E501
        assert decode(z, tiny_codec).shape == (frames, 8, 8, 3)


def test_encode_decode_shapes(tiny_codec):
    torch.manual_seed(1)
    for frames, height, width in [(5, 16, 16), (9, 16, 24), (1, 8, 8), (13, 32, 8)]:  # noqa: E501
        clip = torch.rand(frames, height, width, 3) * 2 - 1
        z = encode(clip, tiny_codec)
        assert tuple(z.shape) == latent_shape(clip.shape, tiny_codec.config)
        out = decode(z, tiny_codec)
        assert out.shape == clip.shape
        assert float(out.abs().max()) <= 1.0


def test_desk_codec_shapes():
    codec = VideoCodec(CodecConfig()).eval()
    with torch.no_grad():
        z = codec.encode(toy_clip())
        assert z.shape == (5, 8, 8, 8)
        out = codec.decode(torch.zeros(5, 8, 8, 8))
    assert out.shape == (17, 64, 64, 3)
    assert float(out.abs().max()) <= 1.0


def test_batched_encode_matches_unbatched(tiny_codec):
    clips = torch.rand(2, 5, 16, 16, 3) * 2 - 1
    with torch.no_grad():
        batched = tiny_codec.encode(clips)
        single = torch.stack([tiny_codec.encode(c) for c in clips])
    torch.testing.assert_close(batched, single)


def test_first_latent_frame_depends_on_first_pixel_frame_only(tiny_codec):
    clip = torch.rand(9, 16, 16, 3) * 2 - 1
    perturbed = clip.clone()
    perturbed[1:] = torch.rand(8, 16, 16, 3) * 2 - 1
    with torch.no_grad():
        a, b = tiny_codec.encode(clip), tiny_codec.encode(perturbed)
    assert torch.equal(a[0], b[0])
    assert not torch.equal(a[1:], b[1:])


def test_parameter_budget():
    with pytest.raises(ConfigError) as e:
        VideoCodec(CodecConfig(hidden_channels=1024, parameter_budget=1000))
    assert e.value.field == "codec.parameter_budget"
    desk = VideoCodec(CodecConfig())
    assert sum(p.numel() for p in desk.parameters()) <= 1_000_000


def test_invalid_config_field():
    with pytest.raises(ConfigError) as e:
        CodecConfig(temporal_compression=0)
    assert e.value.field == "codec.temporal_compression"


def _tiny_clips():
    return [toy_clip(q, Action.DRIVING, t, seed=s, bucket=TINY_BUCKET)
            for q in Quality for t in Task for s in range(2)]


def test_train_codec(tiny_codec_config):
    clips = _tiny_clips()
    result = train_codec(clips, tiny_codec_config, steps=60, seed=0)
    assert len(result.losses) == 60
    assert result.losses[-1] < result.losses[0]
    assert float(result.codec.latent_scale) > 0
    with torch.no_grad():
        z = torch.cat([result.codec.encode(c).reshape(-1) for c in clips])
    assert float(z.std()) == pytest.approx(1.0, rel=1e-3)


def test_train_codec_is_deterministic(tiny_codec_config):
    clips = _tiny_clips()
    a = train_codec(clips, tiny_codec_config, steps=5, seed=3)
    b = train_codec(clips, tiny_codec_config, steps=5, seed=3)
    assert a.losses == b.losses
    assert parameter_hash(a.codec) == parameter_hash(b.codec)


def test_train_codec_needs_steps(tiny_codec_config):
    with pytest.raises(PreconditionError):
        train_codec(_tiny_clips(), tiny_codec_config, steps=0)


def test_train_codec_from_manifest(tiny_manifest, tiny_codec_config):
    result = train_codec(tiny_manifest, tiny_codec_config, steps=2, seed=0)
    assert len(result.losses) == 2


def test_checkpoint_round_trip(tmp_path, tiny_codec):
    tiny_codec.latent_scale.fill_(0.5)
    path = save_codec(tiny_codec, tmp_path / "codec.safetensors")
    loaded = load_codec(path, tiny_codec.config)
    for (name, a), (_, b) in zip(tiny_codec.state_dict().items(), loaded.state_dict().items()):  # noqa: E501
        assert torch.equal(a, b), name
    assert parameter_hash(loaded) == parameter_hash(tiny_codec)


def test_checkpoint_config_mismatch_names_field(tmp_path, tiny_codec, tiny_codec_config):  # noqa: E501
    path = save_codec(tiny_codec, tmp_path / "codec.safetensors")
    other = CodecConfig(spatial_compression=4, latent_channels=4, hidden_channels=32)  # noqa: E501
    with pytest.raises(CorruptCheckpoint, match="spatial_compression"):
        load_codec(path, other)


def test_truncated_checkpoint(tmp_path, tiny_codec):
    path = save_codec(tiny_codec, tmp_path / "codec.safetensors")
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CorruptCheckpoint):
        load_codec(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(ArtifactMissing):
        load_codec(tmp_path / "nope.safetensors")


@pytest.mark.slow
def test_constant_clips_reconstruct():
    clips = [torch.full((17, 64, 64, 3), v) for v in torch.linspace(-0.8, 0.8, 8).tolist()]  # noqa: E501
    result = train_codec(clips, CodecConfig(), steps=500, seed=0)
    with torch.no_grad():
        mse = torch.mean(torch.stack([((result.codec(c) - c) ** 2).mean() for c in clips]))  # noqa: E501
    assert float(mse) < 0.01
