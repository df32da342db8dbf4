import pytest
from omegaconf import OmegaConf

from suturing_wm import (
    ConfigError,
    GuidanceConfig,
    GuidanceMode,
    ModelProfile,
    ResolutionBucket,
    TrainMode,
    default_guidance,
    profile_info,
)
from suturing_wm.run_config import load_run_config
from conftest import DESK_CONFIG


def _load(*overrides, output_dir="runs/test"):
    return load_run_config(DESK_CONFIG, overrides, default_output_dir=output_dir)


def test_desk_defaults():
    cfg = _load()
    assert cfg.profile is ModelProfile.LTX_T2V
    assert cfg.guidance.mode is GuidanceMode.CFG
    assert cfg.guidance.scale == 3.0
    assert cfg.train.mode is TrainMode.LORA
    assert cfg.train.steps == 2000
    assert cfg.train.epochs == 3
    assert not cfg.image_to_video
    assert cfg.sampling.bucket == ResolutionBucket(64, 64, 17)
    assert cfg.data.buckets == (ResolutionBucket(64, 64, 17),)
    assert cfg.codec.latent_channels == cfg.denoiser.latent_channels == 8
    assert cfg.oracle.jerk_threshold == 0.03


def test_overrides():
    cfg = _load("seed=7", "guidance.scale=5.5", "train.mode=full_finetune",
                "sampling.bucket=96x64x49", "data.buckets=[16x16x5,96x64x49]",
                "codec.latent_channels=4")
    assert cfg.seed == cfg.train.seed == 7
    assert cfg.guidance.scale == 5.5
    assert cfg.train.mode is TrainMode.FULL_FINETUNE
    assert cfg.sampling.bucket == ResolutionBucket(96, 64, 49)
    assert len(cfg.data.buckets) == 2
    assert cfg.denoiser.latent_channels == 4


def test_stg_defaults_to_middle_layers():
    cfg = _load("guidance.mode=stg")
    assert cfg.guidance.skip_layers == frozenset({1, 2})
    cfg = _load("guidance.mode=stg", "guidance.skip_layers=[0]")
    assert cfg.guidance.skip_layers == frozenset({0})


@pytest.mark.parametrize("override, field", [
    ("train.foo=1", "train.foo"),
    ("bogus=1", "bogus"),
    ("guidance.weight=2", "guidance.weight"),
    ("sampling.bucket=60x64x17", "sampling.bucket"),
    ("sampling.bucket=64x64", "sampling.bucket"),
    ("data.buckets=[64x64x18]", "data.buckets[0]"),
    ("guidance.skip_layers=[7]", "guidance.skip_layers"),
    ("guidance.mode=apg", "guidance.mode"),
    ("profile=sora", "profile"),
    ("train.condition_dropout_prob=2.0", "train.condition_dropout_prob"),
    ("lora.rank=0", "lora.rank"),
    ("sampling.steps=0", "sampling.steps"),
    ("denoiser.latent_channels=4", "denoiser.latent_channels"),
    ("train.seed=3", "train.seed"),
])
def test_invalid_fields_are_named(override, field):
    with pytest.raises(ConfigError) as e:
        _load(override)
    assert e.value.field == field


def test_guidance_skip_layers_checked_with_stg():
    with pytest.raises(ConfigError) as e:
        _load("guidance.mode=stg", "guidance.skip_layers=[4]")
    assert e.value.field == "guidance.skip_layers"


def test_output_dir_required():
    with pytest.raises(ConfigError) as e:
        load_run_config(DESK_CONFIG)
    assert e.value.field == "output_dir"
    cfg = load_run_config(DESK_CONFIG, ["output_dir=elsewhere"], default_output_dir="ignored")  # noqa: E501
    assert str(cfg.output_dir) == "elsewhere"


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError) as e:
        load_run_config(tmp_path / "nope.yaml", default_output_dir=tmp_path)
    assert e.value.field == "config"


def test_hunyuan_profile():
    cfg = _load("profile=hunyuan-t2v")
    assert cfg.guidance.mode is GuidanceMode.CFG
    assert cfg.guidance.scale == 6.0


def test_ltx_i2v_profile():
    cfg = _load("profile=ltx-i2v")
    assert cfg.guidance.mode is GuidanceMode.STG
    assert cfg.guidance.skip_layers == frozenset({1, 2})
    assert cfg.image_to_video
    assert cfg.train.epochs == 30
    cfg = _load("profile=ltx-i2v", "train.image_to_video=false", "train.epochs=2")  # noqa: E501
    assert not cfg.image_to_video
    assert cfg.train.epochs == 2


def test_resolved_yaml_includes_defaults():
    text = _load("profile=ltx-i2v").to_yaml()
    assert "profile: ltx-i2v" in text
    assert "mode: stg" in text
    assert "image_to_video: true" in text


def test_minimal_yaml_echoes_every_default(tmp_path):
    path = tmp_path / "minimal.yaml"
    path.write_text("profile: ltx-t2v\n")
    cfg = load_run_config(path, default_output_dir=tmp_path / "out")
    echoed = OmegaConf.create(cfg.to_yaml())
    assert echoed.codec.hidden_channels == 128
    assert echoed.codec.spatial_compression == 8
    assert echoed.codec.training.steps == 500
    assert echoed.denoiser.layers == 4
    assert echoed.denoiser.model_width == 96
    assert echoed.denoiser.qk_normalization is True
    assert echoed.guidance.mode == "cfg"
    assert echoed.guidance.scale == 3.0
    assert echoed.lora.rank == 8
    assert echoed.train.condition_dropout_prob == 0.1
    assert echoed.train.epochs == 3
    assert echoed.sampling.bucket == "64x64x17"
    assert list(echoed.data.buckets) == ["64x64x17"]
    assert echoed.oracle.jerk_threshold == 0.03
    assert echoed.eval.seeds_per_class == 20


def test_resolved_yaml_reloads_to_same_config(tmp_path):
    cfg = _load("profile=ltx-i2v", "seed=5", "guidance.scale=2.0")
    path = tmp_path / "resolved.yaml"
    path.write_text(cfg.to_yaml())
    assert load_run_config(path) == cfg


def test_profile_table():
    assert profile_info("ltx-t2v").buckets == (ResolutionBucket(768, 512, 49),)
    assert len(profile_info(ModelProfile.LTX_I2V).buckets) == 3
    assert default_guidance("hunyuan-t2v", 4) == GuidanceConfig.cfg(6.0)
    assert default_guidance("ltx-i2v", 6) == GuidanceConfig.stg(1.0, {2, 3})
