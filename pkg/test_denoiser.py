import dataclasses

import pytest
import torch

from suturing_wm import (
    NULL_CLASS_INDEX,
    NULL_CONDITION,
    Action,
    ConditioningSignal,
    ConfigError,
    CorruptCheckpoint,
    Denoiser,
    DenoiserConfig,
    InvalidLayerIndex,
    PreconditionError,
    Quality,
    ShapeError,
    Task,
    UnknownClassId,
    apply_first_frame_conditioning,
    denoise,
    embed_condition,
    load_denoiser,
    positional_embedding_3d,
    save_denoiser,
)
from suturing_wm.checkpoint import check_config, load_checkpoint, parameter_hash, save_checkpoint  # noqa: E501

IDEAL_DRIVING = (Quality.IDEAL, Action.DRIVING, Task.RAILROAD)


def _inputs(batch=2, shape=(2, 2, 2, 4)):
    torch.manual_seed(5)
    x = torch.randn(batch, *shape)
    t = torch.rand(batch)
    index = torch.tensor([3, NULL_CLASS_INDEX])[:batch]
    return x, t, index


def test_forward_shape_and_determinism(tiny_denoiser):
    x, t, index = _inputs()
    with torch.no_grad():
        a = tiny_denoiser(x, t, index)
        b = tiny_denoiser(x, t, index)
        c = tiny_denoiser(x, t, index, skip_layers=frozenset())
    assert a.shape == x.shape
    assert torch.equal(a, b)
    assert torch.equal(a, c)


def test_skip_all_layers_is_embedding_plus_projection(tiny_denoiser):
    x, t, index = _inputs()
    with torch.no_grad():
        out = tiny_denoiser(x, t, index, skip_layers=frozenset(range(3)))
        h = tiny_denoiser.in_proj(x)
        h = h + positional_embedding_3d(2, 2, 2, 24)
        h = h + tiny_denoiser.time_embedding(t[:, None].expand(2, 2))[:, :, None, None, :]  # noqa: E501
        expected = tiny_denoiser.proj_out(tiny_denoiser.norm_out(h))
    torch.testing.assert_close(out, expected)


def test_skipping_changes_output(tiny_denoiser):
    x, t, index = _inputs()
    with torch.no_grad():
        full = tiny_denoiser(x, t, index)
        skipped = tiny_denoiser(x, t, index, skip_layers=frozenset({1}))
    assert not torch.allclose(full, skipped)


@pytest.mark.parametrize("skip", [{0}, {1}, {2}, {0, 2}])
def test_skipping_equals_model_without_those_layers(tiny_denoiser, tiny_denoiser_config, skip):  # noqa: E501
    kept = [i for i in range(tiny_denoiser.num_layers) if i not in skip]
    smaller = Denoiser(dataclasses.replace(tiny_denoiser_config, layers=len(kept))).eval()  # noqa: E501
    state = {}
    for key, value in tiny_denoiser.state_dict().items():
        if key.startswith("blocks."):
            _, i, rest = key.split(".", 2)
            if int(i) in skip:
                continue
            key = f"blocks.{kept.index(int(i))}.{rest}"
        state[key] = value
    smaller.load_state_dict(state, strict=True)
    x, t, index = _inputs()
    with torch.no_grad():
        expected = smaller(x, t, index)
        skipped = tiny_denoiser(x, t, index, skip_layers=frozenset(skip))
    assert torch.equal(skipped, expected)


def test_invalid_skip_layer(tiny_denoiser):
    x, t, index = _inputs()
    with pytest.raises(InvalidLayerIndex):
        tiny_denoiser(x, t, index, skip_layers=frozenset({3}))
    with pytest.raises(InvalidLayerIndex):
        tiny_denoiser(x, t, index, skip_layers=frozenset({-1}))


def test_shape_errors(tiny_denoiser):
    with pytest.raises(ShapeError):
        tiny_denoiser(torch.zeros(1, 2, 2, 2, 5), torch.zeros(1), torch.zeros(1, dtype=torch.long))  # noqa: E501
    with pytest.raises(ShapeError):
        denoise(tiny_denoiser, torch.zeros(1, 2, 2, 2, 4), 0.5, NULL_CONDITION)
    with pytest.raises(PreconditionError):
        denoise(tiny_denoiser, torch.zeros(2, 2, 2, 4), 1.5, NULL_CONDITION)


def test_qk_vectors_are_unit_norm(tiny_denoiser):
    norms = []

    def record(q, k):
        norms.append(q.norm(dim=-1))
        norms.append(k.norm(dim=-1))

    for block in tiny_denoiser.blocks:
        block.attn.qk_hook = record
    x, t, index = _inputs()
    with torch.no_grad():
        tiny_denoiser(x, t, index)
    assert len(norms) == 6
    for n in norms:
        torch.testing.assert_close(n, torch.ones_like(n), atol=1e-5, rtol=0)


def test_denoise_matches_batched_forward(tiny_denoiser):
    cond = ConditioningSignal(class_ids=IDEAL_DRIVING)
    x = torch.randn(2, 2, 2, 4)
    with torch.no_grad():
        single = denoise(tiny_denoiser, x, 0.3, cond)
        batched = tiny_denoiser(x[None], torch.tensor([0.3]),
                                torch.tensor([cond.class_index]))[0]
    torch.testing.assert_close(single, batched)


def test_embed_condition(tiny_denoiser):
    null = embed_condition(tiny_denoiser, NULL_CONDITION)
    torch.testing.assert_close(null, tiny_denoiser.class_embedding.weight[NULL_CLASS_INDEX])  # noqa: E501
    ideal = embed_condition(tiny_denoiser, ConditioningSignal(class_ids=IDEAL_DRIVING))  # noqa: E501
    rough = embed_condition(tiny_denoiser, ConditioningSignal(
        class_ids=(Quality.NON_IDEAL, Action.DRIVING, Task.RAILROAD)))
    assert not torch.equal(ideal, rough)
    assert not torch.equal(ideal, null)
    with pytest.raises(UnknownClassId):
        embed_condition(tiny_denoiser, ConditioningSignal(class_ids=("great", "driving", "railroad")))  # noqa: E501


def test_conditioning_signal():
    cond = ConditioningSignal.from_caption(
        "An ideal clip of a needle driving action during a railroad task.")
    assert cond.class_ids == IDEAL_DRIVING
    assert not cond.image_to_video
    assert cond.dropped().class_index == NULL_CLASS_INDEX
    assert torch.equal(cond.frame_mask(3), torch.zeros(3))

    i2v = ConditioningSignal.with_first_frame(IDEAL_DRIVING, torch.ones(2, 2, 4), 3)  # noqa: E501
    assert i2v.first_frame_latent.shape == (1, 2, 2, 4)
    assert torch.equal(i2v.frame_mask(3), torch.tensor([1.0, 0.0, 0.0]))
    dropped = i2v.dropped()
    assert dropped.class_ids is None and dropped.image_to_video
    with pytest.raises(ShapeError):
        i2v.frame_mask(4)


def test_first_frame_conditioning():
    x = torch.randn(3, 2, 2, 4)
    frame = torch.randn(1, 2, 2, 4)
    cond = ConditioningSignal.with_first_frame(IDEAL_DRIVING, frame, 3)
    out = apply_first_frame_conditioning(x, cond)
    assert torch.equal(out[0], frame[0])
    assert torch.equal(out[1:], x[1:])
    assert not torch.equal(x[0], frame[0])

    batched = apply_first_frame_conditioning(torch.randn(2, 3, 2, 2, 4), cond)
    assert torch.equal(batched[:, 0], frame.expand(2, 2, 2, 4))

    with pytest.raises(PreconditionError):
        apply_first_frame_conditioning(x, ConditioningSignal(class_ids=IDEAL_DRIVING))  # noqa: E501
    with pytest.raises(ShapeError):
        apply_first_frame_conditioning(torch.randn(3, 4, 4, 4), cond)


def test_clean_frame_sees_time_zero(tiny_denoiser):
    x, _, index = _inputs(batch=1)
    mask = torch.tensor([[1.0, 0.0]])
    with torch.no_grad():
        a = tiny_denoiser(x, torch.tensor([0.2]), index, mask)
        b = tiny_denoiser(x, torch.tensor([0.9]), index, mask)
    assert not torch.allclose(a, b)


def test_config_validation():
    with pytest.raises(ConfigError) as e:
        DenoiserConfig(model_width=30, heads=4)
    assert e.value.field == "denoiser.model_width"
    with pytest.raises(ConfigError) as e:
        DenoiserConfig(layers=0)
    assert e.value.field == "denoiser.layers"


def test_checkpoint_round_trip(tmp_path, tiny_denoiser):
    path = save_denoiser(tiny_denoiser, tmp_path / "denoiser.safetensors")
    loaded = load_denoiser(path)
    assert loaded.config == tiny_denoiser.config
    assert parameter_hash(loaded) == parameter_hash(tiny_denoiser)
    x, t, index = _inputs()
    with torch.no_grad():
        assert torch.equal(loaded(x, t, index), tiny_denoiser(x, t, index))


def test_checkpoint_kind_is_checked(tmp_path, tiny_denoiser):
    path = save_denoiser(tiny_denoiser, tmp_path / "denoiser.safetensors")
    with pytest.raises(CorruptCheckpoint, match="codec"):
        load_checkpoint(path, "codec")


def test_checkpoint_tensors_must_fit_config(tmp_path, tiny_denoiser):
    config = {**tiny_denoiser.config.to_dict(), "layers": 4}
    path = save_checkpoint(tiny_denoiser.state_dict(), tmp_path / "d.safetensors", "denoiser", config)  # noqa: E501
    with pytest.raises(CorruptCheckpoint):
        load_denoiser(path)


def test_check_config_names_field():
    with pytest.raises(CorruptCheckpoint, match="'layers'"):
        check_config({"layers": 3, "heads": 2}, {"heads": 2, "layers": 4})


def test_parameter_hash_tracks_every_tensor(tiny_denoiser):
    before = parameter_hash(tiny_denoiser)
    assert before == parameter_hash(tiny_denoiser)
    with torch.no_grad():
        tiny_denoiser.blocks[0].attn.logit_scale.add_(1e-3)
    assert parameter_hash(tiny_denoiser) != before


@pytest.mark.parametrize("width", [6, 32, 96])
def test_positional_embedding_shape(width):
    assert positional_embedding_3d(2, 3, 4, width).shape == (2, 3, 4, width)


def test_desk_denoiser_shapes():
    model = Denoiser(DenoiserConfig()).eval()
    with torch.no_grad():
        out = model(torch.randn(1, 5, 8, 8, 8), torch.tensor([0.5]), torch.tensor([0]))  # noqa: E501
    assert out.shape == (1, 5, 8, 8, 8)
