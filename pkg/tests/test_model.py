import numpy as np
import pytest

from mwnet.checkpoint import CheckpointError, load_tensors, save_tensors
from mwnet.model import ModelConfig, MWNet, load_model, save_model

TINY = dict(num_stages=2, channels=(4, 6), blocks=(1, 1), decoder_width=4, resolution=32,
            section_length=4)


def tiny(**changes):
    return ModelConfig(**{**TINY, **changes})


def clip(rng, t=5, size=32):
    return rng.random((t, size, size))


def test_single_frame_runs_with_empty_memory(rng):
    out = MWNet(tiny()).forward_section(clip(rng, 1))
    assert out.shape == (1, 1, 32, 32)


def test_one_mask_per_frame_in_unit_interval(rng):
    model = MWNet(tiny())
    preds = model.predict(clip(rng, 7))
    assert preds.shape == (7, 32, 32)
    assert np.all((preds > 0) & (preds < 1))


@pytest.mark.parametrize("size", [32, 64, 96, 128])
def test_output_matches_input_resolution(rng, size):
    model = MWNet(tiny(resolution=size))
    assert model.predict(clip(rng, 2, size)).shape == (2, size, size)


@pytest.mark.parametrize("changes", [dict(memory=False), dict(hff=False),
                                     dict(backbone="plainconv"), dict(basis="haar"),
                                     dict(num_stages=1, channels=(4,), blocks=(1,))])
def test_variants_build_and_run(rng, changes):
    model = MWNet(tiny(**changes))
    assert model.predict(clip(rng, 3)).shape == (3, 32, 32)


def test_no_memory_variant_has_no_temporal_or_bank_parameters():
    names = [n for n, _ in MWNet(tiny(memory=False)).named_parameters()]
    assert not any(n.startswith(("bank.", "encoder.temporal")) for n in names)
    full = [n for n, _ in MWNet(tiny()).named_parameters()]
    assert any(n.startswith("bank.") for n in full)


def test_sections_are_independent(rng):
    model = MWNet(tiny(section_length=3))
    frames = clip(rng, 6)
    whole = model.predict(frames)
    np.testing.assert_allclose(whole[3:], model.predict(frames[3:]), atol=1e-6)
    # the bank is reset, so running a section twice is reproducible
    np.testing.assert_array_equal(model.predict(frames[:3]), model.predict(frames[:3]))


def test_memory_carries_context_within_a_section(rng):
    model = MWNet(tiny(section_length=6))
    frames = clip(rng, 6)
    with_history = model.predict(frames)[-1]
    alone = model.predict(frames[-1:])[0]
    assert np.abs(with_history - alone).max() > 1e-6


def test_resolution_must_divide():
    with pytest.raises(ValueError, match="divisible"):
        tiny(resolution=40)
    model = MWNet(tiny())
    with pytest.raises(ValueError, match="divisible"):
        model.forward_section(np.zeros((2, 24, 24)))
    with pytest.raises(ValueError, match="frames"):
        model.forward_section(np.zeros((32, 32)))


def test_config_text_round_trip(tmp_path):
    cfg = tiny(lr=3e-4, memory=False, basis="symlet2")
    assert ModelConfig.from_text(cfg.to_text()) == cfg
    path = tmp_path / "a.cfg"
    path.write_text("# comment\nchannels = 8, 16\nnum_stages = 2\nblocks=1,1\n"
                    "resolution = 32\nhff = false  # trailing\n")
    got = ModelConfig.from_file(path, steps=7)
    assert got.channels == (8, 16) and got.hff is False and got.steps == 7


@pytest.mark.parametrize("text,match", [
    ("bogus = 1\n", "unknown key 'bogus'"),
    ("channels\n", "expected 'key = value'"),
    ("memory = maybe\n", "not a boolean"),
    ("basis = coif1\n", "unknown basis"),
])
def test_config_rejects_bad_text(text, match):
    with pytest.raises(ValueError, match=match):
        ModelConfig.from_text(text)


def test_checkpoint_round_trip(tmp_path, rng):
    model = MWNet(tiny(seed=3, hff=False))
    path = tmp_path / "m.ckpt"
    save_model(model, path)
    back = load_model(path)
    assert back.cfg == model.cfg
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), back.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.data, p2.data)
    frames = clip(rng, 3)
    np.testing.assert_array_equal(model.predict(frames), back.predict(frames))


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "m.ckpt"
    save_tensors(path, {"a": np.ones((2, 3))})
    np.testing.assert_array_equal(load_tensors(path)["a"], np.ones((2, 3)))
    good = path.read_bytes()
    cases = {
        "magic": b"XXXX" + good[4:],
        "truncated": good[:-3],
        "trailing": good + b"\0",
        "version": good[:4] + b"\x09" + good[5:],
    }
    for name, blob in cases.items():
        path.write_bytes(blob)
        with pytest.raises(CheckpointError):
            load_tensors(path)
    save_tensors(path, {"a": np.ones(2)})
    with pytest.raises(CheckpointError, match="config"):
        load_model(path)


def test_checkpoint_rejects_mismatched_architecture(tmp_path):
    path = tmp_path / "m.ckpt"
    save_model(MWNet(tiny()), path)
    tensors = load_tensors(path)
    tensors.pop(next(k for k in tensors if k.startswith("decoder.")))
    save_tensors(path, tensors)
    with pytest.raises(KeyError, match="missing"):
        load_model(path)
