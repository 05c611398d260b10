import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from birescale import autodiff as ad
from birescale.errors import ContractViolation
from birescale.model import ModelConfig, RescaleModel
from birescale.resample import resample
from birescale.serialize import serialize
from birescale.training import (Adam, LossSpec, TrainConfig, configs_from_mapping, effective_scale,
                                lr_dim, multi_cycle_loss, one_cycle_loss, parse_config, random_patch,
                                rec_loss, ref_loss, sample_scale, smoothed, train)

TINY = ModelConfig(width=6, blocks=1, features=6, svf_hidden=8, swf_hidden=4)


def test_lr_dim_rounding():
    assert lr_dim(48, 1.0) == 48
    assert lr_dim(48, 2.5) == 19
    assert 48 / lr_dim(48, 2.5) == pytest.approx(2.526315789)
    assert lr_dim(3, 2.0) == 2   # 1.5 rounds up
    assert lr_dim(10, 1000) == 1


def test_sample_scale_symmetric_and_asymmetric():
    rng = np.random.default_rng(0)
    sym = [sample_scale(TrainConfig(scale_low=1, scale_high=4), rng) for _ in range(50)]
    assert all(h == w for h, w in sym)
    asym = [sample_scale(TrainConfig(scale_low=1, scale_high=4, asymmetric=True), rng) for _ in range(50)]
    assert any(h != w for h, w in asym)
    assert all(12 <= v <= 48 for pair in sym + asym for v in pair)


def test_sample_scale_unit_range():
    rng = np.random.default_rng(1)
    assert sample_scale(TrainConfig(scale_low=1, scale_high=1), rng) == (48, 48)


def test_effective_scale_geometric_mean():
    assert effective_scale((48, 48), (19, 19)) == 48 / 19
    assert effective_scale((36, 12), (10, 10)) == pytest.approx(math.sqrt(3.6 * 1.2))


def test_rec_loss_examples():
    x = np.full((3, 4, 4), 0.5)
    assert rec_loss(x, x).item() == 0
    assert rec_loss(x, x + 0.1, "Ls", 2.0).item() == pytest.approx(0.05)
    assert rec_loss(x, x + 0.1, "L1").item() == rec_loss(x, x + 0.1, "Ls", 1.0).item()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(1.0, 6.0))
def test_ls_times_scale_is_l1(seed, s):
    rng = np.random.default_rng(seed)
    x, y = rng.random((3, 5, 5)), rng.random((3, 5, 5))
    l1 = rec_loss(x, y, "L1").item()
    assert rec_loss(x, y, "Ls", s).item() * s == pytest.approx(l1, rel=1e-15)


def test_rec_loss_shape_mismatch():
    with pytest.raises(ContractViolation, match="rec_loss"):
        rec_loss(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


def test_ref_loss_examples():
    rng = np.random.default_rng(2)
    x = rng.random((3, 12, 12))
    ref = resample(x, 7, 7, "bicubic")
    assert ref_loss(x, ref, "L2_pixel").item() == 0
    assert ref_loss(x, ref + 0.1, "L2_pixel").item() == pytest.approx(0.01)
    flat = np.full((3, 12, 12), 0.4)
    for kind in ("L2_pixel", "L2_chroma", "L2_mean", "none"):
        assert ref_loss(flat, np.full((3, 5, 5), 0.4), kind).item() == pytest.approx(0, abs=1e-24)
    assert ref_loss(flat, np.full((3, 5, 5), 0.5), "L2_mean").item() == pytest.approx(0.01)


def test_chroma_loss_ignores_luma_shift():
    x = np.random.default_rng(3).random((3, 12, 12))
    ref = resample(x, 6, 6, "bicubic")
    # equal RGB offsets change Y only (Cb/Cr rows sum to zero)
    assert ref_loss(x, ref + 0.1, "L2_chroma").item() == pytest.approx(0, abs=1e-12)
    assert ref_loss(x, ref + [[[0.1]], [[0]], [[0]]], "L2_chroma").item() > 0


def test_ref_loss_rejects_larger_lr():
    with pytest.raises(ContractViolation, match="larger"):
        ref_loss(np.zeros((3, 4, 4)), np.zeros((3, 5, 4)))


def test_loss_spec_defaults():
    assert LossSpec(ref_kind="L2_chroma").lambda2 == 2.0
    assert LossSpec(ref_kind="L2_pixel").lambda2 == 1.0
    assert LossSpec(ref_kind="L2_chroma", lambda2=0.5).lambda2 == 0.5
    with pytest.raises(ContractViolation):
        LossSpec(lambda1=0)
    with pytest.raises(ContractViolation):
        LossSpec(cycles=0)


@pytest.fixture(scope="module")
def tiny():
    return RescaleModel.init(TINY, seed=1, dtype=np.float32, near_identity=False)


def test_multi_cycle_n1_is_one_cycle_bitwise(tiny):
    rng = np.random.default_rng(4)
    spec = LossSpec("Ls", "L2_mean", cycles=1)
    for _ in range(10):
        x = rng.random((3, 12, 12))
        size = (int(rng.integers(4, 13)), int(rng.integers(4, 13)))
        a, n = multi_cycle_loss(tiny, x, size, spec, rng)
        b = one_cycle_loss(tiny, x, size, spec)
        assert n == 1
        assert a.data.tobytes() == b.data.tobytes()


def test_two_cycles_change_the_gradient(tiny):
    x = np.random.default_rng(5).random((3, 10, 10))
    spec = LossSpec("L1", "none", cycles=2)
    params = tiny.parameters()

    def grads(n):
        with ad.Tape() as tape:
            loss, _ = multi_cycle_loss(tiny, x, (7, 7), spec, None, n=n)
        return np.concatenate([g.ravel() for g in tape.gradient(loss, params)])

    assert not np.allclose(grads(1), grads(2))


def test_lambda2_zero_ignores_reference(tiny):
    x = np.random.default_rng(6).random((3, 10, 10))
    plain = one_cycle_loss(tiny, x, (6, 6), LossSpec("L1", "none"))
    off = one_cycle_loss(tiny, x, (6, 6), LossSpec("L1", "L2_pixel", lambda2=0.0))
    assert plain.data.tobytes() == off.data.tobytes()


def test_ref_none_gives_zero_gradient(tiny):
    x = np.random.default_rng(7).random((3, 10, 10))
    params = tiny.parameters()
    with ad.Tape() as tape:
        from birescale.model import cycle
        lr, _ = cycle(tiny, x, 5, 5)
        loss = ad.add(ref_loss(x, lr, "none"), ad.scalar_mul(ad.mean(lr), 0.0))
    assert all(not g.any() for g in tape.gradient(loss, params))


def test_adam_first_step():
    p = ad.Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    opt.step([np.array([0.5, -3.0])])
    # bias-corrected first step moves every coordinate by lr * sign(g)
    np.testing.assert_allclose(p.data, [0.9, -1.9], rtol=1e-6)


def test_random_patch_shape():
    rng = np.random.default_rng(0)
    img = rng.random((3, 20, 30))
    for _ in range(20):
        assert random_patch(img, 16, rng).shape == (3, 16, 16)
    with pytest.raises(ContractViolation):
        random_patch(img, 21, rng)


def test_one_epoch_smoke_run():
    rng = np.random.default_rng(8)
    corpus = [rng.random((3, 16, 16)) for _ in range(4)]
    cfg = TrainConfig(batch=2, patch=12, steps=4, steps_per_epoch=4, model=TINY, lr=1e-3)
    res = train(cfg, None, corpus, "pretrain")
    assert len(res.curve) == 4
    assert all(math.isfinite(loss) for _, loss, _ in res.curve)
    assert res.model.use_swf is False


def test_seeded_runs_are_identical(tmp_path):
    rng = np.random.default_rng(9)
    corpus = [rng.random((3, 16, 16)) for _ in range(3)]
    cfg = TrainConfig(batch=2, patch=12, steps=3, model=TINY, lr=1e-3, seed=11,
                      checkpoint_dir=str(tmp_path / "a"), steps_per_epoch=2)
    a = train(cfg, LossSpec("Ls", "L2_mean", cycles=2), corpus, "finetune-N")
    b = train(cfg, LossSpec("Ls", "L2_mean", cycles=2), corpus, "finetune-N")
    assert serialize(a.model) == serialize(b.model)
    assert [p.name for p in a.checkpoints] == ["finetune-N_step000002.bair", "finetune-N_step000003.bair"]


def test_stages_leave_input_model_untouched(tiny):
    before = serialize(tiny)
    corpus = [np.random.default_rng(0).random((3, 16, 16))]
    train(TrainConfig(batch=1, patch=12, steps=1, model=TINY), None, corpus, "base", model=tiny)
    assert serialize(tiny) == before


def test_unknown_stage_and_empty_corpus():
    with pytest.raises(ContractViolation, match="stage"):
        train(TrainConfig(steps=1), None, [np.zeros((3, 48, 48))], "finetune")
    with pytest.raises(ContractViolation, match="empty"):
        train(TrainConfig(steps=1), None, [], "pretrain")


def test_fixed_batch_loss_decreases():
    rng = np.random.default_rng(10)
    batch = [rng.random((3, 16, 16)) for _ in range(4)]
    model = RescaleModel.init(TINY, seed=2)
    params = model.parameters()
    opt = Adam(params, lr=1e-3)
    spec = LossSpec("Ls", "L2_mean")
    losses = []
    for _ in range(200):
        with ad.Tape() as tape:
            loss = ad.scalar_mul(
                ad.add(ad.add(one_cycle_loss(model, batch[0], (11, 11), spec),
                              one_cycle_loss(model, batch[1], (11, 11), spec)),
                       ad.add(one_cycle_loss(model, batch[2], (11, 11), spec),
                              one_cycle_loss(model, batch[3], (11, 11), spec))), 0.25)
        opt.step(tape.gradient(loss, params))
        losses.append(loss.item())
    s = smoothed(losses, 10)
    assert s[-1] < s[0]
    assert s[-1] < 0.8 * s[0]


def test_config_file_parsing():
    raw = parse_config("""
        # desk run
        steps = 40
        lr = 5e-4
        asymmetric = on
        model.width = 12
        ref_kind = L2_chroma
        stage = base
    """)
    cfg, loss, stage, init = configs_from_mapping(raw)
    assert cfg.steps == 40 and cfg.lr == 5e-4 and cfg.asymmetric is True
    assert cfg.model.width == 12
    assert loss.ref_kind == "L2_chroma" and loss.lambda2 == 2.0
    assert stage == "base" and init is None


@pytest.mark.parametrize("text,match", [("steps 40", "key = value"), ("colour = red", "unknown key"),
                                        ("steps = many", "invalid literal")])
def test_config_errors(text, match):
    with pytest.raises(ContractViolation, match=match):
        configs_from_mapping(parse_config(text))
