import numpy as np
import numpy.testing as npt
import pytest

from mcit import model as mdl
from mcit import train as tr
from mcit.autograd import Parameter, Tensor
from mcit.backbone import BackboneConfig
from mcit.errors import ConfigError, TrainingDiverged
from mcit.synth import SynthConfig


def tiny_train_config(**kw):
    model = mdl.ModelConfig(
        backbone=BackboneConfig(dim=16, depth=2, n_groups=2, heads=2,
                                template_size=32, search_size=32,
                                clip_len=2),
        state_size=4, cif_heads=2)
    defaults = dict(model=model,
                    data=SynthConfig(length=8, image_size=64),
                    num_sequences=4, epochs=2, samples_per_epoch=4,
                    batch_size=2, lr_drop_epoch=1, seed=0)
    defaults.update(kw)
    return tr.TrainConfig(**defaults)


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny_train_config(lr_backbone=0.0)
    with pytest.raises(ConfigError):
        tiny_train_config(lr_drop_epoch=5, epochs=4)
    with pytest.raises(ConfigError):
        tiny_train_config(batch_size=8, samples_per_epoch=4)


# -- optimizer ----------------------------------------------------------


def test_adamw_matches_reference_scalar():
    # one scalar parameter, fixed gradient: check the classic update
    p = Parameter(np.array([2.0]))
    opt = tr.AdamW([{"params": [("p", p)], "lr": 0.1}], weight_decay=0.0)
    g = np.array([0.5])
    m = v = np.zeros(1)
    x = np.array([2.0])
    for t in range(1, 4):
        p.grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mh = m / (1 - 0.9 ** t)
        vh = v / (1 - 0.999 ** t)
        x = x - 0.1 * mh / (np.sqrt(vh) + 1e-8)
        npt.assert_allclose(p.data, x, atol=1e-12)


def test_adamw_decoupled_decay_skips_vectors():
    w = Parameter(np.ones((2, 2)))
    b = Parameter(np.ones(2))
    opt = tr.AdamW([{"params": [("w", w), ("b", b)], "lr": 0.1}],
                   weight_decay=0.5)
    w.grad = np.zeros((2, 2))
    b.grad = np.zeros(2)
    opt.step()
    # zero gradient: the only change is the decoupled decay on the matrix
    npt.assert_allclose(w.data, (1 - 0.1 * 0.5) * np.ones((2, 2)),
                        atol=1e-12)
    npt.assert_allclose(b.data, np.ones(2), atol=1e-12)


def test_param_groups_split_and_ratio():
    cfg = tiny_train_config()
    model = mdl.build_model(cfg.model, seed=0)
    opt = tr.build_optimizer(model, cfg)
    names_bb = [n for n, _ in opt.groups[0]["params"]]
    names_rest = [n for n, _ in opt.groups[1]["params"]]
    assert all(n.startswith("backbone.") for n in names_bb)
    assert not any(n.startswith("backbone.") for n in names_rest)
    assert any(n.startswith("cif_blocks.") for n in names_rest)
    assert any(n.startswith("head.") for n in names_rest)
    assert len(names_bb) + len(names_rest) == len(
        list(model.named_parameters()))
    npt.assert_allclose(opt.lrs[1] / opt.lrs[0], 10.0)
    opt.set_lr_scale(0.1)
    npt.assert_allclose(opt.lrs[1] / opt.lrs[0], 10.0)
    npt.assert_allclose(opt.lrs, (4e-6, 4e-5))


# -- train_step ---------------------------------------------------------


def make_batch_for(cfg, seed=0):
    gen = tr._epoch_batches(cfg, epoch=0, dataset=tr.build_dataset(cfg))
    _, batch = next(gen)
    return batch


def test_train_step_losses_finite_and_additive():
    cfg = tiny_train_config()
    model = mdl.build_model(cfg.model, seed=1)
    opt = tr.build_optimizer(model, cfg)
    batch = make_batch_for(cfg)
    out = tr.train_step(model, batch, opt, carry_gradients=True)
    assert out["loss_total"] > 0
    assert np.isfinite(out["loss_total"])
    npt.assert_allclose(out["loss_total"], out["loss1"] + out["loss2"],
                        atol=1e-12)


def test_identical_searches_zero_states_equal_losses():
    cfg = tiny_train_config()
    model = mdl.build_model(cfg.model, seed=2)
    batch = make_batch_for(cfg)
    batch["search2"] = batch["search1"].copy()
    batch["gt2"] = batch["gt1"].copy()
    b = batch["clip"].shape[0]
    loss1, _, _ = tr._pass_loss(model, batch["clip"], batch["search1"],
                                batch["gt1"], model.zero_states(b))
    loss2, _, _ = tr._pass_loss(model, batch["clip"], batch["search2"],
                                batch["gt2"], model.zero_states(b))
    assert loss1.item() == loss2.item()


def test_carried_states_change_second_loss():
    cfg = tiny_train_config()
    model = mdl.build_model(cfg.model, seed=2)
    batch = make_batch_for(cfg)
    batch["search2"] = batch["search1"].copy()
    batch["gt2"] = batch["gt1"].copy()
    b = batch["clip"].shape[0]
    loss1, _, states = tr._pass_loss(model, batch["clip"],
                                     batch["search1"], batch["gt1"],
                                     model.zero_states(b))
    loss2, _, _ = tr._pass_loss(model, batch["clip"], batch["search2"],
                                batch["gt2"],
                                [s.detach() for s in states])
    assert loss1.item() != loss2.item()


def test_detached_carry_blocks_gradient_path():
    cfg = tiny_train_config()
    model = mdl.build_model(cfg.model, seed=3)
    batch = make_batch_for(cfg)
    b = batch["clip"].shape[0]

    def grads_with(carry):
        for _, p in model.named_parameters():
            p.grad = None
        loss1, _, states = tr._pass_loss(
            model, batch["clip"], batch["search1"], batch["gt1"],
            model.zero_states(b))
        if not carry:
            states = [s.detach() for s in states]
        loss2, _, _ = tr._pass_loss(model, batch["clip"],
                                    batch["search2"], batch["gt2"], states)
        (loss1 + loss2).backward()
        return {n: p.grad.copy() for n, p in model.named_parameters()
                if p.grad is not None}

    g_carry = grads_with(True)
    g_detach = grads_with(False)
    diffs = [np.abs(g_carry[n] - g_detach[n]).max()
             for n in g_carry if n in g_detach]
    assert max(diffs) > 0    # the carried path contributes extra gradient


def test_train_step_raises_on_nan():
    cfg = tiny_train_config()
    model = mdl.build_model(cfg.model, seed=4)
    opt = tr.build_optimizer(model, cfg)
    batch = make_batch_for(cfg)
    model.head.score_stack.out.bias.data[:] = np.nan
    with pytest.raises(TrainingDiverged) as exc:
        tr.train_step(model, batch, opt)
    assert "loss_total" in exc.value.diagnostics


# -- fit ----------------------------------------------------------------


def test_fit_runs_and_is_deterministic(tmp_path):
    cfg = tiny_train_config()
    model_a, hist_a = tr.fit(cfg, out_dir=tmp_path / "a")
    model_b, hist_b = tr.fit(cfg, out_dir=tmp_path / "b")
    for (na, pa), (nb, pb) in zip(model_a.named_parameters(),
                                  model_b.named_parameters()):
        assert na == nb
        npt.assert_allclose(pa.data, pb.data, atol=1e-12)
    assert len(hist_a) == cfg.epochs
    npt.assert_allclose(hist_a[0]["loss_total"], hist_b[0]["loss_total"],
                        atol=1e-12)
    assert (tmp_path / "a" / "model_final.npz").exists()
    log = (tmp_path / "a" / "metrics.log").read_text().strip().splitlines()
    assert len(log) == cfg.epochs * (cfg.samples_per_epoch
                                     // cfg.batch_size)
    first = [s.strip() for s in log[0].split(",")]
    assert len(first) == 7
    assert first[0] == "0" and first[1] == "0"


def test_fit_lr_drop(tmp_path):
    cfg = tiny_train_config(epochs=3, lr_drop_epoch=2)
    _, hist = tr.fit(cfg)
    npt.assert_allclose(hist[0]["lr_rest"], 4e-4)
    npt.assert_allclose(hist[1]["lr_rest"], 4e-4)
    npt.assert_allclose(hist[2]["lr_rest"], 4e-5)


def test_fit_checkpoint_reload_identical_outputs(tmp_path):
    cfg = tiny_train_config(checkpoint_every=1)
    model, _ = tr.fit(cfg, out_dir=tmp_path)
    m2 = mdl.model_from_checkpoint(tmp_path / "model_final.npz")
    rng = np.random.default_rng(0)
    c = cfg.model.backbone
    clip = rng.uniform(size=(1, c.clip_len, 3, c.template_size,
                             c.template_size))
    search = rng.uniform(size=(1, 3, c.search_size, c.search_size))
    out1, _, _ = model(clip, search, model.zero_states(1))
    out2, _, _ = m2(clip, search, m2.zero_states(1))
    npt.assert_allclose(out1["score"].data, out2["score"].data, atol=1e-12)
    assert (tmp_path / "model_epoch000.npz").exists()


def test_wo_ci_config_trains(tmp_path):
    model = mdl.ModelConfig(
        backbone=BackboneConfig(dim=16, depth=2, n_groups=2, heads=2,
                                template_size=32, search_size=32,
                                clip_len=2),
        state_size=4, cif_heads=2, context_mode="none")
    cfg = tiny_train_config(model=model, epochs=2)
    _, hist = tr.fit(cfg)
    assert np.isfinite(hist[-1]["loss_total"])


# -- warmup and gradient clipping ---------------------------------------


def test_warmup_and_clip_validation():
    with pytest.raises(ConfigError):
        tiny_train_config(warmup_epochs=-1)
    with pytest.raises(ConfigError):
        tiny_train_config(warmup_epochs=2)       # must stay below epochs=2
    with pytest.raises(ConfigError):
        tiny_train_config(clip_norm=-0.5)
    cfg = tiny_train_config(warmup_epochs=1, clip_norm=1.0)
    assert cfg.warmup_epochs == 1 and cfg.clip_norm == 1.0


def test_clip_gradients_scales_to_ceiling():
    cfg = tiny_train_config()
    model = mdl.build_model(cfg.model, seed=0)
    rng = np.random.default_rng(3)
    for _, p in model.named_parameters():
        p.grad = rng.normal(size=p.data.shape)
    first = next(iter(model.named_parameters()))[1].grad.copy()
    raw = np.sqrt(sum(np.sum(p.grad ** 2)
                      for _, p in model.named_parameters()))
    pre = tr.clip_gradients(model, 0.5)
    npt.assert_allclose(pre, raw, rtol=1e-12)
    post = np.sqrt(sum(np.sum(p.grad ** 2)
                       for _, p in model.named_parameters()))
    npt.assert_allclose(post, 0.5, rtol=1e-12)
    # uniform scaling preserves gradient direction
    npt.assert_allclose(next(iter(model.named_parameters()))[1].grad,
                        first * (0.5 / raw), rtol=1e-12)
    # already under the ceiling: untouched
    assert tr.clip_gradients(model, 10.0) == pytest.approx(0.5, rel=1e-12)
    npt.assert_allclose(
        np.sqrt(sum(np.sum(p.grad ** 2)
                    for _, p in model.named_parameters())), 0.5,
        rtol=1e-12)


def test_warmup_ramps_lr_then_drops(tmp_path):
    # 2 steps/epoch: warmup covers epoch 0, the drop hits at epoch 2
    cfg = tiny_train_config(warmup_epochs=1, epochs=3, lr_drop_epoch=2)
    tr.fit(cfg, out_dir=tmp_path)
    lines = (tmp_path / "metrics.log").read_text().strip().splitlines()
    lrs = [float(line.split(",")[-1]) for line in lines]
    npt.assert_allclose(lrs, [2e-4, 4e-4, 4e-4, 4e-4, 4e-5, 4e-5],
                        rtol=1e-9)


def test_train_step_reports_preclip_grad_norm():
    cfg = tiny_train_config(clip_norm=1e-3)
    model = mdl.build_model(cfg.model, seed=0)
    opt = tr.build_optimizer(model, cfg)
    batch = make_batch_for(cfg)
    stats = tr.train_step(model, batch, opt, clip_norm=cfg.clip_norm)
    # untrained gradients dwarf the ceiling; the reported norm is pre-clip
    assert stats["grad_norm"] > cfg.clip_norm
    stats2 = tr.train_step(model, batch, opt)
    assert np.isfinite(stats2["grad_norm"]) and stats2["grad_norm"] > 0
