import math

import numpy as np
import pytest

from fewshot.data import make_synthetic
from fewshot.errors import ConfigError, ContractError, DivergenceError, LabelError
from fewshot.models import FewShotModel, ModelConfig
from fewshot.tensor import SGD, Tensor, backward
from fewshot.training import (
    Checkpoint, StepBatch, TrainConfig, build_model, loss_cc, loss_location, loss_rotation,
    make_pools, total_step_loss, train_selfsup_only, train_stage1,
)
from fewshot.training.losses import cc_loss_from_features

MC = ModelConfig(widths=[4, 4, 4, 4], image_size=32, rot_widths=[4, 4], loc_hidden=8)
QUICK = dict(epochs=2, iterations_per_epoch=2, batch_labeled=8, val_episodes=3, lr=0.02, decay_every=1)
ALL = ("extractor", "classifier", "rot_head", "loc_head", "patch_aux")


def tiny(seed=0, n_base=6):
    return FewShotModel(MC, n_base, ALL, seed=seed)


def batch_of(ds, n=6, n_unl=0):
    base = ds.split_indices("base")
    lookup = {c: i for i, c in enumerate(ds.split["base"])}
    idx = base[:: len(base) // n][:n]
    unl = ds.images[base[1:1 + n_unl]] if n_unl else None
    return StepBatch(ds.images[idx], np.array([lookup[int(c)] for c in ds.labels[idx]]), unl)


class TestConfig:
    @pytest.mark.parametrize("kw", [
        dict(method="MAML"), dict(ssl_task="jigsaw"), dict(alpha=-0.1),
        dict(patch_aux_loss=True), dict(method="PN", rotation_augmentation=True),
        dict(selfsup_only=True), dict(mu=0.0), dict(mu=1.5), dict(batch_unlabeled=4),
        dict(semi_supervised=True), dict(epochs=0),
        dict(method="PN", ssl_task="location", patch_aux_loss=True),
    ])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_defaults(self):
        c = TrainConfig()
        assert (c.lr, c.momentum, c.weight_decay, c.alpha) == (0.1, 0.9, 5e-4, 1.0)
        assert c.batch_labeled == 128 and not c.rotation_augmentation
        assert TrainConfig(ssl_task="rotation").rotation_augmentation
        assert TrainConfig(ssl_task="location").patch_aux_loss
        assert not TrainConfig(method="PN", ssl_task="rotation").rotation_augmentation

    def test_lr_schedule(self):
        c = TrainConfig(decay_every=8)
        for e in range(30):
            assert math.isclose(c.lr_at(e), 0.1 * 10 ** -(e // 8), rel_tol=1e-12)


class TestLosses:
    def test_cc_saturates_on_aligned_features(self):
        m = tiny()
        m.classifier.log_gamma.data[...] = math.log(200.0)
        w = m.classifier.weight.data
        loss = cc_loss_from_features(m, Tensor(w[:3] * 4.0), np.array([0, 1, 2]))
        assert float(loss.data) < 1e-3

    def test_cc_label_error(self, small_ds):
        b = batch_of(small_ds)
        with pytest.raises(LabelError):
            loss_cc(tiny(), b.images, b.labels + 6)

    def test_alpha_zero_is_few_shot_loss_bitwise(self, small_ds):
        b = batch_of(small_ds)
        for task in ("rotation", "location"):
            cfg = TrainConfig(ssl_task=task, alpha=0.0, patch_aux_loss=False)
            out = total_step_loss(tiny(), b, cfg, seed=5)
            assert out.total.data.tobytes() == out.terms["few"].data.tobytes()

    def test_total_is_sum_of_parts(self, small_ds):
        b = batch_of(small_ds)
        cfg = TrainConfig(ssl_task="location", patch_aux_loss=False)
        out = total_step_loss(tiny(), b, cfg, seed=5)
        few = float(loss_cc(tiny(), b.images, b.labels).data)
        self_ = float(loss_location(tiny(), b.images, seed=5).data)
        # relative: an f32 sum near 18 cannot be closer than half an ulp (~1e-6 absolute)
        assert abs(float(out.total.data) - (few + self_)) <= 1e-7 * (few + self_)
        assert float(out.terms["few"].data) == few

    def test_patch_aux_switch(self, small_ds):
        b = batch_of(small_ds)
        off = total_step_loss(tiny(), b, TrainConfig(ssl_task="location", patch_aux_loss=False), 3)
        on = total_step_loss(tiny(), b, TrainConfig(ssl_task="location"), 3)
        assert "patch_aux" not in off.terms and "patch_aux" in on.terms
        assert float(off.terms["self"].data) == float(loss_location(tiny(), b.images, 3).data)

    def test_rotation_augmentation_consumes_4b_examples(self, small_ds):
        b = batch_of(small_ds)
        for task in ("none", "rotation"):
            out = total_step_loss(tiny(), b, TrainConfig(ssl_task=task, rotation_augmentation=True), 1)
            assert out.counted == 4 * len(b.images)
        out = total_step_loss(tiny(), b, TrainConfig(ssl_task="rotation", rotation_augmentation=False), 1)
        assert out.counted == len(b.images)

    def test_unlabeled_only_feeds_self_term(self, small_ds):
        b, bu = batch_of(small_ds), batch_of(small_ds, n_unl=4)
        cfg = TrainConfig(ssl_task="location", semi_supervised=True, batch_unlabeled=4, patch_aux_loss=False)
        m = tiny()
        # the zero-initialised output layer would make the location loss constant
        m.loc_head.fc2.weight.data[...] = np.random.default_rng(0).normal(size=m.loc_head.fc2.weight.shape)
        a = total_step_loss(m, b, cfg, 2)
        c = total_step_loss(m, bu, cfg, 2)
        assert float(a.terms["few"].data) == float(c.terms["few"].data)
        assert float(a.terms["self"].data) != float(c.terms["self"].data)
        with pytest.raises(ConfigError):
            total_step_loss(tiny(), bu, TrainConfig(ssl_task="location"), 2)

    def test_pn_loss_needs_queries(self, small_ds):
        from fewshot.training import loss_pn
        with pytest.raises(ContractError):
            loss_pn(tiny(), small_ds.images[:2], np.array([0, 1]), small_ds.images[:0], np.array([], int))

    def test_rotation_loss_decreases(self, small_ds):
        m = FewShotModel(MC, 6, ("extractor", "rot_head"), seed=0)
        params = list(m.parameters())
        opt = SGD(params, lr=0.05)
        imgs = small_ds.images[small_ds.split_indices("base")[:16]]
        losses = []
        for _ in range(50):
            opt.zero_grad()
            loss = loss_rotation(m, imgs)
            losses.append(float(loss.data))
            backward(loss)
            opt.step()
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

    def test_step_changes_exactly_the_parameters_with_gradient(self, small_ds):
        m = tiny()
        b = batch_of(small_ds)
        params = list(m.parameters())
        before = [p.data.copy() for p in params]
        opt = SGD(params, lr=0.1, weight_decay=0.0)
        opt.zero_grad()
        backward(total_step_loss(m, b, TrainConfig(ssl_task="rotation"), 0).total)
        opt.step()
        for p, old in zip(params, before):
            assert np.array_equal(p.data, old) == (not p.grad.any()), p.name
        assert not any(p.grad.any() for p in params if p.name.startswith(("loc_head", "patch_aux")))


class TestLoop:
    def test_deterministic_checkpoints(self, small_ds):
        cfg = TrainConfig(ssl_task="rotation", **QUICK)
        a = train_stage1(MC, cfg, small_ds).checkpoint
        b = train_stage1(MC, cfg, small_ds).checkpoint
        assert a.digest() == b.digest()
        assert train_stage1(MC, TrainConfig(ssl_task="rotation", **{**QUICK, "seed": 1}),
                            small_ds).checkpoint.digest() != a.digest()

    def test_history_and_early_stopping(self, small_ds):
        cfg = TrainConfig(**{**QUICK, "epochs": 3})
        res = train_stage1(MC, cfg, small_ds)
        assert [r["epoch"] for r in res.history] == [0, 1, 2]
        assert [r["lr"] for r in res.history] == [cfg.lr_at(e) for e in range(3)]
        vals = res.checkpoint.manifest["val_history"]
        assert res.best_epoch == int(np.argmax(vals))
        assert {"loss_total", "loss_few", "train_acc", "val_acc"} <= set(res.history[0])

    def test_empty_unlabeled_pool_reproduces_plain_run_bitwise(self, small_ds):
        plain = TrainConfig(ssl_task="rotation", **QUICK)
        semi = TrainConfig(ssl_task="rotation", semi_supervised=True, batch_unlabeled=8, **QUICK)
        a = train_stage1(MC, plain, small_ds).checkpoint
        b = train_stage1(MC, semi, small_ds).checkpoint
        assert a.params_bytes() == b.params_bytes()

    def test_semi_supervised_pools(self, small_ds):
        cfg = TrainConfig(ssl_task="rotation", semi_supervised=True, batch_unlabeled=4, mu=0.2, **QUICK)
        labeled, pool = make_pools(small_ds, cfg)
        assert len(labeled.indices) == 6 * 6 and len(pool) == 6 * 24
        extra = make_synthetic((2, 0, 0), 5, 32, seed=9)
        _, bigger = make_pools(small_ds, cfg, extra)
        assert len(bigger) == len(pool) + 10
        with pytest.raises(ConfigError):
            make_pools(small_ds, TrainConfig(**QUICK), extra)
        train_stage1(MC, cfg, small_ds, extra)

    def test_selfsup_only_isolation(self, small_ds):
        cfg = TrainConfig(ssl_task="rotation", **QUICK)
        res = train_selfsup_only(MC, cfg, small_ds)
        init = build_model(MC, cfg, 6)
        ck = res.checkpoint
        assert ck.manifest["epoch"] == QUICK["epochs"] - 1
        np.testing.assert_array_equal(ck.arrays["classifier.weight"], init.classifier.weight.data)
        assert not np.array_equal(ck.arrays["extractor.block0.conv.weight"],
                                  init.extractor.block0.conv.weight.data)
        assert all(r.get("loss_few") is None for r in res.history)
        with pytest.raises(ConfigError):
            train_selfsup_only(MC, TrainConfig(**QUICK), small_ds)

    def test_pn_and_location_regimes_run(self, small_ds):
        for kw in (dict(method="PN"), dict(method="PN", ssl_task="rotation"), dict(ssl_task="location")):
            res = train_stage1(MC, TrainConfig(**kw, **QUICK), small_ds)
            assert all(math.isfinite(r["loss_total"]) for r in res.history)
        ck = train_stage1(MC, TrainConfig(method="PN", **QUICK), small_ds).checkpoint
        assert not ck.has_component("classifier")

    def test_divergence_snapshot(self, small_ds):
        cfg = TrainConfig(**{**QUICK, "divergence_threshold": 1e-3})
        with pytest.raises(DivergenceError) as exc:
            train_stage1(MC, cfg, small_ds)
        snap = exc.value.snapshot
        assert snap["epoch"] == 0 and snap["iteration"] == 0 and snap["loss"] > 1e-3

    def test_checkpoint_round_trip(self, small_ds, tmp_path):
        ck = train_stage1(MC, TrainConfig(**QUICK), small_ds).checkpoint
        ck.save(tmp_path / "ck")
        back = Checkpoint.load(tmp_path / "ck")
        assert back.digest() == ck.digest()
        assert back.n_parameters == sum(p.data.size for p in back.to_model().parameters())
