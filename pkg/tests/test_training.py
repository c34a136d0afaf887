import math

import numpy as np
import pytest

from kspace_triage import autodiff as ad
from kspace_triage.errors import ConfigError, NumericalAbort
from kspace_triage.evaluation import auroc, binary_cross_entropy
from kspace_triage.model import load_checkpoint
from kspace_triage.sampling import SamplingMask, apply_mask
from kspace_triage.training import (Trainer, TrainConfig, train, train_fixed_mask, train_full,
                                    train_image_classifier, train_qval)

from conftest import TINY_MODEL


def cfg(**kw):
    base = dict(epochs=2, patience=5, batch_size=16, lr=3e-3, model=dict(TINY_MODEL))
    return TrainConfig(**{**base, **kw})


def test_config_validation():
    for bad in [dict(batch_size=0), dict(lr=-1.0), dict(rate=0.0), dict(rate=1.5), dict(mask_mode="psychic"),
                dict(optimizer="lbfgs"), dict(epochs=0)]:
        with pytest.raises(ConfigError):
            cfg(**bad)
    restored = TrainConfig.from_dict(cfg(rate=0.25).to_dict())
    assert restored == cfg(rate=0.25)


def test_zero_learning_rate_leaves_parameters_unchanged(small_splits):
    for opt in ("adam", "sgd"):
        trainer = Trainer(cfg(lr=0.0, optimizer=opt, rate=0.25), (32, 32), ("lesion",))
        before = trainer.model.state()
        idx = np.arange(16)
        trainer.step(trainer.inputs(small_splits["train"], idx), small_splits["train"].labels[idx])
        after = trainer.model.state()
        assert all(before[k].tobytes() == after[k].tobytes() for k in before)


def test_one_mask_draw_per_minibatch(small_splits):
    train_set = small_splits["train"].subset(np.arange(50))
    model, report = train_qval(train_set, small_splits["val"], cfg(rate=0.25, batch_size=16))
    assert report.mask_draws == [math.ceil(50 / 16)] * len(report.epochs)
    _, report = train_qval(train_set, small_splits["val"], cfg(rate=0.25, batch_size=16, epochs=1,
                                                                 per_record_masks=True))
    assert report.mask_draws == [50]


def test_minibatch_shares_one_mask(small_splits):
    trainer = Trainer(cfg(rate=0.25), (32, 32), ("lesion",))
    x = trainer.inputs(small_splits["train"], np.arange(16))
    sampled = np.any(x != 0, axis=1)  # (batch, cols)
    assert np.all(sampled == sampled[0])
    assert sampled[0].sum() == 8


def test_trainer_loss_equals_evaluation_cross_entropy(small_splits):
    trainer = Trainer(cfg(mask_mode="full"), (32, 32), ("lesion",))
    x = small_splits["train"].kspace[:20]
    y = small_splits["train"].labels[:20]
    loss = float(trainer.loss(x, y).value)
    probs = trainer.model.predict_proba(x)
    assert abs(loss - binary_cross_entropy(probs, y)) < 1e-6


def test_sgd_step_moves_against_mean_gradient(small_splits):
    lr = 0.05
    trainer = Trainer(cfg(optimizer="sgd", lr=lr, mask_mode="full", model=dict(TINY_MODEL, dtype="float64")),
                      (32, 32), ("lesion",))
    before = trainer.model.state()
    x, y = small_splits["train"].kspace[:16], small_splits["train"].labels[:16]
    _, grads = trainer.step(x, y)
    for name, tensor in trainer.model.params.items():
        want = before[name] - lr * grads[tensor]
        np.testing.assert_allclose(tensor.value, want, rtol=1e-6, atol=1e-12)


def test_same_seed_same_report(small_splits):
    runs = [train_qval(small_splits["train"], small_splits["val"], cfg(rate=0.25, seed=4)) for _ in range(2)]
    (m1, r1), (m2, r2) = runs
    assert r1.to_json() == r2.to_json()
    assert all(m1.params[k].value.tobytes() == m2.params[k].value.tobytes() for k in m1.params)
    _, r3 = train_qval(small_splits["train"], small_splits["val"], cfg(rate=0.25, seed=5))
    assert r3.to_json() != r1.to_json()


def test_full_mask_fixed_training_equals_full_training(small_splits):
    c = cfg(seed=2)
    _, full = train_full(small_splits["train"], small_splits["val"], c)
    _, fixed = train_fixed_mask(small_splits["train"], small_splits["val"], SamplingMask.full(32, 32), c)
    assert [e.train_loss for e in full.epochs] == [e.train_loss for e in fixed.epochs]
    assert full.to_dict()["epochs"] == fixed.to_dict()["epochs"]


def test_full_kspace_training_separates_planted_lesions(small_splits):
    model, report = train_full(small_splits["train"], small_splits["val"], cfg(epochs=20, patience=20))
    assert report.best_val_auroc >= 0.99
    assert report.epochs[report.best_epoch].val_auroc["lesion"] == report.best_val_auroc
    probs = model.predict_proba(small_splits["train"].kspace)[:, 0]
    acc = np.mean((probs >= 0.5) == small_splits["train"].labels[:, 0].astype(bool))
    assert acc >= 0.99


def test_image_classifier_separates_planted_lesions(small_splits):
    model, report = train_image_classifier(small_splits["train"], small_splits["val"], cfg(epochs=10))
    assert report.best_val_auroc >= 0.99
    probs = model.predict_proba(small_splits["test"].images)[:, 0]
    assert auroc(probs, small_splits["test"].labels[:, 0]) >= 0.95


def test_best_state_restored_and_checkpointed(small_splits, tmp_path):
    model, report = train_qval(small_splits["train"], small_splits["val"], cfg(rate=0.5, epochs=3),
                               checkpoint_dir=tmp_path / "ck")
    assert report.checkpoint == str(tmp_path / "ck")
    loaded = load_checkpoint(tmp_path / "ck")
    x = apply_mask(small_splits["val"].kspace, SamplingMask(32, 32, tuple(range(0, 32, 2))))
    np.testing.assert_allclose(loaded.predict_proba(x), model.predict_proba(x), rtol=0, atol=0)
    for e in report.epochs:
        assert math.isfinite(e.train_loss) and math.isfinite(e.val_loss)
        assert 0 <= e.val_auroc["lesion"] <= 1


def test_validation_masks_repeat_each_epoch(small_splits):
    trainer = Trainer(cfg(rate=0.25), (32, 32), ("lesion",))
    a = trainer.validate(small_splits["val"])
    trainer.inputs(small_splits["train"], np.arange(4))  # advance the training stream
    assert trainer.validate(small_splits["val"]) == a


def test_non_finite_loss_aborts_with_diagnostics(small_splits):
    trainer = Trainer(cfg(mask_mode="full"), (32, 32), ("lesion",))
    trainer.model.params["head.lesion.bias"].value[:] = np.nan
    with pytest.raises(NumericalAbort) as exc:
        trainer.step(small_splits["train"].kspace[:4], small_splits["train"].labels[:4], epoch=3, batch=7)
    assert exc.value.diagnostics["epoch"] == 3 and exc.value.diagnostics["batch"] == 7
    assert "grad_norm" in exc.value.diagnostics


def test_fixed_mode_needs_matching_mask(small_splits):
    with pytest.raises(ConfigError):
        train(small_splits["train"], small_splits["val"], cfg(mask_mode="fixed"))
    with pytest.raises(ConfigError):
        train_fixed_mask(small_splits["train"], small_splits["val"], SamplingMask(16, 16, (1,)), cfg())
    with pytest.raises(ConfigError):
        train_full(small_splits["train"].subset([]), small_splits["val"], cfg())


def test_positive_weight_changes_the_loss(small_splits):
    x, y = small_splits["train"].kspace[:16], small_splits["train"].labels[:16]
    plain = Trainer(cfg(mask_mode="full"), (32, 32), ("lesion",))
    weighted = Trainer(cfg(mask_mode="full", pos_weight=3.0), (32, 32), ("lesion",))
    l1, l3 = float(plain.loss(x, y).value), float(weighted.loss(x, y).value)
    logits = plain.model.logits(x).value
    yb = y.astype(bool)
    pos_term = np.sum(np.logaddexp(0, -logits[yb])) / y.size
    assert abs((l3 - l1) - 2 * pos_term) < 1e-5


def test_gradients_are_finite_and_flow_to_kernels(small_splits):
    trainer = Trainer(cfg(rate=0.25), (32, 32), ("lesion",))
    _, grads = trainer.step(trainer.inputs(small_splits["train"], np.arange(8)), small_splits["train"].labels[:8])
    kern = trainer.model.params["kspace.kernels"]
    assert np.all(np.isfinite(grads[kern])) and np.any(grads[kern] != 0)
    assert set(grads) == set(trainer.model.params.values())
    assert ad.backward is not None
