import csv

import numpy as np
import pytest

from sproutlab import autodiff as ad
from sproutlab.attacks import AttackSpec
from sproutlab.dirichlet import LOG_BETA_BOUND
from sproutlab.errors import ConfigError, DataError, NumericError, ShapeError
from sproutlab.models import Model, ModelSpec, build_model, save_checkpoint
from sproutlab.training import TrainConfig, sgd_update, sprout_minibatch_step, train
from sproutlab.vicinity import VicinityMode, apply_vicinity, gce_loss

FAST = dict(batch_size=32, pool=2, eval_each_epoch=False)


def test_natural_blobs_accuracy(blobs):
    ckpt, hist = train(blobs, TrainConfig(VicinityMode("natural"), epochs=5, **FAST))
    assert np.mean(ckpt.model.predict(blobs.images) == blobs.labels) >= 0.95
    assert len(hist) == 5 and all(s > 0 for s in hist.seconds)


def test_sprout_deterministic_checkpoints(blobs, tmp_path):
    cfg = TrainConfig(VicinityMode("sprout"), epochs=2, **FAST)
    for name in ("a", "b"):
        ckpt, _ = train(blobs, cfg)
        save_checkpoint(tmp_path / f"{name}.ckpt", ckpt)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_adv_train_eps_zero_equals_natural(blobs):
    nat, _ = train(blobs, TrainConfig(VicinityMode("natural"), epochs=2, **FAST))
    adv, _ = train(blobs, TrainConfig(VicinityMode("adv_train", attack=AttackSpec(0.0, steps=7)),
                                      epochs=2, **FAST))
    for k in nat.params:
        assert np.array_equal(nat.params[k], adv.params[k])


def test_trades_runs(blobs):
    mode = VicinityMode("trades", attack=AttackSpec(0.05, steps=2))
    ckpt, hist = train(blobs.head(64), TrainConfig(mode, epochs=1, **FAST))
    assert np.isfinite(hist.records[0].loss)


def test_lr_beta_zero_keeps_beta_and_matches_fixed_dirichlet(blobs):
    spec = ModelSpec("cnn", blobs.input_shape, 2, pool=2)
    params = build_model(spec, 0)
    x, y = blobs.images[:16], np.eye(2)[blobs.labels[:16]]
    lb = np.array([0.3, -0.2])
    cfg = TrainConfig(VicinityMode("sprout"), lr_beta=0.0, **FAST)
    p1, _, lb1, loss1 = sprout_minibatch_step(spec, params, {}, lb, x, y, cfg, np.random.default_rng(3))
    assert np.array_equal(lb1, lb)
    # reference: GA + Mixup + Dirichlet with a constant beta, theta-only step
    xt, yt = apply_vicinity(cfg.mode, x, y, None, lb, np.random.default_rng(3))
    tape = ad.Tape()
    w = {n: tape.watch(p) for n, p in params.items()}
    loss = gce_loss(Model(spec, params).logits(xt, w), yt)
    g = ad.backward(loss, w.values())
    p2, _ = sgd_update(params, {n: g[t] for n, t in w.items()}, cfg.lr_theta, cfg.momentum)
    assert loss.item() == loss1
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)


@pytest.mark.parametrize("lr_beta", [1e-4, 1e-3])
def test_beta_step_is_ascent(blobs, lr_beta):
    spec = ModelSpec("cnn", blobs.input_shape, 2, pool=2)
    params = build_model(spec, 1)
    x, y = blobs.images[:32], np.eye(2)[blobs.labels[:32]]
    # generic beta: at log beta = 0 a pure label's concentration is exactly 1.0,
    # the sampler's branch point, where common random numbers are discontinuous
    lb = np.array([0.05, -0.03])
    cfg = TrainConfig(VicinityMode("sprout"), **FAST)

    def frozen_loss(log_beta):
        xt, yt = apply_vicinity(cfg.mode, x, y, None, log_beta, np.random.default_rng(8))
        return gce_loss(Model(spec, params).logits(xt), yt).item()

    _, _, lb_new, _ = sprout_minibatch_step(spec, params, {}, lb, x, y, cfg, np.random.default_rng(8),
                                            lr_beta=lr_beta)
    assert not np.array_equal(lb_new, lb)
    assert frozen_loss(lb_new) >= frozen_loss(lb)


def test_beta_stays_finite_over_many_steps():
    spec = ModelSpec("mlp", (1, 2, 2), 3)
    params = build_model(spec, 0)
    rng = np.random.default_rng(0)
    x, y = rng.uniform(size=(4, 1, 2, 2)), np.eye(3)[[0, 1, 2, 0]]
    cfg = TrainConfig(VicinityMode("sprout"), lr_theta=1e-9, lr_beta=50.0, momentum=0.0)
    lb = np.zeros(3)
    for step in range(10_000):
        _, _, lb, _ = sprout_minibatch_step(spec, params, {}, lb, x, y, cfg,
                                            np.random.default_rng([0, step]))
        assert np.all(np.abs(lb) <= LOG_BETA_BOUND)
    beta = np.exp(lb)
    assert np.all(np.isfinite(beta)) and np.all(beta > 0)


def test_sgd_update_examples():
    p, g = {"w": np.array([1.0, 2.0])}, {"w": np.array([0.5, -1.0])}
    new, v = sgd_update(p, g, 0.1, momentum=0.0)
    np.testing.assert_array_equal(new["w"], p["w"] - 0.1 * g["w"])
    same, _ = sgd_update(p, g, 0.0, momentum=0.9)
    np.testing.assert_array_equal(same["w"], p["w"])
    p1, v1 = sgd_update(p, g, 0.1, 0.9)
    zero = {"w": np.zeros(2)}
    p2, v2 = sgd_update(p1, zero, 0.1, 0.9, v1)
    p3, _ = sgd_update(p2, zero, 0.1, 0.9, v2)
    assert not np.array_equal(p2["w"], p1["w"]) and not np.array_equal(p3["w"], p2["w"])
    with pytest.raises(ShapeError):
        sgd_update(p, {"w": np.zeros(3)}, 0.1)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(VicinityMode("natural"), lr_theta=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(VicinityMode("natural"), epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(VicinityMode("sprout"), lr_beta=-1.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_guard(blobs):
    with pytest.raises(NumericError, match=r"epoch 0, batch \d+"):
        train(blobs, TrainConfig(VicinityMode("natural"), lr_theta=1e200, **FAST))


def test_history_csv_and_beta_snapshots(blobs, tmp_path):
    _, hist = train(blobs.head(64), TrainConfig(VicinityMode("sprout"), epochs=2, batch_size=32,
                                                pool=2))
    hist.to_csv(tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0][:4] == ["epoch", "loss", "clean_acc", "seconds"] and len(rows) == 3
    assert len(rows[1]) == 4 + 2


def test_init_from_natural_and_checkpoint(blobs, tmp_path):
    cfg = TrainConfig(VicinityMode("sprout"), epochs=1, init="natural", **FAST)
    ckpt, _ = train(blobs, cfg)
    assert [e["mode"] for e in ckpt.lineage] == ["natural", "sprout"]
    save_checkpoint(tmp_path / "n.ckpt", ckpt)
    again, _ = train(blobs, TrainConfig(VicinityMode("ga"), epochs=1, init=str(tmp_path / "n.ckpt"), **FAST))
    assert len(again.lineage) == 3
    with pytest.raises(DataError):
        train(blobs, TrainConfig(VicinityMode("ga"), epochs=1, init=str(tmp_path / "missing"), **FAST))
