"""Training loops: natural, vicinal baselines, adversarial training, TRADES row, SPROUT."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Dataset, minibatch_iter
from .dirichlet import LOG_BETA_BOUND, DirichletParams
from .errors import ConfigError, DataError, NumericError, ShapeError
from .models import Checkpoint, Model, ModelSpec, build_model, load_checkpoint
from .vicinity import VicinityMode, apply_vicinity, gce_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    mode: VicinityMode
    epochs: int = 5
    batch_size: int = 128
    lr_theta: float = 0.05
    lr_beta: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    init: str = "random"  # "random" | "natural" | path to a checkpoint
    arch: str = "cnn"
    width_factor: int = 1
    pool: int = 4
    beta_warmup_epochs: int = 10
    beta_init_scale: float = 0.1
    eval_each_epoch: bool = True

    def __post_init__(self):
        if self.lr_theta <= 0:
            raise ConfigError("lr_theta must be > 0")
        if self.mode.uses_beta and self.lr_beta < 0:
            raise ConfigError("lr_beta must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")

    def snapshot(self) -> dict:
        d = asdict(self)
        mode = d.pop("mode")
        mode["components"] = sorted(self.mode.components)
        d["mode"] = mode
        return d


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    clean_acc: float
    seconds: float
    beta: list[float]


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def seconds(self) -> list[float]:
        return [r.seconds for r in self.records]

    def to_csv(self, path) -> None:
        k = len(self.records[0].beta) if self.records else 0
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "clean_acc", "seconds"] + [f"beta_{i}" for i in range(k)])
            for r in self.records:
                w.writerow([r.epoch, repr(r.loss), repr(r.clean_acc), repr(r.seconds)]
                           + [repr(b) for b in r.beta])


def sgd_update(params: dict, grads: dict, lr: float, momentum: float = 0.0,
               velocity: dict | None = None):
    """Classical momentum: v <- mu v + g; p <- p - lr v. Returns (params, velocity)."""
    velocity = velocity or {}
    new_p, new_v = {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError("sgd_update", p.shape, g.shape)
        v = momentum * velocity[name] + g if name in velocity else g
        new_v[name] = v
        new_p[name] = p - lr * v
    return new_p, new_v


def _batch_rng(seed: int, epoch: int, batch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, batch, 1])


def _beta_lr(config: TrainConfig, step: int, steps_per_epoch: int) -> float:
    if config.beta_warmup_epochs <= 0:
        return config.lr_beta
    return config.lr_beta * min(1.0, step / (config.beta_warmup_epochs * steps_per_epoch))


def _check_finite(loss: float, epoch: int, batch: int) -> None:
    if not np.isfinite(loss):
        raise NumericError(f"training diverged: non-finite loss at epoch {epoch}, batch {batch}")


def train_step(spec: ModelSpec, params, velocity, images, targets, config: TrainConfig, rng):
    """One descent step for every mode that does not learn beta."""
    model = Model(spec, params)
    x, y = apply_vicinity(config.mode, images, targets, model, None, rng)
    tape = ad.Tape()
    watched = {n: tape.watch(p) for n, p in params.items()}
    loss = gce_loss(model.logits(x, watched), y)
    grads = ad.backward(loss, watched.values())
    params, velocity = sgd_update(params, {n: grads[t] for n, t in watched.items()},
                                  config.lr_theta, config.momentum, velocity)
    return params, velocity, loss.item()


def sprout_minibatch_step(spec: ModelSpec, params, velocity, log_beta, images, targets,
                          config: TrainConfig, rng, lr_beta: float | None = None,
                          lam: float | None = None, concentration_scale: float = 1.0):
    """GA -> Mixup -> Dirichlet draw, then one backward for both theta and log beta.

    theta descends (momentum SGD); log beta takes a single ascent step and is
    clamped to the representable box. Returns (params, velocity, log_beta, loss).
    ``lam`` and ``concentration_scale`` are test hooks passed to apply_vicinity.
    """
    lr_beta = config.lr_beta if lr_beta is None else lr_beta
    tape = ad.Tape()
    watched = {n: tape.watch(p) for n, p in params.items()}
    lb = tape.watch(log_beta) if config.mode.uses_beta else None
    x, y = apply_vicinity(config.mode, images, targets, None, lb, rng, lam, concentration_scale)
    loss = gce_loss(forward_logits(spec, watched, x), y)
    wrt = list(watched.values()) + ([lb] if lb is not None else [])
    grads = ad.backward(loss, wrt)
    params, velocity = sgd_update(params, {n: grads[t] for n, t in watched.items()},
                                  config.lr_theta, config.momentum, velocity)
    if lb is not None:
        log_beta = np.clip(log_beta + lr_beta * grads[lb], -LOG_BETA_BOUND, LOG_BETA_BOUND)
    return params, velocity, log_beta, loss.item()


def forward_logits(spec, params, x):
    return Model(spec, params).logits(x)


def _initial_state(dataset: Dataset, config: TrainConfig, spec: ModelSpec):
    """Initial parameters plus the lineage entries that produced them."""
    if config.init == "random":
        return build_model(spec, config.seed), []
    if config.init == "natural":
        pre = replace(config, mode=VicinityMode("natural"), init="random")
        ckpt, _ = train(dataset, pre)
        return ckpt.params, ckpt.lineage
    path = Path(config.init)
    if not path.exists():
        raise DataError(f"init checkpoint {path} does not exist")
    ckpt = load_checkpoint(path, num_classes=dataset.num_classes)
    if ckpt.spec != spec:
        raise DataError(f"init checkpoint spec {ckpt.spec} does not match {spec}")
    return ckpt.params, list(ckpt.lineage)


def model_spec_for(dataset: Dataset, config: TrainConfig) -> ModelSpec:
    return ModelSpec(config.arch, dataset.input_shape, dataset.num_classes,
                     config.width_factor, config.pool)


def train(dataset: Dataset, config: TrainConfig) -> tuple[Checkpoint, TrainHistory]:
    spec = model_spec_for(dataset, config)
    params, lineage = _initial_state(dataset, config, spec)
    log_beta = DirichletParams.random(
        dataset.num_classes, np.random.default_rng([config.seed, 0xBE7A]), config.beta_init_scale
    ).log_beta
    velocity: dict = {}
    history = TrainHistory()
    steps_per_epoch = -(-len(dataset) // min(config.batch_size, len(dataset)))
    step = 0
    sprout = config.mode.kind == "sprout"
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        batches = minibatch_iter(dataset, min(config.batch_size, len(dataset)), config.seed, epoch)
        for b, batch in enumerate(batches):
            step += 1
            rng = _batch_rng(config.seed, epoch, b)
            try:
                if sprout:
                    params, velocity, log_beta, loss = sprout_minibatch_step(
                        spec, params, velocity, log_beta, batch.images, batch.targets, config, rng,
                        lr_beta=_beta_lr(config, step, steps_per_epoch))
                else:
                    params, velocity, loss = train_step(
                        spec, params, velocity, batch.images, batch.targets, config, rng)
            except NumericError as e:
                raise NumericError(f"training diverged at epoch {epoch}, batch {b}: {e}") from e
            _check_finite(loss, epoch, b)
            total += loss * len(batch.indices)
            count += len(batch.indices)
        seconds = time.perf_counter() - t0
        acc = float("nan")
        if config.eval_each_epoch:
            acc = float(np.mean(Model(spec, params).predict(dataset.images) == dataset.labels))
        history.records.append(EpochRecord(epoch + 1, total / count, acc, seconds,
                                           np.exp(log_beta).tolist()))
        log.info("%s epoch %d loss %.4f acc %.4f (%.1fs)", config.mode.label(), epoch + 1,
                 total / count, acc, seconds)
    lineage = lineage + [{"mode": config.mode.label(), "epochs": config.epochs,
                          "seed": config.seed, "init": config.init}]
    ckpt = Checkpoint(spec, params, log_beta, config.snapshot(), config.epochs, config.seed, lineage)
    return ckpt, history
