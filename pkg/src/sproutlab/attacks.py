"""PGD-linf with random starts and restarts, C&W margin loss, transfer attacks."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, NumericError
from .models import Checkpoint, Model, load_checkpoint

LOSS_KINDS = ("cross_entropy", "cw_margin")
CHUNK = 500


@dataclass(frozen=True)
class AttackSpec:
    epsilon: float
    steps: int = 20
    step_size: float | None = None  # None -> epsilon / 5
    restarts: int = 1
    loss_kind: str = "cross_entropy"
    include_zero_start: bool = True
    seed: int = 0
    kappa: float = 0.0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ConfigError("attack epsilon must be >= 0")
        if self.steps < 0:
            raise ConfigError("attack steps must be >= 0")
        if self.restarts < 1:
            raise ConfigError("attack restarts must be >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"attack loss must be one of {LOSS_KINDS}")
        if self.step_size is not None and self.step_size < 0:
            raise ConfigError("attack step_size must be >= 0")
        if self.steps > 0 and self.epsilon > 0 and self.step_size == 0:
            raise ConfigError("attack step_size must be > 0 when steps > 0")

    @property
    def step(self) -> float:
        return self.epsilon / 5.0 if self.step_size is None else float(self.step_size)

    def with_seed(self, seed: int) -> "AttackSpec":
        return replace(self, seed=int(seed))


def per_example_ce(logits: ad.Tensor, labels) -> ad.Tensor:
    return -ad.gather(ad.log_softmax(logits), labels)


def per_example_cw(logits: ad.Tensor, labels, kappa: float = 0.0) -> ad.Tensor:
    """Negated clamped margin, -max(z_y - max_{k != y} z_k, -kappa); ascent drives it to kappa."""
    z = logits.data
    if z.shape[-1] < 2:
        raise ConfigError("C&W margin needs at least two classes")
    others = z.copy()
    others[np.arange(len(labels)), labels] = -np.inf
    runner_up = others.argmax(axis=1)
    margin = ad.gather(logits, labels) - ad.gather(logits, runner_up)
    return -ad.clip(margin, lo=-kappa)


def cw_margin_loss(logits, labels, kappa: float = 0.0) -> ad.Tensor:
    """Mean over examples of -max(z_y - max_{k!=y} z_k, -kappa).

    Sign convention: the value is the *ascent* objective, so a correctly
    classified example with margin 4 contributes -4 and a misclassified one 0.
    """
    logits = logits if isinstance(logits, ad.Tensor) else ad.Tensor(logits)
    return ad.reduce_mean(per_example_cw(logits, np.asarray(labels), kappa))


def _attack_loss(spec: AttackSpec, logits, labels):
    if spec.loss_kind == "cw_margin":
        return per_example_cw(logits, labels, spec.kappa)
    return per_example_ce(logits, labels)


@dataclass
class AttackResult:
    x_adv: np.ndarray
    loss: np.ndarray  # attack loss at x_adv
    clean_loss: np.ndarray
    fooled: np.ndarray  # prediction at x_adv differs from the label


def _evaluate(model: Model, spec: AttackSpec, x: np.ndarray, labels: np.ndarray, grad: bool):
    tape = ad.Tape()
    xt = tape.watch(x) if grad else ad.Tensor(x)
    logits = model.logits(xt)
    per = _attack_loss(spec, logits, labels)
    fooled = logits.data.argmax(axis=1) != labels
    g = ad.backward(ad.reduce_sum(per), [xt])[xt] if grad else None
    return per.data, fooled, g


def _better(loss, fooled, clean_loss, best_loss, best_fooled):
    """Lexicographic (loss >= clean loss, misclassified, loss) comparison."""
    adm, best_adm = loss >= clean_loss, best_loss >= clean_loss
    return (adm > best_adm) | ((adm == best_adm) & (
        (fooled > best_fooled) | ((fooled == best_fooled) & (loss > best_loss))))


def pgd_attack(model: Model, images: np.ndarray, labels: np.ndarray,
               spec: AttackSpec) -> AttackResult:
    """Untargeted PGD-linf; every iterate of every restart is a candidate.

    Per example the kept candidate maximizes (attack loss >= clean loss,
    misclassified, attack loss) lexicographically, so adding restarts or
    steps can only raise the kept loss and never un-fool an example.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    eps, step = float(spec.epsilon), spec.step
    starts = []
    for r in range(spec.restarts):
        if r == 0 and spec.include_zero_start:
            starts.append(None)
        else:
            starts.append(np.random.default_rng([spec.seed, r]).uniform(-eps, eps, images.shape))

    out = AttackResult(images.copy(), np.empty(len(labels)), np.empty(len(labels)),
                       np.zeros(len(labels), dtype=bool))
    for lo in range(0, len(labels), CHUNK):
        sl = slice(lo, lo + CHUNK)
        x0, y = images[sl], labels[sl]
        clean_loss, clean_fooled, _ = _evaluate(model, spec, x0, y, grad=False)
        best_x, best_loss, best_fooled = x0.copy(), clean_loss.copy(), clean_fooled.copy()
        if not spec.include_zero_start:
            best_loss[:] = -np.inf
            best_fooled[:] = False
        for r, noise in enumerate(starts):
            x = x0.copy() if noise is None else np.clip(x0 + noise[sl], 0.0, 1.0)
            for s in range(spec.steps + 1):
                loss, fooled, g = _evaluate(model, spec, x, y, grad=s < spec.steps)
                if not np.all(np.isfinite(loss)):
                    raise NumericError(f"pgd: non-finite attack loss at restart {r}, step {s}")
                take = _better(loss, fooled, clean_loss, best_loss, best_fooled)
                best_x[take], best_loss[take], best_fooled[take] = x[take], loss[take], fooled[take]
                if g is None:
                    break
                x = x + step * np.sign(g)
                x = np.clip(np.clip(x, x0 - eps, x0 + eps), 0.0, 1.0)
        out.x_adv[sl], out.loss[sl], out.clean_loss[sl], out.fooled[sl] = (
            best_x, best_loss, clean_loss, best_fooled)
    return out


def pgd_linf(model: Model, images: np.ndarray, labels: np.ndarray, spec: AttackSpec) -> np.ndarray:
    return pgd_attack(model, images, labels, spec).x_adv


def _as_model(src) -> Model:
    if isinstance(src, Model):
        return src
    if isinstance(src, Checkpoint):
        return src.model
    if isinstance(src, (str, Path)):
        return load_checkpoint(src).model
    raise TypeError(f"cannot build a model from {type(src).__name__}")


def transfer_eval(source, target, dataset, spec: AttackSpec) -> float:
    """Craft PGD examples on ``source``; return ``target`` accuracy on them."""
    src, tgt = _as_model(source), _as_model(target)
    if src.spec.input_shape != tgt.spec.input_shape or src.spec.num_classes != tgt.spec.num_classes:
        raise DataError("transfer_eval: source and target disagree on input shape or K")
    if tuple(dataset.input_shape) != tgt.spec.input_shape or dataset.num_classes != tgt.spec.num_classes:
        raise DataError("transfer_eval: dataset does not match the models")
    x_adv = pgd_linf(src, dataset.images, dataset.labels, spec)
    pred = np.concatenate([tgt.logits(x_adv[i:i + CHUNK]).data.argmax(axis=1)
                           for i in range(0, len(x_adv), CHUNK)])
    return float(np.mean(pred == dataset.labels))
