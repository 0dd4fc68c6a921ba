"""Vicinity functions and the generalized cross-entropy loss.

Every training mode is a recipe for building virtual pairs (x~, y~) around a
minibatch and scoring them with ``gce_loss`` (g = identity).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attacks import AttackSpec, pgd_linf
from .dirichlet import DirichletParams, reparam_dirichlet
from .errors import ConfigError, ShapeError

MODES = ("natural", "ga", "ls", "ls+ga", "mixup", "adv_train", "trades", "sprout")
COMPONENTS = ("ga", "mixup", "dirichlet")


@dataclass(frozen=True)
class VicinityMode:
    kind: str
    alpha: float = 0.01
    mixup_a: float = 0.2
    delta: float = 0.1
    attack: AttackSpec | None = None
    # sprout only: which of its three modules are switched on (ablations)
    components: frozenset = field(default_factory=lambda: frozenset(COMPONENTS))

    def __post_init__(self):
        object.__setattr__(self, "components", frozenset(self.components))
        if self.kind not in MODES:
            raise ConfigError(f"unknown mode {self.kind!r}; expected one of {MODES}")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.mixup_a <= 0:
            raise ConfigError("mixup shape a must be > 0")
        if self.delta < 0:
            raise ConfigError("Gaussian std delta must be >= 0")
        if not self.components <= set(COMPONENTS) or not self.components:
            raise ConfigError(f"components must be a non-empty subset of {COMPONENTS}")
        if self.kind == "sprout" and "dirichlet" in self.components and self.alpha <= 0:
            raise ConfigError("sprout requires alpha > 0")
        needs_attack = self.kind in ("adv_train", "trades")
        if needs_attack and self.attack is None:
            raise ConfigError(f"mode {self.kind} requires an attack spec")
        if not needs_attack and self.attack is not None:
            raise ConfigError(f"mode {self.kind} must not carry an attack spec")

    @property
    def uses_beta(self) -> bool:
        return self.kind == "sprout" and "dirichlet" in self.components

    def label(self) -> str:
        if self.kind != "sprout" or self.components == set(COMPONENTS):
            return self.kind
        return "+".join(c for c in COMPONENTS if c in self.components)


def gce_loss(logits, labels) -> ad.Tensor:
    """-(1/N) sum_i sum_k log(clamp(softmax(logits)_ik)) * Y_ik."""
    logits = logits if isinstance(logits, ad.Tensor) else ad.Tensor(logits)
    labels = labels if isinstance(labels, ad.Tensor) else ad.Tensor(labels)
    if logits.ndim != 2 or logits.shape != labels.shape:
        raise ShapeError("gce_loss", logits.shape, labels.shape)
    logp = ad.log(ad.clip(ad.softmax(logits), ad.PROB_FLOOR, 1.0))
    return ad.scalar_multiply(ad.reduce_sum(ad.multiply(logp, labels)), -1.0 / logits.shape[0])


def gaussian_augment(images: np.ndarray, delta: float, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal(images.shape)
    return np.clip(images + delta * noise, 0.0, 1.0)


def mixup(images, targets, a: float, rng: np.random.Generator, lam: float | None = None):
    """One lambda ~ Beta(a, a) per batch, paired with a random permutation.

    ``lam`` overrides the drawn value (test hook). Returns (x~, y~, lambda).
    """
    drawn = rng.beta(a, a)
    perm = rng.permutation(len(images))
    lam = drawn if lam is None else float(lam)
    x = (1.0 - lam) * images + lam * images[perm]
    y = (1.0 - lam) * targets + lam * targets[perm]
    return x, y, lam


def uniform_smooth(targets, alpha: float) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.float64)
    return (1.0 - alpha) * targets + alpha / targets.shape[1]


def dirichlet_smooth(targets, beta, alpha: float, rng: np.random.Generator,
                     concentration_scale: float = 1.0) -> ad.Tensor:
    """Per-row draw from Dirichlet((1 - alpha) * y + alpha * beta).

    ``beta`` is given in log space: a recorded Tensor (so the draw is
    differentiable w.r.t. log beta), a plain array, or DirichletParams.
    ``concentration_scale`` multiplies the concentration (test hook).
    """
    if not 0 < alpha <= 1:
        raise ConfigError("dirichlet_smooth needs alpha in (0, 1]")
    if isinstance(beta, DirichletParams):
        beta = beta.log_beta
    y = np.asarray(targets.data if isinstance(targets, ad.Tensor) else targets, dtype=np.float64)
    conc = ad.add(y * (1.0 - alpha), ad.scalar_multiply(ad.exp(beta), alpha))
    if concentration_scale != 1.0:
        conc = ad.scalar_multiply(conc, concentration_scale)
    return reparam_dirichlet(conc, rng)


def component_streams(rng: np.random.Generator):
    """Independent generators for Gaussian noise, Mixup and Dirichlet draws."""
    return rng.spawn(3)


def apply_vicinity(mode: VicinityMode, images, targets, model, log_beta, rng,
                   lam: float | None = None, concentration_scale: float = 1.0):
    """Build (x~, y~) for one minibatch according to ``mode``.

    ``log_beta`` is only consulted by sprout with the Dirichlet module on.
    y~ is an array, except in that case where it is a (possibly recorded) Tensor.
    """
    kind = mode.kind
    if kind == "natural":
        return images, targets
    if kind == "ga":
        return gaussian_augment(images, mode.delta, rng), targets
    if kind == "ls":
        return images, uniform_smooth(targets, mode.alpha)
    if kind == "ls+ga":
        return gaussian_augment(images, mode.delta, rng), uniform_smooth(targets, mode.alpha)
    if kind == "mixup":
        x, y, _ = mixup(images, targets, mode.mixup_a, rng, lam)
        return x, y
    if kind in ("adv_train", "trades"):
        if model is None:
            raise ConfigError(f"mode {kind} needs the current model")
        labels = np.asarray(targets).argmax(axis=1)
        attack = mode.attack.with_seed(rng.integers(2**62))
        x = pgd_linf(model, images, labels, attack)
        if kind == "adv_train":
            return x, targets
        probs = ad.softmax_array(model.logits(x).data)  # constant: no gradient through f(x~)
        return x, (1.0 - mode.alpha) * targets + mode.alpha * probs

    # sprout and its ablations: GA, then Mixup, then Dirichlet label draw
    r_ga, r_mix, r_dir = component_streams(rng)
    x, y = images, targets
    if "ga" in mode.components:
        x = gaussian_augment(x, mode.delta, r_ga)
    if "mixup" in mode.components:
        x, y, _ = mixup(x, y, mode.mixup_a, r_mix, lam)
    if "dirichlet" in mode.components:
        if log_beta is None:
            raise ConfigError("sprout with the Dirichlet module needs beta")
        y = dirichlet_smooth(y, log_beta, mode.alpha, r_dir, concentration_scale)
    return x, y
