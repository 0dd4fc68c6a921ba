"""Measurement procedures: accuracies, invariance transforms, loss landscapes,
input-gradient diversity, beta correlation export and the runtime benchmark."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .attacks import CHUNK, AttackSpec, pgd_attack
from .data import Dataset
from .dirichlet import DirichletParams, correlation_matrix
from .errors import DataError, NumericError
from .models import Model


@dataclass
class EvalReport:
    metrics: dict = field(default_factory=dict)
    matrices: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def validate(self) -> "EvalReport":
        for name, value in self.metrics.items():
            if value is None:
                continue
            if not math.isfinite(value):
                raise NumericError(f"metric {name} is not finite")
            if "acc" in name and not 0.0 <= value <= 1.0:
                raise NumericError(f"accuracy {name}={value} outside [0, 1]")
            if "cos" in name and not -1.0 <= value <= 1.0:
                raise NumericError(f"cosine {name}={value} outside [-1, 1]")
        return self

    def to_dict(self) -> dict:
        return {"metrics": self.metrics, "matrices": self.matrices,
                "provenance": self.provenance, "notes": self.notes}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")


def _check_compatible(model: Model, dataset: Dataset) -> None:
    if len(dataset) == 0:
        raise DataError("empty dataset")
    if tuple(dataset.input_shape) != model.spec.input_shape:
        raise DataError(f"dataset shape {dataset.input_shape} != model input {model.spec.input_shape}")
    if dataset.num_classes != model.spec.num_classes:
        raise DataError(f"dataset has K={dataset.num_classes}, model has K={model.spec.num_classes}")


def _predict(model: Model, images: np.ndarray) -> np.ndarray:
    return np.concatenate([model.logits(images[i:i + CHUNK]).data.argmax(axis=1)
                           for i in range(0, len(images), CHUNK)])


def accuracy(model: Model, dataset: Dataset) -> float:
    _check_compatible(model, dataset)
    return float(np.mean(_predict(model, dataset.images) == dataset.labels))


def robust_accuracy(model: Model, dataset: Dataset, spec: AttackSpec) -> float:
    """Fraction still classified correctly at the PGD output."""
    _check_compatible(model, dataset)
    result = pgd_attack(model, dataset.images, dataset.labels, spec)
    return float(np.mean(~result.fooled))


# -------------------------------------------------------------- invariance


def rotate(images: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image center; bilinear interpolation, zero fill."""
    n, c, h, w = images.shape
    th = math.radians(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # inverse map: output pixel -> source location
    sx = math.cos(th) * (xx - cx) + math.sin(th) * (yy - cy) + cx
    sy = -math.sin(th) * (xx - cx) + math.cos(th) * (yy - cy) + cy
    x0, y0 = np.floor(sx).astype(int), np.floor(sy).astype(int)
    fx, fy = sx - x0, sy - y0
    out = np.zeros_like(images)
    for dy, dx, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                        (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yi, xi = y0 + dy, x0 + dx
        ok = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = images[:, :, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        out += np.where(ok, wgt, 0.0) * vals
    return np.clip(out, 0.0, 1.0)


def brightness(images: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(factor * images, 0.0, 1.0)


def contrast(images: np.ndarray, factor: float) -> np.ndarray:
    """Scale deviations from each image's global mean (over pixels and channels)."""
    m = images.mean(axis=(1, 2, 3), keepdims=True)
    return np.clip(m + factor * (images - m), 0.0, 1.0)


def grayscale(images: np.ndarray) -> np.ndarray:
    if images.shape[1] != 3:
        raise DataError("grayscale needs 3-channel images")
    g = images.mean(axis=1, keepdims=True)
    # exact idempotence on inputs that are already gray
    gray = np.all(images == images[:, :1], axis=1, keepdims=True)
    g = np.where(gray, images[:, :1], g)
    return np.repeat(g, 3, axis=1)


def invariance_suite(model: Model, dataset: Dataset, rotation_deg: float = 10.0,
                     brightness_factor: float = 1.5, contrast_factor: float = 2.0) -> EvalReport:
    """Accuracy under rotation, brightness, contrast and grayscale transforms.

    Grayscale (and contrast's RGB pivot) only make sense for 3-channel data;
    on single-channel data grayscale is reported as None with a note.
    """
    _check_compatible(model, dataset)
    x, y = dataset.images, dataset.labels
    report = EvalReport(provenance={"dataset": dataset.name, "rotation_deg": rotation_deg,
                                    "brightness_factor": brightness_factor,
                                    "contrast_factor": contrast_factor})

    def acc(images):
        return float(np.mean(_predict(model, images) == y))

    report.metrics["rotation_acc"] = acc(rotate(x, rotation_deg))
    report.metrics["brightness_acc"] = acc(brightness(x, brightness_factor))
    report.metrics["contrast_acc"] = acc(contrast(x, contrast_factor))
    if x.shape[1] == 3:
        report.metrics["grayscale_acc"] = acc(grayscale(x))
    else:
        report.metrics["grayscale_acc"] = None
        report.notes.append(f"grayscale skipped: requires C=3, dataset has C={x.shape[1]}")
    return report.validate()


# ---------------------------------------------------------- loss landscape


def _ce_and_grad(model: Model, images, labels, grad=True):
    tape = ad.Tape()
    xt = tape.watch(images) if grad else ad.Tensor(images)
    per = -ad.gather(ad.log_softmax(model.logits(xt)), labels)
    g = ad.backward(ad.reduce_sum(per), [xt])[xt] if grad else None
    return per.data, g


def loss_landscape(model: Model, x: np.ndarray, y: int, n_grid: int = 20,
                   max_mag: float = 0.1, seed: int = 0):
    """Cross-entropy over the plane spanned by sign(grad_x L) and a Rademacher vector.

    Returns (grid, u, v) where grid[i, j] = L(clip(x + u[i] d1 + v[j] d2)).
    """
    if n_grid < 2:
        raise ValueError("n_grid must be >= 2")
    x = np.asarray(x, dtype=np.float64)[None]
    label = np.array([int(y)])
    _, g = _ce_and_grad(model, x, label)
    d1 = np.sign(g[0])
    d2 = np.random.default_rng(seed).choice([-1.0, 1.0], size=d1.shape)
    half = n_grid / 2.0
    u = max_mag * (np.arange(n_grid + 1) - half) / half
    pts = x[0][None, None] + u[:, None, None, None, None] * d1 + u[None, :, None, None, None] * d2
    pts = np.clip(pts.reshape((-1,) + d1.shape), 0.0, 1.0)
    losses = [_ce_and_grad(model, pts[i:i + CHUNK], np.repeat(label, len(pts[i:i + CHUNK])),
                           grad=False)[0] for i in range(0, len(pts), CHUNK)]
    grid = np.concatenate(losses).reshape(n_grid + 1, n_grid + 1)
    if not np.all(np.isfinite(grid)):
        raise NumericError("loss landscape contains non-finite values")
    return grid, u, u.copy()


def landscape_variation(model: Model, dataset: Dataset, n_examples: int = 50,
                        n_grid: int = 20, max_mag: float = 0.1, seed: int = 0) -> float:
    """Mean over examples of (max - min) of the landscape grid."""
    n = min(n_examples, len(dataset))
    spans = []
    for i in range(n):
        grid, _, _ = loss_landscape(model, dataset.images[i], dataset.labels[i], n_grid,
                                    max_mag, seed + i)
        spans.append(grid.max() - grid.min())
    return float(np.mean(spans))


# ------------------------------------------------------ gradient diversity


@dataclass
class DiversityResult:
    names: list[str]
    matrix: np.ndarray  # NaN on the diagonal (not applicable)
    n_used: int
    n_excluded: int


def gradient_diversity(models: dict, dataset: Dataset, n_examples: int) -> DiversityResult:
    """Average pairwise cosine similarity of per-example input gradients."""
    if n_examples < 1:
        raise ValueError("n_examples must be >= 1")
    names = list(models)
    for m in models.values():
        _check_compatible(m, dataset)
    n = min(n_examples, len(dataset))
    x, y = dataset.images[:n], dataset.labels[:n]
    grads = []
    for name in names:
        parts = [_ce_and_grad(models[name], x[i:i + CHUNK], y[i:i + CHUNK])[1]
                 for i in range(0, n, CHUNK)]
        grads.append(np.concatenate(parts).reshape(n, -1))
    norms = np.stack([np.linalg.norm(g, axis=1) for g in grads])
    keep = np.all(norms > 0, axis=0)
    k = len(names)
    mat = np.full((k, k), np.nan)
    if keep.any():
        for a in range(k):
            for b in range(k):
                if a == b:
                    continue
                cos = (grads[a][keep] * grads[b][keep]).sum(1) / (norms[a, keep] * norms[b, keep])
                mat[a, b] = float(np.clip(cos, -1.0, 1.0).mean())
    return DiversityResult(names, mat, int(keep.sum()), int((~keep).sum()))


def self_cosines(model_a: Model, model_b: Model, dataset: Dataset, n_examples: int) -> np.ndarray:
    """Per-example cosine between two models' input gradients (no averaging)."""
    n = min(n_examples, len(dataset))
    ga = _ce_and_grad(model_a, dataset.images[:n], dataset.labels[:n])[1].reshape(n, -1)
    gb = _ce_and_grad(model_b, dataset.images[:n], dataset.labels[:n])[1].reshape(n, -1)
    return (ga * gb).sum(1) / (np.linalg.norm(ga, axis=1) * np.linalg.norm(gb, axis=1))


# ------------------------------------------------------- beta correlation


def beta_correlation_export(beta, path=None) -> np.ndarray:
    """Matrix of beta_s * beta_t; optionally written as CSV with class-index headers.

    ``beta`` may be DirichletParams or a positive K-vector.
    """
    mat = correlation_matrix(beta)
    if path is not None:
        k = mat.shape[0]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["class"] + [str(i) for i in range(k)])
            for s in range(k):
                w.writerow([str(s)] + [repr(float(v)) for v in mat[s]])
    return mat


# ---------------------------------------------------------------- runtime


@dataclass
class BenchmarkRow:
    method: str
    seconds: float
    per_epoch: list[float]
    ratio: float


def runtime_benchmark(configs: list, dataset: Dataset, epochs: int) -> list[BenchmarkRow]:
    """Wall-clock of each config's training loop over the same data order.

    Ratios are relative to the natural-mode config (which must be present).
    Per-epoch evaluation and natural pre-training are excluded from timing,
    and one untimed warm-up epoch of the first config runs before anything is timed.
    """
    from .training import train  # training imports evaluation-free modules only

    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    archs = {(c.arch, c.width_factor, c.pool) for c in configs}
    if len(archs) != 1:
        raise ValueError("benchmark configs must share one model spec")
    # one untimed epoch first, so the first timed method does not pay warm-up costs
    train(dataset, replace(configs[0], epochs=1, eval_each_epoch=False, init="random"))
    rows = []
    for cfg in configs:
        run = replace(cfg, epochs=epochs, eval_each_epoch=False, init="random")
        _, hist = train(dataset, run)
        rows.append(BenchmarkRow(cfg.mode.label(), float(sum(hist.seconds)), hist.seconds, 1.0))
    natural = [r for r in rows if r.method == "natural"]
    if not natural:
        raise ValueError("runtime_benchmark needs a natural-mode config as the baseline")
    base = natural[0].seconds
    for r in rows:
        r.ratio = r.seconds / base
    return rows
