"""Desk-scale classifiers (MLP, two-conv CNN) and the checkpoint container."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError

CKPT_MAGIC = b"SPRLCKPT"
CKPT_VERSION = 1
LOG_BETA_BLOCK = "__log_beta__"


@dataclass(frozen=True)
class ModelSpec:
    arch: str  # "mlp" | "cnn"
    input_shape: tuple[int, int, int]  # C, H, W
    num_classes: int
    width_factor: int = 1
    pool: int = 4  # CNN mean-pool window; 0 pools globally

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.arch not in ("mlp", "cnn"):
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.width_factor < 1:
            raise ConfigError("width_factor must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"bad input shape {self.input_shape}")
        if self.arch == "cnn":
            _, h, w = self.input_shape
            if self.pool < 0 or (self.pool and (h % self.pool or w % self.pool)):
                raise ConfigError(f"pool {self.pool} does not tile a {h}x{w} input")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        c, h, w = self.input_shape
        k, wf = self.num_classes, self.width_factor
        if self.arch == "mlp":
            hidden = 128 * wf
            return {
                "dense1.weight": (c * h * w, hidden),
                "dense1.bias": (hidden,),
                "dense2.weight": (hidden, k),
                "dense2.bias": (k,),
            }
        c1, c2 = 8 * wf, 16 * wf
        cells = 1 if self.pool == 0 else (h // self.pool) * (w // self.pool)
        return {
            "conv1.weight": (c1, c, 3, 3),
            "conv1.bias": (c1,),
            "conv2.weight": (c2, c1, 3, 3),
            "conv2.bias": (c2,),
            "dense.weight": (c2 * cells, k),
            "dense.bias": (k,),
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["arch"], tuple(d["input_shape"]), int(d["num_classes"]),
                   int(d["width_factor"]), int(d["pool"]))


def build_model(spec: ModelSpec, seed: int) -> dict[str, np.ndarray]:
    """Initial parameters: fan-in-scaled uniform weights, zero biases.

    Hidden layers use bound sqrt(6 / fan_in), the output layer sqrt(3 / fan_in).
    """
    rng = np.random.default_rng([seed, 0x5EED])
    params = {}
    output_layer = "dense2.weight" if spec.arch == "mlp" else "dense.weight"
    for name, shape in spec.param_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
        bound = np.sqrt((3.0 if name == output_layer else 6.0) / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def forward(spec: ModelSpec, params: dict, x) -> ad.Tensor:
    """Logits for a batch ``x`` (N x C x H x W). Params may be recorded Tensors."""
    x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
    n = x.shape[0]
    if spec.arch == "mlp":
        h = ad.reshape(x, (n, -1))
        h = ad.relu(ad.matmul(h, params["dense1.weight"]) + params["dense1.bias"])
        return ad.matmul(h, params["dense2.weight"]) + params["dense2.bias"]
    h = ad.relu(ad.conv2d(x, params["conv1.weight"], pad=1)
                + ad.reshape(params["conv1.bias"], (1, -1, 1, 1)))
    h = ad.relu(ad.conv2d(h, params["conv2.weight"], pad=1)
                + ad.reshape(params["conv2.bias"], (1, -1, 1, 1)))
    _, c, hh, ww = h.shape
    if spec.pool == 0:
        h = ad.reduce_mean(h, axis=(2, 3))
    else:
        p = spec.pool
        h = ad.reduce_mean(ad.reshape(h, (n, c, hh // p, p, ww // p, p)), axis=(3, 5))
        h = ad.reshape(h, (n, -1))
    return ad.matmul(h, params["dense.weight"]) + params["dense.bias"]


@dataclass
class Model:
    spec: ModelSpec
    params: dict[str, np.ndarray]

    @classmethod
    def init(cls, spec: ModelSpec, seed: int) -> "Model":
        return cls(spec, build_model(spec, seed))

    def logits(self, x, params=None) -> ad.Tensor:
        return forward(self.spec, self.params if params is None else params, x)

    def predict_logits(self, images: np.ndarray, chunk: int = 500) -> np.ndarray:
        parts = [self.logits(images[i:i + chunk]).data for i in range(0, len(images), chunk)]
        return np.concatenate(parts, axis=0)

    def predict(self, images: np.ndarray) -> np.ndarray:
        return self.predict_logits(images).argmax(axis=1)

    def copy(self) -> "Model":
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()})


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    log_beta: np.ndarray
    config: dict = field(default_factory=dict)
    epoch: int = 0
    seed: int = 0
    lineage: list = field(default_factory=list)

    @property
    def model(self) -> Model:
        return Model(self.spec, self.params)

    @property
    def beta(self) -> np.ndarray:
        return np.exp(self.log_beta)


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """JSON header (spec, config, seeds, block table) + raw little-endian float64 blocks."""
    expected = ckpt.spec.param_shapes()
    if set(ckpt.params) != set(expected):
        raise DataError(f"parameter names {sorted(ckpt.params)} do not match spec")
    names = sorted(expected)
    blocks = [(n, np.asarray(ckpt.params[n], dtype="<f8")) for n in names]
    blocks.append((LOG_BETA_BLOCK, np.asarray(ckpt.log_beta, dtype="<f8")))
    for n, arr in blocks[:-1]:
        if arr.shape != expected[n]:
            raise DataError(f"{n}: shape {arr.shape} does not match spec {expected[n]}")
    header = {
        "format_version": CKPT_VERSION,
        "spec": ckpt.spec.to_dict(),
        "config": ckpt.config,
        "epoch": int(ckpt.epoch),
        "seed": int(ckpt.seed),
        "lineage": ckpt.lineage,
        "blocks": [{"name": n, "shape": list(a.shape)} for n, a in blocks],
    }
    head = _dumps(header)
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<IQ", CKPT_VERSION, len(head)))
        f.write(head)
        for _, arr in blocks:
            f.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path, num_classes: int | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, head_len = struct.unpack("<IQ", raw[8:20])
    if version != CKPT_VERSION:
        raise DataError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    header = json.loads(raw[20:20 + head_len])
    if header.get("format_version") != CKPT_VERSION:
        raise DataError(f"{path}: header version mismatch")
    spec = ModelSpec.from_dict(header["spec"])
    if num_classes is not None and spec.num_classes != num_classes:
        raise DataError(f"{path}: checkpoint has K={spec.num_classes}, expected K={num_classes}")
    expected = spec.param_shapes()
    offset = 20 + head_len
    params, log_beta = {}, None
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise DataError(f"{path}: truncated block {block['name']}")
        arr = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
        if block["name"] == LOG_BETA_BLOCK:
            log_beta = arr
        elif expected.get(block["name"]) != shape:
            raise DataError(f"{path}: block {block['name']} shape {shape} does not match spec")
        else:
            params[block["name"]] = arr
    if set(params) != set(expected) or log_beta is None:
        raise DataError(f"{path}: missing parameter blocks")
    if log_beta.shape != (spec.num_classes,):
        raise DataError(f"{path}: beta has shape {log_beta.shape}, expected ({spec.num_classes},)")
    if offset != len(raw):
        raise DataError(f"{path}: trailing bytes after last block")
    return Checkpoint(spec, params, log_beta, header["config"], header["epoch"],
                      header["seed"], header["lineage"])
