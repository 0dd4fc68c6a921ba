"""INI experiment configs: parsing, defaults, ``--set`` overrides and object builders."""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass
from pathlib import Path

from .attacks import AttackSpec
from .data import Dataset, load_cifar_bin, load_idx, synth_blobs, synth_digits
from .errors import ConfigError
from .training import TrainConfig
from .vicinity import COMPONENTS, VicinityMode

OUTPUT_ROOT_ENV = "SPROUTLAB_OUTPUT_ROOT"

# Every accepted key with its default; "" means unset/optional.
DEFAULTS: dict[str, dict[str, str]] = {
    "dataset": {
        "kind": "digits",  # idx | cifar | blobs | digits
        "train_images": "", "train_labels": "", "test_images": "", "test_labels": "",
        "train_path": "", "test_path": "",
        "num_classes": "10",
        "max_n": "0",  # 0 = no cap
        "n_train": "10000", "n_test": "1000",
        "seed": "1",
        "blob_dim": "16", "blob_separation": "10.0", "blob_classes": "2",
    },
    "model": {"arch": "cnn", "width": "1", "pool": "4"},
    "train": {
        "mode": "natural",
        "alpha": "0.01", "mixup_a": "0.2", "delta": "0.1",
        "components": "ga,mixup,dirichlet",
        "lr_theta": "0.05", "lr_beta": "0.1", "momentum": "0.9",
        "beta_warmup_epochs": "10", "beta_init_scale": "0.1",
        "epochs": "5", "batch": "128", "seed": "0",
        "init": "random",
        "adv_epsilon": "0.1", "adv_steps": "7",
    },
    "attack": {
        "epsilon": "0.1", "steps": "20", "step_size": "", "restarts": "1",
        "loss": "cross_entropy", "kappa": "0.0", "include_zero_start": "true", "seed": "0",
        "source": "",  # transfer source checkpoint
    },
    "eval": {
        "checkpoint": "",
        "suites": "clean,robust,invariance",
        "n_examples": "1000",
        "landscape_examples": "50", "n_grid": "20", "max_mag": "0.1",
        "diversity_models": "",  # name=path,name=path
        "bench_modes": "natural,sprout,adv_train", "bench_epochs": "10",
        "ablate_epochs": "",  # empty -> train.epochs
    },
    "output": {"dir": ""},
}


@dataclass
class ExperimentConfig:
    sections: dict[str, dict[str, str]]

    def get(self, section: str, key: str) -> str:
        return self.sections[section][key]

    def _typed(self, section, key, cast):
        raw = self.get(section, key)
        try:
            return cast(raw)
        except ValueError as e:
            raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from e

    def int(self, section, key) -> int:
        return self._typed(section, key, int)

    def float(self, section, key) -> float:
        return self._typed(section, key, float)

    def bool(self, section, key) -> bool:
        raw = self.get(section, key).strip().lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{section}.{key}: not a boolean: {raw!r}")

    def list(self, section, key) -> list[str]:
        return [s.strip() for s in self.get(section, key).split(",") if s.strip()]

    def render(self) -> str:
        """Canonical INI text with every key, suitable for exact re-runs."""
        cp = configparser.ConfigParser(interpolation=None)
        for sec in DEFAULTS:
            cp[sec] = {k: self.sections[sec][k] for k in DEFAULTS[sec]}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    # ------------------------------------------------------------ builders

    def output_dir(self) -> Path:
        d = self.get("output", "dir")
        if d:
            return Path(d)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))

    def datasets(self) -> tuple[Dataset, Dataset]:
        kind = self.get("dataset", "kind")
        k = self.int("dataset", "num_classes")
        max_n = self.int("dataset", "max_n")
        if kind == "idx":
            tr = load_idx(self._path("train_images"), self._path("train_labels"), k)
            te = load_idx(self._path("test_images"), self._path("test_labels"), k)
        elif kind == "cifar":
            cap = max_n if max_n > 0 else None
            tr = load_cifar_bin(self._path("train_path"), cap)
            te = load_cifar_bin(self._path("test_path"), cap)
        elif kind == "digits":
            seed = self.int("dataset", "seed")
            tr = synth_digits(self.int("dataset", "n_train"), seed)
            te = synth_digits(self.int("dataset", "n_test"), seed + 1)
        elif kind == "blobs":
            kk = self.int("dataset", "blob_classes")
            args = (self.int("dataset", "blob_dim"), self.float("dataset", "blob_separation"))
            seed = self.int("dataset", "seed")
            tr = synth_blobs(kk, max(1, self.int("dataset", "n_train") // kk), *args, seed)
            te = synth_blobs(kk, max(1, self.int("dataset", "n_test") // kk), *args, seed + 1)
        else:
            raise ConfigError(f"dataset.kind must be idx, cifar, blobs or digits, got {kind!r}")
        if max_n > 0 and kind != "cifar":
            tr, te = tr.head(max_n), te.head(max_n)
        return tr, te

    def _path(self, key: str) -> str:
        p = self.get("dataset", key)
        if not p:
            raise ConfigError(f"dataset.{key} is required for kind={self.get('dataset', 'kind')}")
        return p

    def attack_spec(self) -> AttackSpec:
        step = self.get("attack", "step_size")
        return AttackSpec(
            epsilon=self.float("attack", "epsilon"), steps=self.int("attack", "steps"),
            step_size=float(step) if step else None, restarts=self.int("attack", "restarts"),
            loss_kind=self.get("attack", "loss"), include_zero_start=self.bool("attack", "include_zero_start"),
            seed=self.int("attack", "seed"), kappa=self.float("attack", "kappa"))

    def vicinity_mode(self, kind: str | None = None, components=None) -> VicinityMode:
        kind = kind or self.get("train", "mode")
        attack = None
        if kind in ("adv_train", "trades"):
            attack = AttackSpec(self.float("train", "adv_epsilon"), steps=self.int("train", "adv_steps"))
        comps = components if components is not None else self.list("train", "components")
        unknown = set(comps) - set(COMPONENTS)
        if unknown:
            raise ConfigError(f"train.components: unknown {sorted(unknown)}")
        return VicinityMode(kind, alpha=self.float("train", "alpha"), mixup_a=self.float("train", "mixup_a"),
                            delta=self.float("train", "delta"), attack=attack, components=frozenset(comps))

    def train_config(self, mode: VicinityMode | None = None, **overrides) -> TrainConfig:
        kw = dict(
            mode=mode or self.vicinity_mode(), epochs=self.int("train", "epochs"),
            batch_size=self.int("train", "batch"), lr_theta=self.float("train", "lr_theta"),
            lr_beta=self.float("train", "lr_beta"), momentum=self.float("train", "momentum"),
            seed=self.int("train", "seed"), init=self.get("train", "init"),
            arch=self.get("model", "arch"), width_factor=self.int("model", "width"),
            pool=self.int("model", "pool"), beta_warmup_epochs=self.int("train", "beta_warmup_epochs"),
            beta_init_scale=self.float("train", "beta_init_scale"))
        kw.update(overrides)
        return TrainConfig(**kw)


def parse_config(text: str = "", overrides: list[str] | tuple = ()) -> ExperimentConfig:
    """Parse INI text over the defaults, then apply ``section.key=value`` overrides."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config syntax: {str(e).splitlines()[0]}") from e
    sections = {s: dict(v) for s, v in DEFAULTS.items()}
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown section [{sec}]")
        for key, value in cp[sec].items():
            _assign(sections, sec, key, value)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        sec, key = lhs.split(".", 1)
        _assign(sections, sec.strip(), key.strip(), value.strip())
    return ExperimentConfig(sections)


def _assign(sections, sec, key, value):
    if sec not in DEFAULTS:
        raise ConfigError(f"unknown section [{sec}]")
    if key not in DEFAULTS[sec]:
        raise ConfigError(f"unknown key {sec}.{key}")
    sections[sec][key] = value


def load_config(path, overrides=()) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    return parse_config(p.read_text(), overrides)
