"""Shared setup for the experiment scripts: digits data and a train+evaluate helper."""

from __future__ import annotations

import argparse
import json
import time

from sproutlab import AttackSpec, TrainConfig, VicinityMode, synth_digits, train
from sproutlab.evaluation import accuracy, robust_accuracy


def parser(doc: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=doc)
    p.add_argument("--n-train", type=int, default=10_000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--out", help="write results as JSON here")
    return p


def data(args):
    return synth_digits(args.n_train, 1), synth_digits(args.n_test, 2)


def run(train_set, test_set, cfg: TrainConfig, eps: float, **attack) -> dict:
    t0 = time.perf_counter()
    ckpt, _ = train(train_set, cfg)
    spec = AttackSpec(eps, steps=attack.pop("steps", 20), **attack)
    return {"clean": accuracy(ckpt.model, test_set), "robust": robust_accuracy(ckpt.model, test_set, spec),
            "seconds": round(time.perf_counter() - t0, 1), "ckpt": ckpt}


def sprout(components=("ga", "mixup", "dirichlet"), **kw) -> VicinityMode:
    return VicinityMode("sprout", components=frozenset(components), **kw)


def emit(rows: dict, out: str | None) -> None:
    clean = {k: {m: v for m, v in r.items() if m != "ckpt"} for k, r in rows.items()}
    for k, r in clean.items():
        print(f"{k:>24}  clean {r['clean']:.3f}  robust {r['robust']:.3f}  ({r['seconds']}s)")
    if out:
        with open(out, "w") as f:
            json.dump(clean, f, indent=2, sort_keys=True)
