"""``sproutlab`` command line: one experiment command per process.

Every command writes under ``<output.dir>/<command>/`` together with the
resolved config (``config.ini``) and ``meta.json`` (seed and versions), so a
run can be repeated with ``sproutlab <command> <dir>/config.ini``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import evaluation as ev
from .attacks import transfer_eval
from .config import ExperimentConfig, load_config, parse_config
from .errors import DataError, SproutLabError
from .models import load_checkpoint, save_checkpoint
from .training import train

COMMANDS = ("train", "attack", "eval", "landscape", "diversity", "bench", "ablate")

# ablation rows: label -> (mode kind, sprout components)
ABLATION_ROWS = (
    ("ga", "sprout", ("ga",)),
    ("mixup", "sprout", ("mixup",)),
    ("dirichlet", "sprout", ("dirichlet",)),
    ("ga+mixup", "sprout", ("ga", "mixup")),
    ("mixup+dirichlet", "sprout", ("mixup", "dirichlet")),
    ("ga+dirichlet", "sprout", ("ga", "dirichlet")),
    ("uniform_ls", "ls", ("ga", "mixup", "dirichlet")),
    ("sprout", "sprout", ("ga", "mixup", "dirichlet")),
)

log = logging.getLogger("sproutlab")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n")


def _prepare(cfg: ExperimentConfig, command: str) -> Path:
    out = cfg.output_dir() / command
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.render())
    _write_json(out / "meta.json", {
        "command": command,
        "train_seed": cfg.int("train", "seed"),
        "attack_seed": cfg.int("attack", "seed"),
        "dataset_seed": cfg.int("dataset", "seed"),
        "versions": {"sproutlab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    })
    return out


def _eval_model(cfg: ExperimentConfig):
    path = cfg.get("eval", "checkpoint")
    if not path:
        raise DataError("eval.checkpoint is required for this command")
    if not Path(path).is_file():
        raise DataError(f"checkpoint {path} not found")
    _, test = cfg.datasets()
    ckpt = load_checkpoint(path, num_classes=test.num_classes)
    return ckpt, test.head(cfg.int("eval", "n_examples"))


def _fingerprint(path) -> dict | None:
    # name plus content hash keeps reports independent of where runs live
    if not path:
        return None
    p = Path(path)
    return {"name": p.name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()}


def _attack_provenance(cfg: ExperimentConfig) -> dict:
    attack = dict(cfg.sections["attack"])
    attack["source"] = _fingerprint(attack["source"])
    return attack


def _provenance(cfg: ExperimentConfig, dataset, **extra) -> dict:
    return {"dataset": dataset.name, "checkpoint": _fingerprint(cfg.get("eval", "checkpoint")),
            "attack": _attack_provenance(cfg), **extra}


def cmd_train(cfg: ExperimentConfig, out: Path) -> None:
    tr, te = cfg.datasets()
    ckpt, hist = train(tr, cfg.train_config())
    save_checkpoint(out / "checkpoint.ckpt", ckpt)
    hist.to_csv(out / "history.csv")
    ev.beta_correlation_export(ckpt.beta, out / "beta_correlation.csv")
    report = ev.EvalReport({"train_acc": ev.accuracy(ckpt.model, tr), "test_acc": ev.accuracy(ckpt.model, te)},
                           provenance={"dataset": tr.name, "train_config": ckpt.config,
                                       "lineage": ckpt.lineage})
    report.validate().save(out / "report.json")


def cmd_attack(cfg: ExperimentConfig, out: Path) -> None:
    ckpt, test = _eval_model(cfg)
    spec = cfg.attack_spec()
    metrics = {"robust_acc": ev.robust_accuracy(ckpt.model, test, spec)}
    source = cfg.get("attack", "source")
    if source:
        if not Path(source).is_file():
            raise DataError(f"transfer source {source} not found")
        metrics["transfer_acc"] = transfer_eval(source, ckpt, test, spec)
    ev.EvalReport(metrics, provenance=_provenance(cfg, test)).validate().save(
        out / "report.json")


def cmd_eval(cfg: ExperimentConfig, out: Path) -> None:
    ckpt, test = _eval_model(cfg)
    suites = cfg.list("eval", "suites")
    report = ev.EvalReport(provenance=_provenance(cfg, test, suites=suites))
    for suite in suites:
        if suite == "clean":
            report.metrics["clean_acc"] = ev.accuracy(ckpt.model, test)
        elif suite == "robust":
            report.metrics["robust_acc"] = ev.robust_accuracy(ckpt.model, test, cfg.attack_spec())
        elif suite == "invariance":
            inv = ev.invariance_suite(ckpt.model, test)
            report.metrics.update(inv.metrics)
            report.notes.extend(inv.notes)
        else:
            raise DataError(f"unknown eval suite {suite!r}")
    report.validate().save(out / "report.json")


def cmd_landscape(cfg: ExperimentConfig, out: Path) -> None:
    ckpt, test = _eval_model(cfg)
    n = min(cfg.int("eval", "landscape_examples"), len(test))
    n_grid, mag = cfg.int("eval", "n_grid"), cfg.float("eval", "max_mag")
    seed = cfg.int("attack", "seed")
    spans = []
    for i in range(n):
        grid, u, v = ev.loss_landscape(ckpt.model, test.images[i], test.labels[i], n_grid, mag, seed + i)
        spans.append(float(grid.max() - grid.min()))
        with open(out / f"grid_{i:04d}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["u\\v"] + [repr(float(x)) for x in v])
            for ui, row in zip(u, grid):
                w.writerow([repr(float(ui))] + [repr(float(x)) for x in row])
    ev.EvalReport({"mean_span": float(np.mean(spans))}, {"spans": spans},
                  _provenance(cfg, test, n_grid=n_grid, max_mag=mag)).validate().save(out / "report.json")


def cmd_diversity(cfg: ExperimentConfig, out: Path) -> None:
    _, test = cfg.datasets()
    models, prints = {}, {}
    for item in cfg.list("eval", "diversity_models"):
        if "=" not in item:
            raise DataError(f"eval.diversity_models entries must be name=path, got {item!r}")
        name, path = item.split("=", 1)
        if not Path(path).is_file():
            raise DataError(f"checkpoint {path} not found")
        models[name] = load_checkpoint(path, num_classes=test.num_classes).model
        prints[name] = _fingerprint(path)
    if len(models) < 2:
        raise DataError("diversity needs at least two models")
    res = ev.gradient_diversity(models, test, cfg.int("eval", "n_examples"))
    with open(out / "cosine.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model"] + res.names)
        for name, row in zip(res.names, res.matrix):
            w.writerow([name] + ["NA" if np.isnan(x) else repr(float(x)) for x in row])
    matrix = [[None if np.isnan(x) else float(x) for x in row] for row in res.matrix]
    ev.EvalReport({"n_used": res.n_used, "n_excluded": res.n_excluded}, {"cosine": matrix},
                  {"dataset": test.name, "models": prints}
                  ).validate().save(out / "report.json")


def cmd_bench(cfg: ExperimentConfig, out: Path) -> None:
    tr, _ = cfg.datasets()
    configs = [cfg.train_config(cfg.vicinity_mode(kind)) for kind in cfg.list("eval", "bench_modes")]
    rows = ev.runtime_benchmark(configs, tr, cfg.int("eval", "bench_epochs"))
    with open(out / "runtime.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "seconds", "seconds_per_epoch", "ratio_to_natural"])
        for r in rows:
            w.writerow([r.method, f"{r.seconds:.4f}", f"{r.seconds / len(r.per_epoch):.4f}", f"{r.ratio:.4f}"])


def cmd_ablate(cfg: ExperimentConfig, out: Path) -> None:
    tr, te = cfg.datasets()
    test = te.head(cfg.int("eval", "n_examples"))
    spec = cfg.attack_spec()
    epochs = cfg.get("eval", "ablate_epochs")
    overrides = {"epochs": int(epochs)} if epochs else {}
    for label, kind, comps in ABLATION_ROWS:
        tc = cfg.train_config(cfg.vicinity_mode(kind, comps), **overrides)
        ckpt, _ = train(tr, tc)
        row = out / label
        row.mkdir(exist_ok=True)
        save_checkpoint(row / "checkpoint.ckpt", ckpt)
        ev.EvalReport({"clean_acc": ev.accuracy(ckpt.model, test),
                       "robust_acc": ev.robust_accuracy(ckpt.model, test, spec)},
                      provenance={"row": label, "dataset": test.name, "train_config": ckpt.config,
                                  "attack": _attack_provenance(cfg)}
                      ).validate().save(row / "report.json")


HANDLERS = {"train": cmd_train, "attack": cmd_attack, "eval": cmd_eval, "landscape": cmd_landscape,
            "diversity": cmd_diversity, "bench": cmd_bench, "ablate": cmd_ablate}


def run(command: str, config_path=None, overrides=()) -> int:
    """Execute one command; returns the process exit status."""
    try:
        if command not in COMMANDS:
            raise SproutLabError(f"unknown command {command!r}")
        cfg = load_config(config_path, overrides) if config_path else parse_config("", overrides)
        HANDLERS[command](cfg, _prepare(cfg, command))
    except SproutLabError as e:
        _report_error(e, e.exit_code)
        return e.exit_code
    except (FileNotFoundError, IsADirectoryError) as e:
        _report_error(DataError(str(e)), 3)
        return 3
    return 0


def _report_error(err: Exception, code: int) -> None:
    line = json.dumps({"error": type(err).__name__, "exit_code": code,
                       "message": " ".join(str(err).split())})
    print(line, file=sys.stderr)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sproutlab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config", nargs="?", help="INI config file (defaults apply when omitted)")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override a config value (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args.config, args.overrides)


if __name__ == "__main__":
    sys.exit(main())
