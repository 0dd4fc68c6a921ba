"""Desk-scale natural vs SPROUT comparison plus the module ablation.

SPROUT and every ablation row start from the natural checkpoint and train for
the same number of epochs. Robust accuracy is PGD-linf, 20 steps, step eps/5.
"""

import tempfile
from pathlib import Path

from _common import data, emit, parser, run, sprout
from sproutlab import TrainConfig, VicinityMode
from sproutlab.models import save_checkpoint

ROWS = [("ga",), ("mixup",), ("dirichlet",), ("ga", "mixup"), ("mixup", "dirichlet"),
        ("ga", "dirichlet"), ("ga", "mixup", "dirichlet")]


def main():
    args = parser(__doc__).parse_args()
    tr, te = data(args)
    rows = {"natural": run(tr, te, TrainConfig(VicinityMode("natural"), epochs=args.epochs,
                                               eval_each_epoch=False), args.eps)}
    with tempfile.TemporaryDirectory() as tmp:
        init = Path(tmp) / "natural.ckpt"
        save_checkpoint(init, rows["natural"]["ckpt"])
        for comps in ROWS:
            cfg = TrainConfig(sprout(comps), epochs=args.epochs, init=str(init), eval_each_epoch=False)
            rows["+".join(comps)] = run(tr, te, cfg, args.eps)
        rows["uniform_ls"] = run(tr, te, TrainConfig(VicinityMode("ls"), epochs=args.epochs, init=str(init),
                                                     eval_each_epoch=False), args.eps)
    emit(rows, args.out)


if __name__ == "__main__":
    main()
