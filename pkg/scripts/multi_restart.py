"""Robust accuracy versus the number of PGD random restarts (1 to 10) for natural and SPROUT."""

import json

from _common import data, parser, sprout
from sproutlab import AttackSpec, TrainConfig, VicinityMode, train
from sproutlab.evaluation import robust_accuracy


def main():
    p = parser(__doc__)
    p.add_argument("--max-restarts", type=int, default=10)
    args = p.parse_args()
    tr, te = data(args)
    table = {}
    for name, mode, init in (("natural", VicinityMode("natural"), "random"), ("sprout", sprout(), "natural")):
        model = train(tr, TrainConfig(mode, epochs=args.epochs, init=init, eval_each_epoch=False))[0].model
        table[name] = [robust_accuracy(model, te, AttackSpec(args.eps, steps=20, restarts=r))
                       for r in range(1, args.max_restarts + 1)]
        print(name, " ".join(f"{a:.3f}" for a in table[name]))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(table, f, indent=2)


if __name__ == "__main__":
    main()
