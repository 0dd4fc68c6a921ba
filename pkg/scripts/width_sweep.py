"""Clean and robust accuracy of natural and SPROUT CNNs as the width factor grows."""

from _common import data, emit, parser, run, sprout
from sproutlab import TrainConfig, VicinityMode


def main():
    p = parser(__doc__)
    p.add_argument("--widths", default="1,2,4")
    args = p.parse_args()
    tr, te = data(args)
    rows = {}
    for w in map(int, args.widths.split(",")):
        for name, mode, init in (("natural", VicinityMode("natural"), "random"), ("sprout", sprout(), "natural")):
            cfg = TrainConfig(mode, epochs=args.epochs, width_factor=w, init=init, eval_each_epoch=False)
            rows[f"{name} w={w}"] = run(tr, te, cfg, args.eps)
    emit(rows, args.out)


if __name__ == "__main__":
    main()
