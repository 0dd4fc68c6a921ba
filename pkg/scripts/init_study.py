"""SPROUT from a random initialization versus from a naturally trained model."""

from _common import data, emit, parser, run, sprout
from sproutlab import TrainConfig


def main():
    args = parser(__doc__).parse_args()
    tr, te = data(args)
    rows = {f"sprout init={init}": run(tr, te, TrainConfig(sprout(), epochs=args.epochs, init=init,
                                                            eval_each_epoch=False), args.eps)
            for init in ("random", "natural")}
    emit(rows, args.out)


if __name__ == "__main__":
    main()
