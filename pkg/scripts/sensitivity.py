"""SPROUT sensitivity to the Mixup parameter a and the Dirichlet mixing weight alpha."""

from _common import data, emit, parser, run, sprout
from sproutlab import TrainConfig


def main():
    p = parser(__doc__)
    p.add_argument("--mixup-a", default="0.05,0.2,0.5,1.0")
    p.add_argument("--alpha", default="0.001,0.01,0.1,0.5")
    args = p.parse_args()
    tr, te = data(args)
    rows = {}
    for a in map(float, args.mixup_a.split(",")):
        cfg = TrainConfig(sprout(mixup_a=a), epochs=args.epochs, init="natural", eval_each_epoch=False)
        rows[f"a={a}"] = run(tr, te, cfg, args.eps)
    for alpha in map(float, args.alpha.split(",")):
        cfg = TrainConfig(sprout(alpha=alpha), epochs=args.epochs, init="natural", eval_each_epoch=False)
        rows[f"alpha={alpha}"] = run(tr, te, cfg, args.eps)
    emit(rows, args.out)


if __name__ == "__main__":
    main()
