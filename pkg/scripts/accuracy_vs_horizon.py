"""Accuracy grid over episode length and team size for one checkpoint."""
import argparse

from starcomm.checkpoint import load_checkpoint
from starcomm.experiments import evaluate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("checkpoint")
    ap.add_argument("--robots", default="1,2,4,8")
    ap.add_argument("--horizons", default="1,2,4,6,8,10,12,15,20,25,30")
    ap.add_argument("--comm", default="sparse", choices=("sparse", "complete", "off"))
    ap.add_argument("--seeds", type=int, default=2)
    args = ap.parse_args()
    ckpt = load_checkpoint(args.checkpoint)
    theta = ckpt.build()
    horizons = [int(t) for t in args.horizons.split(",")]
    print("N \\ T " + " ".join(f"{t:>5}" for t in horizons))
    for n in (int(v) for v in args.robots.split(",")):
        accs = [evaluate(theta, ckpt.config, n_robots=n, horizon=t, comm=args.comm, seeds=args.seeds)["mean_accuracy"]
                for t in horizons]
        print(f"{n:>5} " + " ".join(f"{100 * a:5.1f}" for a in accs))


if __name__ == "__main__":
    main()
