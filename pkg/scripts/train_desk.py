"""Train the desk-scale model and the complete-graph baseline.

Writes <out>/sparse (three stages) and <out>/complete (stage 3 only, started
from the sparse run's stage-2 checkpoint with one message cell per possible
neighbor).
"""
import argparse
import logging
import time
from pathlib import Path

from starcomm import desk_mnist_config
from starcomm.experiments import cmd_train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/desk_mnist")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = desk_mnist_config().replace(seed=args.seed)
    out = Path(args.out)
    t0 = time.perf_counter()
    cmd_train(cfg, out / "sparse")
    complete = cfg.replace(train={"comm": "complete"}, model={"bank_size": cfg.eval.complete_max_robots - 1})
    cmd_train(complete, out / "complete", stages=(3,), init=out / "sparse" / "checkpoint_stage2.bin")
    print(f"trained in {(time.perf_counter() - t0) / 60:.1f} min -> {out}")


if __name__ == "__main__":
    main()
