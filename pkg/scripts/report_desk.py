"""Evaluate a trained desk run (see train_desk.py) and print the summary tables.

Team accuracy against team size with and without communication, the
scalability table against the complete-graph baseline, the robot-removal
curve, and minimal episode length per team size. JSON reports go next to the
checkpoints.
"""
import argparse
from pathlib import Path

from starcomm import experiments as ex


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--run", default="runs/desk_mnist")
    args = ap.parse_args()
    run = Path(args.run)
    ckpt, comp = run / "sparse" / "checkpoint.bin", run / "complete" / "checkpoint.bin"
    out = run / "reports"

    print("team size  comm off  sparse")
    for n in (1, 5, 10, 20):
        off = ex.cmd_eval(ckpt, n_robots=n, comm="off")["mean_accuracy"]
        on = ex.cmd_eval(ckpt, n_robots=n, comm="sparse")["mean_accuracy"]
        print(f"{n:>9}  {100 * off:8.2f}  {100 * on:6.2f}")

    rep = ex.cmd_scalability(ckpt, complete_ckpt=comp if comp.exists() else None, out=out)
    print("\n" + (out / "scalability.csv").read_text())

    rep = ex.cmd_robustness(ckpt, out=out)
    print("removed fraction  accuracy")
    for r in rep["rows"]:
        print(f"{r['fraction']:>16.2f}  {100 * r['mean_accuracy']:8.2f}")

    rep = ex.cmd_timing(ckpt, out=out)
    print(f"\nminimal T reaching {rep['threshold']:.2f}")
    for r in rep["rows"]:
        print(f"N={r['n_robots']:<3} T={r['min_horizon']}  TxN={r['robot_steps']}")


if __name__ == "__main__":
    main()
