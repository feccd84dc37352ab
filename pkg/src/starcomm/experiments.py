"""Training driver and evaluation experiments.

Every command is a pure function of (checkpoint, config, seed) and writes its
results under an output directory; reports always carry per-seed values.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .datasets import export_dataset
from .environment import load_task
from .model import GROUPS, ThetaBundle
from .optim import Adam
from .topology import export_edges
from .trainer import TrainState, train, write_metrics, write_stage_marks

log = logging.getLogger(__name__)

SCALE_TAG = "desk-scale"


def _header(cfg: RunConfig, **extra) -> dict:
    return {"scale": SCALE_TAG, "config_hash": cfg.digest(), "seed": cfg.seed, **extra}


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _eval_seed(base: int, s: int, chunk: int) -> int:
    return int(np.random.SeedSequence([base, 9, s, chunk]).generate_state(1)[0])


def evaluate(theta: ThetaBundle, cfg: RunConfig, *, n_robots: int | None = None, horizon: int | None = None,
             comm: str = "sparse", removal: float = 0.0, seeds: int | None = None,
             graph_sink: list | None = None) -> dict:
    """Team accuracy on the test split: mean over maps and alive robots, per seed."""
    data = load_task(cfg.world)
    test = data.test
    n_maps = cfg.eval.n_maps or len(test)
    n_robots = n_robots or cfg.world.n_robots
    seeds = seeds or cfg.eval.seeds
    chunk = cfg.eval.chunk_maps
    per_seed = []
    max_deg = 0
    with T.no_grad():
        for s in range(seeds):
            hits = total = 0
            for ci, c0 in enumerate(range(0, n_maps, chunk)):
                sl = slice(c0, min(c0 + chunk, n_maps))
                res = run_episode_eval(theta, cfg, test.images[sl], test.labels[sl], comm=comm,
                                       seed=_eval_seed(cfg.seed, s, ci), n_robots=n_robots, horizon=horizon,
                                       removal=removal, record_graphs=graph_sink is not None and s == 0 and ci == 0)
                if graph_sink is not None and res.graphs:
                    graph_sink.extend(res.graphs)
                hits += int(res.correct[res.alive].sum())
                total += int(res.alive.sum())
                max_deg = max(max_deg, res.max_degree)
            per_seed.append(hits / total)
    return {"n_robots": n_robots, "horizon": horizon or cfg.world.horizon, "comm": comm,
            "removal_fraction": removal, "n_maps": n_maps, "n_seeds": seeds, "per_seed": per_seed,
            "mean_accuracy": float(np.mean(per_seed)), "std_accuracy": float(np.std(per_seed)),
            "max_degree_observed": max_deg}


def run_episode_eval(theta, cfg, images, labels, **kw):
    from .trainer import run_episode
    return run_episode(theta, cfg.world, images, labels, policy="goal",
                       greedy=cfg.eval.policy == "greedy", **kw)


# ------------------------------------------------------------------ commands

def cmd_dataset(cfg: RunConfig, out: str | Path) -> Path:
    return export_dataset(load_task(cfg.world), out)


def _init_from(theta: ThetaBundle, ckpt: Checkpoint, groups=GROUPS) -> None:
    named = theta.named()
    for name, arr in ckpt.params.items():
        p = named.get(name)
        if p is not None and any(name.startswith(g + ".") or name.startswith(g) for g in groups):
            if p.shape != arr.shape:
                raise ValueError(f"cannot initialize {name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


def cmd_train(cfg: RunConfig, out: str | Path | None = None, stages=(1, 2, 3),
              init: str | Path | None = None, on_epoch=None) -> Checkpoint:
    """Train and write checkpoint.bin, per-stage checkpoints, metrics.csv and stages.csv."""
    cfg.validate()
    out = Path(out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.ini")
    data = load_task(cfg.world)
    theta = ThetaBundle(cfg.world, cfg.model, cfg.seed)
    opt = Adam(lr=cfg.train.lr)
    state = TrainState(theta, opt)
    if init:
        src = load_checkpoint(init)
        _init_from(theta, src)
        opt.states = {k: v for k, v in src.optimizer().states.items() if k in theta.named()}
        state.epoch, state.baseline = src.epoch, src.baseline
    started = time.perf_counter()

    def tick(row):
        log.info("epoch %d stage %d J=%.4f acc=%.3f (%.1fs elapsed)", row["epoch"], row["stage"], row["J"],
                 row["mean_accuracy"], time.perf_counter() - started)
        if on_epoch:
            on_epoch(row)

    for k, stage in enumerate(stages):
        train(cfg, data, stages=(stage,), state=state, on_epoch=tick)
        snap = Checkpoint(cfg, state.snapshots[stage], dict(opt.states), state.epoch, state.baseline)
        save_checkpoint(snap, out / f"checkpoint_stage{stage}.bin")
    ckpt = Checkpoint(cfg, theta.snapshot(), dict(opt.states), state.epoch, state.baseline)
    save_checkpoint(ckpt, out / "checkpoint.bin")
    write_metrics(out / "metrics.csv", state.metrics)
    write_stage_marks(out / "stages.csv", state.stage_marks)
    return ckpt


def _resolve(ckpt_path, cfg: RunConfig | None) -> tuple[Checkpoint, RunConfig, ThetaBundle]:
    ckpt = load_checkpoint(ckpt_path, cfg)
    cfg = cfg or ckpt.config
    if cfg is not ckpt.config:
        ckpt = Checkpoint(cfg, ckpt.params, ckpt.adam, ckpt.epoch, ckpt.baseline)
    return ckpt, cfg, ckpt.build()


def cmd_eval(ckpt_path, cfg: RunConfig | None = None, *, n_robots: int | None = None,
             horizon: int | None = None, comm: str = "sparse", out: str | Path | None = None,
             dump_graphs: bool = False) -> dict:
    _, cfg, theta = _resolve(ckpt_path, cfg)
    sink = [] if dump_graphs else None
    report = _header(cfg, command="eval", **evaluate(theta, cfg, n_robots=n_robots, horizon=horizon,
                                                       comm=comm, graph_sink=sink))
    if out:
        _write_json(Path(out) / "eval.json", report)
        if sink is not None:
            (Path(out) / "graphs.txt").write_text(export_edges(sink))
    return report


def cmd_scalability(ckpt_path, cfg: RunConfig | None = None, *, robots=None, complete_ckpt=None,
                    out: str | Path | None = None) -> dict:
    """Evaluate one trained model at several team sizes with no retraining."""
    _, cfg, theta = _resolve(ckpt_path, cfg)
    robots = tuple(robots or cfg.eval.scalability_robots)
    rows = []
    for n in robots:
        r = evaluate(theta, cfg, n_robots=n, comm="sparse")
        rows.append({"method": f"Sparse-<{cfg.world.n_robots}>", "n_robots": n, "mean_accuracy": r["mean_accuracy"],
                     "per_seed": r["per_seed"], "fusion_parameters": theta.fusion_parameter_count()})
    if complete_ckpt is not None:
        cck, ccfg, ctheta = _resolve(complete_ckpt, None)
        for n in robots:
            r = evaluate(ctheta, ccfg, n_robots=n, comm="complete")
            rows.append({"method": f"Complete-<{ccfg.world.n_robots}>", "n_robots": n,
                         "mean_accuracy": r["mean_accuracy"], "per_seed": r["per_seed"],
                         "fusion_parameters": ctheta.fusion_parameter_count()})
    sparse = [r["mean_accuracy"] for r in rows if r["method"].startswith("Sparse")]
    report = _header(cfg, command="scalability", rows=rows,
                     sparse_spread=float(max(sparse) - min(sparse)), n_seeds=cfg.eval.seeds)
    if out:
        _write_json(Path(out) / "scalability.json", report)
        with open(Path(out) / "scalability.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["method"] + [str(n) for n in robots])
            for method in dict.fromkeys(r["method"] for r in rows):
                wr.writerow([method] + [f"{100 * r['mean_accuracy']:.2f}" for r in rows if r["method"] == method])
    return report


def cmd_robustness(ckpt_path, cfg: RunConfig | None = None, *, n_robots: int | None = None,
                   fractions=None, out: str | Path | None = None) -> dict:
    """Remove a fraction of the team at mid-episode; score the survivors."""
    _, cfg, theta = _resolve(ckpt_path, cfg)
    n_robots = n_robots or cfg.eval.robustness_robots
    fractions = tuple(fractions if fractions is not None else cfg.eval.robustness_fractions)
    rows = []
    for f in fractions:
        r = evaluate(theta, cfg, n_robots=n_robots, comm="sparse", removal=f)
        rows.append({"fraction": f, "removed": int(np.ceil(f * n_robots)), "mean_accuracy": r["mean_accuracy"],
                     "per_seed": r["per_seed"], "max_degree_observed": r["max_degree_observed"]})
    report = _header(cfg, command="robustness", n_robots=n_robots, rows=rows, n_seeds=cfg.eval.seeds)
    if out:
        _write_json(Path(out) / "robustness.json", report)
    return report


def minimal_horizon(accuracy_at, threshold: float, t_max: int) -> int | None:
    """Smallest T in [1, t_max] with ``accuracy_at(T) >= threshold`` by bisection, or None."""
    if accuracy_at(t_max) < threshold:
        return None
    lo, hi = 1, t_max
    while lo < hi:
        mid = (lo + hi) // 2
        if accuracy_at(mid) >= threshold:
            hi = mid
        else:
            lo = mid + 1
    return lo


def cmd_timing(ckpt_path, cfg: RunConfig | None = None, *, robots=None, threshold: float | None = None,
               max_horizon: int | None = None, out: str | Path | None = None) -> dict:
    """Per team size: the shortest episode reaching the accuracy threshold, and T x N."""
    _, cfg, theta = _resolve(ckpt_path, cfg)
    robots = tuple(robots or cfg.eval.timing_robots)
    threshold = cfg.eval.timing_threshold if threshold is None else threshold
    max_horizon = max_horizon or cfg.eval.timing_max_horizon
    rows = []
    for n in robots:
        probes: dict[int, float] = {}

        def acc(t, n=n, probes=probes):
            if t not in probes:
                probes[t] = evaluate(theta, cfg, n_robots=n, horizon=t, comm="sparse")["mean_accuracy"]
            return probes[t]

        t_min = minimal_horizon(acc, threshold, max_horizon)
        rows.append({"n_robots": n, "min_horizon": t_min, "reached": t_min is not None,
                     "robot_steps": None if t_min is None else t_min * n,
                     "probes": {str(k): v for k, v in sorted(probes.items())}})
    report = _header(cfg, command="timing", threshold=threshold, max_horizon=max_horizon, rows=rows,
                     n_seeds=cfg.eval.seeds)
    if out:
        _write_json(Path(out) / "timing.json", report)
    return report
