"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The desk-scale run (three-stage training plus the complete-graph baseline) is
trained once per config and source revision and cached under
``runs/acceptance/`` (override with ``STARCOMM_ACCEPTANCE_DIR``).
"""
from __future__ import annotations

import hashlib
import itertools
import os
import time
from pathlib import Path

import numpy as np
import pytest

from starcomm import cli
from starcomm import experiments as ex
from starcomm import tensor as T
from starcomm.config import desk_mnist_config
from starcomm.environment import load_task
from starcomm.fusion import fuse, fuse_rows
from starcomm.model import GROUPS, STAGE_GROUPS, ThetaBundle
from starcomm.optim import Adam
from starcomm.perception import LSTMCell
from starcomm.tensor import Tensor
from starcomm.topology import count_possible_graphs
from starcomm.trainer import run_episode, stage1_update, stage2_update, stage3_update

import oracles

ROOT = Path(__file__).resolve().parents[1]
RESULTS: dict[int, tuple[bool, str]] = {}
TRAIN_BUDGET_S = 2 * 3600


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _source_hash() -> str:
    h = hashlib.sha256()
    for p in sorted((ROOT / "src" / "starcomm").glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def _complete_config(cfg):
    return cfg.replace(train={"comm": "complete"}, model={"bank_size": cfg.eval.complete_max_robots - 1})


@pytest.fixture(scope="module")
def desk():
    """Trained desk-scale run directory; trains on first use."""
    cfg = desk_mnist_config()
    base = Path(os.environ.get("STARCOMM_ACCEPTANCE_DIR", ROOT / "runs" / "acceptance"))
    out = base / f"{cfg.digest()}-{_source_hash()}"
    if not (out / "checkpoint.bin").exists():
        t0 = time.perf_counter()
        ex.cmd_train(cfg, out)
        (out / "train_seconds.txt").write_text(f"{time.perf_counter() - t0:.1f}\n")
    comp = out / "complete"
    if not (comp / "checkpoint.bin").exists():
        t0 = time.perf_counter()
        ex.cmd_train(_complete_config(cfg), comp, stages=(3,), init=out / "checkpoint_stage2.bin")
        (comp / "train_seconds.txt").write_text(f"{time.perf_counter() - t0:.1f}\n")
    return out


def _seconds(path: Path) -> float:
    return float(path.read_text())


# ------------------------------------------------------------------ 1

def test_c01_gradient_correctness():
    # desk world geometry; narrower memory keeps the coordinate-wise check under a minute
    cfg = desk_mnist_config().replace(model={"feature_dim": 12, "goal_dim": 4})
    data = load_task(cfg.world)
    theta = ThetaBundle(cfg.world, cfg.model, seed=1)
    theta.set_trainable(GROUPS)
    rng = np.random.default_rng(0)
    # generic inputs: exact zeros would sit on relu kinks
    obs = Tensor(rng.uniform(size=(2, 1, 4, 4)))
    c, a = cfg.model.memory_dim, cfg.model.feature_dim
    m0, w0 = Tensor(rng.normal(size=(2, c))), Tensor(rng.normal(size=(2, c)))
    x = Tensor(rng.normal(size=(2, c)))
    pos = rng.uniform(size=(2, 2))
    mb, wb = Tensor(rng.normal(size=(6, c))), Tensor(rng.normal(size=(6, c)))
    nbrs = [[1], [0, 2], [0, 1, 3], [0, 1, 2, 4], [], [4]]
    n_cells = cfg.model.goal_grid ** 2
    t0 = time.perf_counter()
    checks = {
        "extractor": (lambda: T.tsum(T.tanh(theta.extractor(obs))), theta.groups["extractor"]),
        "goal_features": (lambda: T.tsum(T.tanh(theta.goal_features(obs, pos))), theta.groups["goal_features"]),
        "history": (lambda: T.tsum(T.tanh(theta.history(m0, w0, x)[0])), theta.groups["history"]),
        "fusion": (lambda: T.tsum(T.tanh(fuse_rows(mb, wb, nbrs, theta.bank))),
                   theta.groups["bank_cells"] + theta.groups["bank_heads"]),
        "goal_head": (lambda: T.tsum(T.mul(theta.goal_head.log_probs(T.tanh(x[:, a:])), np.eye(n_cells)[[3, 40]])),
                      theta.groups["goal_head"]),
        "classifier": (lambda: T.tsum(T.lse_loss(theta.classifier(x[:, :a]).logits, np.array([2, 7]))),
                       theta.groups["classifier"]),
    }
    worst = {name: T.grad_check(f, params, eps=1e-5) for name, (f, params) in checks.items()}
    theta.set_stage(1)
    loss = lambda: T.mul(run_episode(theta, cfg.world, data.train.images[:1], data.train.labels[:1],
                                     n_robots=2, horizon=2, seed=11).objective(), -1.0)
    worst["stage1_loss"] = T.grad_check(loss, theta.trainable(), eps=1e-5)
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    name = max(worst, key=worst.get)
    record(1, top < 1e-4 and elapsed < 60,
           f"max rel err {top:.2e} ({name}) over {len(worst)} checks, {elapsed:.1f}s")


# ------------------------------------------------------------------ 2

def test_c02_oracle_equivalence():
    worst = {"matmul": 0.0, "conv2d": 0.0, "lstm": 0.0, "lse": 0.0}
    for case in range(100):
        rng = np.random.default_rng([2, case])
        n, k, m = rng.integers(1, 8, size=3)
        a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
        worst["matmul"] = max(worst["matmul"], np.abs(T.matmul(Tensor(a), Tensor(b)).data - oracles.matmul(a, b)).max())
        ch, f, ks = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x, ker = rng.normal(size=(ch, ks + 3, ks + 2)), rng.normal(size=(f, ch, ks, ks))
        worst["conv2d"] = max(worst["conv2d"], np.abs(T.conv2d(Tensor(x), Tensor(ker)).data - oracles.conv2d(x, ker)).max())
        hid, inp = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        cell = LSTMCell(inp, hid, "h", rng, 1.0)
        m0, w0, xin = rng.normal(size=hid), rng.normal(size=hid), rng.normal(size=inp)
        mm, ww = cell(Tensor(m0[None]), Tensor(w0[None]), Tensor(xin[None]))
        om, ow = oracles.lstm(m0, w0, xin, cell.weight.data, cell.bias.data)
        worst["lstm"] = max(worst["lstm"], np.abs(mm.data[0] - om).max(), np.abs(ww.data[0] - ow).max())
        q = rng.normal(scale=3, size=int(rng.integers(2, 12)))
        lab = int(rng.integers(len(q)))
        worst["lse"] = max(worst["lse"], abs(T.lse_loss(Tensor(q), lab).item() - oracles.lse(q, lab)))
    top = max(worst.values())
    record(2, top < 1e-12, "max |diff| " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " on 100 cases each")


# ------------------------------------------------------------------ 3

def test_c03_degree_bound():
    cfg = desk_mnist_config()
    data = load_task(cfg.world)
    steps, top = 0, 0
    params = {}
    for n in (5, 20, 80):
        theta = ThetaBundle(cfg.world, cfg.model, cfg.seed)
        with T.no_grad():
            for ep in range(3):
                n_maps = 23
                idx = np.arange(ep * n_maps, (ep + 1) * n_maps)
                res = run_episode(theta, cfg.world, data.test.images[idx], data.test.labels[idx], policy="goal",
                                  comm="sparse", seed=[3, n, ep], n_robots=n)
                steps += n_maps * cfg.world.horizon
                top = max(top, res.max_degree)
        sized = cfg.replace(world={"n_robots": n})
        params[n] = ThetaBundle(sized.world, sized.model, sized.seed).fusion_parameter_count()
    per_n = steps // 3
    ok = top <= cfg.world.delta and per_n >= 1000 and params[5] == params[80]
    record(3, ok, f"{per_n} steps per N, max degree {top} <= {cfg.world.delta}, "
                  f"fusion params N=5 {params[5]} N=80 {params[80]}")


# ------------------------------------------------------------------ 4

def test_c04_graph_count():
    got = [count_possible_graphs(n) for n in range(1, 7)]
    want = [oracles.subsets_count(n) for n in range(1, 7)]
    record(4, got == want, f"N=1..6: {got}")


# ------------------------------------------------------------------ 5

def test_c05_permutation_invariance():
    from starcomm.fusion import MessageBank
    bad = 0
    for case in range(100):
        rng = np.random.default_rng([5, case])
        k = int(rng.integers(1, 5))
        bank = MessageBank(32, 4, "pooled", case, 0.3)
        m_i, w_i = rng.normal(size=32), rng.normal(size=32)
        msgs = [rng.normal(size=32) for _ in range(k)]
        ref = fuse(m_i, w_i, msgs, bank, 24).m_hat.data
        for perm in itertools.permutations(range(k)):
            bad += not np.array_equal(fuse(m_i, w_i, [msgs[j] for j in perm], bank, 24).m_hat.data, ref)
    record(5, bad == 0, f"{bad} bitwise mismatches over 100 cases, all permutations")


# ------------------------------------------------------------------ 6

def test_c06_freezing_schedule():
    cfg = desk_mnist_config()
    data = load_task(cfg.world)
    theta = ThetaBundle(cfg.world, cfg.model, cfg.seed)
    opt = Adam(lr=1e-2)
    changed_off, unchanged_on = [], []
    for stage in (1, 2, 3):
        theta.set_stage(stage)
        before = theta.snapshot()
        for k in range(10):
            policy, comm = {1: ("random", "off"), 2: ("goal", "off"), 3: ("goal", "sparse")}[stage]
            res = run_episode(theta, cfg.world, data.train.images[:4], data.train.labels[:4], policy=policy,
                              comm=comm, seed=[6, stage, k])
            if stage == 1:
                stage1_update(theta, opt, res)
            elif stage == 2:
                stage2_update(theta, opt, res, baseline=-2.3)
            else:
                stage3_update(theta, opt, res)
        after = theta.snapshot()
        for g in GROUPS:
            for p in theta.groups[g]:
                same = np.array_equal(before[p.name], after[p.name])
                if g in STAGE_GROUPS[stage] and same:
                    unchanged_on.append(p.name)
                if g not in STAGE_GROUPS[stage] and not same:
                    changed_off.append(p.name)
    record(6, not changed_off and not unchanged_on,
           f"off-stage changed: {changed_off or 'none'}; on-stage idle: {unchanged_on or 'none'}")


# ------------------------------------------------------------------ 7

def test_c07_desk_learning(desk):
    cfg = desk_mnist_config()
    s2 = ex.cmd_eval(desk / "checkpoint_stage2.bin", n_robots=1, comm="off")
    off5 = ex.cmd_eval(desk / "checkpoint.bin", n_robots=5, comm="off")
    on5 = ex.cmd_eval(desk / "checkpoint.bin", n_robots=5, comm="sparse")
    one = ex.cmd_eval(desk / "checkpoint.bin", n_robots=1, comm="sparse")
    train_s = _seconds(desk / "train_seconds.txt")
    a1, aoff, aon, a_one = s2["mean_accuracy"], off5["mean_accuracy"], on5["mean_accuracy"], one["mean_accuracy"]
    ok = a1 >= 0.55 and aon - aoff >= 0.03 and aon - a_one >= 0.05 and train_s <= TRAIN_BUDGET_S
    record(7, ok, f"stage-2 N=1 {a1:.3f}; N=5 off {aoff:.3f} -> sparse {aon:.3f}; N=1 {a_one:.3f}; "
                  f"{cfg.eval.seeds} seeds; training {train_s / 60:.1f} min")


# ------------------------------------------------------------------ 8

def test_c08_scalability(desk):
    rep = ex.cmd_scalability(desk / "checkpoint.bin", complete_ckpt=desk / "complete" / "checkpoint.bin")
    sparse = [r["mean_accuracy"] for r in rep["rows"] if r["method"].startswith("Sparse")]
    comp = [r["mean_accuracy"] for r in rep["rows"] if r["method"].startswith("Complete")]
    spread = max(sparse) - min(sparse)
    monotone = all(b < a for a, b in zip(comp, comp[1:]))
    record(8, spread <= 0.05 and monotone,
           f"sparse {[round(v, 3) for v in sparse]} (spread {spread:.3f}); complete {[round(v, 3) for v in comp]}")


# ------------------------------------------------------------------ 9

def test_c09_robustness(desk):
    cfg = desk_mnist_config()
    rep = ex.cmd_robustness(desk / "checkpoint.bin", n_robots=20, fractions=(0.0, 0.5))
    full, half = (r["mean_accuracy"] for r in rep["rows"])
    record(9, full - half <= 0.10,
           f"N=20 full {full:.3f}, half removed {half:.3f}, cost {full - half:.3f} over {cfg.eval.seeds} seeds")


# ------------------------------------------------------------------ 10

def test_c10_timing_trend(desk):
    rep = ex.cmd_timing(desk / "checkpoint.bin", robots=(1, 2, 4, 8))
    ts = [r["min_horizon"] for r in rep["rows"]]
    reached = all(t is not None for t in ts)
    non_increasing = reached and all(b <= a for a, b in zip(ts, ts[1:]))
    cheaper = reached and ts[-1] * 8 < ts[0] * 1
    record(10, non_increasing and cheaper,
           f"threshold {rep['threshold']}: minimal T over N=1,2,4,8 = {ts}; "
           f"TxN at N=8 {None if not reached else ts[-1] * 8} vs N=1 {ts[0]}")


# ------------------------------------------------------------------ 11

def _tree(path: Path) -> dict[str, bytes]:
    return {str(p.relative_to(path)): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_c11_determinism(tmp_path):
    from conftest import tiny_config
    cfg_path = tmp_path / "tiny.ini"
    tiny_config().save(cfg_path)
    trees = []
    for rep in ("a", "b"):
        d = tmp_path / rep
        run = d / "run"
        cli.main(["train", "--config", str(cfg_path), "--out", str(run)])
        cli.main(["train", "--config", str(cfg_path), "--comm", "complete", "--stages", "3",
                  "--init", str(run / "checkpoint_stage2.bin"), "--out", str(d / "complete")])
        ck = str(run / "checkpoint.bin")
        cli.main(["dataset", "--config", str(cfg_path), "--out", str(d / "dataset")])
        cli.main(["eval", "--checkpoint", ck, "--dump-graphs", "--out", str(d / "eval")])
        cli.main(["scalability", "--checkpoint", ck, "--complete-checkpoint", str(d / "complete" / "checkpoint.bin"),
                  "--out", str(d / "scal")])
        cli.main(["robustness", "--checkpoint", ck, "--out", str(d / "rob")])
        cli.main(["timing", "--checkpoint", ck, "--threshold", "0.2", "--out", str(d / "timing")])
        trees.append(_tree(d))
    differing = sorted(k for k in trees[0].keys() | trees[1].keys() if trees[0].get(k) != trees[1].get(k))
    record(11, not differing and len(trees[0]) > 10,
           f"{len(trees[0])} files compared across two runs; differing: {differing or 'none'}")
