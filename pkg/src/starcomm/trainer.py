"""Episode rollout and the three-stage training procedure.

Stage 1 learns perception, memory and the classifier while robots wander
randomly; stage 2 learns where to look with a score-function estimator; stage 3
learns message fusion with communication switched on. Each stage updates only
its own parameter groups.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig, WorldConfig
from .environment import DataSplits, initial_positions, load_task, observe_batch, step_motion
from .fusion import fuse_rows, split
from .model import STAGE_GROUPS, ThetaBundle
from .optim import Adam
from .tensor import Tensor
from .topology import CommGraph, build_graph, check_degree

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "stage", "J", "mean_accuracy", "max_degree_observed", "seed"]

STAGE_MODES = {1: ("random", "off"), 2: ("goal", "off"), 3: ("goal", None)}


@dataclass
class EpisodeResult:
    rewards: np.ndarray  # [n_maps, N]; nan for robots that were removed
    correct: np.ndarray  # [n_maps, N] bool
    alive: np.ndarray  # [n_maps, N] bool at the final step
    predictions: np.ndarray  # [n_maps, N]
    reward_node: Tensor  # [n_alive] rewards of alive robots, attached to the tape
    goal_logprobs: list = field(default_factory=list)  # (rows, logprob node) per sampling step
    trajectory: np.ndarray | None = None  # [T, n_maps, N, 2] positions at observation time
    max_degree: int = 0
    graphs: list = field(default_factory=list)  # CommGraph per step for map 0

    @property
    def J(self) -> float:
        return float(np.nanmean(self.rewards[self.alive]))

    @property
    def accuracy(self) -> float:
        return float(self.correct[self.alive].mean())

    def objective(self) -> Tensor:
        """Global average reward as a tape node."""
        return T.mean(self.reward_node)


def global_reward(rewards) -> float:
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if r.size == 0:
        raise ValueError("global reward of an empty team")
    return float(r.mean())


def _streams(seed) -> list[np.random.Generator]:
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2**63))
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def run_episode(theta: ThetaBundle, world: WorldConfig, images: np.ndarray, labels: np.ndarray, *,
                policy: str = "random", comm: str = "off", seed=0, n_robots: int | None = None,
                horizon: int | None = None, greedy: bool = False, removal: float = 0.0,
                record_graphs: bool = False) -> EpisodeResult:
    """Roll one episode for every map in ``images`` simultaneously.

    Each step has two synchronous phases: all robots observe and update their
    memory, then all robots fuse with their neighbors (when ``comm`` is not
    ``off``), pick or keep a goal, and move. Memories start at zero and positions
    uniformly at random. ``removal`` marks that fraction of each team dead at the
    midpoint of the episode.
    """
    if policy not in ("random", "goal"):
        raise ValueError(f"unknown policy {policy!r}")
    if comm not in ("off", "sparse", "complete"):
        raise ValueError(f"unknown communication mode {comm!r}")
    n = n_robots or world.n_robots
    horizon = horizon or world.horizon
    n_maps = len(labels)
    rows_total = n_maps * n
    h, w_px, p = world.height, world.width, world.window
    if images.shape[1:] != (world.channels, h, w_px):
        raise T.DimensionError(f"images {images.shape[1:]} do not match world ({world.channels}, {h}, {w_px})")
    mcfg = theta.model
    c, a = mcfg.memory_dim, mcfg.feature_dim
    delta = world.delta if comm == "sparse" else max(n - 1, 1)

    pos_rng, act_rng, goal_rng, kill_rng = _streams(seed)
    map_of_row = np.repeat(np.arange(n_maps), n)
    labels_row = np.asarray(labels)[map_of_row]
    positions = initial_positions(pos_rng, rows_total, h, w_px)
    scale01 = np.array([max(w_px - 1, 1), max(h - 1, 1)], dtype=np.float64)
    m = Tensor(np.zeros((rows_total, c)))
    w = Tensor(np.zeros((rows_total, c)))
    alive = np.ones(rows_total, dtype=bool)
    goals = np.zeros((rows_total, 2))
    goal_age = np.zeros(rows_total, dtype=int)
    has_goal = np.zeros(rows_total, dtype=bool)
    kill_step = math.ceil(horizon / 2) if removal > 0 else None
    traj = np.empty((horizon, rows_total, 2))
    logprobs = []
    graphs: list[CommGraph] = []
    max_deg = 0

    for t in range(1, horizon + 1):
        if t == kill_step:
            n_kill = math.ceil(removal * n)
            for b in range(n_maps):
                victims = kill_rng.choice(n, size=min(n_kill, n - 1), replace=False)
                alive[b * n + victims] = False
        traj[t - 1] = positions

        # phase A: observe, extract, remember
        obs = Tensor(observe_batch(images, positions, p, map_of_row))
        v = theta.extractor(obs)
        u = theta.goal_features(obs, positions / scale01)
        m, w = theta.history(m, w, T.concat([v, u], axis=1))

        # phase B: communicate, plan, move
        if comm != "off":
            neighbors: list[list[int]] = [[] for _ in range(rows_total)]
            for b in range(n_maps):
                sl = slice(b * n, (b + 1) * n)
                g = build_graph(positions[sl], world.comm_range, delta, alive[sl], t)
                check_degree(g, delta)
                if g.edges:
                    max_deg = max(max_deg, int(g.degrees().max()))
                if record_graphs and b == 0:
                    graphs.append(g)
                for i, nb in enumerate(g.adjacency()):
                    if nb:
                        neighbors[b * n + i] = [b * n + j for j in nb]
            m = fuse_rows(m, w, neighbors, theta.bank)
        if t == horizon:
            break
        if policy == "goal":
            need = alive & (~has_goal | (goal_age >= world.goal_hold))
            if need.any():
                rows = np.nonzero(need)[0]
                u_hat = split(T.take_rows(m, rows), a)[1]
                cells, lp = theta.goal_head(u_hat, goal_rng, greedy)
                goals[rows] = theta.goal_head.cell_center(cells, h, w_px)
                goal_age[rows] = 0
                has_goal[rows] = True
                logprobs.append((rows, lp))
            moved = step_motion(positions, goals, world.step_size, h, w_px)
            goal_age += 1
        else:
            moved = step_motion(positions, None, world.step_size, h, w_px, act_rng)
        positions = np.where(alive[:, None], moved, positions)

    v_hat = split(m, a)[0]
    alive_rows = np.nonzero(alive)[0]
    pred = theta.classifier(T.take_rows(v_hat, alive_rows))
    reward_node = -T.lse_loss(pred.logits, labels_row[alive_rows])
    rewards = np.full(rows_total, np.nan)
    rewards[alive_rows] = reward_node.data
    predictions = np.full(rows_total, -1)
    predictions[alive_rows] = np.argmax(pred.logits.data, axis=1)
    correct = predictions == labels_row
    return EpisodeResult(
        rewards=rewards.reshape(n_maps, n), correct=correct.reshape(n_maps, n),
        alive=alive.reshape(n_maps, n), predictions=predictions.reshape(n_maps, n),
        reward_node=reward_node, goal_logprobs=logprobs,
        trajectory=traj.reshape(horizon, n_maps, n, 2), max_degree=max_deg, graphs=graphs)


# ------------------------------------------------------------------- updates

class FreezeViolation(AssertionError):
    pass


def _assert_frozen_clean(theta: ThetaBundle) -> None:
    for p in theta.parameters():
        if not p.trainable and np.any(p.grad != 0.0):
            raise FreezeViolation(f"frozen parameter {p.name} received a gradient")


def _check_stage(theta: ThetaBundle, stage: int) -> None:
    active = {name for name, ps in theta.groups.items() if ps and all(p.trainable for p in ps)}
    expected = {g for g in STAGE_GROUPS[stage] if theta.groups[g]}
    if active != expected:
        raise RuntimeError(f"stage {stage} expects trainable groups {sorted(expected)}, found {sorted(active)}")


def _apply(theta: ThetaBundle, opt: Adam, loss: Tensor) -> None:
    T.zero_grad(theta.parameters())
    T.backward(loss)
    _assert_frozen_clean(theta)
    opt.step(theta.trainable())


def stage1_update(theta: ThetaBundle, opt: Adam, result: EpisodeResult) -> None:
    _check_stage(theta, 1)
    _apply(theta, opt, -result.objective())


def reinforce_loss(result: EpisodeResult, baseline: float) -> Tensor:
    """Surrogate whose gradient is ``-(r_i - b) * sum_t grad log pi(g_it)``
    averaged over alive robots."""
    rewards = result.rewards.reshape(-1)
    n_alive = max(int(result.alive.sum()), 1)
    total = Tensor(0.0)
    for rows, lp in result.goal_logprobs:
        adv = np.nan_to_num(rewards[rows] - baseline) * result.alive.reshape(-1)[rows]
        total = T.add(total, T.dot(lp, Tensor(adv)))
    return T.mul(total, -1.0 / n_alive)


def stage2_loss(result: EpisodeResult, baseline: float) -> Tensor:
    """Score-function term for the sampled goals plus the pathwise term.

    The goal processor also feeds the memory that the classifier reads, so the
    reward depends on it directly as well as through the goals it picks.
    """
    return T.sub(reinforce_loss(result, baseline), result.objective())


def stage2_update(theta: ThetaBundle, opt: Adam, result: EpisodeResult, baseline: float) -> None:
    _check_stage(theta, 2)
    _apply(theta, opt, stage2_loss(result, baseline))


def stage3_update(theta: ThetaBundle, opt: Adam, result: EpisodeResult) -> None:
    _check_stage(theta, 3)
    _apply(theta, opt, -result.objective())


# ------------------------------------------------------------------ training

@dataclass
class TrainState:
    theta: ThetaBundle
    opt: Adam
    epoch: int = 0
    baseline: float | None = None
    metrics: list = field(default_factory=list)
    stage_marks: list = field(default_factory=list)  # (stage, first_epoch, last_epoch, best_J)
    snapshots: dict = field(default_factory=dict)  # stage -> parameter arrays at stage end


def _episode_seed(cfg: RunConfig, epoch: int, batch: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, 3, epoch, batch]).generate_state(1)[0])


def train_stage(state: TrainState, cfg: RunConfig, data: DataSplits, stage: int,
                on_epoch=None) -> None:
    tc, world = cfg.train, cfg.world
    theta = state.theta
    theta.set_stage(stage)
    policy, comm = STAGE_MODES[stage]
    comm = comm or tc.comm
    n_train = len(data.train)
    best, stale = -math.inf, 0
    first = state.epoch + 1
    for _ in range(tc.stage_epochs[stage - 1]):
        state.epoch += 1
        order = np.random.default_rng([cfg.seed, 2, state.epoch]).permutation(n_train)
        js, accs, max_deg = [], [], 0
        for b in range(tc.batches_per_epoch):
            idx = np.take(order, np.arange(b * tc.batch_maps, (b + 1) * tc.batch_maps), mode="wrap")
            res = run_episode(theta, world, data.train.images[idx], data.train.labels[idx],
                              policy=policy, comm=comm, seed=_episode_seed(cfg, state.epoch, b))
            if stage == 1:
                stage1_update(theta, state.opt, res)
            elif stage == 2:
                if state.baseline is None:
                    state.baseline = res.J
                stage2_update(theta, state.opt, res, state.baseline)
                state.baseline = tc.baseline_decay * state.baseline + (1 - tc.baseline_decay) * res.J
            else:
                stage3_update(theta, state.opt, res)
            js.append(res.J)
            accs.append(res.accuracy)
            max_deg = max(max_deg, res.max_degree)
        row = {"epoch": state.epoch, "stage": stage, "J": float(np.mean(js)),
               "mean_accuracy": float(np.mean(accs)), "max_degree_observed": max_deg, "seed": cfg.seed}
        state.metrics.append(row)
        if on_epoch:
            on_epoch(row)
        if row["J"] > best + tc.min_improvement:
            best, stale = row["J"], 0
        else:
            stale += 1
            if stale >= tc.patience:
                log.info("stage %d plateaued after epoch %d", stage, state.epoch)
                break
    state.stage_marks.append((stage, first, state.epoch, best))
    state.snapshots[stage] = theta.snapshot()
    theta.freeze()


def train(cfg: RunConfig, data: DataSplits | None = None, stages=(1, 2, 3), state: TrainState | None = None,
          on_epoch=None) -> TrainState:
    """Run the stage schedule; each stage ends at its epoch cap or on a plateau."""
    cfg.validate()
    data = data or load_task(cfg.world)
    if state is None:
        theta = ThetaBundle(cfg.world, cfg.model, cfg.seed)
        state = TrainState(theta, Adam(lr=cfg.train.lr))
    for k, stage in enumerate(stages):
        if k:
            log.info("entering stage %d at epoch %d", stage, state.epoch + 1)
        train_stage(state, cfg, data, stage, on_epoch)
    return state


def write_metrics(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=METRICS_HEADER, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def write_stage_marks(path: str | Path, marks: list) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["stage", "first_epoch", "last_epoch", "best_J"])
        for stage, first, last, best in marks:
            wr.writerow([stage, first, last, repr(float(best))])
