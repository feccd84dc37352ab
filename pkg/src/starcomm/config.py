"""Run configuration: dataclasses that round-trip through an INI-style text file.

Each dataclass is one ``[section]``; values are ``key = value`` with tuples written
comma-separated. Unknown keys are rejected so typos surface at startup.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class WorldConfig:
    task: str = "maps"  # "maps" | "mnist"
    height: int = 128
    width: int = 128
    channels: int = 3
    window: int = 16
    comm_range: float = 60.0
    n_robots: int = 5
    horizon: int = 15
    delta: int = 4
    goal_hold: int = 3
    step_size: float = 8.0
    n_classes: int = 6
    n_clouds: int = 80
    cloud_coverage: float = 0.4
    n_train: int = 480
    n_test: int = 120
    data_dir: str = ""  # IDX digits directory for the mnist task; empty = builtin glyphs
    data_seed: int = 7

    def validate(self) -> None:
        _positive(self, "height", "width", "channels", "window", "comm_range", "n_robots",
                  "horizon", "delta", "goal_hold", "step_size", "n_classes", "n_train", "n_test")
        if self.task not in ("maps", "mnist"):
            raise ConfigError(f"world.task must be 'maps' or 'mnist', got {self.task!r}")
        if self.window > min(self.height, self.width):
            raise ConfigError(f"world.window={self.window} exceeds map size {self.height}x{self.width}")
        if self.n_classes < 2:
            raise ConfigError("world.n_classes must be >= 2")
        if not 0.0 <= self.cloud_coverage < 1.0:
            raise ConfigError("world.cloud_coverage must lie in [0, 1)")


@dataclass
class ModelConfig:
    feature_dim: int = 24
    goal_dim: int = 8
    goal_grid: int = 8
    fusion: str = "pooled"  # "pooled" | "concat"
    bank_size: int = 0  # message cells/heads; 0 means world.delta
    init_scale: float = 0.08

    @property
    def memory_dim(self) -> int:
        return self.feature_dim + self.goal_dim

    def validate(self) -> None:
        _positive(self, "feature_dim", "goal_dim", "goal_grid", "init_scale")
        if self.fusion not in ("pooled", "concat"):
            raise ConfigError(f"model.fusion must be 'pooled' or 'concat', got {self.fusion!r}")
        if self.bank_size < 0:
            raise ConfigError("model.bank_size must be >= 0")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_maps: int = 8
    batches_per_epoch: int = 10
    stage_epochs: tuple[int, ...] = (100, 100, 100)
    patience: int = 20
    min_improvement: float = 1e-3
    baseline_decay: float = 0.9
    comm: str = "sparse"  # communication used in stage 3: "sparse" | "complete"

    def validate(self) -> None:
        _positive(self, "lr", "batch_maps", "batches_per_epoch", "patience")
        if len(self.stage_epochs) != 3 or any(e < 0 for e in self.stage_epochs):
            raise ConfigError("train.stage_epochs needs three non-negative epoch caps")
        if self.comm not in ("sparse", "complete"):
            raise ConfigError(f"train.comm must be 'sparse' or 'complete', got {self.comm!r}")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ConfigError("train.baseline_decay must lie in [0, 1)")


@dataclass
class EvalConfig:
    seeds: int = 5
    n_maps: int = 0  # 0 means the whole test split
    policy: str = "sample"  # "sample" | "greedy"
    chunk_maps: int = 64
    scalability_robots: tuple[int, ...] = (5, 10, 20)
    robustness_robots: int = 20
    robustness_fractions: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75)
    timing_robots: tuple[int, ...] = (1, 2, 4, 8)
    timing_threshold: float = 0.55
    timing_max_horizon: int = 30
    complete_max_robots: int = 20

    def validate(self) -> None:
        _positive(self, "seeds", "chunk_maps", "robustness_robots", "timing_max_horizon",
                  "complete_max_robots")
        if self.policy not in ("sample", "greedy"):
            raise ConfigError(f"eval.policy must be 'sample' or 'greedy', got {self.policy!r}")
        if any(not 0.0 <= f < 1.0 for f in self.robustness_fractions):
            raise ConfigError("eval.robustness_fractions must lie in [0, 1)")


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out_dir: str = "runs/default"

    SECTIONS = ("world", "model", "train", "eval")

    def validate(self) -> RunConfig:
        for name in self.SECTIONS:
            getattr(self, name).validate()
        return self

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("[run]\n")
        buf.write(f"seed = {self.seed}\n")
        buf.write(f"out_dir = {self.out_dir}\n")
        for name in self.SECTIONS:
            section = getattr(self, name)
            buf.write(f"\n[{name}]\n")
            for f in dataclasses.fields(section):
                buf.write(f"{f.name} = {_format(getattr(section, f.name))}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> RunConfig:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_string(text)
        cfg = cls()
        for sec in parser.sections():
            if sec == "run":
                target = cfg
                allowed = {"seed": 0, "out_dir": ""}
            elif sec in cls.SECTIONS:
                target = getattr(cfg, sec)
                allowed = {f.name: getattr(target, f.name) for f in dataclasses.fields(target)}
            else:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, raw in parser.items(sec):
                if key not in allowed:
                    raise ConfigError(f"unknown config key {sec}.{key}")
                try:
                    setattr(target, key, _parse(raw, allowed[key]))
                except ValueError as exc:
                    raise ConfigError(f"bad value for {sec}.{key}: {raw!r} ({exc})") from None
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        return cls.from_text(Path(path).read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    def replace(self, **sections) -> RunConfig:
        """Copy with per-section overrides, e.g. ``replace(world={"n_robots": 10})``."""
        cfg = RunConfig.from_text(self.to_text())
        for name, updates in sections.items():
            if name in ("seed", "out_dir"):
                setattr(cfg, name, updates)
                continue
            section = getattr(cfg, name)
            for key, value in updates.items():
                if not hasattr(section, key):
                    raise ConfigError(f"unknown config key {name}.{key}")
                setattr(section, key, value)
        return cfg


def _positive(obj, *names) -> None:
    section = type(obj).__name__
    for n in names:
        if getattr(obj, n) <= 0:
            raise ConfigError(f"{section}.{n} must be positive, got {getattr(obj, n)}")


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, like):
    raw = raw.strip()
    if isinstance(like, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError("expected a boolean")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        elem = type(like[0]) if like else float
        return tuple(elem(x) for x in raw.split(",") if x.strip())
    return raw


def desk_mnist_config() -> RunConfig:
    """The desk-scale digit-glyph setup used by the acceptance suite."""
    cfg = RunConfig()
    cfg.world = WorldConfig(task="mnist", height=28, width=28, channels=1, window=4,
                            comm_range=12.0, n_robots=5, horizon=15, delta=4, goal_hold=2,
                            step_size=4.0, n_classes=10, n_clouds=0, cloud_coverage=0.0,
                            n_train=2000, n_test=500)
    cfg.train = TrainConfig(lr=3e-3, batch_maps=8, batches_per_epoch=25,
                            stage_epochs=(300, 100, 100), patience=40)
    cfg.eval = EvalConfig(chunk_maps=125)
    cfg.out_dir = "runs/desk_mnist"
    return cfg
