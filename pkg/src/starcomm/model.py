"""All trainable parameters of the team, grouped by role, with stage freezing."""
from __future__ import annotations

import numpy as np

from .config import ModelConfig, WorldConfig
from .fusion import MessageBank
from .perception import Classifier, FeatureExtractor, GoalFeatures, GoalSampler, LSTMCell
from .tensor import Parameter

GROUPS = ("extractor", "goal_features", "history", "bank_cells", "bank_heads", "goal_head", "classifier")

# which groups each training stage updates; everything else is detached
STAGE_GROUPS = {
    1: frozenset({"extractor", "history", "classifier"}),
    2: frozenset({"goal_features", "goal_head"}),
    3: frozenset({"bank_cells", "bank_heads"}),
}


class ThetaBundle:
    def __init__(self, world: WorldConfig, model: ModelConfig, seed: int = 0):
        self.world, self.model = world, model
        scale = model.init_scale
        rng = np.random.default_rng([seed, 1])
        c = model.memory_dim
        self.extractor = FeatureExtractor(world.channels, world.window, model.feature_dim, rng, scale)
        self.goal_features = GoalFeatures(world.channels, world.window, model.goal_dim, rng, scale)
        self.history = LSTMCell(c, c, "history", rng, scale)
        self.goal_head = GoalSampler(model.goal_dim, model.goal_grid, rng, scale)
        self.classifier = Classifier(model.feature_dim, world.n_classes, rng, scale)
        self.bank = MessageBank(c, self.bank_size, model.fusion, seed, scale)

    @property
    def bank_size(self) -> int:
        return self.model.bank_size or self.world.delta

    @property
    def groups(self) -> dict[str, list[Parameter]]:
        return {
            "extractor": self.extractor.parameters(),
            "goal_features": self.goal_features.parameters(),
            "history": self.history.parameters(),
            "bank_cells": self.bank.cell_parameters(),
            "bank_heads": self.bank.head_parameters(),
            "goal_head": self.goal_head.parameters(),
            "classifier": self.classifier.parameters(),
        }

    def parameters(self) -> list[Parameter]:
        return [p for g in GROUPS for p in self.groups[g]]

    def named(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def set_trainable(self, groups) -> None:
        groups = set(groups)
        unknown = groups - set(GROUPS)
        if unknown:
            raise KeyError(f"unknown parameter groups {sorted(unknown)}")
        for name, params in self.groups.items():
            for p in params:
                p.trainable = name in groups
                p.zero_grad()

    def set_stage(self, stage: int) -> None:
        self.set_trainable(STAGE_GROUPS[stage])

    def freeze(self) -> None:
        self.set_trainable(())

    def trainable(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            arr = arrays[p.name]
            if arr.shape != p.shape:
                raise ValueError(f"parameter {p.name}: shape {arr.shape} != expected {p.shape}")
            p.data = np.array(arr, dtype=np.float64, order="C")
            p.zero_grad()

    def fusion_parameter_count(self) -> int:
        return self.bank.n_parameters()
