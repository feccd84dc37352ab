import os
import sys

import pytest
from hypothesis import settings

from starcomm.config import ModelConfig, RunConfig, TrainConfig, WorldConfig, EvalConfig

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, print_blob=True)
settings.load_profile("default")


def tiny_config(seed: int = 0) -> RunConfig:
    """A few seconds end to end: 28x28 glyphs, three robots, three steps."""
    return RunConfig(
        world=WorldConfig(task="mnist", height=28, width=28, channels=1, window=4, comm_range=14.0,
                          n_robots=3, horizon=3, delta=2, goal_hold=2, step_size=4.0, n_classes=10,
                          n_clouds=0, cloud_coverage=0.0, n_train=40, n_test=20),
        model=ModelConfig(feature_dim=6, goal_dim=4, goal_grid=4),
        train=TrainConfig(lr=3e-3, batch_maps=4, batches_per_epoch=2, stage_epochs=(2, 2, 2), patience=5),
        eval=EvalConfig(seeds=2, chunk_maps=8, scalability_robots=(3, 5), robustness_robots=6,
                        robustness_fractions=(0.0, 0.5), timing_robots=(1, 2), timing_max_horizon=4),
        seed=seed,
    )


@pytest.fixture
def tiny():
    return tiny_config()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
