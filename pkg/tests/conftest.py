import numpy as np
import pytest

from scpseg.grammar import builtin_grammar
from scpseg.pipeline import PipelineTrainConfig, train
from scpseg.synth import random_scene

TRAIN_SEEDS = range(30)


@pytest.fixture(scope="session")
def horse_cow():
    return builtin_grammar("horse_cow")


@pytest.fixture(scope="session")
def quadrupeds():
    return builtin_grammar("quadrupeds")


@pytest.fixture(scope="session")
def trained(horse_cow):
    """Refiner and pairwise model trained on 30 noisy scenes, half with confusions."""
    scenes = [random_scene(horse_cow, s, confusion_rate=0.5) for s in TRAIN_SEEDS]
    return train(scenes, horse_cow, PipelineTrainConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for an acceptance criterion; printed at session end."""
    def record(criterion: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
        _VERDICTS.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
