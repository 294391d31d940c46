import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from didfuse import synthetic, trainer  # noqa: E402

SMOKE_PAIRS = 8
SMOKE_SIZE = 64
SMOKE_CONFIG = trainer.TrainConfig(epochs=50, batch_size=4, crop=(SMOKE_SIZE, SMOKE_SIZE), seed=0)


class SmokeRun:
    def __init__(self):
        self.pairs = synthetic.make_pairs(SMOKE_PAIRS, SMOKE_SIZE, seed=0)
        self.held_out = synthetic.make_pairs(4, SMOKE_SIZE, seed=1)
        self.config = SMOKE_CONFIG
        start = time.perf_counter()
        self.params, self.log = trainer.train(self.pairs, self.config)
        self.seconds = time.perf_counter() - start


@pytest.fixture(scope="session")
def smoke():
    """The scaled-down training run shared by the trainer, fusion and acceptance tests."""
    return SmokeRun()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_RESULTS

    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
