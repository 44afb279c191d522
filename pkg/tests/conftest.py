import sys

import numpy as np
import pytest

from depthforge.synth import DatasetSpec, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory):
    """30-image synthetic dataset (10 source, 20 target, 6 labeled target)."""
    root = tmp_path_factory.mktemp("synth")
    generate_dataset(DatasetSpec(num_source=10, num_target=20, num_labeled_target=6, seed=3), root)
    return root


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS.values():
        terminalreporter.write_line(line)
