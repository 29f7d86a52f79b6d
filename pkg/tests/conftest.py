import os
from pathlib import Path

import numpy as np
import pytest

from sparknet.data import build_manifest
from sparknet.synthetic import generate_corpus, write_noise_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory) -> Path:
    """18-word synthetic corpus, 20 utterances per word."""
    return generate_corpus(tmp_path_factory.mktemp("corpus"), per_word=20, seed=3)


@pytest.fixture(scope="session")
def small_manifest(small_corpus):
    return build_manifest(small_corpus, seed=0)


@pytest.fixture(scope="session")
def noise_corpus(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("noise")
    write_noise_corpus(out, seed=11, seconds=4.0)
    return out


def speech_commands_root(version: str) -> Path | None:
    """Real dataset location from SPARKNET_SC1_ROOT / SPARKNET_SC2_ROOT, if set."""
    value = os.environ.get(f"SPARKNET_SC{version[-1]}_ROOT")
    return Path(value) if value and Path(value).is_dir() else None


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criterion")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
