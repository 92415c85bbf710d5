import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from spotkit.data.synthetic import SyntheticConfig, generate_synthetic  # noqa: E402


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Five short synthetic videos (3 train, 1 val, 1 test) with flow."""
    out = tmp_path_factory.mktemp("tiny")
    config = SyntheticConfig(num_videos=5, frames_per_video=40, seed=3, with_flow=True)
    manifest = generate_synthetic(config, str(out))
    return str(out / "manifest.json"), manifest


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import ACCEPTANCE
    except ImportError:
        return
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
