import numpy as np
import pytest

from fedks.harness import build_config, generate_splits


@pytest.fixture(scope="session")
def desk_config():
    return build_config("desk")


@pytest.fixture(scope="session")
def desk_splits(desk_config):
    # ~50 s: 250 transient + 625 production + 250 test time units
    return generate_splits(desk_config)


@pytest.fixture(scope="session")
def full_dataset(tmp_path_factory):
    """The full protocol written by ``cmd_generate`` with default settings (~3 min)."""
    from fedks import datastore as ds
    from fedks.harness import cmd_generate

    out = tmp_path_factory.mktemp("full") / "dataset.ksds"
    cmd_generate(build_config(), str(out))
    return out, ds.load_dataset(out)


@pytest.fixture(scope="session")
def attractor_state(desk_splits):
    return desk_splits.train[0].copy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_dataset(desk_splits, tmp_path_factory):
    from fedks import datastore as ds

    path = tmp_path_factory.mktemp("desk") / "desk.ksds"
    ds.save_dataset(path, desk_splits)
    return path


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
