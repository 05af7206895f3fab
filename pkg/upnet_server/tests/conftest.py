"""Shared fixtures: the generated desk dataset and the verdict recorder.

The dataset is produced once per session through the selection
package's command line (its public interface) and reused by the
training and protocol tests. test_acceptance.py records one PASS/FAIL
line per checked guarantee; the lines are replayed after the run.
"""

import pytest

_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """Returns a recorder; each recorded line is echoed after the run."""

    def record(line: str) -> None:
        _LINES.append(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _LINES:
        terminalreporter.section("acceptance checks")
        for line in _LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """36-sample dataset (3 meshes x 12 views); returns the manifest path."""
    from punavs.cli import main

    base = tmp_path_factory.mktemp("desk")
    assert main(["gen-meshes", "--out", str(base / "meshes")]) == 0
    assert (
        main(
            [
                "gen-dataset", "--meshes", str(base / "meshes"),
                "--out", str(base / "data"), "--views", "12",
                "--resolution", "32", "--grid-dims", "24",
            ]
        )
        == 0
    )
    return base / "data" / "manifest.txt"


@pytest.fixture(scope="session")
def desk_checkpoint(desk_dataset, tmp_path_factory):
    """A model trained on the desk dataset with default settings."""
    from upnet_server.training import TrainSpec, train

    path = tmp_path_factory.mktemp("model") / "desk.pt"
    result = train(TrainSpec(manifest=desk_dataset, checkpoint=path))
    return path, result
