import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from saldefense.attacks import TinyClassifier, train_tiny  # noqa: E402
from saldefense.synthetic import make_shapes  # noqa: E402


@pytest.fixture(scope="session")
def trained():
    """Tiny classifier trained on 600 synthetic shapes (seed 0)."""
    data = make_shapes(600, seed=0)
    model, history = train_tiny(
        TinyClassifier.initialize(3, 32, seed=0), data.images, data.labels, epochs=20, seed=0
    )
    return model, history


@pytest.fixture(scope="session")
def weights_file(trained, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "tiny.bin"
    trained[0].save(path)
    return path


ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line and assert it."""

    def record(number: int, name: str, passed: bool, detail: str = "") -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name}"
        if detail:
            line += f" ({detail})"
        ACCEPTANCE.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
