import pytest

from wakesense.dataset import build_dataset
from wakesense.estimator import ModelConfig
from wakesense.wake import generate_corpus, scenario_grid

# Small enough for a unit test, large enough for every stratum to appear in both splits.
TINY_MODEL = dict(sl=16, conv_blocks=((4, 5), (4, 3)), hidden=4, dense=8)


@pytest.fixture(scope="session")
def tiny_dataset():
    traces = generate_corpus(scenario_grid(offsets=[250.0]), repeats=2, seed=0)
    return build_dataset(traces, sl=16, stride=8, seed=0)


@pytest.fixture
def tiny_config():
    return ModelConfig(**TINY_MODEL)


_ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    _ACCEPTANCE[number] = line
    print(line)


@pytest.fixture
def acceptance():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
