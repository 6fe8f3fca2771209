import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from hvtrack.model import ModelConfig  # noqa: E402


@pytest.fixture
def toy_cfg():
    """Gradient-check scale: N=16, C=8, H=2."""
    return ModelConfig(n_points=16, channels=8, layers=1, heads=2, k_train=1, k_test=1,
                       group_sizes=(4, 8, 4), contextual_counts=(1, 4, 2), n_input=32,
                       dropout_rate=0.0, backbone_k=8)


@pytest.fixture
def small_cfg():
    """Fast end-to-end scale."""
    return ModelConfig(n_points=32, channels=16, layers=2, heads=4, k_train=2, k_test=3,
                       group_sizes=(8, 16, 8), contextual_counts=(2, 8, 4), n_input=128,
                       dropout_rate=0.1, backbone_k=8)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


# --------------------------------------------------------------------------- acceptance summary
ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def criterion(request):
    """Context manager recording one acceptance criterion's pass/fail line."""
    import contextlib
    import time

    results = request.config.stash[ACCEPTANCE_KEY]

    @contextlib.contextmanager
    def record(number: int, title: str):
        info: dict = {}
        t0 = time.perf_counter()
        try:
            yield info
        except BaseException:
            results[number] = ("FAIL", title, info, time.perf_counter() - t0)
            print(_line(number, results[number]))
            raise
        results[number] = ("PASS", title, info, time.perf_counter() - t0)
        print(_line(number, results[number]))

    return record


def _line(number, res):
    status, title, info, secs = res
    detail = ", ".join(f"{k}={v}" for k, v in info.items())
    return f"criterion {number:2d} {status}  {title}  ({detail}; {secs:.1f}s)"


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[ACCEPTANCE_KEY]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(_line(n, results[n]))
