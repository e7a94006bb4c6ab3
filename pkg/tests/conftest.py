import numpy as np
import pytest

from torusbfn import schedule, special, torus_flow, von_mises
from torusbfn.kernels import compiled_available, load_backend

BACKENDS = ["python"] + (["compiled"] if compiled_available() else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    impl = load_backend(request.param)
    for mod in (special, von_mises, torus_flow, schedule):
        monkeypatch.setattr(mod, "_impl", impl)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def schedule_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("schedule_cache")


@pytest.fixture(scope="session")
def vm_schedule_1000_100(schedule_cache):
    return schedule.cached_vm_schedule(1000.0, 100, cache_dir=schedule_cache)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
