import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from photodesign.forward import SourceSpec
from photodesign.geometry import Annulus, Disk, DomainSpec, Rect, TimePartition, build_hybrid_mesh

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")


def small_spec():
    """Small domain with both a core and an annular design region."""
    return DomainSpec(Rect(-0.8, 0.8, -0.8, 0.8), Rect(-0.6, 0.6, -0.6, 0.6),
                      core=(Disk((0.0, 0.0), 0.1),), design=(Annulus((0.0, 0.0), 0.1, 0.3),))


def tiny_spec():
    return DomainSpec(Rect(-0.7, 0.7, -0.6, 0.6), Rect(-0.5, 0.5, -0.4, 0.4),
                      design=(Disk((0.0, 0.0), 0.15),))


@pytest.fixture(scope="session")
def small_mesh():
    return build_hybrid_mesh(small_spec(), 0.05)


@pytest.fixture(scope="session")
def tiny_mesh():
    return build_hybrid_mesh(tiny_spec(), 0.1)


@pytest.fixture(scope="session")
def small_src():
    return SourceSpec(omega=20.0)


@pytest.fixture(scope="session")
def small_tp():
    return TimePartition(1.0, 0.005)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(pytestconfig):
    """Records one verdict line per acceptance criterion for the terminal summary."""
    log = pytestconfig.stash.setdefault(_ACCEPTANCE, {})

    def record(criterion, passed, detail):
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
        log[criterion] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_ACCEPTANCE, {})
    if log:
        terminalreporter.section("acceptance criteria")
        for key in sorted(log):
            terminalreporter.write_line(log[key])
