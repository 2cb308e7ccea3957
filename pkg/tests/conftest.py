import contextlib

import numpy as np
import pytest

from storvol import bundled_instance
from storvol.io import load_instance
from storvol.market import (ClassicalGenerator, DemandCurve, Horizon, Network, ScenarioSet, StorageFirm,
                            TransmissionLine, WindFirm)


@pytest.fixture(scope="session")
def sa_vic():
    return load_instance(bundled_instance("sa_vic"))


@pytest.fixture(scope="session")
def spike4():
    return load_instance(bundled_instance("spike4"))


def single_node(alpha, beta, T=1, probs=(1.0,), **firms):
    """One-node network with flat demand unless arrays are passed."""
    a = np.broadcast_to(np.asarray(alpha, dtype=float), (T,))
    b = np.broadcast_to(np.asarray(beta, dtype=float), (T,))
    return Network(("N",), DemandCurve(a[None, :], b[None, :]), Horizon(T), ScenarioSet(np.array(probs)),
                   firms.get("generators", ()), firms.get("wind", ()), firms.get("storage", ()))


def two_node(alpha=(100.0, 80.0), beta=(0.01, 0.02), T=1, probs=(1.0,), capacity=1e4, regulated=1, **firms):
    a = np.tile(np.asarray(alpha, dtype=float)[:, None], (1, T))
    b = np.tile(np.asarray(beta, dtype=float)[:, None], (1, T))
    line = TransmissionLine("line", "A", "B", capacity, regulated)
    return Network(("A", "B"), DemandCurve(a, b), Horizon(T), ScenarioSet(np.array(probs)),
                   firms.get("generators", ()), firms.get("wind", ()), firms.get("storage", ()), (line,))


_CRITERIA = {}


class _Check:
    detail = ""


@pytest.fixture
def criterion():
    """Context manager recording one acceptance criterion's outcome for the end-of-run summary."""

    @contextlib.contextmanager
    def run(number, title):
        check = _Check()
        try:
            yield check
        except BaseException as exc:
            _CRITERIA[number] = (False, title, check.detail or f"{type(exc).__name__}: {exc}".splitlines()[0])
            print(f"FAIL criterion {number}: {title} -- {_CRITERIA[number][2]}")
            raise
        _CRITERIA[number] = (True, title, check.detail)
        print(f"PASS criterion {number}: {title} -- {check.detail}")

    return run


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, title, detail = _CRITERIA[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {title} -- {detail}")


__all__ = ["single_node", "two_node", "ClassicalGenerator", "StorageFirm", "WindFirm"]
