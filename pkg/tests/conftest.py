import numpy as np
import pytest

from delaysurv.hazards import (
    ConstantHazard,
    LogLinearEffect,
    PiecewiseConstantHazard,
    ProportionalHazard,
    ScalarEffect,
)
from delaysurv.joint import Dataset, ModelPair


@pytest.fixture
def toy_baseline():
    return PiecewiseConstantHazard((0.0, 0.5, 1.0), (0.1, 0.2, 0.3))


@pytest.fixture
def toy_source_pair(toy_baseline):
    return ModelPair(ProportionalHazard(toy_baseline, LogLinearEffect((1.0,))), ConstantHazard(5.0))


@pytest.fixture
def toy_target_pair(toy_baseline):
    return ModelPair(ProportionalHazard(toy_baseline, ScalarEffect(2.0)), ConstantHazard(5.0))


@pytest.fixture
def exp_pair():
    """Constant accident rate 1, constant delay rate 5."""
    return ModelPair(ConstantHazard(1.0), ConstantHazard(5.0))


def random_pair(gen, d=1):
    knots = np.concatenate([[0.0], np.sort(gen.uniform(0.1, 2.0, size=2))])
    accident = ProportionalHazard(PiecewiseConstantHazard(knots, gen.uniform(0.05, 3.0, size=3)),
                                  LogLinearEffect(gen.normal(0, 0.7, size=d)))
    return ModelPair(accident, ConstantHazard(float(gen.uniform(0.1, 20.0))))


def random_dataset(gen, n=5, d=1):
    x = gen.uniform(-1, 1, size=(n, d))
    v = np.arange(n) % 2
    y = gen.uniform(0.05, 2.0, size=n)
    z = np.where(v == 1, y * gen.uniform(0.05, 0.95, size=n), np.nan)
    return Dataset(x, y, v, z)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record a one-line verdict for an acceptance criterion; printed in the terminal summary."""
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
