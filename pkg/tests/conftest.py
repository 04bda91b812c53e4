import numpy as np
import pytest

from remaade.numerics import seeded_rng
from remaade.policy import init_policy
from remaade.space import build_space


def randomized_policy(dims=(2, 3, 2, 3), d=8, m=1, seed=0, scale=0.5, kind="maade"):
    """A policy with every parameter (biases included) perturbed away from init."""
    rng = seeded_rng(seed)
    pol = init_policy(build_space(dims), kind, d, None, m, rng)
    for name in pol.params:
        pol.params[name] += rng.normal(scale, pol.params[name].shape)
    return pol


@pytest.fixture
def small_policy():
    return randomized_policy()


_CRITERIA = []


def record_criterion(number, title, ok, detail=""):
    line = f"[criterion {number:>2}] {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip()
    _CRITERIA.append((number, line))
    print(line)


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
