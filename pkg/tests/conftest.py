import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dualrl import dataset as D
from dualrl.mdp import Policy, random_mdp

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def instance(seed, n_states=4, n_actions=2, discount=0.8):
    """Random MDP, uniform-behavior exact dataset, random target."""
    mdp = random_mdp(n_states, n_actions, discount, seed)
    data = D.from_behavior(mdp, Policy.uniform(n_states, n_actions))
    return mdp, data, Policy.random(n_states, n_actions, 100 + seed)


# -- acceptance summary: one PASS/FAIL line per criterion ------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, name = mark.args
    ok = rep.passed and _CRITERIA.get(number, (name, True))[1]
    _CRITERIA[number] = (name, ok)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        name, ok = _CRITERIA[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:2d}. {name}")
