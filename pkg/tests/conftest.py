import dataclasses

import pytest

from ecoassist.agent import MpoHyperparams
from ecoassist.config import ExperimentConfig, ScenarioConfig
from ecoassist.harness.scenario import Randomization


def tiny_config(seed=0, episodes=2, chunk=8.0, **agent):
    """2x32 networks, short chunks and an early learner so smoke runs take seconds."""
    hp = dict(hidden=(32, 32), batch_size=4, min_replay=40, update_every=8, replay_capacity=5000,
              actor_lr=3e-4, critic_lr=3e-4, gamma=0.9)
    hp.update(agent)
    cfg = ExperimentConfig(seed=seed)
    training = dataclasses.replace(
        cfg.training, episodes=episodes, checkpoint_every=1,
        randomization=Randomization(chunk_seconds=chunk),
    )
    evaluation = dataclasses.replace(
        cfg.evaluation, seeds=(0, 1),
        scenarios=(ScenarioConfig(cycle="urban_eval", driver="conscientious"),),
        randomization=Randomization(chunk_seconds=chunk),
    )
    return dataclasses.replace(cfg, agent=MpoHyperparams(**hp), training=training, evaluation=evaluation)


@pytest.fixture
def tiny():
    return tiny_config


# ----------------------------------------------------- acceptance reporting
_ACCEPTANCE: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _ACCEPTANCE.append((mark.args[0], "PASS" if rep.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{status}  {name}" + (f"  [{detail}]" if detail else ""))
