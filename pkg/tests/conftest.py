import pytest

from consensus_tracking import (
    build_augmented,
    compute_gains,
    builtin_scenario,
    solve_filter_gain,
)


@pytest.fixture(scope="session")
def builtin():
    return builtin_scenario()


@pytest.fixture(scope="session")
def builtin_gains(builtin):
    return compute_gains(builtin.plant, builtin.exo, builtin.cost)


@pytest.fixture(scope="session")
def builtin_model(builtin):
    return build_augmented(builtin.plant, builtin.exo)


@pytest.fixture(scope="session")
def builtin_estimator(builtin_model):
    return solve_filter_gain(builtin_model)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
