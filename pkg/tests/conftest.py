import pytest

from platoonsim.scenario import (builtin_cycle1, builtin_cycle2,
                                 builtin_merge_join, run)


@pytest.fixture(scope="session")
def cycle1_result():
    return run(builtin_cycle1())


@pytest.fixture(scope="session")
def cycle2_result():
    return run(builtin_cycle2())


@pytest.fixture(scope="session")
def merge_heuristic_result():
    return run(builtin_merge_join("heuristic"))


@pytest.fixture(scope="session")
def merge_fuzzy_result():
    return run(builtin_merge_join("fuzzy"))
