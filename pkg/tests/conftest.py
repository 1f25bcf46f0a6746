import time

import pytest
from hypothesis import settings

from gmmkl.densities import laplace, standard_normal
from gmmkl.entropy_route import entropy_schedule

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def timed_normal_schedule():
    # shared by the constructor tests and the acceptance suite (about 10 s)
    t = time.perf_counter()
    sched = entropy_schedule(standard_normal(1), 6, seed=7)
    return sched, time.perf_counter() - t


@pytest.fixture(scope="session")
def normal_schedule(timed_normal_schedule):
    return timed_normal_schedule[0]


@pytest.fixture(scope="session")
def laplace_schedule():
    return entropy_schedule(laplace(), 6, strict=False, seed=7)
