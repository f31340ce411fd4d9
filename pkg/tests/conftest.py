import logging

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from recfair.data import GroupAssignment, InteractionSet

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")
logging.getLogger("numba").setLevel(logging.WARNING)


@pytest.fixture
def tiny():
    """Five users, six items, with timestamps; u3 and u4 form group 1."""
    rng = np.random.default_rng(7)
    recs = []
    t = 1000
    for u in range(5):
        for i in range(6):
            if (u + i) % 3 != 0 or i == u:
                t += 1
                recs.append((f"u{u}", f"i{i}", float(rng.integers(1, 6)), t))
    return InteractionSet.from_records(recs)


@pytest.fixture
def tiny_groups():
    return GroupAssignment.from_labels("g", {"u0": 0, "u1": 0, "u2": 0, "u3": 1, "u4": 1})


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdict lines at the end of the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
