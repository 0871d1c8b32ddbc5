import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from stochavg.averaging import average_system  # noqa: E402
from stochavg.perturbation import registry_get  # noqa: E402


@pytest.fixture(scope="session")
def averaged():
    """Memoised ``average_system`` keyed by registry name and parameters."""
    memo = {}

    def get(name, **params):
        key = (name, tuple(sorted(params.items())))
        if key not in memo:
            sys_ = registry_get(name, params)
            memo[key] = (sys_, average_system(sys_))
        return memo[key]

    return get


def pytest_terminal_summary(terminalreporter):
    from support import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
        terminalreporter.write_line(ACCEPTANCE[key])
