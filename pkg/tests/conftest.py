import os
from pathlib import Path

import numpy as np
import pytest


def mushrooms_path():
    """Location of the LIBSVM ``mushrooms`` file, if the user has downloaded it."""
    for base in (os.environ.get("FLIX_DATA_DIR"), "data", Path.home() / "data"):
        if base:
            p = Path(base) / "mushrooms"
            if p.is_file():
                return p
    return None


@pytest.fixture
def mushrooms():
    p = mushrooms_path()
    if p is None:
        pytest.skip("mushrooms dataset not available (set FLIX_DATA_DIR)")
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pd(d, seed, lo=0.5):
    r = np.random.default_rng(seed)
    M = r.standard_normal((d, d))
    return M @ M.T + lo * np.eye(d)


# acceptance results, printed once at the end of the session
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: (int(s.split()[1].rstrip(":").rstrip("abc")), s)):
        terminalreporter.write_line(line)
