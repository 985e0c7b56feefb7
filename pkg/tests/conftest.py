import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mixedlq import problems  # noqa: E402


@pytest.fixture
def tanh():
    return problems.tanh_problem()


@pytest.fixture
def reg2():
    return problems.regular_2x2()
