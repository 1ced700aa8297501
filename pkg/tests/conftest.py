from __future__ import annotations

import pytest

from ymlab.constants import make_dimension_params
from ymlab.ground_state import solve_ground_state
from ymlab.kernel import build_kernel_family
from ymlab.spectrum import build_basis
from ymlab.weighted import make_weight_context


@pytest.fixture(scope="session")
def p10():
    return make_dimension_params(10)


@pytest.fixture(scope="session")
def p11():
    return make_dimension_params(11)


@pytest.fixture(scope="session")
def gs10(p10):
    return solve_ground_state(p10)


@pytest.fixture(scope="session")
def gs11(p11):
    return solve_ground_state(p11)


@pytest.fixture(scope="session")
def ctx11(p11):
    return make_weight_context(p11, 0.5)


@pytest.fixture(scope="session")
def basis11(ctx11):
    return build_basis(ctx11, 6)


@pytest.fixture(scope="session")
def kf11(gs11):
    return build_kernel_family(gs11, 3)
