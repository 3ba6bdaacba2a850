import os

import pytest

from pffa import cases


def data_case_path(name: str) -> str:
    """Optional large benchmark files: repo data/ dir or $PFFA_CASE_DIR."""
    root = os.environ.get(
        "PFFA_CASE_DIR",
        os.path.join(os.path.dirname(os.path.dirname(__file__)), "data"))
    return os.path.join(root, name)


def require_data_case(name: str) -> str:
    path = data_case_path(name)
    if not os.path.isfile(path):
        pytest.skip(f"{name} not found under {os.path.dirname(path)}; "
                    "drop the benchmark file there to run this check")
    return path


@pytest.fixture(scope="session")
def case14():
    return cases.load_packaged_case("case14")


@pytest.fixture
def two_bus():
    return cases.make_two_bus()


@pytest.fixture
def radial3():
    return cases.make_radial_3bus()


@pytest.fixture
def mixed5():
    return cases.make_mixed_demo()
