import pytest

from dcb_marl import save_scenario, tiny3


@pytest.fixture
def tiny():
    return tiny3()


@pytest.fixture
def tiny_path(tmp_path):
    path = tmp_path / "tiny3.json"
    save_scenario(tiny3(), path)
    return path
