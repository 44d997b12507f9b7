import pytest

from namecountry.core import register_taxonomy


@pytest.fixture
def tiny_taxonomy():
    return register_taxonomy("tiny", ["alfa", "bravo", "charlie"])
