from __future__ import annotations

import pytest

from helpers import FixtureMap


@pytest.fixture
def fixture_map() -> FixtureMap:
    return FixtureMap()
