import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sbspec import resonance, shapes


@pytest.fixture(scope="session")
def bump():
    return shapes.make_bump_shape([1.0])


@pytest.fixture(scope="session")
def odd_bump():
    return shapes.make_bump_shape([0.0, 1.0])


@pytest.fixture(scope="session")
def bump_resonances(bump):
    """First two resonances of the even bump (both negative)."""
    return resonance.resonant_set(bump, (-2500.0, 100.0))


@pytest.fixture(scope="session")
def odd_bump_resonances(odd_bump):
    """First resonance pair of the odd shape."""
    return resonance.resonant_set(odd_bump, (-3000.0, 3000.0))


@pytest.fixture(scope="session")
def first_odd_resonance(odd_bump_resonances):
    return [r for r in odd_bump_resonances
            if r.nondegenerate and r.alpha < 0][0]
