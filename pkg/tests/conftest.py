import numpy as np
import pytest


def cyclic_equal(a, b) -> bool:
    """True when two tours describe the same cycle (shift/reversal allowed)."""
    a, b = [int(v) for v in a], [int(v) for v in b]
    n = len(a)
    if len(b) != n:
        return False
    for candidate in (a, a[::-1]):
        for shift in range(n):
            if candidate[shift:] + candidate[:shift] == b:
                return True
    return False


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260809)
