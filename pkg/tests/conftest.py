"""Shared helpers for the test suite."""

import numpy as np
import pytest

from bimanip.spd import SpdMatrix


def random_spd_entries(rng: np.random.Generator, dim: int,
                       cond_span: float = 2.0) -> np.ndarray:
    """A random SPD array with log-eigenvalues uniform in +-cond_span."""
    a = rng.standard_normal((dim, dim))
    q, _ = np.linalg.qr(a)
    w = np.exp(rng.uniform(-cond_span, cond_span, size=dim))
    m = (q * w) @ q.T
    return 0.5 * (m + m.T)


def random_spd(rng: np.random.Generator, dim: int,
               cond_span: float = 2.0) -> SpdMatrix:
    return SpdMatrix.from_entries(random_spd_entries(rng, dim, cond_span))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
