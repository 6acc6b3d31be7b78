import numpy as np
import pytest

from swedge.data import PotentialOutcomeTable, TrialDataset
from swedge.design import StepWedgeDesign


def random_table(design, rng, max_size=3, p=2, effect=1.0, min_size=1):
    """Small potential-outcome table with every cell of periods 0..J+1 populated."""
    I, J = design.I, design.J
    sizes = rng.integers(min_size, max_size + 1, size=(I, J + 2))
    cluster = np.repeat(np.repeat(np.arange(I), J + 2), sizes.ravel())
    period = np.repeat(np.tile(np.arange(J + 2), I), sizes.ravel())
    n = cluster.size
    x = rng.normal(size=(n, p))
    compliance = rng.choice(3, size=n, p=[0.5, 0.25, 0.25])
    d0 = (compliance == 1).astype(np.int8)
    d1 = (compliance != 2).astype(np.int8)
    base = rng.normal(size=n) + x.sum(axis=1) + 0.3 * cluster
    shift = effect * (1.0 + rng.normal(size=n))
    y0 = np.where(d0 == 1, base + shift, base)
    y1 = np.where(d1 == 1, base + shift, base)
    return PotentialOutcomeTable(design, cluster, period, x, y0, y1, d0, d1, compliance)


def observed(design, adoption, rng, sizes=None, y=None, d=None, x=None):
    """Observed dataset from explicit adoption times in 1..J+1 (clusters 0-based)."""
    I, J = design.I, design.J
    if sizes is None:
        sizes = rng.integers(2, 5, size=(I, J + 2))
    cluster = np.repeat(np.repeat(np.arange(I), J + 2), sizes.ravel())
    period = np.repeat(np.tile(np.arange(J + 2), I), sizes.ravel())
    z = (np.asarray(adoption)[cluster] <= period).astype(int)
    n = cluster.size
    if d is None:
        d = (rng.random(n) < 0.2 + 0.6 * z).astype(int)
    if x is None:
        x = rng.normal(size=(n, 2))
    if y is None:
        y = rng.normal(size=n) + 0.7 * d + x @ np.array([0.5, -0.3])
    return TrialDataset.from_arrays(design, cluster, period, z, d, y, x)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_design():
    return StepWedgeDesign(6, (2, 3, 5))
