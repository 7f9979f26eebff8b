import numpy as np
import pytest

from schwarzvi import ScalarField
from schwarzvi.assembly import ProblemSpec


def paraboloid_obstacle():
    return ScalarField(
        value=lambda x, y: 0.5 - (x - 0.5) ** 2 - (y - 0.5) ** 2,
        dx=lambda x, y: -2.0 * (x - 0.5) + 0.0 * y,
        dy=lambda x, y: -2.0 * (y - 0.5) + 0.0 * x,
    )


@pytest.fixture
def plate_spec():
    return ProblemSpec(form="plate", load=ScalarField.constant(1e3), obstacle=paraboloid_obstacle())


@pytest.fixture
def control_spec():
    return ProblemSpec(
        form="control",
        beta=1e-4,
        load=ScalarField(value=lambda x, y: np.sin(4.0 * np.pi * x * y) + 1.5),
        obstacle=ScalarField.constant(1.0),
    )


def random_spd(rng, n, cond=50.0):
    """SPD matrix with spectrum spread over [1, cond]."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eigs = np.linspace(1.0, cond, n)
    return q @ np.diag(eigs) @ q.T
