import numpy as np
import pytest

import itrop


@pytest.fixture(scope="session")
def ref_mdp2():
    """Two states, one action, identity transitions, costs (1, 2), discount 1/2.

    The exact fixed point solves a 2x2 linear system: v* = (2, 4).
    """
    transition = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    cost = np.array([[1.0], [2.0]])
    return itrop.MdpModel(transition=transition, cost=cost, discount=0.5)


@pytest.fixture(scope="session")
def mdp20():
    """The seeded 20-state, 5-action random instance used across tests."""
    return itrop.random_mdp(20, 5, seed=7, discount=0.9)


@pytest.fixture(scope="session")
def logistic_problem():
    ds = itrop.synth_dataset(200, 8, "logistic", seed=9)
    probe = itrop.RegressionProblem(dataset=ds, family="logistic", lam=5.0, beta=1.0)
    upper = itrop.eigen_bounds(probe).upper
    return itrop.RegressionProblem(dataset=ds, family="logistic", lam=5.0, beta=1.0 / upper)


@pytest.fixture(scope="session")
def poisson_problem():
    ds = itrop.synth_dataset(200, 8, "poisson", seed=9)
    probe = itrop.RegressionProblem(dataset=ds, family="poisson", lam=1.0, beta=1.0)
    upper = itrop.eigen_bounds(probe, region_radius=1.0).upper
    return itrop.RegressionProblem(dataset=ds, family="poisson", lam=1.0, beta=1.0 / upper)


def make_halving_factory(dim: int, sample_size: int = 1) -> itrop.RandomOperatorFactory:
    """A noise-free random operator: every realization is x -> x / 2."""

    def realize(stream):
        return lambda x: np.asarray(x) / 2.0

    return itrop.RandomOperatorFactory(sample_size=sample_size, realize=realize,
                                       dimension=dim)


def make_shift_factory(dim: int, scale: float = 1.0,
                       sample_size: int = 1) -> itrop.RandomOperatorFactory:
    """An isometry-valued random operator: x -> x + (random shift)."""

    def realize(stream):
        shift = scale * stream.generator().normal(size=dim)
        return lambda x: np.asarray(x) + shift

    return itrop.RandomOperatorFactory(sample_size=sample_size, realize=realize,
                                       dimension=dim)
