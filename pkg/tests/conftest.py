import numpy as np
import pytest
from hypothesis import settings

from spnsurrogate import petri
from spnsurrogate.petri import Hazard, PetriNet, TransitionSpec

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def pure_death_net(x0=1000, rate="mu"):
    return PetriNet(("X", "D"), (TransitionSpec("death", {"X": 1}, {"D": 1}, Hazard("per_capita", rate, ("X",))),),
                    {"X": x0, "D": 0})


@pytest.fixture
def death_net():
    return pure_death_net()


@pytest.fixture(params=petri.available_backends())
def backend(request):
    prev = petri.get_backend()
    petri.set_backend(request.param)
    yield request.param
    petri.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
