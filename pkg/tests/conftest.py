import numpy as np
import pytest

from hybridhome.env import (AirParams, LightParams, OccupantModel, RewardConfig,
                            ThermalParams, DEFAULT_PREFERENCES)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def light_params():
    return LightParams()


@pytest.fixture
def thermal_params():
    return ThermalParams()


@pytest.fixture
def air_params():
    return AirParams()


@pytest.fixture
def occupant():
    return OccupantModel(preference_by_state=dict(DEFAULT_PREFERENCES))


@pytest.fixture
def reward_cfg():
    return RewardConfig()
