"""Service definitions: what each controller watches and which actuators it owns.

The input ordering declared here is a contract shared by the learning agents
(feature vectors) and the rule engine (condition ordering and correlation
vectors); it must stay fixed for the lifetime of a run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .env import AirParams, LightParams, ThermalParams
from .errors import ConfigError


@dataclass(frozen=True)
class StateSpace:
    """Physical ranges and categorical arities for every named state."""

    ranges: dict[str, tuple[float, float]]
    categorical: dict[str, int] = field(default_factory=dict)

    def scale(self, name: str, value: float) -> float:
        lo, hi = self.ranges[name]
        if hi <= lo:
            raise ConfigError(f"state {name!r}: empty range [{lo}, {hi}]")
        return min(1.0, max(0.0, (value - lo) / (hi - lo)))

    def tolerance(self, name: str, fraction: float) -> float:
        lo, hi = self.ranges[name]
        return fraction * (hi - lo)


@dataclass(frozen=True)
class ServiceSpec:
    """One service: its monitored state, ordered inputs, and owned actuators."""

    id: str
    monitored_state: str
    inputs: tuple[str, ...]
    actuators: dict[str, tuple]
    complexity: int

    def __post_init__(self):
        if not self.inputs:
            raise ConfigError(f"service {self.id!r}: needs at least one input state")
        if not self.actuators:
            raise ConfigError(f"service {self.id!r}: needs at least one actuator")
        for name, levels in self.actuators.items():
            if len(levels) == 0:
                raise ConfigError(f"service {self.id!r}: actuator {name!r} has an empty level set")

    def observation_vector(self, observation: dict[str, float]) -> list[float]:
        """Raw input values in declared order (the shared feature contract)."""
        try:
            return [float(observation[name]) for name in self.inputs]
        except KeyError as missing:
            raise ConfigError(f"service {self.id!r}: observation missing state {missing}") from None

    def select_inputs(self, observation: dict[str, float]) -> dict[str, float]:
        return {name: float(observation[name]) for name in self.inputs}


def build_service_specs(subset: list[str], light: LightParams, thermal: ThermalParams,
                        air: AirParams) -> list[ServiceSpec]:
    """Instantiate the canonical services for the requested subset.

    Complexity ranks order the monitored states by how involved their
    dynamics are (light is memoryless, temperature is a single energy
    balance, air adds occupant-coupled source terms); the shared-actuator
    reassignment arrangement uses this ordering.
    """
    catalogue = {
        "light": ServiceSpec(
            id="light", monitored_state="lr", inputs=("us", "le"),
            actuators={"lp": tuple(light.lamp_levels),
                       "cur": tuple(light.curtain_levels)},
            complexity=1),
        "temperature": ServiceSpec(
            id="temperature", monitored_state="tr", inputs=("us", "te", "tr"),
            actuators={"ac": tuple(thermal.ac_levels),
                       "act": tuple(thermal.duration_levels),
                       "win": tuple(thermal.win_levels),
                       "wct": tuple(thermal.duration_levels),
                       "cur": tuple(thermal.curtain_levels)},
            complexity=2),
        "air": ServiceSpec(
            id="air", monitored_state="ar", inputs=("us", "ae", "ar"),
            actuators={"ap": tuple(air.purifier_levels),
                       "apt": tuple(air.duration_levels),
                       "win": tuple(thermal.win_levels),
                       "wct": tuple(air.duration_levels),
                       "cur": tuple(thermal.curtain_levels)},
            complexity=3),
    }
    specs = []
    for name in subset:
        if name not in catalogue:
            raise ConfigError(f"unknown service {name!r}; expected one of {sorted(catalogue)}")
        specs.append(catalogue[name])
    if len(set(s.id for s in specs)) != len(specs):
        raise ConfigError("duplicate services in subset")
    return specs



def default_state_space(n_states: int = 4) -> StateSpace:
    """Scaling ranges for observation encoding and rule-merge tolerances."""
    return StateSpace(
        ranges={
            "us": (0.0, float(max(n_states - 1, 1))),
            "le": (0.0, 650.0),
            "te": (11.0, 27.0),
            "ae": (395.0, 425.0),
            "lr": (0.0, 1050.0),
            "tr": (5.0, 35.0),
            "ar": (0.0, 4000.0),
        },
        categorical={"us": n_states},
    )
