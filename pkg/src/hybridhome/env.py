"""Simulated single-room home: outdoor drivers, occupant, indoor dynamics, rewards.

State vocabulary used throughout the package (and in configs, rules and traces):

==========  =====================================================
``us``      occupant state index (0 absent, 1 sleeping, 2 sitting, 3 active)
``le``      outdoor light intensity, lux
``te``      outdoor temperature, deg C
``ae``      outdoor CO2 concentration, ppm
``lr``      indoor light intensity, lux (monitored by the light service)
``tr``      indoor temperature, deg C (monitored by the temperature service)
``ar``      indoor CO2 concentration, ppm (monitored by the air service)
``lp``      lamp level
``cur``     curtain opening fraction
``ac``      air conditioner mode (0 off, 1 heating, -1 cooling)
``act``     air conditioner working duration, hours
``win``     window (0 closed, 1 open)
``wct``     window/curtain working duration, hours
``ap``      air purifier flow rate, m3/h
``apt``     air purifier working duration, hours
==========  =====================================================

The three ``step_*`` dynamics functions are pure; all randomness lives in the
outdoor/occupant draw helpers, which take an explicit generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, InvalidActionError

Interval = tuple[float, float]


def _check_levels(levels: tuple, what: str) -> None:
    if len(levels) == 0:
        raise ConfigError(f"{what}: level set must be non-empty")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError(f"{what}: level set must be strictly increasing, got {levels}")


@dataclass(frozen=True)
class SimClock:
    """Discrete simulation clock; one tick per control step."""

    step_index: int = 0
    minutes_per_step: int = 5

    def __post_init__(self):
        if self.step_index < 0 or self.minutes_per_step <= 0:
            raise ConfigError("clock requires step_index >= 0 and minutes_per_step > 0")

    @property
    def hour_of_day(self) -> float:
        return (self.step_index * self.minutes_per_step / 60.0) % 24.0

    def advanced(self) -> "SimClock":
        return SimClock(self.step_index + 1, self.minutes_per_step)


@dataclass(frozen=True)
class LightParams:
    """Lamp/curtain light model and the outdoor daylight curve."""

    lux_per_lamp_level: float = 100.0
    lamp_levels: tuple = (0, 1, 2, 3, 4)
    curtain_levels: tuple = (0.0, 0.5, 1.0)
    daylight_peak_lux: float = 600.0
    daylight_peak_hour: float = 12.0
    daylight_stddev_hours: float = 3.0
    noise_scale_lux: float = 5.0

    def __post_init__(self):
        if self.lux_per_lamp_level <= 0:
            raise ConfigError("lux_per_lamp_level must be > 0")
        _check_levels(self.lamp_levels, "lamp_levels")
        _check_levels(self.curtain_levels, "curtain_levels")


@dataclass(frozen=True)
class ThermalParams:
    """Room thermal model and the outdoor temperature curve.

    The outdoor curve is ``amp * cos(ang_freq * (hour - phase)) + mean``.
    Air conditioner energy over one step is ``ac_power_coeff * duration`` (J),
    window losses are ``loss_coeff * (te - tr)`` watts while open.
    ``duration_cap_h``, when set, bounds the effective in-step working
    duration of the AC and the window so a 5-minute step cannot contain an
    hour of operation.
    """

    outdoor_amp_c: float = -7.0
    outdoor_ang_freq: float = math.pi / 12.0
    outdoor_mean_c: float = 19.0
    outdoor_phase_h: float = 4.0
    specific_heat: float = 1005.0  # J/(kg K)
    air_density: float = 1.2  # kg/m3
    room_volume: float = 75.0  # m3
    ac_levels: tuple = (-1, 0, 1)
    duration_levels: tuple = tuple(round(i / 10, 1) for i in range(51))
    win_levels: tuple = (0, 1)
    curtain_levels: tuple = (0.0, 0.5, 1.0)
    ac_power_coeff: float = 1.8e6  # J per operating hour
    loss_coeff: float = 40.0  # W/K through the open window
    duration_cap_h: float | None = None

    def __post_init__(self):
        for name in ("specific_heat", "air_density", "room_volume", "ac_power_coeff", "loss_coeff"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        _check_levels(self.ac_levels, "ac_levels")
        _check_levels(self.duration_levels, "duration_levels")
        _check_levels(self.win_levels, "win_levels")
        _check_levels(self.curtain_levels, "curtain_levels")
        if any(d < 0 for d in self.duration_levels):
            raise ConfigError("duration_levels must be non-negative")

    @property
    def heat_capacity(self) -> float:
        """Total heat capacity of the room air, J/K."""
        return self.specific_heat * self.air_density * self.room_volume


#: CO2 mass density, mg per m3, used to convert exhaled-CO2 mass rates into
#: an equivalent volume of exhaled air at ``exhaled_co2_ppm``.
CO2_MG_PER_M3 = 1.8e6


@dataclass(frozen=True)
class AirParams:
    """Room CO2 model: purifier, window exchange, occupant breathing."""

    room_volume: float = 75.0  # m3
    purifier_levels: tuple = (0, 60, 170, 280, 390, 500)  # m3/h
    duration_levels: tuple = tuple(round(i / 10, 1) for i in range(51))
    window_exchange_rate: float = 30.0  # m3/h while the window is open
    exhaled_co2_ppm: float = 38000.0
    occupant_count: int = 1
    breath_minutes: float = 5.0
    co2_mg_per_m3: float = CO2_MG_PER_M3
    outdoor_base_ppm: float = 410.0
    outdoor_amplitude_ppm: float = 10.0
    outdoor_noise_ppm: float = 2.0
    duration_cap_h: float | None = None

    def __post_init__(self):
        for name in ("room_volume", "exhaled_co2_ppm", "co2_mg_per_m3"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.window_exchange_rate < 0 or self.breath_minutes < 0 or self.occupant_count < 0:
            raise ConfigError("rates and counts must be non-negative")
        _check_levels(self.purifier_levels, "purifier_levels")
        _check_levels(self.duration_levels, "duration_levels")
        if self.outdoor_amplitude_ppm < 0 or self.outdoor_noise_ppm < 0:
            raise ConfigError("outdoor amplitude/noise must be non-negative")
        if self.outdoor_base_ppm <= self.outdoor_amplitude_ppm:
            raise ConfigError("outdoor_base_ppm must exceed outdoor_amplitude_ppm "
                              "so outdoor CO2 stays positive")

    def breath_volume_rate(self, mg_per_s: float) -> float:
        """Exhaled-air volume rate (m3/s) equivalent to a CO2 mass rate."""
        return mg_per_s / (self.co2_mg_per_m3 * self.exhaled_co2_ppm * 1e-6)


@dataclass(frozen=True)
class OccupantModel:
    """Occupant states, their breathing rates and their comfort targets.

    ``preference_by_state`` maps a service id to one target interval per
    occupant state; the reward for that service is positive exactly when its
    monitored value lies inside the interval for the current state.
    """

    n_states: int = 4
    state_labels: tuple = ("absent", "sleeping", "sitting", "active")
    breathing_mg_s: tuple = (0.0, 7.6635, 11.004, 31.44)
    preference_by_state: dict[str, tuple[Interval, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_states < 1:
            raise ConfigError("n_states must be >= 1")
        if len(self.state_labels) != self.n_states:
            raise ConfigError("state_labels must have one entry per state")
        if len(self.breathing_mg_s) != self.n_states:
            raise ConfigError("breathing_mg_s must have one entry per state")
        for service, intervals in self.preference_by_state.items():
            if len(intervals) != self.n_states:
                raise ConfigError(f"service {service!r}: need one target interval per state")
            for lo, hi in intervals:
                if not lo < hi:
                    raise ConfigError(f"service {service!r}: empty target interval [{lo}, {hi}]")


@dataclass(frozen=True)
class RewardConfig:
    satisfied_reward: float = 1.0
    dissatisfied_reward: float = -1.0
    constraint_enabled: bool = False
    constraint_weight: float = 0.5

    def __post_init__(self):
        if self.satisfied_reward <= 0:
            raise ConfigError("satisfied_reward must be > 0")
        if self.dissatisfied_reward > 0:
            raise ConfigError("dissatisfied_reward must be <= 0")
        if self.constraint_weight < 0:
            raise ConfigError("constraint_weight must be >= 0")


# ---------------------------------------------------------------------------
# outdoor drivers and the occupant draw


def gen_inhabitant_state(rng: np.random.Generator, n_states: int) -> int:
    """Draw the occupant state uniformly from {0, ..., n_states - 1}."""
    if n_states < 1:
        raise ConfigError("n_states must be >= 1")
    return int(rng.integers(0, n_states))


def outdoor_light(hour: float, rng: np.random.Generator, params: LightParams) -> float:
    """Daylight as a Gaussian-shaped curve over the day plus uniform noise."""
    if not 0.0 <= hour < 24.0:
        raise ContractError(f"hour must be in [0, 24), got {hour}")
    s = params.daylight_stddev_hours
    base = params.daylight_peak_lux * math.exp(-((hour - params.daylight_peak_hour) ** 2) / (2 * s * s))
    return base + params.noise_scale_lux * float(rng.uniform())


def outdoor_temp(hour: float, params: ThermalParams | None = None) -> float:
    """Sinusoidal outdoor temperature, coldest near dawn, warmest mid-afternoon."""
    p = params if params is not None else ThermalParams()
    if hour < 0:
        raise ContractError(f"hour must be >= 0, got {hour}")
    return p.outdoor_amp_c * math.cos(p.outdoor_ang_freq * (hour - p.outdoor_phase_h)) + p.outdoor_mean_c


def outdoor_air(hour: float, rng: np.random.Generator, params: AirParams) -> float:
    """Synthetic outdoor CO2: daily sinusoid around a base level plus noise."""
    if hour < 0:
        raise ContractError(f"hour must be >= 0, got {hour}")
    base = params.outdoor_base_ppm + params.outdoor_amplitude_ppm * math.sin(2 * math.pi * hour / 24.0)
    return base + params.outdoor_noise_ppm * float(rng.uniform())


# ---------------------------------------------------------------------------
# indoor dynamics


def _require_level(value, levels: tuple, name: str) -> None:
    if value not in levels:
        raise InvalidActionError(f"{name}={value!r} not in level set {levels}")


def _effective_duration(duration: float, cap: float | None) -> float:
    return duration if cap is None else min(duration, cap)


def step_light(lp, cur, le: float, params: LightParams) -> float:
    """Indoor light after one step: lamp contribution plus daylight through the curtain."""
    _require_level(lp, params.lamp_levels, "lp")
    _require_level(cur, params.curtain_levels, "cur")
    if le < 0:
        raise ContractError(f"le must be >= 0, got {le}")
    return params.lux_per_lamp_level * lp + le * cur


def step_temperature(tr: float, te: float, ac, act, win, wct, cur, params: ThermalParams) -> float:
    """Indoor temperature after one step.

    The AC injects (heating) or removes (cooling) ``ac_power_coeff * act``
    joules; the open window exchanges ``loss_coeff * wct * 3600 * (te - tr)``
    joules, signed by the indoor/outdoor gradient. Both are divided by the
    room heat capacity. With the AC off and the window closed the temperature
    is returned unchanged, exactly.
    """
    _require_level(ac, params.ac_levels, "ac")
    _require_level(act, params.duration_levels, "act")
    _require_level(win, params.win_levels, "win")
    _require_level(wct, params.duration_levels, "wct")
    _require_level(cur, params.curtain_levels, "cur")

    cap = params.duration_cap_h
    sign = 1.0 if ac > 0 else -1.0 if ac < 0 else 0.0
    q_ac = params.ac_power_coeff * _effective_duration(act, cap) * abs(ac)
    q_loss = params.loss_coeff * win * _effective_duration(wct, cap) * 3600.0 * (te - tr)
    return tr + (sign * q_ac + q_loss) / params.heat_capacity


def air_mix_fractions(ap, apt, wct, breathing_mg_s: float,
                      params: AirParams) -> tuple[float, float, float, bool]:
    """Per-step air exchange fractions (purifier, window, breath).

    Each fraction is a volume moved during the step divided by the room
    volume. When their sum would exceed 1 the three are rescaled
    proportionally so the mix stays convex (the whole room volume turned
    over within the step); the returned flag reports whether that clamp
    fired. The complement ``1 - sum`` is the fraction of the original room
    air that remains.
    """
    cap = params.duration_cap_h
    f_ap = ap * _effective_duration(apt, cap) / params.room_volume
    f_win = params.window_exchange_rate * _effective_duration(wct, cap) / params.room_volume
    breath_m3 = (params.occupant_count
                 * params.breath_volume_rate(breathing_mg_s)
                 * params.breath_minutes * 60.0)
    f_breath = breath_m3 / params.room_volume
    total = f_ap + f_win + f_breath
    if total > 1.0:
        scale = 1.0 / total
        return f_ap * scale, f_win * scale, f_breath * scale, True
    return f_ap, f_win, f_breath, False


def step_air(ar: float, ae: float, ap, apt, wct, us: int,
             params: AirParams, occupant: OccupantModel) -> float:
    """Indoor CO2 after one step.

    Balance of four air parcels: retained room air at ``ar``, purified air at
    0 ppm, outdoor air at ``ae`` entering through the window, and exhaled air
    at ``exhaled_co2_ppm``.
    """
    _require_level(ap, params.purifier_levels, "ap")
    _require_level(apt, params.duration_levels, "apt")
    _require_level(wct, params.duration_levels, "wct")
    if not 0 <= us < occupant.n_states:
        raise ConfigError(f"us={us} outside the occupant model's {occupant.n_states} states")
    if ar < 0 or ae < 0:
        raise ContractError("concentrations must be >= 0")

    b = occupant.breathing_mg_s[us]
    f_ap, f_win, f_breath, _ = air_mix_fractions(ap, apt, wct, b, params)
    return ar * (1.0 - f_ap - f_win - f_breath) + ae * f_win + params.exhaled_co2_ppm * f_breath


# ---------------------------------------------------------------------------
# preferences and reward


def preference_target(service: str, us: int, occupant: OccupantModel) -> Interval:
    """The occupant's target interval for a service's monitored state."""
    try:
        intervals = occupant.preference_by_state[service]
    except KeyError:
        raise ConfigError(f"no preference intervals registered for service {service!r}") from None
    if not 0 <= us < occupant.n_states:
        raise ConfigError(f"us={us} outside the occupant model's {occupant.n_states} states")
    return intervals[us]


def reward(monitored: float, interval: Interval, usage: float, cfg: RewardConfig) -> float:
    """Signed satisfaction signal.

    Positive iff the monitored value lies inside the target interval; when
    the electrical-usage constraint is enabled, satisfaction is discounted by
    ``constraint_weight * usage`` (which keeps the sign for weights < 1).
    """
    lo, hi = interval
    if not lo < hi:
        raise ContractError(f"empty target interval [{lo}, {hi}]")
    if not 0.0 <= usage <= 1.0:
        raise ContractError(f"usage must be in [0, 1], got {usage}")
    if lo <= monitored <= hi:
        r = cfg.satisfied_reward
        if cfg.constraint_enabled:
            r -= cfg.constraint_weight * usage
        return r
    return cfg.dissatisfied_reward


# ---------------------------------------------------------------------------
# full environment


#: Default occupant comfort targets per (service, state). These ship with the
#: default configuration; runs may override any entry.
DEFAULT_PREFERENCES: dict[str, tuple[Interval, ...]] = {
    # absent, sleeping, sitting, active
    "light": ((0.0, 100.0), (0.0, 150.0), (200.0, 500.0), (250.0, 600.0)),
    "temperature": ((10.0, 30.0), (16.0, 19.0), (18.5, 24.0), (17.0, 23.0)),
    "air": ((300.0, 1200.0), (350.0, 1000.0), (350.0, 900.0), (350.0, 1100.0)),
}

#: Actuator defaults applied before the first decision and for actuators no
#: service controls in a given run.
DEFAULT_ACTUATOR_LEVELS: dict[str, float] = {
    "lp": 0, "cur": 0.0, "ac": 0, "act": 0.0, "win": 0, "wct": 0.0, "ap": 0, "apt": 0.0,
}

#: The electrical actuator charged to each service under the usage constraint.
ELECTRICAL_ACTUATORS: dict[str, str] = {"light": "lp", "temperature": "ac", "air": "ap"}


@dataclass
class WorldState:
    """Everything observable at the start of a step."""

    clock: SimClock
    us: int
    le: float
    te: float
    ae: float
    lr: float
    tr: float
    ar: float
    actuators: dict[str, float]

    def observation(self) -> dict[str, float]:
        obs = {
            "us": float(self.us),
            "le": self.le, "te": self.te, "ae": self.ae,
            "lr": self.lr, "tr": self.tr, "ar": self.ar,
        }
        obs.update({k: float(v) for k, v in self.actuators.items()})
        return obs


class HomeEnvironment:
    """Stateless-dynamics wrapper plus the seeded stochastic drivers.

    A single instance owns the named noise streams for one simulation; two
    instances built with the same seed produce identical trajectories under
    identical action sequences.
    """

    def __init__(self, light: LightParams, thermal: ThermalParams, air: AirParams,
                 occupant: OccupantModel, reward_cfg: RewardConfig,
                 seed: int, minutes_per_step: int = 5,
                 initial_tr: float = 21.0, initial_ar: float = 420.0):
        self.light = light
        self.thermal = thermal
        self.air = air
        self.occupant = occupant
        self.reward_cfg = reward_cfg
        self.minutes_per_step = minutes_per_step
        self.initial_tr = initial_tr
        self.initial_ar = initial_ar
        from .rng import RngStreams

        self._streams = RngStreams(seed)

    def _draw_outdoor(self, clock: SimClock) -> tuple[int, float, float, float]:
        hour = clock.hour_of_day
        us = gen_inhabitant_state(self._streams.get("occupant"), self.occupant.n_states)
        le = outdoor_light(hour, self._streams.get("outdoor_light"), self.light)
        te = outdoor_temp(hour, self.thermal)
        ae = outdoor_air(hour, self._streams.get("outdoor_air"), self.air)
        return us, le, te, ae

    def reset(self) -> WorldState:
        clock = SimClock(0, self.minutes_per_step)
        us, le, te, ae = self._draw_outdoor(clock)
        return WorldState(clock=clock, us=us, le=le, te=te, ae=ae,
                          lr=0.0, tr=self.initial_tr, ar=self.initial_ar,
                          actuators=dict(DEFAULT_ACTUATOR_LEVELS))

    def advance(self, world: WorldState, actions: dict[str, float]) -> WorldState:
        """Apply one step of actuator settings and move to the next tick.

        Dynamics consume the current outdoor readings and the given levels;
        the returned state carries the updated monitored values and freshly
        drawn occupant/outdoor readings for the next step.
        """
        levels = dict(world.actuators)
        levels.update(actions)
        lr = step_light(levels["lp"], levels["cur"], world.le, self.light)
        tr = step_temperature(world.tr, world.te, levels["ac"], levels["act"],
                              levels["win"], levels["wct"], levels["cur"], self.thermal)
        ar = step_air(world.ar, world.ae, levels["ap"], levels["apt"], levels["wct"],
                      world.us, self.air, self.occupant)
        clock = world.clock.advanced()
        us, le, te, ae = self._draw_outdoor(clock)
        return WorldState(clock=clock, us=us, le=le, te=te, ae=ae,
                          lr=lr, tr=tr, ar=ar, actuators=levels)

    def preference_target(self, service: str, us: int) -> Interval:
        return preference_target(service, us, self.occupant)

    def service_reward(self, service: str, monitored: float, us: int, usage: float) -> float:
        return reward(monitored, self.preference_target(service, us), usage, self.reward_cfg)

    def electrical_usage(self, service: str, actions: dict[str, float]) -> float:
        """Normalized use of the service's electrical actuator in [0, 1]."""
        name = ELECTRICAL_ACTUATORS.get(service)
        if name is None or name not in actions:
            return 0.0
        if name == "lp":
            top = max(abs(v) for v in self.light.lamp_levels)
        elif name == "ac":
            top = max(abs(v) for v in self.thermal.ac_levels)
        else:
            top = max(abs(v) for v in self.air.purifier_levels)
        return abs(actions[name]) / top if top else 0.0
