"""Per-service Q-learning agents and the multi-service actuator arrangements.

Each service gets one :class:`DQNAgent` whose network has a Q head per
controlled actuator. Actions are picked per head by an epsilon-greedy rule.
Two arrangements resolve actuators claimed by several services:

* ``q_sum``: every sharing service keeps a head for the actuator and their
  Q vectors are summed elementwise before the argmax;
* ``reassign``: each shared actuator is handed to the sharing service whose
  monitored dynamics are simplest (lowest complexity rank), and the other
  services drop their head for it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .nets import Adam, QNetwork
from .services import ServiceSpec, StateSpace

ARRANGEMENT_Q_SUM = "q_sum"
ARRANGEMENT_REASSIGN = "reassign"
ARRANGEMENTS = (ARRANGEMENT_Q_SUM, ARRANGEMENT_REASSIGN)

AGENT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AgentConfig:
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 1000
    discount: float = 0.9
    learn_rate: float = 1e-3
    replay_capacity: int = 10_000
    batch_size: int = 64
    target_sync_interval: int = 200
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if not (0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0):
            raise ConfigError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if not 0.0 < self.discount < 1.0:
            raise ConfigError("discount must be in (0, 1)")
        if self.replay_capacity < self.batch_size:
            raise ConfigError("replay_capacity must be >= batch_size")
        if self.epsilon_decay_steps < 1 or self.target_sync_interval < 1:
            raise ConfigError("decay steps and sync interval must be >= 1")

    def epsilon_at(self, step: int) -> float:
        frac = min(max(step, 0) / self.epsilon_decay_steps, 1.0)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac


@dataclass(frozen=True)
class Transition:
    """One step of experience for one service; the reward arrives a step late."""

    observation: dict[str, float]
    action_indices: dict[str, int]
    monitored_outcome: float
    next_observation: dict[str, float]
    reward: float


class ReplayBuffer:
    """Fixed-capacity ring buffer with seeded uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("replay capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._cursor = 0

    def append(self, item: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._cursor] = item
            self._cursor = (self._cursor + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if batch_size > len(self._items):
            raise ContractError("not enough transitions to sample")
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


class ObservationEncoder:
    """Raw named readings -> network feature vector.

    Categorical states become one-hot blocks; continuous states are min-max
    scaled to [0, 1] with the configured physical ranges (clipped outside).
    The rule engine keeps seeing raw values; only the network input is
    scaled.
    """

    def __init__(self, inputs: tuple[str, ...], space: StateSpace):
        self.inputs = inputs
        self.space = space
        self.dim = sum(space.categorical.get(name, 1) for name in inputs)

    def encode(self, observation: dict[str, float]) -> np.ndarray:
        parts = []
        for name in self.inputs:
            if name not in observation:
                raise ContractError(f"observation missing state {name!r}")
            value = observation[name]
            if name in self.space.categorical:
                arity = self.space.categorical[name]
                block = np.zeros(arity)
                code = int(value)
                if not 0 <= code < arity:
                    raise ContractError(f"{name}={value!r} outside categorical range")
                block[code] = 1.0
                parts.append(block)
            else:
                parts.append(np.array([self.space.scale(name, value)]))
        return np.concatenate(parts)


def select_actions(q: dict[str, np.ndarray], epsilon: float,
                   rng: np.random.Generator) -> dict[str, int]:
    """Epsilon-greedy pick per actuator, ties broken toward the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ContractError(f"epsilon must be in [0, 1], got {epsilon}")
    chosen: dict[str, int] = {}
    for actuator, values in q.items():
        vec = np.asarray(values, dtype=np.float64)
        if vec.size == 0:
            raise ContractError(f"actuator {actuator!r}: empty Q vector")
        if epsilon > 0.0 and rng.uniform() < epsilon:
            chosen[actuator] = int(rng.integers(0, vec.size))
        else:
            chosen[actuator] = int(np.argmax(vec))
    return chosen


def combine_shared_vfap(q_lists: list[np.ndarray]) -> np.ndarray:
    """Elementwise sum of the sharing services' Q vectors for one actuator."""
    if not q_lists:
        raise ContractError("need at least one Q vector")
    first = np.asarray(q_lists[0], dtype=np.float64)
    total = first.copy()
    for other in q_lists[1:]:
        arr = np.asarray(other, dtype=np.float64)
        if arr.shape != first.shape:
            raise ContractError(f"Q vector length mismatch: {arr.shape} vs {first.shape}")
        total += arr
    return total


def assign_actuators_rsaba(services: list[ServiceSpec]) -> dict[str, str]:
    """Give every shared actuator to the lowest-complexity sharing service.

    Returns a full actuator -> service-id ownership map (a partition: each
    actuator has exactly one owner).
    """
    ranks = [s.complexity for s in services]
    if len(set(ranks)) != len(ranks):
        raise ConfigError("complexity ranks must be distinct across services")
    owners: dict[str, str] = {}
    for service in sorted(services, key=lambda s: s.complexity):
        for actuator in service.actuators:
            owners.setdefault(actuator, service.id)
    return owners


def effective_actuators(services: list[ServiceSpec], arrangement: str) -> dict[str, dict[str, tuple]]:
    """Per-service actuator sets actually controlled under an arrangement."""
    if arrangement not in ARRANGEMENTS:
        raise ConfigError(f"unknown arrangement {arrangement!r}; expected one of {ARRANGEMENTS}")
    if arrangement == ARRANGEMENT_Q_SUM:
        return {s.id: dict(s.actuators) for s in services}
    owners = assign_actuators_rsaba(services)
    out: dict[str, dict[str, tuple]] = {s.id: {} for s in services}
    for service in services:
        for actuator, levels in service.actuators.items():
            if owners[actuator] == service.id:
                out[service.id][actuator] = levels
    return out


class DQNAgent:
    """One service's learner: Q network, target twin, replay, training loop."""

    def __init__(self, spec: ServiceSpec, config: AgentConfig, space: StateSpace,
                 controlled: dict[str, tuple] | None = None,
                 init_rng: np.random.Generator | None = None,
                 sample_rng: np.random.Generator | None = None,
                 zero_init: bool = False):
        self.spec = spec
        self.config = config
        self.controlled = dict(controlled) if controlled is not None else dict(spec.actuators)
        if not self.controlled:
            raise ConfigError(f"service {spec.id!r}: agent has no actuators to control")
        self.encoder = ObservationEncoder(spec.inputs, space)
        self.actuator_order = list(self.controlled)
        head_sizes = [len(self.controlled[a]) for a in self.actuator_order]
        rng = init_rng if init_rng is not None else np.random.default_rng(0)
        self.online = QNetwork(self.encoder.dim, head_sizes, config.hidden,
                               rng=rng, zero_init=zero_init)
        self.target = self.online.clone()
        self.optimizer = Adam(self.online, learn_rate=config.learn_rate)
        self.buffer = ReplayBuffer(config.replay_capacity)
        self._sample_rng = sample_rng if sample_rng is not None else np.random.default_rng(1)
        self.train_steps = 0

    # -- proposals ------------------------------------------------------------

    def propose_q(self, observation: dict[str, float]) -> dict[str, np.ndarray]:
        """Q vector per controlled actuator for one observation."""
        x = self.encoder.encode(observation)
        outs = self.online.q_single(x)
        if not all(np.all(np.isfinite(o)) for o in outs):
            raise ContractError(f"service {self.spec.id!r}: non-finite Q values")
        return {a: outs[k] for k, a in enumerate(self.actuator_order)}

    def level_for(self, actuator: str, index: int):
        return self.controlled[actuator][index]

    def index_for(self, actuator: str, level) -> int:
        levels = self.controlled[actuator]
        for idx, candidate in enumerate(levels):
            if candidate == level:
                return idx
        raise ContractError(f"level {level!r} not in {actuator!r} level set {levels}")

    # -- learning ---------------------------------------------------------------

    def record_transition(self, transition: Transition) -> None:
        for actuator in self.actuator_order:
            if actuator not in transition.action_indices:
                raise ContractError(f"transition missing action for actuator {actuator!r}")
        self.buffer.append(transition)

    def train_step(self) -> float | None:
        """One minibatch update; returns the loss, or None before warm-up."""
        cfg = self.config
        if len(self.buffer) < cfg.batch_size:
            return None
        batch = self.buffer.sample(cfg.batch_size, self._sample_rng)
        x = np.stack([self.encoder.encode(t.observation) for t in batch])
        x_next = np.stack([self.encoder.encode(t.next_observation) for t in batch])
        rewards = np.array([t.reward for t in batch], dtype=np.float64)

        next_q = self.target.forward(x_next)
        actions, targets = [], []
        for k, actuator in enumerate(self.actuator_order):
            actions.append(np.array([t.action_indices[actuator] for t in batch], dtype=np.intp))
            targets.append(rewards + cfg.discount * next_q[k].max(axis=1))
        loss, grads = self.online.loss_and_grads(x, actions, targets)
        self.optimizer.step(grads)
        self.train_steps += 1
        if self.train_steps % cfg.target_sync_interval == 0:
            self.target.copy_from(self.online)
        return loss

    # -- persistence ------------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "version": AGENT_FORMAT_VERSION,
            "service": self.spec.id,
            "actuator_order": list(self.actuator_order),
            "train_steps": self.train_steps,
            "replay_size": len(self.buffer),
            "weights": [w.tolist() for w in self.online.param_arrays()],
            "target_weights": [w.tolist() for w in self.target.param_arrays()],
            "optimizer": self.optimizer.state_dict(),
        }

    def load_state_dict(self, state: dict) -> None:
        if state.get("version") != AGENT_FORMAT_VERSION:
            raise ConfigError(f"unsupported agent state version {state.get('version')!r}")
        if state.get("service") != self.spec.id:
            raise ConfigError(f"agent state is for service {state.get('service')!r}, "
                              f"not {self.spec.id!r}")
        if state.get("actuator_order") != self.actuator_order:
            raise ConfigError("agent state actuator order does not match this agent")
        for mine, saved in zip(self.online.param_arrays(), state["weights"]):
            mine[...] = np.asarray(saved, dtype=np.float64).reshape(mine.shape)
        for mine, saved in zip(self.target.param_arrays(), state["target_weights"]):
            mine[...] = np.asarray(saved, dtype=np.float64).reshape(mine.shape)
        self.optimizer.load_state_dict(state["optimizer"])
        self.train_steps = int(state["train_steps"])
