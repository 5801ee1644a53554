"""Per-step control loop: propose, arbitrate, act, and learn from delayed rewards.

Each step runs the same cycle: read the observation; score the previous
step's actions now that their effect on the monitored states is visible;
extract or delete rules accordingly; train the learners on the completed
transition; gather proposals from the hand-authored rules, the extracted
rules and the learners; arbitrate with the fixed priority existing rules >
extracted rules > learner; apply the winning levels to the environment.

Because a reward can only be computed one step after the actions it judges,
a one-step ledger carries everything needed to close the loop: the applied
levels, which mechanism sourced each actuator, the extracted-rule ids used,
and the raw learner inputs needed to build an instance rule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .agents import (AgentConfig, ARRANGEMENT_Q_SUM, ARRANGEMENTS, DQNAgent, Transition,
                     combine_shared_vfap, effective_actuators, select_actions)
from .env import HomeEnvironment, WorldState
from .errors import ConfigError
from .rng import RngStreams
from .rules import (ExistingMatch, RuleStore, delete_rule, existing_match,
                    extracted_infer, generalize, make_instance_rule, merge_rules)
from .services import ServiceSpec, StateSpace

log = logging.getLogger(__name__)

SOURCE_EXISTING = "existing"
SOURCE_EXTRACTED = "extracted"
SOURCE_LEARNER = "learner"
SOURCE_RANDOM = "random"

VARIANT_NAMES = ("random", "learner_only", "no_extracted", "no_existing", "full")


@dataclass(frozen=True)
class SystemVariant:
    """Which mechanisms participate in a run."""

    name: str
    arrangement: str = ARRANGEMENT_Q_SUM
    constraint: bool = False

    def __post_init__(self):
        if self.name not in VARIANT_NAMES:
            raise ConfigError(f"unknown variant {self.name!r}; expected one of {VARIANT_NAMES}")
        if self.arrangement not in ARRANGEMENTS:
            raise ConfigError(f"unknown arrangement {self.arrangement!r}")

    @property
    def uses_existing(self) -> bool:
        return self.name in ("no_extracted", "full")

    @property
    def uses_extracted(self) -> bool:
        return self.name in ("no_existing", "full")

    @property
    def learns(self) -> bool:
        return self.name != "random"


@dataclass(frozen=True)
class ActionProposal:
    actuator: str
    level: float
    source: str
    rule_id: str | None = None


@dataclass
class PendingLedger:
    """Everything about step t-1 needed when its reward lands at step t."""

    step: int
    us: int
    observations: dict[str, dict[str, float]]  # service id -> raw inputs
    actions: dict[str, float]                  # actuator -> applied level
    action_indices: dict[str, dict[str, int]]  # service id -> actuator -> level index
    sources: dict[str, str]                    # actuator -> mechanism
    rule_ids: dict[str, str | None]            # actuator -> extracted rule id
    usage: dict[str, float]                    # service id -> electrical usage


@dataclass
class StepRecord:
    """Trace of one orchestrator step, JSON-serializable."""

    step: int
    hour: float
    observation: dict[str, float]
    epsilon: float
    proposals: dict[str, dict]
    conflicts: list[str]
    actions: dict[str, float]
    sources: dict[str, str]
    rule_ids: dict[str, str | None]
    rewards: dict[str, float]
    rule_events: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "hour": self.hour,
            "observation": self.observation,
            "epsilon": self.epsilon,
            "proposals": self.proposals,
            "conflicts": self.conflicts,
            "actions": self.actions,
            "sources": self.sources,
            "rule_ids": self.rule_ids,
            "rewards": self.rewards,
            "rule_events": self.rule_events,
        }


def decide(existing: ExistingMatch, extracted: dict[str, tuple[float, str]],
           learner: dict[str, ActionProposal]) -> dict[str, ActionProposal]:
    """Arbitrate the three mechanisms per actuator.

    The learner map must cover every actuator; rule-based maps may be
    partial. For each actuator the existing-rule level wins unless absent or
    conflicted, then the extracted-rule level, then the learner's.
    """
    final: dict[str, ActionProposal] = {}
    for actuator, fallback in learner.items():
        if actuator in existing.proposals and actuator not in existing.conflicts:
            level, rid = existing.proposals[actuator]
            final[actuator] = ActionProposal(actuator, level, SOURCE_EXISTING, rid)
        elif actuator in extracted:
            level, rid = extracted[actuator]
            final[actuator] = ActionProposal(actuator, level, SOURCE_EXTRACTED, rid)
        else:
            final[actuator] = fallback
    return final


def apply_rule_triggers(rewards: dict[str, float], ledger: PendingLedger, store: RuleStore,
                        services: list[ServiceSpec],
                        effective: dict[str, dict[str, tuple]],
                        tolerances: dict[str, float], step: int) -> list[dict]:
    """Extract or delete rules based on the just-computed rewards.

    All rewards strictly positive and at least one learner-sourced actuator
    at t-1: build one instance rule per service over its learner-sourced
    actuators, generalize it into the store, and re-merge. Any reward
    non-positive with extracted-rule-sourced actuators at t-1: delete those
    rules.
    """
    events: list[dict] = []
    if all(r > 0 for r in rewards.values()):
        for spec in services:
            learned = {a: ledger.actions[a]
                       for a in effective[spec.id]
                       if ledger.sources.get(a) == SOURCE_LEARNER}
            if not learned:
                continue
            instance = make_instance_rule(spec, ledger.observations[spec.id],
                                          learned, store.next_rule_id())
            rule_id = generalize(instance, store, tolerances, step=step)
            merge_rules(store, step=step)
            events.append({"event": "extracted", "rule_id": rule_id, "service": spec.id})
    elif any(r <= 0 for r in rewards.values()):
        used = sorted({rid for a, rid in ledger.rule_ids.items()
                       if rid is not None and ledger.sources.get(a) == SOURCE_EXTRACTED})
        for rid in used:
            if store.find_extracted(rid) is None:
                log.warning("rule %s already gone; skipping deletion", rid)
                continue
            delete_rule(store, rid, step=step)
            events.append({"event": "deleted", "rule_id": rid, "service": None})
    return events


class Orchestrator:
    """One simulation run: environment, services, rule store, learners."""

    def __init__(self, env: HomeEnvironment, services: list[ServiceSpec],
                 variant: SystemVariant, agent_config: AgentConfig,
                 space: StateSpace, store: RuleStore | None = None,
                 seed: int = 0, merge_tolerance_frac: float = 0.05,
                 corr_margin: float = 0.01):
        self.env = env
        self.services = sorted(services, key=lambda s: s.complexity)
        self.variant = variant
        self.agent_config = agent_config
        self.space = space
        self.store = store if store is not None else RuleStore()
        self.corr_margin = corr_margin
        self.tolerances = {name: space.tolerance(name, merge_tolerance_frac)
                           for name in space.ranges}
        self.streams = RngStreams(seed)

        self._by_id = {s.id: s for s in self.services}
        self.effective = effective_actuators(self.services, variant.arrangement)
        self._check_shared_level_sets()
        self.actuator_levels: dict[str, tuple] = {}
        for spec in self.services:
            for actuator, levels in spec.actuators.items():
                self.actuator_levels.setdefault(actuator, levels)

        self.agents: dict[str, DQNAgent] = {}
        if variant.learns:
            for spec in self.services:
                controlled = self.effective[spec.id]
                if not controlled:
                    continue
                self.agents[spec.id] = DQNAgent(
                    spec, agent_config, space, controlled=controlled,
                    init_rng=self.streams.get(f"agent-init:{spec.id}"),
                    sample_rng=self.streams.get(f"agent-sample:{spec.id}"))

        self.world: WorldState = env.reset()
        self.ledger: PendingLedger | None = None
        self.step_index = 0

    def _check_shared_level_sets(self) -> None:
        seen: dict[str, tuple] = {}
        for spec in self.services:
            for actuator, levels in spec.actuators.items():
                if actuator in seen and seen[actuator] != tuple(levels):
                    raise ConfigError(
                        f"shared actuator {actuator!r} has diverging level sets")
                seen[actuator] = tuple(levels)

    # -- proposal mechanisms ---------------------------------------------------

    def _existing_proposals(self, observation: dict[str, float]) -> ExistingMatch:
        if not self.variant.uses_existing:
            return ExistingMatch.empty()
        return existing_match(self.store.existing, observation)

    def _extracted_proposals(self, observation: dict[str, float]) -> dict[str, tuple[float, str]]:
        proposals: dict[str, tuple[float, str]] = {}
        if not self.variant.uses_extracted:
            return proposals
        for spec in self.services:  # complexity order; first proposal wins a shared actuator
            result = extracted_infer(self.store.extracted_for(spec.id), observation,
                                     spec, corr_margin=self.corr_margin)
            if result is None:
                continue
            for actuator, (level, rid) in result.items():
                proposals.setdefault(actuator, (level, rid))
        return proposals

    def _learner_proposals(self, observation: dict[str, float],
                           epsilon: float) -> dict[str, ActionProposal]:
        rng = self.streams.get("policy")
        if not self.variant.learns:
            out = {}
            for actuator, levels in self.actuator_levels.items():
                idx = int(rng.integers(0, len(levels)))
                out[actuator] = ActionProposal(actuator, levels[idx], SOURCE_RANDOM)
            return out
        per_service = {sid: agent.propose_q(self.services_by_id[sid].select_inputs(observation))
                       for sid, agent in self.agents.items()}
        combined: dict[str, np.ndarray] = {}
        for actuator in self.actuator_levels:
            vectors = [per_service[spec.id][actuator] for spec in self.services
                       if spec.id in per_service and actuator in per_service[spec.id]]
            if vectors:
                combined[actuator] = combine_shared_vfap(vectors)
        indices = select_actions(combined, epsilon, rng)
        return {a: ActionProposal(a, self.actuator_levels[a][i], SOURCE_LEARNER)
                for a, i in indices.items()}

    @property
    def services_by_id(self) -> dict[str, ServiceSpec]:
        return self._by_id

    # -- the step ---------------------------------------------------------------

    def step(self) -> StepRecord:
        observation = self.world.observation()
        epsilon = self.agent_config.epsilon_at(self.step_index) if self.variant.learns else 1.0

        rewards: dict[str, float] = {}
        events: list[dict] = []
        if self.ledger is not None:
            for spec in self.services:
                rewards[spec.id] = self.env.service_reward(
                    spec.id, observation[spec.monitored_state],
                    self.ledger.us, self.ledger.usage[spec.id])
            if self.variant.uses_extracted:
                events = apply_rule_triggers(rewards, self.ledger, self.store,
                                             self.services, self.effective,
                                             self.tolerances, self.step_index)
            for sid, agent in self.agents.items():
                spec = self.services_by_id[sid]
                transition = Transition(
                    observation=self.ledger.observations[sid],
                    action_indices=self.ledger.action_indices[sid],
                    monitored_outcome=observation[spec.monitored_state],
                    next_observation=spec.select_inputs(observation),
                    reward=rewards[sid])
                agent.record_transition(transition)
                agent.train_step()

        existing = self._existing_proposals(observation)
        extracted = self._extracted_proposals(observation)
        learner = self._learner_proposals(observation, epsilon)
        final = decide(existing, extracted, learner)

        actions = {a: p.level for a, p in final.items()}
        sources = {a: p.source for a, p in final.items()}
        rule_ids = {a: p.rule_id for a, p in final.items()}
        usage = {spec.id: self.env.electrical_usage(spec.id, actions)
                 for spec in self.services}
        action_indices: dict[str, dict[str, int]] = {}
        for sid, agent in self.agents.items():
            action_indices[sid] = {a: agent.index_for(a, actions[a])
                                   for a in agent.actuator_order}

        record = StepRecord(
            step=self.step_index,
            hour=self.world.clock.hour_of_day,
            observation=observation,
            epsilon=epsilon,
            proposals={
                "existing": {a: {"level": lvl, "rule_id": rid}
                             for a, (lvl, rid) in existing.proposals.items()},
                "extracted": {a: {"level": lvl, "rule_id": rid}
                              for a, (lvl, rid) in extracted.items()},
                "learner": {a: p.level for a, p in learner.items()},
            },
            conflicts=sorted(existing.conflicts),
            actions=actions,
            sources=sources,
            rule_ids=rule_ids,
            rewards=rewards,
            rule_events=events,
        )

        self.world = self.env.advance(self.world, actions)
        self.ledger = PendingLedger(
            step=self.step_index,
            us=int(observation["us"]),
            observations={spec.id: spec.select_inputs(observation) for spec in self.services},
            actions=actions,
            action_indices=action_indices,
            sources=sources,
            rule_ids=rule_ids,
            usage=usage,
        )
        self.step_index += 1
        return record

    def run(self, n_steps: int, on_record=None) -> list[StepRecord]:
        if n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        records = []
        for _ in range(n_steps):
            record = self.step()
            records.append(record)
            if on_record is not None:
                on_record(record)
        return records
