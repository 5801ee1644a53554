"""Interval-condition rules: hand-authored matching plus learned-rule lifecycle.

Two rule populations live in one :class:`RuleStore`:

* existing rules, authored in the config, matched against raw observations
  with a priority scheme for conflicts; they are never deleted at runtime;
* extracted rules, distilled from the learners one instance at a time and
  widened by generalization and merging. Each carries per-state
  ``min <= avg <= max`` intervals, per-actuator conclusions with occurrence
  counts, and the number of instances it has absorbed.

Inference on extracted rules prefers rules whose intervals contain the
observation outright; among several (or none) it falls back to the Pearson
correlation between the observation vector and each rule's per-state
averages, and finally to the largest summed occurrence count.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

from .errors import ConfigError, ContractError, ProtectedRuleError, RuleNotFoundError
from .services import ServiceSpec

log = logging.getLogger(__name__)

STORE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class StateCondition:
    """Closed interval plus running average for one state."""

    state: str
    min: float
    avg: float
    max: float

    def __post_init__(self):
        if not self.min <= self.avg <= self.max:
            raise ContractError(
                f"condition on {self.state!r}: need min <= avg <= max, "
                f"got [{self.min}, {self.avg}, {self.max}]")

    def contains(self, value: float) -> bool:
        return self.min <= value <= self.max

    def near(self, value: float, tolerance: float) -> bool:
        return self.min - tolerance <= value <= self.max + tolerance


@dataclass(frozen=True)
class Conclusion:
    """One actuator setting with its occurrence count."""

    actuator: str
    level: float | int
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ContractError(f"conclusion on {self.actuator!r}: count must be >= 1")


@dataclass
class ExtractedRule:
    rule_id: str
    service_id: str
    conditions: tuple[StateCondition, ...]
    conclusions: tuple[Conclusion, ...]
    merge_count: int = 1

    def __post_init__(self):
        if not self.conditions or not self.conclusions:
            raise ContractError("extracted rule needs conditions and conclusions")
        if self.merge_count < 1:
            raise ContractError("merge_count must be >= 1")
        seen = [c.actuator for c in self.conclusions]
        if len(set(seen)) != len(seen):
            raise ContractError("duplicate actuator in conclusions")

    def condition_for(self, state: str) -> StateCondition:
        for cond in self.conditions:
            if cond.state == state:
                return cond
        raise ContractError(f"rule {self.rule_id}: no condition on state {state!r}")

    def contains(self, observation: dict[str, float]) -> bool:
        return all(c.contains(observation[c.state]) for c in self.conditions)

    def conclusion_signature(self) -> tuple:
        return tuple(sorted((c.actuator, c.level) for c in self.conclusions))

    def avg_vector(self) -> list[float]:
        return [c.avg for c in self.conditions]

    def total_count(self) -> int:
        return sum(c.count for c in self.conclusions)


@dataclass(frozen=True)
class ExistingRule:
    """Hand-authored rule: interval predicates over states, fixed conclusions."""

    rule_id: str
    conditions: dict[str, tuple[float, float]]
    conclusions: dict[str, float | int]
    priority: int = 0

    def __post_init__(self):
        if not self.conditions or not self.conclusions:
            raise ConfigError(f"rule {self.rule_id!r}: needs at least one condition and one conclusion")
        for state, (lo, hi) in self.conditions.items():
            if lo > hi:
                raise ConfigError(f"rule {self.rule_id!r}: condition on {state!r} has min > max")

    def matches(self, observation: dict[str, float]) -> bool:
        for state, (lo, hi) in self.conditions.items():
            if state not in observation:
                raise ContractError(f"rule {self.rule_id!r}: observation lacks state {state!r}")
            if not lo <= observation[state] <= hi:
                return False
        return True


@dataclass
class RuleStore:
    """Both rule populations plus an append-only provenance log."""

    existing: list[ExistingRule] = field(default_factory=list)
    extracted: list[ExtractedRule] = field(default_factory=list)
    log: list[tuple[int, str, str]] = field(default_factory=list)
    _next_id: int = 0

    def _all_ids(self) -> set[str]:
        return {r.rule_id for r in self.existing} | {r.rule_id for r in self.extracted}

    def next_rule_id(self) -> str:
        rid = f"x{self._next_id:05d}"
        self._next_id += 1
        return rid

    def add_existing(self, rule: ExistingRule) -> None:
        if rule.rule_id in self._all_ids():
            raise ConfigError(f"duplicate rule id {rule.rule_id!r}")
        self.existing.append(rule)

    def add_extracted(self, rule: ExtractedRule, step: int = -1) -> None:
        if rule.rule_id in self._all_ids():
            raise ConfigError(f"duplicate rule id {rule.rule_id!r}")
        self.extracted.append(rule)
        self.log.append((step, rule.rule_id, "extracted"))

    def extracted_for(self, service_id: str) -> list[ExtractedRule]:
        return [r for r in self.extracted if r.service_id == service_id]

    def find_extracted(self, rule_id: str) -> ExtractedRule | None:
        for r in self.extracted:
            if r.rule_id == rule_id:
                return r
        return None

    # -- persistence ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": STORE_FORMAT_VERSION,
            "next_id": self._next_id,
            "existing": [
                {"id": r.rule_id, "priority": r.priority,
                 "conditions": {s: list(iv) for s, iv in r.conditions.items()},
                 "conclusions": dict(r.conclusions)}
                for r in self.existing
            ],
            "extracted": [
                {"id": r.rule_id, "service": r.service_id, "merge_count": r.merge_count,
                 "conditions": [{"state": c.state, "min": c.min, "avg": c.avg, "max": c.max}
                                for c in r.conditions],
                 "conclusions": [{"actuator": c.actuator, "level": c.level, "count": c.count}
                                 for c in r.conclusions]}
                for r in self.extracted
            ],
            "log": [list(entry) for entry in self.log],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RuleStore":
        if data.get("version") != STORE_FORMAT_VERSION:
            raise ConfigError(f"unsupported rule store version {data.get('version')!r}")
        store = cls(_next_id=int(data.get("next_id", 0)))
        for raw in data.get("existing", []):
            store.add_existing(ExistingRule(
                rule_id=raw["id"], priority=int(raw.get("priority", 0)),
                conditions={s: (iv[0], iv[1]) for s, iv in raw["conditions"].items()},
                conclusions=dict(raw["conclusions"])))
        for raw in data.get("extracted", []):
            rule = ExtractedRule(
                rule_id=raw["id"], service_id=raw["service"],
                merge_count=int(raw["merge_count"]),
                conditions=tuple(StateCondition(c["state"], c["min"], c["avg"], c["max"])
                                 for c in raw["conditions"]),
                conclusions=tuple(Conclusion(c["actuator"], c["level"], int(c["count"]))
                                  for c in raw["conclusions"]))
            if rule.rule_id in store._all_ids():
                raise ConfigError(f"duplicate rule id {rule.rule_id!r}")
            store.extracted.append(rule)
        store.log = [(int(s), str(r), str(e)) for s, r, e in data.get("log", [])]
        return store

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RuleStore":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# rule construction and lifecycle


def make_instance_rule(service: ServiceSpec, observation: dict[str, float],
                       joint_action: dict[str, float], rule_id: str) -> ExtractedRule:
    """One-situation rule: degenerate intervals at the observed values."""
    if not joint_action:
        raise ContractError("instance rule needs at least one actuator conclusion")
    for actuator in joint_action:
        if actuator not in service.actuators:
            raise ContractError(
                f"service {service.id!r} does not control actuator {actuator!r}")
    conditions = []
    for state in service.inputs:
        if state not in observation:
            raise ContractError(f"observation missing state {state!r}")
        v = float(observation[state])
        conditions.append(StateCondition(state=state, min=v, avg=v, max=v))
    conclusions = tuple(Conclusion(actuator=a, level=lvl, count=1)
                        for a, lvl in joint_action.items())
    return ExtractedRule(rule_id=rule_id, service_id=service.id,
                         conditions=tuple(conditions), conclusions=conclusions,
                         merge_count=1)


def generalize(instance: ExtractedRule, store: RuleStore,
               tolerances: dict[str, float], step: int = -1) -> str:
    """Absorb an instance rule into a compatible stored rule, or insert it.

    A stored rule is compatible when it belongs to the same service, draws
    the identical conclusion levels, and every one of its condition
    intervals, widened by the per-state tolerance, contains the instance's
    observed value. Absorption extends min/max to cover the value, updates
    the running average as a merge-count-weighted mean, and bumps the
    occurrence counts. Returns the id of the rule that now covers the
    instance.
    """
    if instance.merge_count != 1:
        raise ContractError("generalize expects a fresh instance rule")
    signature = instance.conclusion_signature()
    for rule in store.extracted:
        if rule.service_id != instance.service_id:
            continue
        if rule.conclusion_signature() != signature:
            continue
        values = {c.state: c.avg for c in instance.conditions}
        if all(cond.near(values[cond.state], tolerances.get(cond.state, 0.0))
               for cond in rule.conditions):
            _absorb(rule, values)
            bumped = {c.actuator: c.count for c in instance.conclusions}
            rule.conclusions = tuple(
                replace(c, count=c.count + bumped[c.actuator]) for c in rule.conclusions)
            store.log.append((step, rule.rule_id, "merged"))
            return rule.rule_id
    store.add_extracted(instance, step=step)
    return instance.rule_id


def _absorb(rule: ExtractedRule, values: dict[str, float]) -> None:
    m = rule.merge_count
    rule.conditions = tuple(
        StateCondition(
            state=c.state,
            min=min(c.min, values[c.state]),
            avg=(c.avg * m + values[c.state]) / (m + 1),
            max=max(c.max, values[c.state]))
        for c in rule.conditions)
    rule.merge_count = m + 1


def _fusable(a: ExtractedRule, b: ExtractedRule) -> bool:
    if a.service_id != b.service_id:
        return False
    if a.conclusion_signature() != b.conclusion_signature():
        return False
    for ca in a.conditions:
        cb = b.condition_for(ca.state)
        if ca.min > cb.max or cb.min > ca.max:
            return False
    return True


def _fuse(a: ExtractedRule, b: ExtractedRule) -> ExtractedRule:
    ma, mb = a.merge_count, b.merge_count
    conditions = []
    for ca in a.conditions:
        cb = b.condition_for(ca.state)
        conditions.append(StateCondition(
            state=ca.state,
            min=min(ca.min, cb.min),
            avg=(ca.avg * ma + cb.avg * mb) / (ma + mb),
            max=max(ca.max, cb.max)))
    counts_b = {c.actuator: c.count for c in b.conclusions}
    conclusions = tuple(replace(c, count=c.count + counts_b[c.actuator])
                        for c in a.conclusions)
    return ExtractedRule(rule_id=a.rule_id, service_id=a.service_id,
                         conditions=tuple(conditions), conclusions=conclusions,
                         merge_count=ma + mb)


def merge_rules(store: RuleStore, step: int = -1) -> int:
    """Fuse overlapping same-conclusion rules until no pair remains.

    Pair fusion takes the interval envelope per state, the merge-count
    weighted mean of the averages, and the summed occurrence counts; the
    earlier rule's id survives. Envelope growth is monotone, so the fixed
    point does not depend on fusion order. Returns the number of fusions.
    """
    fused = 0
    changed = True
    while changed:
        changed = False
        rules = store.extracted
        for i in range(len(rules)):
            for j in range(i + 1, len(rules)):
                if _fusable(rules[i], rules[j]):
                    merged = _fuse(rules[i], rules[j])
                    store.log.append((step, rules[j].rule_id, "merged"))
                    store.log.append((step, merged.rule_id, "merged"))
                    rules[i] = merged
                    del rules[j]
                    fused += 1
                    changed = True
                    break
            if changed:
                break
    return fused


def delete_rule(store: RuleStore, rule_id: str, step: int = -1) -> None:
    """Remove an extracted rule; hand-authored rules are off limits."""
    for idx, rule in enumerate(store.extracted):
        if rule.rule_id == rule_id:
            del store.extracted[idx]
            store.log.append((step, rule_id, "deleted"))
            return
    if any(r.rule_id == rule_id for r in store.existing):
        raise ProtectedRuleError(f"rule {rule_id!r} is hand-authored and cannot be deleted")
    raise RuleNotFoundError(rule_id)


# ---------------------------------------------------------------------------
# inference


@dataclass(frozen=True)
class ExistingMatch:
    """Result of matching the hand-authored rules against an observation."""

    proposals: dict[str, tuple[float, str]]  # actuator -> (level, rule id)
    conflicts: frozenset[str]

    @classmethod
    def empty(cls) -> "ExistingMatch":
        return cls(proposals={}, conflicts=frozenset())


def existing_match(rules: list[ExistingRule], observation: dict[str, float]) -> ExistingMatch:
    """Collect matching rules' conclusions, resolving clashes by priority.

    Two matched rules that set the same actuator to different levels at the
    same (highest) priority mark that actuator as conflicted; a conflicted
    actuator yields no proposal and is reported in ``conflicts``.
    """
    by_actuator: dict[str, list[tuple[int, float, str]]] = {}
    for rule in rules:
        if rule.matches(observation):
            for actuator, level in rule.conclusions.items():
                by_actuator.setdefault(actuator, []).append((rule.priority, level, rule.rule_id))
    proposals: dict[str, tuple[float, str]] = {}
    conflicts = set()
    for actuator, entries in by_actuator.items():
        top = max(p for p, _, _ in entries)
        winners = [(lvl, rid) for p, lvl, rid in entries if p == top]
        if len({lvl for lvl, _ in winners}) > 1:
            conflicts.add(actuator)
        else:
            proposals[actuator] = winners[0]
    return ExistingMatch(proposals=proposals, conflicts=frozenset(conflicts))


def ppmcc(x, y) -> float:
    """Pearson product-moment correlation; 0.0 when either side is constant."""
    if len(x) != len(y):
        raise ContractError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ContractError("correlation needs at least two points")
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    xc = [v - mx for v in x]
    yc = [v - my for v in y]
    sx = sum(v * v for v in xc)
    sy = sum(v * v for v in yc)
    if sx == 0.0 or sy == 0.0:
        return 0.0
    r = sum(a * b for a, b in zip(xc, yc)) / (sx * sy) ** 0.5
    return max(-1.0, min(1.0, r))


def extracted_infer(rules: list[ExtractedRule], observation: dict[str, float],
                    service: ServiceSpec, corr_margin: float = 0.01
                    ) -> dict[str, tuple[float, str]] | None:
    """Propose actuator levels from the extracted rules, or ``None``.

    Containment first: rules whose every condition interval contains the
    observation. A single containing rule answers directly. With several
    containing rules (or none, in which case all rules are candidates), the
    rule whose per-state averages correlate best with the observation wins,
    provided its correlation beats the runner-up by more than
    ``corr_margin``; otherwise the candidate with the largest summed
    occurrence count wins.
    """
    if not rules:
        return None
    containing = [r for r in rules if r.contains(observation)]
    if len(containing) == 1:
        chosen = containing[0]
    else:
        candidates = containing if containing else list(rules)
        if len(candidates) == 1:
            chosen = candidates[0]
        else:
            obs_vec = service.observation_vector(observation)
            scored = [(ppmcc(obs_vec, r.avg_vector()), idx, r)
                      for idx, r in enumerate(candidates)]
            ranked = sorted(scored, key=lambda t: (-t[0], t[1]))
            if ranked[0][0] - ranked[1][0] > corr_margin:
                chosen = ranked[0][2]
            else:
                chosen = max(candidates, key=lambda r: r.total_count())
    return {c.actuator: (c.level, chosen.rule_id) for c in chosen.conclusions}


# ---------------------------------------------------------------------------
# rendering


def render_rule(rule: ExtractedRule) -> str:
    conds = " and ".join(
        f"{c.state} in [{_fmt(c.min)}, {_fmt(c.max)}] (avg {_fmt(c.avg)})"
        for c in rule.conditions)
    concs = " and ".join(
        f"{c.actuator}={_fmt(c.level)} (count {c.count})" for c in rule.conclusions)
    return (f"rule {rule.rule_id} [service {rule.service_id}, merged {rule.merge_count}]\n"
            f"  if {conds}\n  then {concs}")


def render_existing_rule(rule: ExistingRule) -> str:
    conds = " and ".join(
        f"{s} in [{_fmt(lo)}, {_fmt(hi)}]" for s, (lo, hi) in rule.conditions.items())
    concs = " and ".join(f"{a}={_fmt(lvl)}" for a, lvl in rule.conclusions.items())
    return (f"rule {rule.rule_id} [existing, priority {rule.priority}]\n"
            f"  if {conds}\n  then {concs}")


def _fmt(v) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return f"{v:.6g}" if isinstance(v, float) else str(v)
