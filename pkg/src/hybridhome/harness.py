"""Experiment configuration, the multi-system comparison runner, and metrics.

A single JSON config describes the environment constants, the occupant
preferences, the agents' hyperparameters, the hand-authored rules, and the
list of system variants to compare. ``run_experiment`` executes every
(variant, seed) pair, scores the final evaluation window, and writes a
``variant,seed,metric,value`` CSV plus optional JSON-lines traces and
persisted rule stores. Runs are deterministic: identical config and seed
give byte-identical outputs.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .agents import AgentConfig, ARRANGEMENTS
from .env import (AirParams, DEFAULT_PREFERENCES, HomeEnvironment, LightParams,
                  OccupantModel, RewardConfig, ThermalParams)
from .errors import ConfigError, ContractError
from .orchestrator import Orchestrator, StepRecord, SystemVariant, VARIANT_NAMES
from .rules import ExistingRule, RuleStore
from .services import ServiceSpec, StateSpace, build_service_specs, default_state_space

CSV_HEADER = ("variant", "seed", "metric", "value")


@dataclass
class ExperimentConfig:
    seeds: list[int]
    steps: int
    services: list[str]
    arrangement: str
    constraint: bool
    variants: list[str]
    eval_fraction: float
    minutes_per_step: int
    initial_tr: float
    initial_ar: float
    light: LightParams
    thermal: ThermalParams
    air: AirParams
    occupant: OccupantModel
    reward: RewardConfig
    agent: AgentConfig
    space: StateSpace
    existing_rules: list[ExistingRule] = field(default_factory=list)
    merge_tolerance_frac: float = 0.05
    corr_margin: float = 0.01
    output_dir: str = "out"
    trace: bool = False
    save_stores: bool = True


@dataclass
class MetricsEntry:
    variant: str
    seed: int
    metrics: dict[str, float]
    steps: int
    wall_clock_s: float


@dataclass
class MetricsReport:
    entries: list[MetricsEntry]
    csv_path: str | None = None

    def lookup(self, variant: str, seed: int) -> dict[str, float]:
        for e in self.entries:
            if e.variant == variant and e.seed == seed:
                return e.metrics
        raise KeyError((variant, seed))


# ---------------------------------------------------------------------------
# configuration loading


def default_config_dict() -> dict:
    with open(default_config_path(), encoding="utf-8") as fh:
        return json.load(fh)


def default_config_path() -> Path:
    return Path(__file__).parent / "configs" / "default.json"


def _build(cls, data: dict, what: str):
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{what}: {exc}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build and fully validate an ExperimentConfig from parsed JSON."""
    data = json.loads(json.dumps(raw))  # deep copy, and reject non-JSON input early

    env_raw = data.get("environment", {})
    cap_minutes = env_raw.get("duration_cap_minutes", data.get("minutes_per_step", 5))
    cap_h = None if cap_minutes is None else cap_minutes / 60.0

    light_raw = dict(env_raw.get("light", {}))
    for key in ("lamp_levels", "curtain_levels"):
        if key in light_raw:
            light_raw[key] = tuple(light_raw[key])
    light = _build(LightParams, light_raw, "environment.light")

    thermal_raw = dict(env_raw.get("thermal", {}))
    for key in ("ac_levels", "duration_levels", "win_levels", "curtain_levels"):
        if key in thermal_raw:
            thermal_raw[key] = tuple(thermal_raw[key])
    thermal_raw.setdefault("duration_cap_h", cap_h)
    thermal_raw.setdefault("curtain_levels", tuple(light.curtain_levels))
    thermal = _build(ThermalParams, thermal_raw, "environment.thermal")

    air_raw = dict(env_raw.get("air", {}))
    for key in ("purifier_levels", "duration_levels"):
        if key in air_raw:
            air_raw[key] = tuple(air_raw[key])
    air_raw.setdefault("duration_cap_h", cap_h)
    air_raw.setdefault("duration_levels", tuple(thermal.duration_levels))
    air = _build(AirParams, air_raw, "environment.air")

    occ_raw = dict(data.get("occupant", {}))
    prefs_raw = occ_raw.pop("preferences", None)
    prefs = {service: tuple((float(lo), float(hi)) for lo, hi in intervals)
             for service, intervals in (prefs_raw or DEFAULT_PREFERENCES).items()}
    for key in ("state_labels", "breathing_mg_s"):
        if key in occ_raw:
            occ_raw[key] = tuple(occ_raw[key])
    occupant = _build(OccupantModel, {**occ_raw, "preference_by_state": prefs}, "occupant")

    reward_raw = dict(data.get("reward", {}))
    reward = _build(RewardConfig, reward_raw, "reward")

    agent_raw = dict(data.get("agent", {}))
    if "hidden" in agent_raw:
        agent_raw["hidden"] = tuple(agent_raw["hidden"])
    agent = _build(AgentConfig, agent_raw, "agent")

    space_default = default_state_space(occupant.n_states)
    ranges = dict(space_default.ranges)
    for name, pair in data.get("state_ranges", {}).items():
        ranges[name] = (float(pair[0]), float(pair[1]))
    space = StateSpace(ranges=ranges, categorical=dict(space_default.categorical))

    rules_raw = data.get("rules", {})
    existing = []
    for entry in rules_raw.get("existing", []):
        existing.append(ExistingRule(
            rule_id=entry["id"],
            priority=int(entry.get("priority", 0)),
            conditions={s: (float(iv[0]), float(iv[1])) for s, iv in entry["conditions"].items()},
            conclusions=dict(entry["conclusions"])))

    output_raw = data.get("output", {})
    cfg = ExperimentConfig(
        seeds=[int(s) for s in data.get("seeds", [0])],
        steps=int(data.get("steps", 2000)),
        services=list(data.get("services", ["temperature", "air"])),
        arrangement=data.get("arrangement", "q_sum"),
        constraint=bool(data.get("constraint", False)),
        variants=list(data.get("variants", list(VARIANT_NAMES))),
        eval_fraction=float(data.get("eval_fraction", 0.2)),
        minutes_per_step=int(data.get("minutes_per_step", 5)),
        initial_tr=float(data.get("initial", {}).get("tr", 21.0)),
        initial_ar=float(data.get("initial", {}).get("ar", 420.0)),
        light=light, thermal=thermal, air=air,
        occupant=occupant, reward=reward, agent=agent, space=space,
        existing_rules=existing,
        merge_tolerance_frac=float(rules_raw.get("merge_tolerance_frac", 0.05)),
        corr_margin=float(rules_raw.get("corr_margin", 0.01)),
        output_dir=output_raw.get("dir", "out"),
        trace=bool(output_raw.get("trace", False)),
        save_stores=bool(output_raw.get("save_stores", True)),
    )
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return config_from_dict(raw)


def validate_config(cfg: ExperimentConfig) -> None:
    """Reject inconsistent configs before any simulation starts."""
    if cfg.steps < 1:
        raise ConfigError("steps must be >= 1")
    if not cfg.seeds:
        raise ConfigError("need at least one seed")
    if not cfg.variants:
        raise ConfigError("need at least one variant")
    for v in cfg.variants:
        if v not in VARIANT_NAMES:
            raise ConfigError(f"unknown variant {v!r}; expected one of {VARIANT_NAMES}")
    if cfg.arrangement not in ARRANGEMENTS:
        raise ConfigError(f"unknown arrangement {cfg.arrangement!r}")
    if not 0.0 < cfg.eval_fraction <= 1.0:
        raise ConfigError("eval_fraction must be in (0, 1]")
    if eval_window(cfg) > cfg.steps - 1:
        raise ConfigError("evaluation window needs at least one later step for rewards; "
                          "reduce eval_fraction or add steps")

    services = build_service_specs(cfg.services, cfg.light, cfg.thermal, cfg.air)
    known_actuators: dict[str, tuple] = {}
    for spec in services:
        for actuator, levels in spec.actuators.items():
            known_actuators.setdefault(actuator, levels)

    for service_id in (s.id for s in services):
        if service_id not in cfg.occupant.preference_by_state:
            raise ConfigError(f"no preference intervals for service {service_id!r}")
        monitored = {s.id: s.monitored_state for s in services}[service_id]
        lo_r, hi_r = cfg.space.ranges[monitored]
        for lo, hi in cfg.occupant.preference_by_state[service_id]:
            if lo < lo_r or hi > hi_r:
                raise ConfigError(
                    f"preference [{lo}, {hi}] for {service_id!r} lies outside the "
                    f"physical range [{lo_r}, {hi_r}] of {monitored!r}")

    seen_ids = set()
    for rule in cfg.existing_rules:
        if rule.rule_id in seen_ids:
            raise ConfigError(f"duplicate existing rule id {rule.rule_id!r}")
        seen_ids.add(rule.rule_id)
        for state in rule.conditions:
            if state not in cfg.space.ranges:
                raise ConfigError(f"rule {rule.rule_id!r}: unknown state {state!r}")
        for actuator, level in rule.conclusions.items():
            if actuator not in known_actuators:
                raise ConfigError(f"rule {rule.rule_id!r}: no configured service controls "
                                  f"actuator {actuator!r}")
            if level not in known_actuators[actuator]:
                raise ConfigError(f"rule {rule.rule_id!r}: level {level!r} outside the "
                                  f"level set of {actuator!r}")


def eval_window(cfg: ExperimentConfig) -> int:
    return max(1, int(round(cfg.steps * cfg.eval_fraction)))


# ---------------------------------------------------------------------------
# metrics


def accuracy_metrics(records: list[StepRecord], window: int,
                     service_ids: list[str]) -> dict[str, float]:
    """Per-service, all-services and average accuracy over the last steps.

    A step counts as correct for a service when the reward observed at the
    following step is positive; the window therefore ends one step before
    the last record. The average pools the per-service accuracies with the
    all-services accuracy.
    """
    if window < 1:
        raise ContractError("evaluation window must be >= 1")
    evaluable = len(records) - 1
    if window > evaluable:
        raise ContractError(f"window of {window} needs {window + 1} records, "
                            f"got {len(records)}")
    start = evaluable - window
    correct = {sid: 0 for sid in service_ids}
    all_correct = 0
    for i in range(start, evaluable):
        rewards = records[i + 1].rewards
        step_ok = True
        for sid in service_ids:
            if sid not in rewards:
                raise ContractError(f"record {i + 1} lacks a reward for service {sid!r}")
            if rewards[sid] > 0:
                correct[sid] += 1
            else:
                step_ok = False
        if step_ok:
            all_correct += 1
    out = {f"acc_{sid}": correct[sid] / window for sid in service_ids}
    out["acc_all"] = all_correct / window
    out["acc_avg"] = sum(out.values()) / len(out)
    return out


# ---------------------------------------------------------------------------
# runner


def build_system(cfg: ExperimentConfig, variant_name: str, seed: int) -> Orchestrator:
    """Assemble one full simulation stack for a (variant, seed) pair."""
    variant = SystemVariant(variant_name, cfg.arrangement, cfg.constraint)
    reward_cfg = replace(cfg.reward, constraint_enabled=variant.constraint)
    env = HomeEnvironment(cfg.light, cfg.thermal, cfg.air, cfg.occupant, reward_cfg,
                          seed=seed, minutes_per_step=cfg.minutes_per_step,
                          initial_tr=cfg.initial_tr, initial_ar=cfg.initial_ar)
    services = build_service_specs(cfg.services, cfg.light, cfg.thermal, cfg.air)
    store = RuleStore()
    if variant.uses_existing:
        for rule in cfg.existing_rules:
            store.add_existing(rule)
    return Orchestrator(env, services, variant, cfg.agent, cfg.space, store=store,
                        seed=seed, merge_tolerance_frac=cfg.merge_tolerance_frac,
                        corr_margin=cfg.corr_margin)


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None,
                   progress=None) -> MetricsReport:
    """Run every (variant, seed) pair and write metrics, traces and stores."""
    validate_config(cfg)
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    window = eval_window(cfg)
    service_ids = list(cfg.services)

    entries: list[MetricsEntry] = []
    for variant_name in cfg.variants:
        for seed in cfg.seeds:
            started = time.perf_counter()
            orch = build_system(cfg, variant_name, seed)
            if cfg.trace:
                traces = out / "traces"
                traces.mkdir(exist_ok=True)
                with open(traces / f"{variant_name}-{seed}.jsonl", "w", encoding="utf-8") as fh:
                    records = orch.run(cfg.steps, on_record=lambda rec: fh.write(
                        json.dumps(rec.to_dict(), sort_keys=True) + "\n"))
            else:
                records = orch.run(cfg.steps)
            metrics = accuracy_metrics(records, window, service_ids)
            if cfg.save_stores and (orch.variant.uses_extracted or orch.variant.uses_existing):
                stores = out / "stores"
                stores.mkdir(exist_ok=True)
                orch.store.save(stores / f"{variant_name}-{seed}.json")
            elapsed = time.perf_counter() - started
            entry = MetricsEntry(variant_name, seed, metrics, cfg.steps, elapsed)
            entries.append(entry)
            if progress is not None:
                progress(entry)

    csv_path = out / "metrics.csv"
    write_metrics_csv(csv_path, entries, service_ids)
    return MetricsReport(entries=entries, csv_path=str(csv_path))


def metric_order(service_ids: list[str]) -> list[str]:
    return [f"acc_{sid}" for sid in service_ids] + ["acc_all", "acc_avg"]


def write_metrics_csv(path, entries: list[MetricsEntry], service_ids: list[str]) -> None:
    """Stable schema: one row per variant x seed x metric, accuracies in [0, 1]."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for entry in entries:
            for metric in metric_order(service_ids):
                writer.writerow([entry.variant, entry.seed, metric,
                                 repr(entry.metrics[metric])])


def read_trace(path) -> list[StepRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            records.append(StepRecord(
                step=d["step"], hour=d["hour"], observation=d["observation"],
                epsilon=d["epsilon"], proposals=d["proposals"], conflicts=d["conflicts"],
                actions=d["actions"], sources=d["sources"], rule_ids=d["rule_ids"],
                rewards=d["rewards"], rule_events=d["rule_events"]))
    return records
