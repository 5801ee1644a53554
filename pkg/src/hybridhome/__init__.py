"""Hybrid smart home control: learned agents, interval rules, one arbiter.

Services regulate indoor light, temperature and air quality by setting
discrete actuator levels each step. Three mechanisms propose levels
(hand-authored rules, rules extracted from the learners, and per-service
Q-learning agents); a fixed-priority decision maker arbitrates; rules are
extracted whenever the simulated occupant is satisfied with learner-sourced
actions and deleted when a rule-sourced action disappoints.
"""

from .agents import (AgentConfig, DQNAgent, ReplayBuffer, Transition,
                     assign_actuators_rsaba, combine_shared_vfap, select_actions)
from .env import (AirParams, HomeEnvironment, LightParams, OccupantModel,
                  RewardConfig, SimClock, ThermalParams, WorldState,
                  gen_inhabitant_state, outdoor_air, outdoor_light, outdoor_temp,
                  preference_target, reward, step_air, step_light, step_temperature)
from .harness import (ExperimentConfig, MetricsReport, accuracy_metrics,
                      build_system, config_from_dict, default_config_dict,
                      load_config, run_experiment, validate_config)
from .orchestrator import (ActionProposal, Orchestrator, PendingLedger, StepRecord,
                           SystemVariant, apply_rule_triggers, decide)
from .rules import (Conclusion, ExistingRule, ExtractedRule, RuleStore, StateCondition,
                    delete_rule, existing_match, extracted_infer, generalize,
                    make_instance_rule, merge_rules, ppmcc)
from .services import ServiceSpec, StateSpace, build_service_specs, default_state_space

__version__ = "0.1.0"
