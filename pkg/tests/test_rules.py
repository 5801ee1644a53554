import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridhome.errors import (ConfigError, ContractError, ProtectedRuleError,
                               RuleNotFoundError)
from hybridhome.rules import (Conclusion, ExistingRule, ExtractedRule, ExistingMatch,
                              RuleStore, StateCondition, delete_rule, existing_match,
                              extracted_infer, generalize, make_instance_rule,
                              merge_rules, ppmcc, render_rule)
from hybridhome.services import ServiceSpec

LIGHT = ServiceSpec(id="light", monitored_state="lr", inputs=("us", "le"),
                    actuators={"lp": (0, 1, 2, 3, 4), "cur": (0.0, 0.5, 1.0)},
                    complexity=1)

TRIPLE = ServiceSpec(id="temperature", monitored_state="tr", inputs=("a", "b", "c"),
                     actuators={"ac": (-1, 0, 1)}, complexity=2)


def rule(service_id, rid, conditions, conclusions, merge_count=1):
    return ExtractedRule(
        rule_id=rid, service_id=service_id,
        conditions=tuple(StateCondition(s, lo, avg, hi) for s, (lo, avg, hi) in conditions),
        conclusions=tuple(Conclusion(a, lvl, cnt) for a, (lvl, cnt) in conclusions),
        merge_count=merge_count)


# ---------------------------------------------------------------------------
# instance rules


def test_instance_rule_transcribes_observation():
    instance = make_instance_rule(LIGHT, {"us": 2, "le": 300.0}, {"lp": 1, "cur": 0.0}, "r1")
    assert [c.state for c in instance.conditions] == ["us", "le"]
    for cond, value in zip(instance.conditions, (2.0, 300.0)):
        assert (cond.min, cond.avg, cond.max) == (value, value, value)
    assert {c.actuator: (c.level, c.count) for c in instance.conclusions} == {
        "lp": (1, 1), "cur": (0.0, 1)}
    assert instance.merge_count == 1


def test_instance_rule_requires_actions():
    with pytest.raises(ContractError):
        make_instance_rule(LIGHT, {"us": 2, "le": 300.0}, {}, "r1")


def test_instance_rule_requires_complete_observation():
    with pytest.raises(ContractError):
        make_instance_rule(LIGHT, {"us": 2}, {"lp": 1}, "r1")


def test_instance_rule_rejects_foreign_actuator():
    with pytest.raises(ContractError):
        make_instance_rule(LIGHT, {"us": 2, "le": 300.0}, {"ap": 60}, "r1")


def test_instance_rule_deterministic_modulo_id():
    a = make_instance_rule(LIGHT, {"us": 1, "le": 10.0}, {"lp": 2, "cur": 1.0}, "A")
    b = make_instance_rule(LIGHT, {"us": 1, "le": 10.0}, {"lp": 2, "cur": 1.0}, "B")
    assert a.conditions == b.conditions
    assert a.conclusions == b.conclusions


# ---------------------------------------------------------------------------
# generalization


def one_state_service():
    return ServiceSpec(id="svc", monitored_state="x", inputs=("us",),
                       actuators={"lp": (0, 1, 2)}, complexity=1)


def test_generalize_weighted_mean():
    svc = one_state_service()
    store = RuleStore()
    store.add_extracted(rule("svc", "r0", [("us", (1.0, 1.5, 2.0))], [("lp", (1, 2))],
                             merge_count=2))
    instance = make_instance_rule(svc, {"us": 3.0}, {"lp": 1}, "r1")
    covering = generalize(instance, store, {"us": 1.0})
    assert covering == "r0"
    assert len(store.extracted) == 1
    merged = store.extracted[0]
    cond = merged.conditions[0]
    assert (cond.min, cond.max) == (1.0, 3.0)
    assert cond.avg == pytest.approx(2.0)
    assert merged.merge_count == 3
    assert merged.conclusions[0].count == 3


def test_generalize_different_conclusions_inserts():
    svc = one_state_service()
    store = RuleStore()
    store.add_extracted(rule("svc", "r0", [("us", (1.0, 1.5, 2.0))], [("lp", (1, 2))]))
    instance = make_instance_rule(svc, {"us": 1.5}, {"lp": 2}, "r1")
    covering = generalize(instance, store, {"us": 1.0})
    assert covering == "r1"
    assert len(store.extracted) == 2


def test_generalize_outside_tolerance_inserts():
    svc = one_state_service()
    store = RuleStore()
    store.add_extracted(rule("svc", "r0", [("us", (1.0, 1.5, 2.0))], [("lp", (1, 2))]))
    instance = make_instance_rule(svc, {"us": 3.5}, {"lp": 1}, "r1")
    assert generalize(instance, store, {"us": 1.0}) == "r1"
    assert len(store.extracted) == 2


def test_generalize_inside_interval_updates_avg_only():
    svc = one_state_service()
    store = RuleStore()
    store.add_extracted(rule("svc", "r0", [("us", (1.0, 2.0, 3.0))], [("lp", (1, 4))],
                             merge_count=4))
    instance = make_instance_rule(svc, {"us": 1.0}, {"lp": 1}, "r1")
    generalize(instance, store, {"us": 0.0})
    merged = store.extracted[0]
    cond = merged.conditions[0]
    assert (cond.min, cond.max) == (1.0, 3.0)
    assert cond.avg == pytest.approx((2.0 * 4 + 1.0) / 5)
    assert merged.merge_count == 5


def test_generalize_never_changes_conclusion_levels():
    svc = one_state_service()
    store = RuleStore()
    store.add_extracted(rule("svc", "r0", [("us", (0.0, 1.0, 2.0))], [("lp", (2, 3))]))
    before = [(c.actuator, c.level) for c in store.extracted[0].conclusions]
    instance = make_instance_rule(svc, {"us": 1.0}, {"lp": 2}, "r1")
    generalize(instance, store, {"us": 0.5})
    after = [(c.actuator, c.level) for c in store.extracted[0].conclusions]
    assert before == after


def test_generalize_shadow_values_random_sequences(rng):
    """Rule averages always equal the plain mean of the absorbed raw values."""
    svc = one_state_service()
    for _ in range(200):
        store = RuleStore()
        shadow: dict[str, list[float]] = {}
        for _ in range(12):
            value = float(rng.integers(0, 8))
            level = int(rng.integers(0, 3))
            instance = make_instance_rule(svc, {"us": value}, {"lp": level},
                                          store.next_rule_id())
            rid = generalize(instance, store, {"us": 1.0})
            shadow.setdefault(rid, []).append(value)
        for stored in store.extracted:
            values = shadow[stored.rule_id]
            cond = stored.conditions[0]
            assert cond.avg == pytest.approx(sum(values) / len(values), abs=1e-9)
            assert cond.min == min(values)
            assert cond.max == max(values)
            assert stored.merge_count == len(values)


# ---------------------------------------------------------------------------
# merging


def test_merge_envelope():
    store = RuleStore()
    store.add_extracted(rule("svc", "r0", [("us", (0.0, 1.0, 2.0))], [("lp", (1, 1))]))
    store.add_extracted(rule("svc", "r1", [("us", (1.0, 2.0, 3.0))], [("lp", (1, 1))]))
    merge_rules(store)
    assert len(store.extracted) == 1
    cond = store.extracted[0].conditions[0]
    assert (cond.min, cond.max) == (0.0, 3.0)
    assert cond.avg == pytest.approx(1.5)
    assert store.extracted[0].merge_count == 2


def test_merge_disjoint_untouched():
    store = RuleStore()
    store.add_extracted(rule("svc", "r0", [("us", (0.0, 0.5, 1.0))], [("lp", (1, 1))]))
    store.add_extracted(rule("svc", "r1", [("us", (5.0, 5.5, 6.0))], [("lp", (1, 1))]))
    assert merge_rules(store) == 0
    assert len(store.extracted) == 2


def test_merge_requires_matching_conclusions():
    store = RuleStore()
    store.add_extracted(rule("svc", "r0", [("us", (0.0, 1.0, 2.0))], [("lp", (1, 1))]))
    store.add_extracted(rule("svc", "r1", [("us", (1.0, 2.0, 3.0))], [("lp", (2, 1))]))
    assert merge_rules(store) == 0


def test_merge_is_idempotent():
    store = RuleStore()
    store.add_extracted(rule("svc", "r0", [("us", (0.0, 1.0, 2.0))], [("lp", (1, 2))]))
    store.add_extracted(rule("svc", "r1", [("us", (1.0, 2.0, 3.0))], [("lp", (1, 3))]))
    store.add_extracted(rule("svc", "r2", [("us", (2.5, 3.0, 4.0))], [("lp", (1, 1))]))
    merge_rules(store)
    snapshot = [(r.rule_id, r.conditions, r.conclusions, r.merge_count)
                for r in store.extracted]
    merge_rules(store)
    assert snapshot == [(r.rule_id, r.conditions, r.conclusions, r.merge_count)
                        for r in store.extracted]


# -- independent all-orders oracle ------------------------------------------


def _o_fusable(a, b):
    if a["service"] != b["service"] or a["sig"] != b["sig"]:
        return False
    return all(a["conds"][s][0] <= b["conds"][s][2] and b["conds"][s][0] <= a["conds"][s][2]
               for s in a["conds"])


def _o_fuse(a, b):
    conds = {}
    ma, mb = a["m"], b["m"]
    for s in a["conds"]:
        lo1, av1, hi1 = a["conds"][s]
        lo2, av2, hi2 = b["conds"][s]
        conds[s] = (min(lo1, lo2), (av1 * ma + av2 * mb) / (ma + mb), max(hi1, hi2))
    counts = {k: a["counts"][k] + b["counts"][k] for k in a["counts"]}
    return {"service": a["service"], "sig": a["sig"], "conds": conds,
            "counts": counts, "m": ma + mb}


def _o_canonical(rules):
    out = []
    for r in rules:
        conds = tuple(sorted((s, lo, round(avg, 9), hi)
                             for s, (lo, avg, hi) in r["conds"].items()))
        counts = tuple(sorted(r["counts"].items()))
        out.append((r["service"], r["sig"], conds, counts, r["m"]))
    return frozenset(out)


def _o_all_orders(rules):
    finals = set()

    def explore(current):
        pairs = [(i, j) for i in range(len(current)) for j in range(i + 1, len(current))
                 if _o_fusable(current[i], current[j])]
        if not pairs:
            finals.add(_o_canonical(current))
            return
        for i, j in pairs:
            rest = [r for k, r in enumerate(current) if k not in (i, j)]
            explore(rest + [_o_fuse(current[i], current[j])])

    explore(list(rules))
    return finals


def _as_oracle_form(stored: ExtractedRule):
    return {"service": stored.service_id,
            "sig": stored.conclusion_signature(),
            "conds": {c.state: (c.min, c.avg, c.max) for c in stored.conditions},
            "counts": {c.actuator: c.count for c in stored.conclusions},
            "m": stored.merge_count}


def _random_store(rng, n_rules, n_states):
    states = ["s0", "s1", "s2"][:n_states]
    store = RuleStore()
    for k in range(n_rules):
        conds = []
        for s in states:
            lo = float(rng.integers(0, 6))
            hi = lo + float(rng.integers(0, 4))
            avg = lo + (hi - lo) * float(rng.uniform())
            conds.append((s, (lo, avg, hi)))
        level = int(rng.integers(0, 2))
        count = int(rng.integers(1, 5))
        store.add_extracted(rule("svc", f"r{k}", conds, [("lp", (level, count))],
                                 merge_count=int(rng.integers(1, 4))))
    return store


def test_merge_matches_all_orders_oracle(rng):
    for _ in range(150):
        n_rules = int(rng.integers(2, 5))
        n_states = int(rng.integers(1, 4))
        store = _random_store(rng, n_rules, n_states)
        oracle_results = _o_all_orders([_as_oracle_form(r) for r in store.extracted])
        merge_rules(store)
        got = _o_canonical([_as_oracle_form(r) for r in store.extracted])
        assert len(oracle_results) == 1, "fusion order changed the oracle's fixed point"
        assert got == next(iter(oracle_results))


def test_three_overlapping_rules_collapse():
    store = RuleStore()
    store.add_extracted(rule("svc", "r0", [("us", (0.0, 0.5, 1.0))], [("lp", (1, 1))]))
    store.add_extracted(rule("svc", "r1", [("us", (0.8, 1.2, 2.0))], [("lp", (1, 1))]))
    store.add_extracted(rule("svc", "r2", [("us", (1.8, 2.2, 3.0))], [("lp", (1, 1))]))
    merge_rules(store)
    assert len(store.extracted) == 1
    cond = store.extracted[0].conditions[0]
    assert (cond.min, cond.max) == (0.0, 3.0)


# ---------------------------------------------------------------------------
# deletion


def test_delete_only_extracted_rule():
    store = RuleStore()
    store.add_extracted(rule("svc", "r0", [("us", (0.0, 0.5, 1.0))], [("lp", (1, 1))]))
    delete_rule(store, "r0")
    assert store.extracted == []
    assert (-1, "r0", "deleted") in store.log


def test_delete_then_infer_reports_no_match():
    store = RuleStore()
    store.add_extracted(rule("light", "r0", [("us", (0.0, 0.5, 1.0)),
                                             ("le", (0.0, 10.0, 20.0))],
                             [("lp", (1, 1))]))
    delete_rule(store, "r0")
    assert extracted_infer(store.extracted_for("light"), {"us": 0.5, "le": 5.0}, LIGHT) is None


def test_delete_unknown_rule():
    store = RuleStore()
    with pytest.raises(RuleNotFoundError):
        delete_rule(store, "nope")


def test_delete_existing_rule_forbidden():
    store = RuleStore()
    store.add_existing(ExistingRule("keep", {"tr": (0.0, 10.0)}, {"ac": 1}))
    with pytest.raises(ProtectedRuleError):
        delete_rule(store, "keep")


# ---------------------------------------------------------------------------
# existing rule matching


def test_existing_match_none():
    rules = [ExistingRule("a", {"tr": (0.0, 10.0)}, {"ac": 1})]
    res = existing_match(rules, {"tr": 20.0})
    assert res.proposals == {}
    assert not res.conflicts


def test_existing_match_single():
    rules = [ExistingRule("a", {"tr": (0.0, 10.0)}, {"lp": 2})]
    res = existing_match(rules, {"tr": 5.0})
    assert res.proposals == {"lp": (2, "a")}


def test_existing_match_equal_priority_conflict():
    rules = [ExistingRule("a", {"tr": (0.0, 10.0)}, {"lp": 1}),
             ExistingRule("b", {"tr": (0.0, 10.0)}, {"lp": 3})]
    res = existing_match(rules, {"tr": 5.0})
    assert res.conflicts == {"lp"}
    assert "lp" not in res.proposals


def test_existing_match_priority_wins():
    rules = [ExistingRule("a", {"tr": (0.0, 10.0)}, {"lp": 1}, priority=1),
             ExistingRule("b", {"tr": (0.0, 10.0)}, {"lp": 3}, priority=0)]
    res = existing_match(rules, {"tr": 5.0})
    assert res.proposals == {"lp": (1, "a")}
    assert not res.conflicts


def test_existing_match_agreeing_rules_no_conflict():
    rules = [ExistingRule("a", {"tr": (0.0, 10.0)}, {"lp": 1}),
             ExistingRule("b", {"tr": (2.0, 12.0)}, {"lp": 1})]
    res = existing_match(rules, {"tr": 5.0})
    assert res.proposals["lp"][0] == 1


def test_existing_match_exhaustive_fixture(rng):
    """Compare against a brute-force matcher over random observations."""
    rules = [
        ExistingRule("a", {"x": (0.0, 5.0)}, {"d": 1}, priority=0),
        ExistingRule("b", {"x": (3.0, 8.0)}, {"d": 2}, priority=0),
        ExistingRule("c", {"x": (4.0, 9.0)}, {"d": 2}, priority=1),
        ExistingRule("e", {"x": (7.0, 12.0)}, {"g": 5}, priority=0),
    ]
    for _ in range(300):
        x = float(rng.uniform(-1, 13))
        res = existing_match(rules, {"x": x})
        matched = [r for r in rules if r.conditions["x"][0] <= x <= r.conditions["x"][1]]
        for actuator in {"d", "g"}:
            entries = [(r.priority, r.conclusions[actuator]) for r in matched
                       if actuator in r.conclusions]
            if not entries:
                assert actuator not in res.proposals
                continue
            top = max(p for p, _ in entries)
            levels = {lvl for p, lvl in entries if p == top}
            if len(levels) > 1:
                assert actuator in res.conflicts
            else:
                assert res.proposals[actuator][0] == levels.pop()


# ---------------------------------------------------------------------------
# correlation


def test_ppmcc_perfect_linear():
    assert ppmcc([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)


def test_ppmcc_perfect_inverse():
    assert ppmcc([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_ppmcc_hand_value():
    assert ppmcc([1, 2, 3], [1, 2, 4]) == pytest.approx(0.9820, abs=1e-4)


def test_ppmcc_zero_variance():
    assert ppmcc([1, 1, 1], [1, 2, 3]) == 0.0
    assert ppmcc([1, 2, 3], [5, 5, 5]) == 0.0


def test_ppmcc_contract_errors():
    with pytest.raises(ContractError):
        ppmcc([1, 2], [1, 2, 3])
    with pytest.raises(ContractError):
        ppmcc([1], [2])


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=8),
       st.floats(0.1, 10), st.floats(-50, 50))
@settings(max_examples=200)
def test_ppmcc_symmetry_and_affine_invariance(xs, scale, shift):
    ys = [2.0 * v + 1.0 for v in xs]
    base = ppmcc(xs, ys)
    assert ppmcc(ys, xs) == pytest.approx(base, abs=1e-12)
    transformed = [scale * v + shift for v in xs]
    assert ppmcc(transformed, ys) == pytest.approx(base, abs=1e-6)


# ---------------------------------------------------------------------------
# extracted-rule inference


def triple_rule(rid, avgs, width, level, counts):
    conds = [(s, (a - width, a, a + width)) for s, a in zip(("a", "b", "c"), avgs)]
    return rule("temperature", rid, conds, [("ac", (level, counts))])


def test_infer_empty_store():
    assert extracted_infer([], {"a": 1, "b": 2, "c": 3}, TRIPLE) is None


def test_infer_single_containing_rule():
    r = triple_rule("r0", (1.0, 2.0, 3.0), 0.5, 1, 4)
    out = extracted_infer([r], {"a": 1.2, "b": 2.1, "c": 2.8}, TRIPLE)
    assert out == {"ac": (1, "r0")}


def test_infer_instance_matches_itself():
    instance = make_instance_rule(TRIPLE, {"a": 1.0, "b": 2.0, "c": 3.0}, {"ac": 0}, "r0")
    out = extracted_infer([instance], {"a": 1.0, "b": 2.0, "c": 3.0}, TRIPLE)
    assert out == {"ac": (0, "r0")}


def test_infer_correlation_dominant():
    # both rules contain the observation; correlations are +0.98 and -1
    r_close = rule("temperature", "close",
                   [("a", (0.0, 1.0, 2.0)), ("b", (1.0, 2.0, 3.0)), ("c", (2.0, 4.0, 5.0))],
                   [("ac", (1, 1))])
    r_far = rule("temperature", "far",
                 [("a", (0.0, 3.0, 4.0)), ("b", (1.0, 2.0, 3.0)), ("c", (0.0, 1.0, 4.0))],
                 [("ac", (-1, 1))])
    obs = {"a": 1.0, "b": 2.0, "c": 3.0}
    assert ppmcc([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]) == pytest.approx(0.9820, abs=1e-4)
    assert ppmcc([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == pytest.approx(-1.0)
    out = extracted_infer([r_far, r_close], obs, TRIPLE, corr_margin=0.05)
    assert out == {"ac": (1, "close")}


def test_infer_count_fallback_on_tied_correlation():
    # averages are affine images of each other, so both correlate at exactly 1
    r_small = triple_rule("small", (1.0, 2.0, 3.0), 5.0, 1, 3)
    r_big = triple_rule("big", (2.0, 4.0, 6.0), 5.0, -1, 7)
    obs = {"a": 1.0, "b": 2.0, "c": 3.0}
    out = extracted_infer([r_small, r_big], obs, TRIPLE, corr_margin=0.01)
    assert out == {"ac": (-1, "big")}


def test_infer_falls_back_to_all_rules_when_nothing_contains():
    r_close = triple_rule("close", (10.0, 20.0, 30.0), 0.5, 1, 1)
    r_far = triple_rule("far", (30.0, 20.0, 10.0), 0.5, 0, 1)
    obs = {"a": 1.0, "b": 2.0, "c": 3.0}  # outside both rules' intervals
    out = extracted_infer([r_far, r_close], obs, TRIPLE, corr_margin=0.05)
    assert out == {"ac": (1, "close")}


def test_infer_is_deterministic():
    rules = [triple_rule("r0", (1.0, 2.0, 3.0), 1.0, 1, 2),
             triple_rule("r1", (1.5, 2.5, 3.5), 1.0, 0, 5)]
    obs = {"a": 1.4, "b": 2.4, "c": 3.4}
    first = extracted_infer(rules, obs, TRIPLE)
    for _ in range(20):
        assert extracted_infer(rules, obs, TRIPLE) == first


# ---------------------------------------------------------------------------
# store persistence and rendering


def test_store_round_trip(tmp_path):
    store = RuleStore()
    store.add_existing(ExistingRule("keep", {"tr": (0.5, 10.25)}, {"ac": 1}, priority=2))
    store.add_extracted(rule("svc", "r0",
                             [("us", (0.1234567890123, 1.111, 2.999999999))],
                             [("lp", (1, 3))], merge_count=4), step=7)
    delete_marker = store.next_rule_id()
    path = tmp_path / "store.json"
    store.save(path)
    loaded = RuleStore.load(path)
    assert loaded.to_dict() == store.to_dict()
    assert loaded.extracted[0].conditions == store.extracted[0].conditions
    assert loaded.next_rule_id() == store.next_rule_id()
    assert delete_marker not in (loaded.next_rule_id(),)


def test_store_rejects_duplicate_ids():
    store = RuleStore()
    store.add_extracted(rule("svc", "r0", [("us", (0, 0, 0))], [("lp", (1, 1))]))
    with pytest.raises(ConfigError):
        store.add_extracted(rule("svc", "r0", [("us", (1, 1, 1))], [("lp", (1, 1))]))
    with pytest.raises(ConfigError):
        store.add_existing(ExistingRule("r0", {"tr": (0, 1)}, {"ac": 0}))


def test_condition_invariant_enforced():
    with pytest.raises(ContractError):
        StateCondition("us", 2.0, 1.0, 3.0)
    with pytest.raises(ContractError):
        Conclusion("lp", 1, 0)


def test_render_rule_shows_intervals_and_counts():
    r = rule("svc", "r9", [("us", (1.0, 1.5, 2.0))], [("lp", (3, 4))], merge_count=2)
    text = render_rule(r)
    assert "us in [1, 2] (avg 1.5)" in text
    assert "lp=3 (count 4)" in text
