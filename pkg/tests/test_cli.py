import json

import pytest

from hybridhome.cli import main
from hybridhome.harness import default_config_path
from hybridhome.rules import (Conclusion, ExistingRule, ExtractedRule, RuleStore,
                              StateCondition)


def write_tiny_config(path):
    cfg = json.loads(default_config_path().read_text())
    cfg["steps"] = 30
    cfg["seeds"] = [3]
    cfg["variants"] = ["random"]
    cfg["eval_fraction"] = 0.2
    cfg["output"]["trace"] = True
    path.write_text(json.dumps(cfg))
    return path


def sample_store(path):
    store = RuleStore()
    store.add_existing(ExistingRule("hot", {"tr": (24.5, 60.0)}, {"ac": -1}, priority=1))
    store.add_extracted(ExtractedRule(
        rule_id="x1", service_id="temperature",
        conditions=(StateCondition("us", 1.0, 1.0, 1.0),
                    StateCondition("te", 18.0, 19.5, 21.0),
                    StateCondition("tr", 20.0, 20.5, 21.0)),
        conclusions=(Conclusion("ac", 0, 3),), merge_count=3))
    store.save(path)
    return path


def test_validate_default_config(capsys):
    assert main(["validate", str(default_config_path())]) == 0
    assert "OK" in capsys.readouterr().out


def test_validate_missing_file_exit_code(tmp_path, capsys):
    missing = tmp_path / "absent.json"
    assert main(["validate", str(missing)]) == 1
    assert "absent.json" in capsys.readouterr().err


def test_run_missing_config_mentions_path(tmp_path, capsys):
    missing = tmp_path / "gone.json"
    assert main(["run", str(missing)]) == 1
    assert "gone.json" in capsys.readouterr().err


def test_unknown_flag_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--bogus-flag"])
    assert exc.value.code == 2


def test_unknown_command_exits_two():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_run_and_replay_round_trip(tmp_path, capsys):
    cfg_path = write_tiny_config(tmp_path / "cfg.json")
    out_dir = tmp_path / "results"
    assert main(["run", str(cfg_path), "--out", str(out_dir), "--quiet"]) == 0
    assert (out_dir / "metrics.csv").exists()
    capsys.readouterr()

    trace = out_dir / "traces" / "random-3.jsonl"
    assert trace.exists()
    assert main(["replay", str(trace)]) == 0
    out = capsys.readouterr().out
    assert "30 steps" in out
    assert "acc_avg" in out


def test_rules_show_renders_rule_blocks(tmp_path, capsys):
    store_path = sample_store(tmp_path / "store.json")
    assert main(["rules", "show", str(store_path)]) == 0
    out = capsys.readouterr().out
    assert "rule hot [existing, priority 1]" in out
    assert "rule x1 [service temperature, merged 3]" in out
    assert "te in [18, 21] (avg 19.5)" in out
    assert "ac=0 (count 3)" in out


def test_rules_dump_emits_json(tmp_path, capsys):
    store_path = sample_store(tmp_path / "store.json")
    assert main(["rules", "dump", str(store_path)]) == 0
    parsed = json.loads(capsys.readouterr().out)
    assert parsed["version"] == 1
    assert len(parsed["existing"]) == 1 and len(parsed["extracted"]) == 1


def test_rules_show_missing_store(tmp_path, capsys):
    assert main(["rules", "show", str(tmp_path / "none.json")]) == 1
    assert "none.json" in capsys.readouterr().err


def test_replay_missing_trace(tmp_path, capsys):
    assert main(["replay", str(tmp_path / "none.jsonl")]) == 1
    assert "none.jsonl" in capsys.readouterr().err
