import json
import shutil

import pytest

from usersim.cli import main
from usersim.config import ConfigError, config_from_dict, load_config, substitute_env

from conftest import CAMPAIGN, DATA, persona_json


def write_config(tmp_path, backends, **extra):
    cfg = {"backends": backends, "clock": "logical", "retry": {"max_attempts": 1}, **extra}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def scripted(tmp_path, name, script):
    path = tmp_path / name
    path.write_text(json.dumps(script))
    return {"kind": "scripted", "script_path": name, "model_label": name.split(".")[0]}


def lines(path):
    return [json.loads(x) for x in path.read_text().splitlines()]


def test_generate_batch_of_three(tmp_path):
    gen = scripted(tmp_path, "gen.json", [persona_json(gender=g) for g in ("female", "male", "diverse")])
    cfg = write_config(tmp_path, {"generator": gen}, generation={"batch_size": 3})
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    rows = lines(tmp_path / "out" / "personas.jsonl")
    assert [r["id"] for r in rows] == ["gen-001", "gen-002", "gen-003"]
    stats = json.loads((tmp_path / "out" / "statistics.json").read_text())
    assert stats["total_personas"] == 3


def test_generate_fixture_batch_matches_degree_table(tmp_path):
    cfg = CAMPAIGN / "config.json"
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    stats = json.loads((tmp_path / "statistics.json").read_text())
    assert stats["counts"]["desired_degree"] == {"Bachelor": 33, "Master": 44, "Exchange student": 14, "not sure": 9}
    assert (tmp_path / "personas.jsonl").read_bytes() == (DATA / "personas_gpt-o1.jsonl").read_bytes()


def test_generate_unreachable_http(tmp_path, caplog):
    http = {"kind": "http", "base_url": "http://127.0.0.1:9/v1", "model_label": "gpt-4o"}
    cfg = write_config(tmp_path, {"generator": http}, generation={"batch_size": 2})
    out = tmp_path / "out"
    assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 1
    assert (out / "personas.jsonl").read_text() == ""
    assert not list(out.glob("*.tmp"))
    assert "generation aborted" in caplog.text


def test_generate_partial_batch(tmp_path):
    gen = scripted(tmp_path, "gen.json", [persona_json(), "junk", "junk", "junk"])
    cfg = write_config(tmp_path, {"generator": gen}, generation={"batch_size": 3})
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 1
    assert len(lines(tmp_path / "out" / "personas.jsonl")) == 1


def test_batch_size_flag_overrides(tmp_path):
    gen = scripted(tmp_path, "gen.json", [persona_json()] * 5)
    cfg = write_config(tmp_path, {"generator": gen}, generation={"batch_size": 5})
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--batch-size", "2"]) == 0
    assert len(lines(tmp_path / "o" / "personas.jsonl")) == 2


@pytest.mark.parametrize(
    "content",
    [
        "{not json",
        json.dumps({"backends": {"user": {"kind": "carrier-pigeon"}}}),
        json.dumps({"backends": {"user": {"kind": "http"}}}),
        json.dumps({"backends": {"user": {"kind": "scripted"}}}),
        json.dumps({"backends": {}, "parallel_sessions": 0}),
    ],
)
def test_bad_config_exit_2(tmp_path, content):
    path = tmp_path / "c.json"
    path.write_text(content)
    assert main(["generate", "--config", str(path), "--out", str(tmp_path)]) == 2


def test_missing_config_exit_2(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--personas", "x"]) == 2


def test_env_substitution(tmp_path):
    assert substitute_env({"a": ["${X}-y"]}, {"X": "1"}) == {"a": ["1-y"]}
    with pytest.raises(ConfigError):
        substitute_env("${MISSING_VAR}", {})
    cfg = config_from_dict(
        {"backends": {"user": {"kind": "http", "base_url": "${URL}", "model_label": "m"}}}, tmp_path, {"URL": "http://h"}
    )
    assert cfg.backend("user").base_url == "http://h"


def test_config_resolves_paths_and_overrides():
    cfg = load_config(CAMPAIGN / "config.json")
    assert cfg.backend("user").script_path == str(CAMPAIGN / "user_script.json")
    assert cfg.clock == "logical" and cfg.generation.model_label == "gpt-o1"
    over = cfg.with_overrides(max_turns=8, parallel_sessions=4, batch_size=None)
    assert over.session.max_turns == 8 and over.parallel_sessions == 4
    assert over.generation.batch_size == cfg.generation.batch_size


def test_simulate_campaign_fixture(tmp_path, capsys):
    code = main(["simulate", "--config", str(CAMPAIGN / "config.json"),
                 "--personas", str(CAMPAIGN / "personas.jsonl"), "--out", str(tmp_path)])
    assert code == 0
    assert "success=47" in capsys.readouterr().out
    assert (tmp_path / "sessions.jsonl").read_bytes() == (CAMPAIGN / "sessions.jsonl").read_bytes()
    assert not (tmp_path / "sessions.jsonl.partial").exists()


def test_simulate_parallel_matches_sequential(tmp_path):
    code = main(["simulate", "--config", str(CAMPAIGN / "config.json"), "--personas", str(CAMPAIGN / "personas.jsonl"),
                 "--out", str(tmp_path), "--parallel-sessions", "6"])
    assert code == 0
    assert (tmp_path / "sessions.jsonl").read_bytes() == (CAMPAIGN / "sessions.jsonl").read_bytes()


def _three_persona_setup(tmp_path):
    personas = (CAMPAIGN / "personas.jsonl").read_text().splitlines()[:3]
    pfile = tmp_path / "personas.jsonl"
    pfile.write_text("\n".join(personas) + "\n")
    shutil.copy(CAMPAIGN / "user_script.json", tmp_path / "user_script.json")
    shutil.copy(CAMPAIGN / "judge_script.json", tmp_path / "judge_script.json")
    cfg = write_config(tmp_path, {
        "user": {"kind": "scripted", "script_path": "user_script.json"},
        "judge": {"kind": "scripted", "script_path": "judge_script.json"},
    })
    return cfg, pfile


def test_simulate_three_personas_deterministic(tmp_path):
    cfg, pfile = _three_persona_setup(tmp_path)
    for out in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--personas", str(pfile), "--out", str(tmp_path / out)]) == 0
    a = (tmp_path / "a" / "sessions.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "sessions.jsonl").read_bytes()
    assert sum(1 for x in lines(tmp_path / "a" / "sessions.jsonl") if x["type"] == "session") == 3


def test_simulate_skips_invalid_persona(tmp_path, caplog):
    cfg, pfile = _three_persona_setup(tmp_path)
    rows = pfile.read_text().splitlines()
    broken = json.loads(rows[1])
    broken["desired_degree"] = "PhD"
    pfile.write_text("\n".join([rows[0], json.dumps(broken), rows[2]]) + "\n")
    assert main(["simulate", "--config", str(cfg), "--personas", str(pfile), "--out", str(tmp_path / "o")]) == 0
    headers = [x for x in lines(tmp_path / "o" / "sessions.jsonl") if x["type"] == "session"]
    assert [h["persona_id"] for h in headers] == [json.loads(rows[0])["id"], json.loads(rows[2])["id"]]
    assert "skipping persona" in caplog.text


def test_simulate_missing_script_aborts_session_only(tmp_path):
    cfg, pfile = _three_persona_setup(tmp_path)
    script = json.loads((tmp_path / "user_script.json").read_text())
    first = json.loads(pfile.read_text().splitlines()[0])["id"]
    del script["by_persona"][first]
    (tmp_path / "user_script.json").write_text(json.dumps(script))
    assert main(["simulate", "--config", str(cfg), "--personas", str(pfile), "--out", str(tmp_path / "o")]) == 0
    outcomes = [x["outcome"] for x in lines(tmp_path / "o" / "sessions.jsonl") if x["type"] == "outcome"]
    assert outcomes[0] == "aborted" and len(outcomes) == 3


def test_simulate_max_turns_flag(tmp_path):
    cfg, pfile = _three_persona_setup(tmp_path)
    assert main(["simulate", "--config", str(cfg), "--personas", str(pfile), "--out", str(tmp_path / "o"),
                 "--max-turns", "2"]) == 0
    for rec in lines(tmp_path / "o" / "sessions.jsonl"):
        if rec["type"] == "outcome":
            assert rec["total_turn_count"] <= 2


def test_simulate_empty_personas(tmp_path):
    cfg, pfile = _three_persona_setup(tmp_path)
    pfile.write_text("")
    assert main(["simulate", "--config", str(cfg), "--personas", str(pfile), "--out", str(tmp_path / "o")]) == 1


def test_analyze_campaign(tmp_path, capsys):
    code = main(["analyze", "--personas", str(CAMPAIGN / "personas.jsonl"),
                 "--sessions", str(CAMPAIGN / "sessions.jsonl"), "--out", str(tmp_path)])
    assert code == 0
    assert json.loads((tmp_path / "summary.json").read_text())["success_rate"] == 82.46
    assert "success_rate=82.46%" in capsys.readouterr().out


def test_analyze_personas_only(tmp_path, capsys):
    assert main(["analyze", "--personas", str(DATA / "personas_gpt-4o.jsonl"), "--out", str(tmp_path)]) == 0
    assert "session metrics skipped" in capsys.readouterr().err
    assert (tmp_path / "distribution_desired_degree.csv").read_text() == "value,count\nMaster,100\n"
    assert json.loads((tmp_path / "summary.json").read_text())["session_metrics"] is None


def test_analyze_empty(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["analyze", "--personas", str(empty), "--out", str(tmp_path / "o")]) == 1
    assert "EmptyInput" in capsys.readouterr().err


def test_analyze_orphan_sessions(tmp_path, capsys):
    code = main(["analyze", "--personas", str(DATA / "personas_gpt-4o.jsonl"),
                 "--sessions", str(CAMPAIGN / "sessions.jsonl"), "--out", str(tmp_path)])
    assert code == 1
    assert "gpt-o1-001" in capsys.readouterr().err


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2
