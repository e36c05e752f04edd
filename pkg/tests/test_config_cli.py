import json
import logging
import os
from pathlib import Path

import pytest

from trustfed import cli, report
from trustfed.config import config_to_dict, content_hash, parse_config
from trustfed.domain import Thresholds
from trustfed.errors import ConfigError
from trustfed.optimizer import DeploymentContext, random_instance, save_instance

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
TINY = {"name": "tiny", "seed": 4, "population": {"n": 8}, "fl": {"rounds": 3}}


def write_json(path, doc):
    path.write_text(json.dumps(doc, indent=2))
    return path


# ---- config ------------------------------------------------------------------

def test_defaults_fill_everything():
    cfg = parse_config('{"seed": 5}')
    assert cfg.seed == 5 and cfg.fl.rounds == 40 and cfg.population.n == 50
    assert parse_config(json.dumps(config_to_dict(cfg))) == cfg


def test_missing_seed_is_named():
    with pytest.raises(ConfigError, match="seed"):
        parse_config('{"name": "x"}')


def test_errors_carry_line_numbers():
    text = '{\n  "seed": 1,\n  "fl": {\n    "rounds": "ten"\n  }\n}'
    with pytest.raises(ConfigError, match="line 4"):
        parse_config(text)
    with pytest.raises(ConfigError, match="line 3.*unknown field"):
        parse_config('{\n  "seed": 1,\n  "trsut": {}\n}')
    with pytest.raises(ConfigError, match="line 2"):
        parse_config('{\n  "seed": 1,,\n}')


def test_malicious_entries():
    cfg = parse_config('{"seed": 1, "malicious": [{"tag": "label_flip", "intensity": 0.5, "fraction": 0.2}]}')
    assert cfg.malicious[0].tag == "label_flip" and cfg.malicious[0].fraction == 0.2
    with pytest.raises(ConfigError, match="tag"):
        parse_config('{"seed": 1, "malicious": [{"intensity": 0.5}]}')
    with pytest.raises(ConfigError):
        parse_config('{"seed": 1, "malicious": [{"tag": "teleport"}]}')


def test_weights_must_sum_to_one():
    assert parse_config('{"seed": 1, "weights": [0.2, 0.2, 0.2, 0.2, 0.2]}').weights.w3 == 0.2
    with pytest.raises(ConfigError, match="weights"):
        parse_config('{"seed": 1, "weights": [0.5, 0.5, 0.5, 0.0, 0.0]}')


def test_shipped_scenarios_parse():
    paths = sorted(SCENARIOS.glob("*.json"))
    assert len(paths) >= 6
    for p in paths:
        parse_config(p.read_text())


def test_content_hash_is_git_blob_hash():
    assert content_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert content_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


# ---- run ---------------------------------------------------------------------

def test_run_writes_four_files_and_reruns_identically(tmp_path, capsys):
    cfg = write_json(tmp_path / "tiny.json", TINY)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    for name in cli.OUTPUT_FILES:
        assert (tmp_path / "a" / name).is_file()
    for name in ("trace.jsonl", "summary.csv", "trust_log.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config_hash"] == content_hash(cfg.read_bytes())
    assert manifest["scenario"] == "tiny" and manifest["rounds"] == 3
    assert len((tmp_path / "a" / "summary.csv").read_text().splitlines()) == 4
    assert "tiny: 3 rounds" in capsys.readouterr().out


def test_run_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "name": "x"\n}')
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "seed" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["run", "--config", str(bad)]) == 2
    assert cli.main([]) == 2


def test_runtime_failure_exits_1(tmp_path, monkeypatch):
    import trustfed.flsim

    def boom(*a, **k):
        raise RuntimeError("simulated crash")
    monkeypatch.setattr(trustfed.flsim, "run_scenario", boom)
    cfg = write_json(tmp_path / "tiny.json", TINY)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_atomic_write_leaves_nothing_on_crash(tmp_path, monkeypatch):
    target = tmp_path / "out.txt"
    target.write_text("old")

    def crash(src, dst):
        raise OSError("disk yanked")
    monkeypatch.setattr(report.os, "replace", crash)
    with pytest.raises(OSError):
        report.atomic_write(target, "new contents")
    assert target.read_text() == "old"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out.txt"]


def test_crash_mid_run_leaves_no_partial_outputs(tmp_path, monkeypatch):
    real = report.os.replace
    calls = []

    def flaky(src, dst):
        calls.append(dst)
        if len(calls) == 2:
            raise OSError("crash during second output")
        real(src, dst)
    monkeypatch.setattr(report.os, "replace", flaky)
    cfg = write_json(tmp_path / "tiny.json", TINY)
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 1
    names = sorted(p.name for p in out.iterdir())
    assert names == ["trace.jsonl"]  # complete file from before the crash, no temp files
    assert (out / "trace.jsonl").read_text().count("\n") == 3


# ---- compare -----------------------------------------------------------------

def _trace_file(path, rounds):
    lines = [json.dumps({"round": r, "global_accuracy": 0.1 * r, "dismissed": r == 2, "selected_ids": [],
                         "per_client": [{"id": "c0", "trust": 0.5, "malicious": False}]})
             for r in range(1, rounds + 1)]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_compare_merges_traces(tmp_path):
    a, b = _trace_file(tmp_path / "a.jsonl", 40), _trace_file(tmp_path / "b.jsonl", 40)
    out = tmp_path / "cmp.csv"
    assert cli.main(["compare", a, b, "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 41
    assert rows[0] == "round,accuracy_a,mean_trust_a,dismissed_a,accuracy_b,mean_trust_b,dismissed_b"
    assert rows[2].split(",")[3] == "1"


def test_compare_usage_errors(tmp_path):
    a, short = _trace_file(tmp_path / "a.jsonl", 40), _trace_file(tmp_path / "s.jsonl", 39)
    out = str(tmp_path / "cmp.csv")
    assert cli.main(["compare", a, "--out", out]) == 2
    assert cli.main(["compare", a, short, "--out", out]) == 2
    assert cli.main(["compare", a, str(tmp_path / "missing.jsonl"), "--out", out]) == 2
    (tmp_path / "junk.jsonl").write_text("{not json\n")
    assert cli.main(["compare", a, str(tmp_path / "junk.jsonl"), "--out", out]) == 2
    assert not Path(out).exists()


# ---- bench-opt ---------------------------------------------------------------

def _bench(capsys, *args):
    code = cli.main(["bench-opt", *args])
    return code, capsys.readouterr().out


def test_bench_opt_with_oracle(tmp_path, capsys):
    inst = tmp_path / "inst.json"
    save_instance(random_instance(10, seed=4), inst)
    code, out = _bench(capsys, "--instance", str(inst), "--seed", "2", "--oracle")
    assert code == 0
    ratio = float(next(l for l in out.splitlines() if l.startswith("ratio:")).split()[1])
    assert ratio >= 0.99
    code2, out2 = _bench(capsys, "--instance", str(inst), "--seed", "2", "--oracle")
    sel = [l for l in out.splitlines() if l.startswith(("selection", "bits"))]
    assert sel == [l for l in out2.splitlines() if l.startswith(("selection", "bits"))]


def test_bench_opt_oracle_size_limit(tmp_path, capsys):
    inst = tmp_path / "big.json"
    save_instance(random_instance(21, seed=1), inst)
    assert _bench(capsys, "--instance", str(inst), "--seed", "0", "--oracle")[0] == 2
    assert _bench(capsys, "--instance", str(inst), "--seed", "0")[0] == 0
    assert _bench(capsys, "--instance", str(tmp_path / "none.json"), "--seed", "0")[0] == 2


def _infeasible(th):
    c = random_instance(5, seed=0)
    devs = [d.__class__(**{**d.__dict__, "cpu": 0.0}) for d in c.devices]
    return DeploymentContext(devs, list(c.utilities), list(c.trust_arr), list(c.accuracy_clusters),
                             c.requested_areas, c.weights, th, c.n_areas)


def test_bench_opt_infeasible(tmp_path, capsys):
    inst = tmp_path / "inf.json"
    save_instance(_infeasible(Thresholds()), inst)
    code, out = _bench(capsys, "--instance", str(inst), "--seed", "0", "--oracle")
    assert code == 0 and "selection: (empty)" in out and "oracle_selection: (empty)" in out
    save_instance(_infeasible(Thresholds(min_selected=1)), inst)
    code, out = _bench(capsys, "--instance", str(inst), "--seed", "0")
    assert code == 1 and "no-feasible-solution" in out


# ---- logging -----------------------------------------------------------------

@pytest.mark.parametrize("value,level", [("off", logging.CRITICAL + 1), ("info", logging.INFO),
                                         ("DEBUG", logging.DEBUG)])
def test_log_env(monkeypatch, value, level):
    monkeypatch.setenv("TRUSTFED_LOG", value)
    cli._setup_logging()
    assert logging.getLogger("trustfed").level == level


def test_log_env_bad_value_warns(monkeypatch, capsys):
    monkeypatch.setenv("TRUSTFED_LOG", "loud")
    cli._setup_logging()
    assert "TRUSTFED_LOG" in capsys.readouterr().err
    assert logging.getLogger("trustfed").level == logging.CRITICAL + 1
    monkeypatch.delenv("TRUSTFED_LOG")
    assert os.environ.get("TRUSTFED_LOG") is None
