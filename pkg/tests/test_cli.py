import dataclasses
import json

from rootcause.cli import main
from rootcause.config import Config
from rootcause.memory import _checksum
from rootcause.telemetry import export

from .conftest import walkthrough_store


def run_cli(*argv):
    return main(list(argv))


def test_print_config_matches_dataclass_defaults(capsys):
    assert run_cli("--print-config") == 0
    printed = json.loads(capsys.readouterr().out)
    defaults = dataclasses.asdict(Config())
    defaults["log_patterns"] = list(defaults["log_patterns"])
    assert printed == defaults


def test_print_config_reflects_overrides(capsys):
    assert run_cli("--n-sigma", "4.5", "--tau-skip", "0.9", "--print-config") == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["n_sigma"] == 4.5
    assert printed["tau_skip"] == 0.9


def test_invalid_thresholds_exit_two(capsys):
    assert run_cli("--tau-skip", "0.5", "--tau-partial", "0.9", "--print-config") == 2


def test_generate_deterministic_directories(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli("--seed", "7", "generate", "--out", str(out1)) == 0
    assert run_cli("--seed", "7", "generate", "--out", str(out2)) == 0
    files1 = {p.name: p.read_bytes() for p in sorted(out1.iterdir())}
    files2 = {p.name: p.read_bytes() for p in sorted(out2.iterdir())}
    assert files1 == files2
    assert "truth.csv" in files1


def test_analyze_missing_topology_exits_two(tmp_path, capsys):
    data = tmp_path / "data"
    export(walkthrough_store(), data)
    (data / "topology.csv").unlink()
    code = run_cli("analyze", "--data", str(data), "--out", str(tmp_path / "out"))
    assert code == 2  # missing input file is a usage problem
    assert "topology.csv" in capsys.readouterr().err


def test_analyze_malformed_row_exits_one(tmp_path, capsys):
    data = tmp_path / "data"
    export(walkthrough_store(), data)
    traces = data / "traces.csv"
    lines = traces.read_text().splitlines()
    row = lines[1].split(",")
    row[6] = "noon"
    lines[1] = ",".join(row)
    traces.write_text("\n".join(lines) + "\n")
    code = run_cli("analyze", "--data", str(data), "--out", str(tmp_path / "out"))
    assert code == 1
    assert "start_time_ms" in capsys.readouterr().err


def test_analyze_walkthrough_and_memory_rerun(tmp_path, capsys):
    data = tmp_path / "data"
    out = tmp_path / "out"
    export(walkthrough_store(), data)
    mem_path = tmp_path / "memory.jsonl"

    code = run_cli("--memory", str(mem_path), "analyze",
                   "--data", str(data), "--out", str(out))
    assert code == 0
    first_out = capsys.readouterr().out
    assert "service:recommendationservice" in first_out
    assert mem_path.exists()
    report = json.loads((out / "window_000.json").read_text())
    assert report["alerts"][0]["decision"]["kind"] == "Fresh"
    assert report["window_ranking"][0]["root_cause"] == "recommendationservice"
    transcripts = list((out / "transcripts").glob("*.json"))
    assert transcripts

    code = run_cli("--memory", str(mem_path), "analyze",
                   "--data", str(data), "--out", str(tmp_path / "out2"))
    assert code == 0
    second_out = capsys.readouterr().out
    assert "Reuse=1" in second_out
    report2 = json.loads((tmp_path / "out2" / "window_000.json").read_text())
    assert report2["alerts"][0]["decision"]["kind"] == "Reuse"
    assert report2["alerts"][0]["counters"]["policy_calls"] == 0
    assert report2["window_ranking"] == report["window_ranking"]


def test_eval_writes_report(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    for seed, kind in ((0, "MetricSpike"), (1, "LogBurst")):
        assert run_cli("--seed", str(seed), "generate", "--fault", kind,
                       "--out", str(corpus / f"sc{seed}")) == 0
    out = tmp_path / "report"
    assert run_cli("eval", "--data", str(corpus), "--out", str(out)) == 0
    text = (out / "report.csv").read_text()
    assert "recall_at_1,1.000000" in text
    assert (out / "records.csv").exists()


def test_memory_verify_detects_hand_corrupted_fingerprint(tmp_path, capsys):
    data = tmp_path / "data"
    export(walkthrough_store(), data)
    mem_path = tmp_path / "memory.jsonl"
    assert run_cli("--memory", str(mem_path), "analyze",
                   "--data", str(data), "--out", str(tmp_path / "out")) == 0
    capsys.readouterr()

    assert run_cli("--memory", str(mem_path), "memory", "verify") == 0
    assert "verified" in capsys.readouterr().out

    lines = mem_path.read_text().splitlines()
    body = json.loads(lines[1])
    body.pop("checksum")
    body["fingerprint"] = "f" * 64
    body["checksum"] = _checksum(body)
    lines[1] = json.dumps(body, sort_keys=True, separators=(",", ":"))
    mem_path.write_text("\n".join(lines) + "\n")

    assert run_cli("--memory", str(mem_path), "memory", "verify") == 1
    assert "VIOLATION" in capsys.readouterr().out


def test_memory_list_and_show(tmp_path, capsys):
    data = tmp_path / "data"
    export(walkthrough_store(), data)
    mem_path = tmp_path / "memory.jsonl"
    run_cli("--memory", str(mem_path), "analyze",
            "--data", str(data), "--out", str(tmp_path / "out"))
    capsys.readouterr()
    assert run_cli("--memory", str(mem_path), "memory", "list") == 0
    listing = capsys.readouterr().out
    assert "alert=alert-1" in listing
    prefix = listing.splitlines()[1].split()[0][:8]
    assert run_cli("--memory", str(mem_path), "memory", "show",
                   "--fingerprint", prefix) == 0
    assert "ConfirmedRootCause" in capsys.readouterr().out


def test_replay_reproduces_stored_ranking(tmp_path, capsys):
    data = tmp_path / "data"
    export(walkthrough_store(), data)
    out = tmp_path / "out"
    run_cli("analyze", "--data", str(data), "--out", str(out))
    capsys.readouterr()
    transcript = next((out / "transcripts").glob("*.json"))
    assert run_cli("replay", str(transcript)) == 0
    rendered = capsys.readouterr().out
    assert "replay ok" in rendered
    assert "recommendationservice" in rendered


def test_replay_detects_tampered_ranking(tmp_path, capsys):
    data = tmp_path / "data"
    export(walkthrough_store(), data)
    out = tmp_path / "out"
    run_cli("analyze", "--data", str(data), "--out", str(out))
    path = next((out / "transcripts").glob("*.json"))
    doc = json.loads(path.read_text())
    doc["ranking"][0], doc["ranking"][1] = doc["ranking"][1], doc["ranking"][0]
    doc["ranking"][0]["rank"], doc["ranking"][1]["rank"] = 1, 2
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    capsys.readouterr()
    assert run_cli("replay", str(path)) == 1
    assert "MISMATCH" in capsys.readouterr().out


def test_explicit_window_bounds_override_detection(tmp_path, capsys):
    from .conftest import T0

    data = tmp_path / "data"
    export(walkthrough_store(), data)
    out = tmp_path / "out"
    code = run_cli("analyze", "--data", str(data), "--out", str(out),
                   "--window-start", str(T0 - 1000), "--window-end", str(T0 + 1000))
    assert code == 0
    report = json.loads((out / "window_000.json").read_text())
    assert report["window"] == {"start": T0 - 1000, "end": T0 + 1000}
    capsys.readouterr()
    # bounds excluding every alert: nothing to analyze
    code = run_cli("analyze", "--data", str(data), "--out", str(tmp_path / "out2"),
                   "--window-start", "1", "--window-end", "2")
    assert code == 0
    assert "nothing to analyze" in capsys.readouterr().out


def test_parallel_windows_match_sequential(tmp_path):
    # two scenarios merged into one data set give two disjoint windows
    from rootcause.scenario import ScenarioSpec, generate

    data1, data2 = tmp_path / "d1", tmp_path / "d2"
    generate(ScenarioSpec(fault_kind="MetricSpike", seed=1, victims=1)).write(data1)

    seq_out, par_out = tmp_path / "seq", tmp_path / "par"
    assert run_cli("analyze", "--data", str(data1), "--out", str(seq_out)) == 0
    assert run_cli("--parallel", "2", "analyze", "--data", str(data1),
                   "--out", str(par_out)) == 0
    seq = json.loads((seq_out / "window_000.json").read_text())
    par = json.loads((par_out / "window_000.json").read_text())
    assert seq["window_ranking"] == par["window_ranking"]


def test_missing_subcommand_exits_two(capsys):
    assert run_cli() == 2
