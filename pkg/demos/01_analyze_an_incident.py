#!/usr/bin/env python3
"""Walk one synthetic incident end to end.

Generates a scenario with an injected error fault, writes it to disk in
the CSV schema, ingests it back, analyzes the alert window with the
deterministic policy, and prints the ranked root causes next to the
ground truth label.

Run from the repository root after `pip install -e .`:

    python demos/01_analyze_an_incident.py
"""

import tempfile
from pathlib import Path

from rootcause import Config, ingest, windows_from_alerts
from rootcause.memory import Memory
from rootcause.reasoner import analyze_window, deterministic_policy
from rootcause.scenario import ScenarioSpec, generate

cfg = Config(baseline_minutes=5.0)

print("=== generate a faulted scenario ===")
scenario = generate(ScenarioSpec(fault_kind="ErrorStatus", seed=42, victims=2))
print(f"fault injected: {scenario.fault_kind} at {scenario.truth[0]}:{scenario.truth[1]}")
print(f"{len(scenario.alerts)} alerts raised on traces "
      f"{sorted(a.trace_id for a in scenario.alerts)}")

with tempfile.TemporaryDirectory() as tmp:
    data_dir = Path(tmp) / "incident"
    scenario.write(data_dir)
    print(f"\n=== ingest the CSV directory ({data_dir.name}/) ===")
    store = ingest(data_dir)
    print(f"row counts: {store.report.as_dict()}")

    print("\n=== analyze the alert window ===")
    window = windows_from_alerts(store.alerts, cfg.window_ms)[0]
    mem = Memory(dim=cfg.embedding_dim, alpha=cfg.alpha)
    report = analyze_window(window, store, store.topology, mem,
                            deterministic_policy(cfg), cfg)

    for analysis in report.analyses:
        print(f"\nalert {analysis.alert_id}: decision {analysis.decision.kind}, "
              f"{analysis.counters.policy_calls} policy calls")
        for step in analysis.transcript.steps:
            marker = {"ConfirmedRootCause": "!!", "Suspect": " ?"}.get(step.verdict, "  ")
            print(f"  {marker} [{step.stage:<10}] {step.pod}/{step.op} -> {step.verdict}")

    print("\n=== window-level ranking ===")
    for row in report.window_ranking.as_rows()[:5]:
        print(f"  {row['rank']}. {row['level']}:{row['root_cause']} "
              f"score={row['score']:.3f}  ({row['reason'][:70]})")

    top = report.window_ranking[0]
    verdict = "correct" if (top.level, top.root_cause) == scenario.truth else "WRONG"
    print(f"\ntop candidate {top.level}:{top.root_cause} vs truth "
          f"{scenario.truth[0]}:{scenario.truth[1]} -> {verdict}")
