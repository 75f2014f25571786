"""Recursive root-cause reasoning and window orchestration.

The controller walks an alert's span tree depth first. At each span it
asks a pluggable judgment policy whether the span looks suspicious given
its sibling call context; suspicious spans get cross-modal log and metric
evidence and, if that confirms, the walk returns the span as a root-cause
candidate without descending further. Otherwise the walk recurses into
whichever children the policy flags, backtracking until paths are
exhausted or budgets run out.

Premature termination is countered with three stages. Initial reasoning
runs the walk with log and metric agents withheld, so nothing can confirm
and the result is a coarse frontier of suspects. Critical reflection
re-enters the walk from every frontier suspect with the full agent set,
forcing deeper inspection. Final review hands the union of both
transcripts to the consolidator and performs no policy or agent calls at
all, which keeps late-visited spans from dominating the ranking.

Policies see only the evidence passed to them; that purity rule is what
makes a remote-model policy and the deterministic reference policy
interchangeable under test.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import statistics
import time
from dataclasses import dataclass, field

from .agents import (
    ChildCall,
    MetricAnomaly,
    RootCauseRanking,
    ScoreWeights,
    consolidate,
    log_agent,
    metric_agent,
    trace_agent,
)
from .config import Config
from .errors import DataError
from .graph import extract, fingerprint, embed
from .memory import Decision, Memory, MemoryEntry, remap
from .telemetry import Alert, AlertWindow, LogEntry, Span, TelemetryStore, Topology

VERDICTS = ("Suspect", "ConfirmedRootCause", "Cleared", "Expanded")
STAGES = ("Initial", "Reflection")


@dataclass(frozen=True)
class Step:
    """One reasoning step, linked to a span and its causal-graph node."""

    index: int
    stage: str
    node: str
    span: str
    pod: str
    op: str
    span_status: int
    span_start: int
    instruction: str
    trace_evidence: tuple[ChildCall, ...]
    log_evidence: tuple[LogEntry, ...]
    metric_evidence: tuple[MetricAnomaly, ...]
    verdict: str
    errored: bool = False
    stale: bool = False

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise DataError(f"unknown verdict {self.verdict!r}")
        if self.stage not in STAGES:
            raise DataError(f"unknown stage {self.stage!r}")

    def evolve(self, **changes) -> "Step":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return {
            "index": self.index,
            "stage": self.stage,
            "node": self.node,
            "span": self.span,
            "pod": self.pod,
            "op": self.op,
            "span_status": self.span_status,
            "span_start": self.span_start,
            "instruction": self.instruction,
            "trace_evidence": [dataclasses.asdict(c) for c in self.trace_evidence],
            "log_evidence": [dataclasses.asdict(e) for e in self.log_evidence],
            "metric_evidence": [a.as_dict() for a in self.metric_evidence],
            "verdict": self.verdict,
            "errored": self.errored,
            "stale": self.stale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Step":
        return cls(
            index=d["index"],
            stage=d["stage"],
            node=d["node"],
            span=d["span"],
            pod=d["pod"],
            op=d["op"],
            span_status=d["span_status"],
            span_start=d["span_start"],
            instruction=d["instruction"],
            trace_evidence=tuple(ChildCall(**c) for c in d["trace_evidence"]),
            log_evidence=tuple(LogEntry(**e) for e in d["log_evidence"]),
            metric_evidence=tuple(MetricAnomaly.from_dict(a) for a in d["metric_evidence"]),
            verdict=d["verdict"],
            errored=d["errored"],
            stale=d["stale"],
        )


@dataclass
class Transcript:
    alert_id: str
    steps: list[Step]
    stage_markers: dict[str, int]  # step counts per stage, initial before reflection

    def __post_init__(self):
        seen_reflection = False
        for s in self.steps:
            if s.stage == "Reflection":
                seen_reflection = True
            elif seen_reflection:
                raise DataError("initial-stage steps must precede reflection steps")

    @property
    def suspects(self) -> list[Step]:
        return [s for s in self.steps if s.verdict == "Suspect" and not s.stale]

    @property
    def confirmed(self) -> list[Step]:
        return [s for s in self.steps if s.verdict == "ConfirmedRootCause" and not s.stale]

    def as_dict(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "stage_markers": dict(self.stage_markers),
            "steps": [s.as_dict() for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transcript":
        return cls(
            alert_id=d["alert_id"],
            steps=[Step.from_dict(s) for s in d["steps"]],
            stage_markers=dict(d["stage_markers"]),
        )


# -- policies -------------------------------------------------------------------


class PolicyContract:
    """Judgment interface the reasoner delegates to.

    Implementations must be pure with respect to the evidence handed in:
    no reaching back into the telemetry store. ``suspect`` receives the
    call set in which the span appears next to its siblings (for an entry
    span, its own child calls); ``suspicious_children`` receives the
    span's own child calls and must return a subset of them.
    """

    def generate_instruction(self, span: Span, context: str) -> str:
        raise NotImplementedError

    def suspect(self, span: Span, trace_evidence: list[ChildCall]) -> bool:
        raise NotImplementedError

    def confirm(self, span: Span, log_evidence: list[LogEntry],
                metric_evidence: list[MetricAnomaly]) -> bool:
        raise NotImplementedError

    def suspicious_children(self, span: Span,
                            trace_evidence: list[ChildCall]) -> list[ChildCall]:
        raise NotImplementedError


class DeterministicPolicy(PolicyContract):
    """Reference policy with auditable threshold rules.

    A span is suspect when it carries a nonzero status or its duration
    exceeds ``timeout_factor`` times the median duration of its sibling
    calls. Confirmation requires cross-modal evidence: any metric anomaly,
    or an ERROR/FATAL log entry. Children are suspicious under the same
    status or duration test against the median of the other children,
    explored slowest first.
    """

    def __init__(self, timeout_factor: float = 3.0):
        if timeout_factor <= 0:
            raise DataError("timeout_factor must be > 0")
        self.timeout_factor = timeout_factor

    def generate_instruction(self, span: Span, context: str) -> str:
        return (
            f"Inspect {span.cmdb_id}/{span.operation} (span {span.span_id}): {context}. "
            f"Check child calls, then confirm with logs and metrics if suspicious."
        )

    def suspect(self, span: Span, trace_evidence: list[ChildCall]) -> bool:
        if span.status_code != 0:
            return True
        siblings = [c.d for c in trace_evidence if c.child_span != span.span_id]
        if not siblings:
            return False
        return span.duration > self.timeout_factor * statistics.median(siblings)

    def confirm(self, span: Span, log_evidence: list[LogEntry],
                metric_evidence: list[MetricAnomaly]) -> bool:
        if metric_evidence:
            return True
        return any(e.level in ("ERROR", "FATAL") for e in log_evidence)

    def suspicious_children(self, span: Span,
                            trace_evidence: list[ChildCall]) -> list[ChildCall]:
        flagged = []
        for c in trace_evidence:
            if c.sigma != 0:
                flagged.append(c)
                continue
            others = [o.d for o in trace_evidence if o.child_span != c.child_span]
            if others and c.d > self.timeout_factor * statistics.median(others):
                flagged.append(c)
        flagged.sort(key=lambda c: (-c.d, c.child_span))
        return flagged


class CountingPolicy(PolicyContract):
    """Delegating wrapper that counts every predicate invocation."""

    def __init__(self, inner: PolicyContract):
        self.inner = inner
        self.calls = 0
        self.by_op: dict[str, int] = {}

    def _tick(self, op: str) -> None:
        self.calls += 1
        self.by_op[op] = self.by_op.get(op, 0) + 1

    def generate_instruction(self, span, context):
        self._tick("generate_instruction")
        return self.inner.generate_instruction(span, context)

    def suspect(self, span, trace_evidence):
        self._tick("suspect")
        return self.inner.suspect(span, trace_evidence)

    def confirm(self, span, log_evidence, metric_evidence):
        self._tick("confirm")
        return self.inner.confirm(span, log_evidence, metric_evidence)

    def suspicious_children(self, span, trace_evidence):
        self._tick("suspicious_children")
        return self.inner.suspicious_children(span, trace_evidence)


class LatencyShimPolicy(PolicyContract):
    """Adds a fixed sleep per predicate call, simulating a remote policy."""

    def __init__(self, inner: PolicyContract, latency_ms: float):
        self.inner = inner
        self.latency_s = latency_ms / 1000.0

    def _nap(self):
        time.sleep(self.latency_s)

    def generate_instruction(self, span, context):
        self._nap()
        return self.inner.generate_instruction(span, context)

    def suspect(self, span, trace_evidence):
        self._nap()
        return self.inner.suspect(span, trace_evidence)

    def confirm(self, span, log_evidence, metric_evidence):
        self._nap()
        return self.inner.confirm(span, log_evidence, metric_evidence)

    def suspicious_children(self, span, trace_evidence):
        self._nap()
        return self.inner.suspicious_children(span, trace_evidence)


def deterministic_policy(config: Config | None = None) -> DeterministicPolicy:
    cfg = config or Config()
    return DeterministicPolicy(timeout_factor=cfg.timeout_factor)


# -- runtime --------------------------------------------------------------------


@dataclass
class Budget:
    max_depth: int = 16
    max_steps: int = 512

    def __post_init__(self):
        if self.max_depth < 1 or self.max_steps < 1:
            raise DataError("budget limits must be >= 1")


class AgentRuntime:
    """Binds the agents to one alert's timestamp and counts their calls."""

    def __init__(
        self,
        store: TelemetryStore,
        topology: Topology,
        t0: int,
        config: Config,
        log_enabled: bool = True,
        metric_enabled: bool = True,
    ):
        self.store = store
        self.topology = topology
        self.t0 = t0
        self.config = config
        self.log_enabled = log_enabled
        self.metric_enabled = metric_enabled
        self.delta = config.window_ms // 2
        self.calls = {"trace": 0, "log": 0, "metric": 0}
        self.diagnostics: list[dict] = []
        self._baseline_cache: dict = {}

    @property
    def total_calls(self) -> int:
        return sum(self.calls.values())

    def with_agents(self, log_enabled: bool, metric_enabled: bool) -> "AgentRuntime":
        clone = AgentRuntime(
            self.store, self.topology, self.t0, self.config, log_enabled, metric_enabled
        )
        clone.calls = self.calls  # shared counters across stages of one alert
        clone.diagnostics = self.diagnostics
        clone._baseline_cache = self._baseline_cache
        return clone

    def trace(self, span_id: str) -> list[ChildCall]:
        self.calls["trace"] += 1
        return trace_agent(self.store, span_id)

    def logs(self, component: str) -> list[LogEntry]:
        self.calls["log"] += 1
        return log_agent(
            self.store, self.t0, self.delta, component,
            topology=self.topology, patterns=self.config.log_patterns,
        )

    def metrics(self, component: str) -> list[MetricAnomaly]:
        self.calls["metric"] += 1
        return metric_agent(
            self.store, self.topology, self.t0, self.delta, component,
            n=self.config.n_sigma,
            baseline_ms=int(self.config.baseline_minutes * 60_000),
            sigma_floor=self.config.sigma_floor,
            diagnostics=self.diagnostics,
            _baseline_cache=self._baseline_cache,
        )


@dataclass
class RunState:
    steps: list[Step] = field(default_factory=list)
    visited: set[str] = field(default_factory=set)
    truncated: bool = False
    next_index: int = 0

    def allocate(self) -> int:
        i = self.next_index
        self.next_index += 1
        return i


# -- the recursion ----------------------------------------------------------------


def recursive_rcl(
    span: Span,
    policy: PolicyContract,
    runtime: AgentRuntime,
    budget: Budget,
    state: RunState | None = None,
    sibling_view: list[ChildCall] | None = None,
    stage: str = "Initial",
    context: str = "entry span of the alert trace",
    depth: int = 0,
) -> tuple[set[str], list[Step]]:
    """Depth-first walk per the recursion contract; returns the candidate
    span set (suspect or confirmed spans) and the appended steps.

    Exhausted budgets set ``state.truncated`` rather than raising; a failed
    agent call records an errored step and skips that subtree.
    """
    state = state if state is not None else RunState()
    first = len(state.steps)
    candidates = _visit(span, policy, runtime, budget, state, sibling_view, stage, context, depth)
    return candidates, state.steps[first:]


def _visit(
    span: Span,
    policy: PolicyContract,
    runtime: AgentRuntime,
    budget: Budget,
    state: RunState,
    sibling_view: list[ChildCall] | None,
    stage: str,
    context: str,
    depth: int,
) -> set[str]:
    if span.span_id in state.visited:
        return set()
    if depth >= budget.max_depth or len(state.steps) >= budget.max_steps:
        state.truncated = True
        return set()
    state.visited.add(span.span_id)
    node = f"{span.cmdb_id}|{span.operation}"

    instruction = policy.generate_instruction(span, context)
    try:
        calls = runtime.trace(span.span_id)
    except Exception:  # noqa: BLE001 - agent failures must not kill analysis
        state.steps.append(Step(
            index=state.allocate(), stage=stage, node=node, span=span.span_id,
            pod=span.cmdb_id, op=span.operation, span_status=span.status_code,
            span_start=span.start_time, instruction=instruction,
            trace_evidence=(), log_evidence=(), metric_evidence=(),
            verdict="Cleared", errored=True,
        ))
        return set()

    view = sibling_view if sibling_view is not None else calls
    suspected = policy.suspect(span, view)

    logs: list[LogEntry] = []
    metrics: list[MetricAnomaly] = []
    confirmed = False
    errored = False
    if suspected:
        try:
            if runtime.log_enabled:
                logs = runtime.logs(span.cmdb_id)
            if runtime.metric_enabled:
                metrics = runtime.metrics(span.cmdb_id)
        except Exception:  # noqa: BLE001
            errored = True
        if not errored:
            confirmed = policy.confirm(span, logs, metrics)

    if errored:
        state.steps.append(Step(
            index=state.allocate(), stage=stage, node=node, span=span.span_id,
            pod=span.cmdb_id, op=span.operation, span_status=span.status_code,
            span_start=span.start_time, instruction=instruction,
            trace_evidence=tuple(calls), log_evidence=(), metric_evidence=(),
            verdict="Cleared", errored=True,
        ))
        return set()

    if confirmed:
        state.steps.append(Step(
            index=state.allocate(), stage=stage, node=node, span=span.span_id,
            pod=span.cmdb_id, op=span.operation, span_status=span.status_code,
            span_start=span.start_time, instruction=instruction,
            trace_evidence=tuple(calls), log_evidence=tuple(logs),
            metric_evidence=tuple(metrics), verdict="ConfirmedRootCause",
        ))
        return {span.span_id}

    kids = policy.suspicious_children(span, calls)
    by_span = {c.child_span: c for c in calls}
    kids = [c for c in kids if c.child_span in by_span]  # enforce subset contract

    verdict = "Suspect" if suspected else ("Expanded" if kids else "Cleared")
    state.steps.append(Step(
        index=state.allocate(), stage=stage, node=node, span=span.span_id,
        pod=span.cmdb_id, op=span.operation, span_status=span.status_code,
        span_start=span.start_time, instruction=instruction,
        trace_evidence=tuple(calls), log_evidence=tuple(logs),
        metric_evidence=tuple(metrics), verdict=verdict,
    ))

    candidates = {span.span_id} if suspected else set()
    for call in kids:
        child = runtime.store.span(call.child_span)
        candidates |= _visit(
            child, policy, runtime, budget, state,
            sibling_view=calls, stage=stage,
            context=f"suspicious child of {span.cmdb_id}/{span.operation}",
            depth=depth + 1,
        )
    return candidates


# -- the three stages ---------------------------------------------------------------


def initial_reasoning(
    entry: Span,
    policy: PolicyContract,
    runtime: AgentRuntime,
    budget: Budget,
    alert_id: str,
) -> Transcript:
    """Stage one: broad trace-only exploration. Metric and log agents are
    withheld, so the confirm predicate sees empty evidence and suspects
    accumulate into a frontier instead of terminating the walk."""
    bare = runtime.with_agents(log_enabled=False, metric_enabled=False)
    state = RunState()
    recursive_rcl(entry, policy, bare, budget, state, stage="Initial")
    return Transcript(
        alert_id=alert_id,
        steps=state.steps,
        stage_markers={"initial": len(state.steps), "reflection": 0,
                       "truncated_initial": int(state.truncated)},
    )


def critical_reflection(
    gamma0: Transcript,
    policy: PolicyContract,
    runtime: AgentRuntime,
    budget: Budget,
    seed_spans: list[str] | None = None,
    start_index: int | None = None,
) -> Transcript:
    """Stage two: re-enter the walk from every still-suspect span (or the
    given seeds) with the full agent set. One shared visited set keeps
    overlapping re-entries from duplicating work."""
    if seed_spans is None:
        seed_spans = [s.span for s in gamma0.steps if s.verdict == "Suspect" and not s.stale]
    sibling_views: dict[str, list[ChildCall]] = {}
    for step in gamma0.steps:
        if step.stale:
            continue
        for call in step.trace_evidence:
            sibling_views[call.child_span] = list(step.trace_evidence)

    state = RunState(next_index=start_index if start_index is not None
                     else (gamma0.steps[-1].index + 1 if gamma0.steps else 0))
    for span_id in seed_spans:
        if span_id in state.visited:
            continue
        if not runtime.store.has_span(span_id):
            continue
        span = runtime.store.span(span_id)
        view = sibling_views.get(span_id)
        if view is None and span.parent_span_id is not None:
            try:
                view = runtime.trace(span.parent_span_id)
            except Exception:  # noqa: BLE001
                view = None
        recursive_rcl(
            span, policy, runtime, budget, state, sibling_view=view,
            stage="Reflection", context="reflection over a still-suspect span",
        )
    return Transcript(
        alert_id=gamma0.alert_id,
        steps=state.steps,
        stage_markers={"initial": 0, "reflection": len(state.steps),
                       "truncated_reflection": int(state.truncated)},
    )


def final_review(
    gamma0: Transcript,
    gamma1: Transcript,
    topology: Topology,
    weights: ScoreWeights,
) -> RootCauseRanking:
    """Stage three: consolidate the union of both transcripts. No policy
    or agent call happens here, by construction."""
    return consolidate(list(gamma0.steps) + list(gamma1.steps), topology, weights)


# -- per-alert orchestration -----------------------------------------------------------


@dataclass
class Counters:
    policy_calls: int = 0
    policy_by_op: dict = field(default_factory=dict)
    agent_calls: dict = field(default_factory=lambda: {"trace": 0, "log": 0, "metric": 0})

    @property
    def total_agent_calls(self) -> int:
        return sum(self.agent_calls.values())

    def as_dict(self) -> dict:
        return {
            "policy_calls": self.policy_calls,
            "policy_by_op": dict(sorted(self.policy_by_op.items())),
            "agent_calls": dict(self.agent_calls),
        }


@dataclass
class AlertAnalysis:
    alert_id: str
    ranking: RootCauseRanking
    transcript: Transcript
    decision: Decision
    entry: MemoryEntry
    counters: Counters
    wall_ms: float
    unsaved: bool = False

    def as_dict(self, include_timing: bool = True) -> dict:
        out = {
            "alert_id": self.alert_id,
            "decision": {
                "kind": self.decision.kind,
                "similarity": round(self.decision.similarity, 9),
                "divergent_nodes": sorted(self.decision.divergent_nodes),
                "degraded": self.decision.degraded,
            },
            "counters": self.counters.as_dict(),
            "ranking": self.ranking.as_rows(),
            "unsaved": self.unsaved,
        }
        if include_timing:
            out["wall_ms"] = round(self.wall_ms, 3)
        return out


def _weights(config: Config) -> ScoreWeights:
    return ScoreWeights(
        w_metric=config.w_metric, w_log=config.w_log,
        w_status=config.w_status, n_sigma=config.n_sigma,
    )


def analyze_alert(
    alert: Alert,
    store: TelemetryStore,
    topology: Topology,
    mem: Memory | None,
    policy: PolicyContract,
    config: Config,
    timer=time.perf_counter,
) -> AlertAnalysis:
    """Analyze one alert, threading the memory decision through the stages.

    Reuse replays the stored transcript against the new graph with zero
    policy invocations; resume re-enters reflection only at the spans of
    divergent nodes; fresh runs the full three-stage pipeline. The
    resulting transcript is stored back under the new graph's fingerprint
    in every case. A memory write failure flags the result unsaved rather
    than discarding the computed ranking.
    """
    t_begin = timer()
    g = extract(alert, store, topology, config.window_ms)
    counting = CountingPolicy(policy)
    runtime = AgentRuntime(store, topology, alert.timestamp, config)
    weights = _weights(config)
    budget = Budget(max_depth=config.max_depth, max_steps=config.max_steps)

    memory_active = mem is not None and config.memory_enabled
    if memory_active:
        decision = mem.decide(g, config.tau_skip, config.tau_partial, config.delta)
    else:
        decision = Decision(kind="Fresh", matched=None, similarity=0.0)

    if decision.kind == "Reuse":
        transcript = remap(decision.matched, g)
        ranking = consolidate(transcript.steps, topology, weights)
    elif decision.kind == "Resume":
        base = remap(decision.matched, g)
        seeds: list[str] = []
        for nid in sorted(decision.divergent_nodes):
            attrs = g.nodes.get(nid)
            if attrs:
                seeds.extend(attrs.span_ids)
        seeds = sorted(set(seeds), key=lambda sid: (store.span(sid).start_time, sid))
        start = (max((s.index for s in base.steps), default=-1)) + 1
        gamma1 = critical_reflection(
            base, counting, runtime, budget, seed_spans=seeds, start_index=start,
        )
        transcript = Transcript(
            alert_id=alert.alert_id,
            steps=_merge_stages(base.steps, gamma1.steps),
            stage_markers={
                "initial": sum(1 for s in base.steps if s.stage == "Initial"),
                "reflection": sum(1 for s in base.steps if s.stage == "Reflection")
                + len(gamma1.steps),
            },
        )
        ranking = consolidate(transcript.steps, topology, weights)
    else:
        entry_span = store.span(alert.entry_span_id)
        gamma0 = initial_reasoning(entry_span, counting, runtime, budget, alert.alert_id)
        gamma1 = critical_reflection(gamma0, counting, runtime, budget)
        ranking = final_review(gamma0, gamma1, topology, weights)
        transcript = Transcript(
            alert_id=alert.alert_id,
            steps=list(gamma0.steps) + list(gamma1.steps),
            stage_markers={"initial": len(gamma0.steps), "reflection": len(gamma1.steps)},
        )

    entry = MemoryEntry(
        f=fingerprint(g),
        e=embed(g, config.embedding_dim),
        graph=g,
        meta=(alert.timestamp, alert.alert_id),
        transcript=transcript,
    )
    unsaved = False
    if memory_active:
        try:
            mem.store(entry)
        except Exception:  # noqa: BLE001 - the ranking is already computed
            unsaved = True

    counters = Counters(
        policy_calls=counting.calls,
        policy_by_op=dict(counting.by_op),
        agent_calls=dict(runtime.calls),
    )
    return AlertAnalysis(
        alert_id=alert.alert_id,
        ranking=ranking,
        transcript=transcript,
        decision=decision,
        entry=entry,
        counters=counters,
        wall_ms=(timer() - t_begin) * 1000.0,
        unsaved=unsaved,
    )


def _merge_stages(base: list[Step], extra: list[Step]) -> list[Step]:
    """Keep initial steps first, then all reflection steps, preserving order."""
    initial = [s for s in base if s.stage == "Initial"]
    reflection = [s for s in base if s.stage == "Reflection"]
    return initial + reflection + list(extra)


# -- window orchestration ----------------------------------------------------------


@dataclass
class WindowReport:
    window: tuple[int, int]
    analyses: list[AlertAnalysis]
    window_ranking: RootCauseRanking
    failures: list[dict]

    @property
    def decision_histogram(self) -> dict[str, int]:
        hist: dict[str, int] = {}
        for a in self.analyses:
            hist[a.decision.kind] = hist.get(a.decision.kind, 0) + 1
        return hist

    @property
    def total_policy_calls(self) -> int:
        return sum(a.counters.policy_calls for a in self.analyses)

    @property
    def total_wall_ms(self) -> float:
        return sum(a.wall_ms for a in self.analyses)

    @property
    def seconds_per_query(self) -> float:
        if not self.analyses:
            return 0.0
        return self.total_wall_ms / len(self.analyses) / 1000.0

    def as_dict(self, include_timing: bool = True) -> dict:
        out = {
            "window": {"start": self.window[0], "end": self.window[1]},
            "alerts": [a.as_dict(include_timing) for a in self.analyses],
            "window_ranking": self.window_ranking.as_rows(),
            "decisions": self.decision_histogram,
            "total_policy_calls": self.total_policy_calls,
            "failures": list(self.failures),
        }
        if include_timing:
            out["seconds_per_query"] = round(self.seconds_per_query, 6)
        return out


def aggregate_rankings(rankings: list[RootCauseRanking]) -> RootCauseRanking:
    """Window-level merge: summed reciprocal rank per (level, component)."""
    from .agents import Candidate

    acc: dict[tuple[str, str], dict] = {}
    for ranking in rankings:
        for pos, cand in enumerate(ranking, start=1):
            slot = acc.setdefault((cand.level, cand.root_cause), {
                "score": 0.0, "time": cand.evidence_time, "evidence": [], "reasons": [],
            })
            slot["score"] += 1.0 / pos
            slot["time"] = min(slot["time"], cand.evidence_time)
            slot["evidence"].extend(cand.evidence)
            if cand.reason not in slot["reasons"]:
                slot["reasons"].append(cand.reason)
    merged = [
        Candidate(
            level=level, root_cause=comp,
            reason=" | ".join(slot["reasons"][:3]),
            evidence=sorted(set(slot["evidence"])),
            score=slot["score"],
            evidence_time=slot["time"],
        )
        for (level, comp), slot in acc.items()
    ]
    merged.sort(key=lambda c: (-c.score, c.evidence_time, c.root_cause, c.level))
    return RootCauseRanking(merged)


def analyze_window(
    window: AlertWindow,
    store: TelemetryStore,
    topology: Topology,
    mem: Memory | None,
    policy: PolicyContract,
    config: Config,
    timer=time.perf_counter,
) -> WindowReport:
    """Analyze a window's alerts in timestamp order, isolating failures.

    Sequential processing is deliberate: earlier alerts become reuse
    precedents for later ones. The aggregated ranking scores each
    (level, component) by its summed reciprocal rank across alerts.
    """
    analyses: list[AlertAnalysis] = []
    failures: list[dict] = []
    for alert in sorted(window.alerts, key=lambda a: (a.timestamp, a.alert_id)):
        try:
            analyses.append(analyze_alert(alert, store, topology, mem, policy, config, timer))
        except Exception as exc:  # noqa: BLE001 - per-alert isolation
            failures.append({"alert_id": alert.alert_id, "error": str(exc)})
    ranking = aggregate_rankings([a.ranking for a in analyses])
    return WindowReport(
        window=(window.start, window.end),
        analyses=analyses,
        window_ranking=ranking,
        failures=failures,
    )


# -- transcript export ----------------------------------------------------------------


def evidence_digest(step: Step) -> str:
    payload = json.dumps(step.as_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _topology_snapshot(transcript: Transcript, topology: Topology) -> dict:
    """Pod mappings for every pod the transcript touches, so the document
    replays without the original topology file."""
    pods = {s.pod for s in transcript.steps}
    for s in transcript.steps:
        for entry in s.log_evidence:
            if topology.level_of(entry.component) == "pod":
                pods.add(entry.component)
        for anomaly in s.metric_evidence:
            if topology.level_of(anomaly.component) == "pod":
                pods.add(anomaly.component)
    known = sorted(p for p in pods if topology.service_of(p) is not None)
    return {
        "pod_to_service": {p: topology.pod_to_service[p] for p in known},
        "pod_to_node": {p: topology.pod_to_node[p] for p in known},
    }


def export_transcript(analysis: AlertAnalysis, topology: Topology) -> str:
    """Replayable transcript document: ordered step records with evidence
    digests, a topology snapshot, and the ranking the steps produced."""
    doc = {
        "alert_id": analysis.alert_id,
        "stage_markers": dict(analysis.transcript.stage_markers),
        "topology": _topology_snapshot(analysis.transcript, topology),
        "steps": [
            dict(s.as_dict(), evidence_digest=evidence_digest(s))
            for s in analysis.transcript.steps
        ],
        "ranking": analysis.ranking.as_rows(),
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def replay_transcript(text: str, config: Config) -> tuple[RootCauseRanking, list[dict]]:
    """Re-run final review over an exported transcript; returns the
    recomputed ranking and the stored rows for comparison."""
    doc = json.loads(text)
    steps = [Step.from_dict({k: v for k, v in s.items() if k != "evidence_digest"})
             for s in doc["steps"]]
    topology = Topology(
        pod_to_service=dict(doc["topology"]["pod_to_service"]),
        pod_to_node=dict(doc["topology"]["pod_to_node"]),
    )
    ranking = consolidate(steps, topology, _weights(config))
    return ranking, doc["ranking"]


def render_transcript(text: str) -> str:
    """Human-readable rendering of an exported transcript document."""
    doc = json.loads(text)
    lines = [f"alert {doc['alert_id']}"]
    for s in doc["steps"]:
        flags = []
        if s["stale"]:
            flags.append("stale")
        if s["errored"]:
            flags.append("errored")
        suffix = f" [{' ,'.join(flags)}]" if flags else ""
        lines.append(
            f"  [{s['index']:>3}] {s['stage']:<10} {s['pod']}/{s['op']}"
            f" -> {s['verdict']}{suffix}"
        )
        lines.append(f"        {s['instruction']}")
        if s["metric_evidence"]:
            worst = max(s["metric_evidence"], key=lambda a: a["max_deviation"])
            lines.append(
                f"        metrics: {len(s['metric_evidence'])} anomalies, worst "
                f"{worst['metric']}@{worst['component']} at "
                f"{worst['max_deviation']:.2f} sigma"
            )
        if s["log_evidence"]:
            lines.append(f"        logs: {len(s['log_evidence'])} relevant entries")
    lines.append("  ranking:")
    for row in doc["ranking"]:
        lines.append(
            f"    {row['rank']:>2}. {row['level']}:{row['root_cause']} "
            f"score={row['score']:.4f}"
        )
    return "\n".join(lines) + "\n"
