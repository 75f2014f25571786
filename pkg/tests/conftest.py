"""Shared fixtures: a hand-built incident data set and small store builders.

The "walkthrough" store encodes a frontend request that timed out through
its recommendation path: the root span errors with status 13, exactly one
child call carries a timeout-scale latency, the recommendation service
metrics fluctuate hardest, and sibling pods of the slow pod log errors
naming the service. Several tests pin expected behaviour against it.
"""

from __future__ import annotations

import pytest

from rootcause.telemetry import (
    Alert,
    LogEntry,
    MetricSample,
    Span,
    TelemetryStore,
    Topology,
)

T0 = 1_700_000_100_000  # alert epicenter, ms since epoch

WALKTHROUGH_TOPOLOGY = {
    "frontend2-0": ("frontend", "node-1"),
    "cartservice2-0": ("cartservice", "node-2"),
    "currencyservice2-0": ("currencyservice", "node-2"),
    "recommendationservice2-0": ("recommendationservice", "node-5"),
    "recommendationservice-0": ("recommendationservice", "node-3"),
    "recommendationservice-1": ("recommendationservice", "node-4"),
    "productcatalogservice-0": ("productcatalogservice", "node-6"),
}


def make_topology(mapping: dict[str, tuple[str, str]]) -> Topology:
    return Topology(
        pod_to_service={pod: svc for pod, (svc, _) in mapping.items()},
        pod_to_node={pod: node for pod, (_, node) in mapping.items()},
    )


def make_span(
    trace_id="tr-1",
    span_id="s0",
    parent=None,
    cmdb="pod-a",
    service="svc-a",
    operation="svc-a/op",
    start=T0,
    duration=10,
    status=0,
) -> Span:
    return Span(
        trace_id=trace_id,
        span_id=span_id,
        parent_span_id=parent,
        cmdb_id=cmdb,
        service=service,
        operation=operation,
        start_time=start,
        duration=duration,
        status_code=status,
    )


def cycle_series(
    component: str,
    metric: str,
    base: float,
    amp: float,
    t_lo: int,
    t_hi: int,
    period_ms: int = 2_000,
    shift: float = 0.0,
    shift_lo: int | None = None,
    shift_hi: int | None = None,
) -> list[MetricSample]:
    """Deterministic triangle-wave series base + amp*{-1,0,1,0} with an
    optional additive shift over [shift_lo, shift_hi]."""
    wave = (-1.0, 0.0, 1.0, 0.0)
    out = []
    t = t_lo
    i = 0
    while t <= t_hi:
        v = base + amp * wave[i % 4]
        if shift and shift_lo is not None and shift_lo <= t <= shift_hi:
            v += shift
        out.append(MetricSample(t, component, metric, v))
        t += period_ms
        i += 1
    return out


def walkthrough_spans() -> list[Span]:
    k = dict
    rows = [
        k(span_id="s0", parent=None, cmdb="frontend2-0", service="frontend",
          operation="Frontend/Recv", start=T0, duration=10_000, status=13),
        k(span_id="s1", parent="s0", cmdb="cartservice2-0", service="cartservice",
          operation="CartService/GetCart", start=T0 + 2, duration=12, status=0),
        k(span_id="s2", parent="s0", cmdb="recommendationservice2-0",
          service="recommendationservice", operation="RecommendationService/List",
          start=T0 + 20, duration=9_800, status=0),
        k(span_id="s3", parent="s0", cmdb="currencyservice2-0", service="currencyservice",
          operation="CurrencyService/GetSupportedCurrencies", start=T0 + 25,
          duration=15, status=0),
        k(span_id="s4", parent="s2", cmdb="recommendationservice2-0",
          service="recommendationservice", operation="ProductCatalogService/GetProducts",
          start=T0 + 40, duration=9_500, status=13),
        k(span_id="s5", parent="s4", cmdb="productcatalogservice-0",
          service="productcatalogservice", operation="ProductCatalogService/Query",
          start=T0 + 60, duration=18, status=0),
    ]
    return [make_span(trace_id="tr-walkthrough", **row) for row in rows]


def walkthrough_store(n_service_logs: int = 6) -> TelemetryStore:
    spans = walkthrough_spans()
    horizon_lo = T0 - 8 * 60_000
    horizon_hi = T0 + 40_000
    w_lo, w_hi = T0 - 30_000, T0 + 30_000

    metrics: list[MetricSample] = []
    # Quiet pods: amp 1 wave, never beyond ~1.5 sigma.
    for pod in ("frontend2-0", "cartservice2-0", "currencyservice2-0",
                "productcatalogservice-0", "recommendationservice-0",
                "recommendationservice-1"):
        metrics += cycle_series(pod, "cpu_pct", 50.0, 1.0, horizon_lo, horizon_hi)
    # The slow pod shows a clear but moderate excursion (~3.5 sigma)...
    metrics += cycle_series(
        "recommendationservice2-0", "rt_ms", 100.0, 2.0, horizon_lo, horizon_hi,
        shift=2.95, shift_lo=w_lo, shift_hi=w_hi,
    )
    # ...while its service-level series fluctuates hardest (~9 sigma).
    metrics += cycle_series(
        "recommendationservice", "err_rate", 2.0, 0.5, horizon_lo, horizon_hi,
        shift=2.68, shift_lo=w_lo, shift_hi=w_hi,
    )
    # Quiet service and node series so vertical expansion has data to clear.
    metrics += cycle_series("frontend", "err_rate", 1.0, 0.5, horizon_lo, horizon_hi)
    metrics += cycle_series("productcatalogservice", "err_rate", 1.0, 0.5, horizon_lo, horizon_hi)
    for node in ("node-1", "node-2", "node-3", "node-4", "node-5", "node-6"):
        metrics += cycle_series(node, "cpu_pct", 40.0, 1.0, horizon_lo, horizon_hi)

    logs: list[LogEntry] = []
    for i in range(n_service_logs):
        pod = "recommendationservice-0" if i % 2 == 0 else "recommendationservice-1"
        logs.append(LogEntry(
            timestamp=T0 - 10_000 + i * 3_000,
            component=pod,
            level="ERROR",
            kind="conn_err",
            message="recommendationservice upstream timeout",
        ))
    # Background noise logs, INFO level, filtered out by relevance.
    for i in range(10):
        logs.append(LogEntry(
            timestamp=w_lo + i * 6_000,
            component="frontend2-0",
            level="INFO",
            kind="heartbeat",
            message="ok",
        ))

    alert = Alert(
        alert_id="alert-1",
        timestamp=T0,
        trace_id="tr-walkthrough",
        entry_span_id="s0",
        description="frontend latency and error",
    )
    return TelemetryStore(
        spans, logs, metrics, [alert], make_topology(WALKTHROUGH_TOPOLOGY)
    )


@pytest.fixture(scope="session")
def walkthrough():
    store = walkthrough_store()
    return store, store.alerts[0]
