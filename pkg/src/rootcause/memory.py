"""Graph-keyed reasoning memory.

Each analyzed alert leaves behind an entry: the causal graph, its
canonical fingerprint, its retrieval embedding, metadata, and the full
reasoning transcript. A new alert first runs nearest-neighbor search over
the stored embeddings, then exact similarity scoring on the shortlist,
and lands in one of three bands: reuse the stored transcript outright,
resume reasoning at the nodes that diverged, or start fresh.

Retrieval is an exact linear scan over the embedding matrix; at the entry
counts this engine sees (well under 1e4) an ANN index would be pure
overhead. ``Memory._nn_shortlist`` is the seam to replace if that ever
changes.

Concurrency: single writer, many readers. ``store`` and ``persist``
serialize through one lock and readers always see a complete entry,
never a partial one.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import MemoryIntegrityError, MemoryValidationError
from .graph import CausalGraph, Embedding, Fingerprint, divergence, embed, fingerprint, from_text, similarity, to_text

FORMAT_NAME = "rootcause-memory"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class MemoryEntry:
    f: Fingerprint
    e: Embedding
    graph: CausalGraph
    meta: tuple[int, str]  # (timestamp_ms, alert_id)
    transcript: "object"  # reasoner.Transcript; duck-typed to avoid a cycle

    @property
    def alert_id(self) -> str:
        return self.meta[1]

    @property
    def timestamp(self) -> int:
        return self.meta[0]


@dataclass
class Decision:
    kind: str  # "Reuse" | "Resume" | "Fresh"
    matched: MemoryEntry | None
    similarity: float
    divergent_nodes: set[str] = field(default_factory=set)
    degraded: bool = False  # Resume band collapsed to Reuse: no divergent nodes

    def __post_init__(self):
        if self.kind not in ("Reuse", "Resume", "Fresh"):
            raise MemoryValidationError(f"unknown decision kind {self.kind!r}")


class Memory:
    """Store of analyzed alerts keyed by graph fingerprint."""

    def __init__(self, dim: int = 128, alpha: float = 0.5):
        self.dim = dim
        self.alpha = alpha
        self._entries: dict[str, MemoryEntry] = {}
        self._order: list[str] = []  # insertion order of fingerprints
        self._by_alert: dict[str, str] = {}
        self._lock = threading.Lock()
        self.replacements = 0

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> list[MemoryEntry]:
        return [self._entries[fp] for fp in self._order]

    def by_alert(self, alert_id: str) -> MemoryEntry | None:
        fp = self._by_alert.get(alert_id)
        return self._entries.get(fp) if fp else None

    def store(self, entry: MemoryEntry) -> None:
        """Insert or replace (latest wins on identical fingerprint)."""
        expected = fingerprint(entry.graph)
        if entry.f.digest != expected.digest:
            raise MemoryValidationError(
                f"entry fingerprint {entry.f.digest[:12]} does not match its graph "
                f"(expected {expected.digest[:12]})"
            )
        expected_e = embed(entry.graph, self.dim)
        if not np.allclose(entry.e.vector, expected_e.vector, atol=1e-12):
            raise MemoryValidationError("entry embedding does not match its graph")
        for step in getattr(entry.transcript, "steps", []):
            if step.node not in entry.graph.nodes:
                raise MemoryValidationError(
                    f"transcript step {step.index} references node {step.node!r} "
                    "absent from the stored graph"
                )
        with self._lock:
            fp = entry.f.digest
            if fp in self._entries:
                self.replacements += 1
                old = self._entries[fp]
                self._by_alert.pop(old.alert_id, None)
            else:
                self._order.append(fp)
            self._entries[fp] = entry
            self._by_alert[entry.alert_id] = fp

    # -- retrieval ------------------------------------------------------

    def _nn_shortlist(self, g_new: CausalGraph, k_prime: int) -> list[MemoryEntry]:
        order = self._order
        if not order:
            return []
        matrix = np.stack([self._entries[fp].e.vector for fp in order])
        query = embed(g_new, self.dim).vector
        cosines = matrix @ query  # embeddings are unit or zero norm
        ranked = sorted(
            range(len(order)), key=lambda i: (-cosines[i], order[i])
        )[:k_prime]
        return [self._entries[order[i]] for i in ranked]

    def retrieve(self, g_new: CausalGraph, k: int) -> list[tuple[MemoryEntry, float]]:
        """Top-k stored entries by exact similarity.

        A cosine shortlist of size max(4k, 32) is scored exactly; whenever
        the store fits inside the shortlist this equals exhaustive search.
        """
        if k < 1:
            raise MemoryValidationError(f"retrieve k must be >= 1, got {k}")
        k_prime = max(4 * k, 32)
        scored = [
            (entry, similarity(g_new, entry.graph, self.alpha, self.dim))
            for entry in self._nn_shortlist(g_new, k_prime)
        ]
        scored.sort(key=lambda pair: (-pair[1], pair[0].f.digest))
        return scored[:k]

    def decide(
        self,
        g_new: CausalGraph,
        tau_skip: float,
        tau_partial: float,
        delta: float,
    ) -> Decision:
        """Three-way reuse decision against the best stored match."""
        if not (0.0 <= tau_partial <= tau_skip <= 1.0):
            raise MemoryValidationError(
                f"need 0 <= tau_partial <= tau_skip <= 1, got {tau_partial}, {tau_skip}"
            )
        best = self.retrieve(g_new, 1) if len(self) else []
        if not best:
            return Decision(kind="Fresh", matched=None, similarity=0.0)
        entry, score = best[0]
        if score >= tau_skip:
            return Decision(kind="Reuse", matched=entry, similarity=score)
        if score >= tau_partial:
            nodes = divergence(g_new, entry.graph, delta)
            if not nodes:
                # In the resume band yet nothing diverges past delta:
                # degrade to reuse and record the degenerate case.
                return Decision(kind="Reuse", matched=entry, similarity=score, degraded=True)
            return Decision(kind="Resume", matched=entry, similarity=score, divergent_nodes=nodes)
        return Decision(kind="Fresh", matched=entry, similarity=score)

    # -- persistence ----------------------------------------------------

    def persist(self, path) -> None:
        """Write a manifest plus one checksummed record per entry."""
        with self._lock:
            lines = [_canonical_json({
                "format": FORMAT_NAME,
                "version": FORMAT_VERSION,
                "dim": self.dim,
                "alpha": self.alpha,
                "entries": len(self._order),
            })]
            for fp in self._order:
                entry = self._entries[fp]
                body = {
                    "fingerprint": entry.f.digest,
                    "timestamp_ms": entry.timestamp,
                    "alert_id": entry.alert_id,
                    "embedding": [float(x) for x in entry.e.vector],
                    "graph": to_text(entry.graph),
                    "transcript": _transcript_to_dict(entry.transcript),
                }
                body["checksum"] = _checksum(body)
                lines.append(_canonical_json(body))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Memory":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except FileNotFoundError:
            raise MemoryIntegrityError(f"memory file not found: {path}")
        if not lines:
            raise MemoryIntegrityError(f"{path}: empty memory file")
        manifest = _parse_json(path, 1, lines[0])
        if manifest.get("format") != FORMAT_NAME:
            raise MemoryIntegrityError(f"{path}:1: not a memory file")
        if manifest.get("version") != FORMAT_VERSION:
            raise MemoryIntegrityError(
                f"{path}:1: unsupported version {manifest.get('version')}"
            )
        expected = manifest.get("entries", 0)
        records = lines[1:]
        if len(records) != expected:
            raise MemoryIntegrityError(
                f"{path}: truncated, manifest declares {expected} entries "
                f"but found {len(records)}"
            )
        mem = cls(dim=manifest["dim"], alpha=manifest["alpha"])
        from .reasoner import Transcript  # local import to avoid a module cycle

        for lineno, raw in enumerate(records, start=2):
            body = _parse_json(path, lineno, raw)
            stated = body.pop("checksum", None)
            if stated != _checksum(body):
                raise MemoryIntegrityError(
                    f"{path}:{lineno}: checksum mismatch in entry record"
                )
            graph = from_text(body["graph"])
            entry = MemoryEntry(
                f=Fingerprint(body["fingerprint"]),
                e=Embedding(np.asarray(body["embedding"], dtype=np.float64)),
                graph=graph,
                meta=(body["timestamp_ms"], body["alert_id"]),
                transcript=Transcript.from_dict(body["transcript"]),
            )
            mem.store(entry)
        mem.replacements = 0
        return mem


def load_raw_records(path) -> list[tuple[int, dict]]:
    """Entry record bodies without invariant enforcement, for auditing.

    Checksums are not verified here; the point of a verify pass is to
    report inconsistencies in whatever the file claims, not to refuse to
    read it.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise MemoryIntegrityError(f"memory file not found: {path}")
    if not lines:
        raise MemoryIntegrityError(f"{path}: empty memory file")
    manifest = _parse_json(path, 1, lines[0])
    if manifest.get("format") != FORMAT_NAME:
        raise MemoryIntegrityError(f"{path}:1: not a memory file")
    return [
        (lineno, _parse_json(path, lineno, raw))
        for lineno, raw in enumerate(lines[1:], start=2)
        if raw.strip()
    ]


def remap(entry: MemoryEntry, g_new: CausalGraph):
    """Re-bind a stored transcript onto a new alert's graph.

    Steps are matched through the (pod, operation) identity key; a step
    whose node has no counterpart in the new graph is marked stale and
    will be excluded from consolidation.
    """
    from .reasoner import Transcript

    new_keys = {g_new.nodes[n].key: n for n in g_new.nodes}
    steps = []
    for step in entry.transcript.steps:
        old_attrs = entry.graph.nodes.get(step.node)
        key = old_attrs.key if old_attrs else None
        target = new_keys.get(key) if key else None
        if target is None:
            steps.append(step.evolve(stale=True))
        else:
            span_ids = g_new.nodes[target].span_ids
            steps.append(step.evolve(
                node=target,
                span=span_ids[0] if span_ids else step.span,
                stale=False,
            ))
    return Transcript(
        alert_id=g_new.alert_id,
        steps=steps,
        stage_markers=dict(entry.transcript.stage_markers),
    )


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _checksum(body: dict) -> str:
    return hashlib.sha256(_canonical_json(body).encode()).hexdigest()


def _parse_json(path, lineno: int, raw: str) -> dict:
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MemoryIntegrityError(f"{path}:{lineno}: corrupt record: {exc}")


def _transcript_to_dict(transcript) -> dict:
    return transcript.as_dict()
