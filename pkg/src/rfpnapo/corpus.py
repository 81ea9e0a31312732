"""Prompt corpus pipeline: toxicity filter, two dedup passes, clustering, resampling.

Stage order is fixed: toxicity -> token-set dedup -> embedding dedup ->
k-means -> per-cluster resampling. Both dedup passes are keep-first greedy
scans, so earlier records win ties.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, ParseError, ShapeError
from .fileio import fmt17, parse_float, read_text, write_text


@dataclass
class PromptRecord:
    """One corpus row: stable id, prompt text, toxicity score, embedding."""

    id: str
    text: str
    toxicity: float
    embedding: np.ndarray

    def __post_init__(self):
        self.embedding = np.asarray(self.embedding, dtype=np.float64)
        if self.embedding.ndim != 1:
            raise ShapeError(f"embedding for {self.id!r} must be 1-D")


@dataclass(frozen=True)
class CorpusPipelineConfig:
    toxicity_threshold: float = 0.1
    jaccard_threshold: float = 0.8
    cosine_threshold: float = 0.8
    n_clusters: int = 100
    per_cluster: int = 200
    kmeans_iters: int = 50

    def __post_init__(self):
        for name in ("toxicity_threshold", "jaccard_threshold", "cosine_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")
        if self.n_clusters < 1 or self.per_cluster < 1 or self.kmeans_iters < 1:
            raise ConfigurationError("cluster counts and iteration cap must be >= 1")


def toxicity_filter(records: list[PromptRecord], threshold: float) -> list[PromptRecord]:
    """Keep exactly the records with toxicity <= threshold, preserving order."""
    return [r for r in records if r.toxicity <= threshold]


def _token_set(text: str) -> frozenset[str]:
    return frozenset(text.lower().split())


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 1.0  # two empty prompts are identical
    union = len(a | b)
    return len(a & b) / union


def jaccard_dedup(records: list[PromptRecord], threshold: float) -> list[PromptRecord]:
    """Drop any record whose token-set similarity with an earlier kept one exceeds threshold."""
    kept: list[PromptRecord] = []
    kept_tokens: list[frozenset[str]] = []
    for rec in records:
        tokens = _token_set(rec.text)
        if any(jaccard(tokens, seen) > threshold for seen in kept_tokens):
            continue
        kept.append(rec)
        kept_tokens.append(tokens)
    return kept


def embedding_dedup(records: list[PromptRecord], threshold: float) -> list[PromptRecord]:
    """Drop records with cosine similarity > threshold against an earlier kept one."""
    units = []
    for rec in records:
        norm = float(np.linalg.norm(rec.embedding))
        if norm == 0.0:
            raise DataError(f"zero-norm embedding for record {rec.id!r}")
        units.append(rec.embedding / norm)
    kept: list[PromptRecord] = []
    kept_units: list[np.ndarray] = []
    for rec, unit in zip(records, units):
        if kept_units and float(np.max(np.stack(kept_units) @ unit)) > threshold:
            continue
        kept.append(rec)
        kept_units.append(unit)
    return kept


def lloyd_iterations(
    x: np.ndarray, k: int, iters: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Seeded k-means: weighted farthest-point init, then Lloyd updates.

    Returns (assignments, centers, objective_trace); the trace records the
    within-cluster squared distance after each assignment step and never
    increases. Empty clusters keep their previous center.
    """
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[int(rng.integers(n))]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total == 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))

    assignments = np.full(n, -1, dtype=np.int64)
    trace: list[float] = []
    for _ in range(iters):
        dists = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assignments = np.argmin(dists, axis=1)
        trace.append(float(np.sum(dists[np.arange(n), new_assignments])))
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for j in range(k):
            members = x[assignments == j]
            if members.shape[0] > 0:
                centers[j] = members.mean(axis=0)
    return assignments, centers, trace


def kmeans_cluster(records: list[PromptRecord], k: int, iters: int, seed: int) -> np.ndarray:
    """Assign each record to one of k clusters by its embedding. Deterministic per seed."""
    n = len(records)
    if k < 1:
        raise ConfigurationError(f"cluster count must be >= 1, got {k}")
    if k > n:
        raise ConfigurationError(f"cannot form {k} clusters from {n} records")
    if iters < 1:
        raise ConfigurationError(f"iteration cap must be >= 1, got {iters}")
    x = np.stack([r.embedding for r in records])
    assignments, _, _ = lloyd_iterations(x, k, iters, np.random.default_rng(seed))
    return assignments


def cluster_resample(
    records: list[PromptRecord], assignments: np.ndarray, per_cluster: int, seed: int
) -> list[PromptRecord]:
    """Uniformly keep min(per_cluster, size) records per cluster, without replacement.

    Output is ordered by (cluster id, original index). RNG consumption order:
    one choice call per cluster, ascending cluster id.
    """
    if per_cluster < 1:
        raise ConfigurationError(f"per-cluster quota must be >= 1, got {per_cluster}")
    assignments = np.asarray(assignments)
    if assignments.shape != (len(records),):
        raise ShapeError("assignments must align with records")
    rng = np.random.default_rng(seed)
    out: list[PromptRecord] = []
    for cid in sorted(set(int(a) for a in assignments)):
        members = np.flatnonzero(assignments == cid)
        take = min(per_cluster, members.size)
        chosen = rng.choice(members, size=take, replace=False)
        out.extend(records[i] for i in sorted(int(i) for i in chosen))
    return out


def run_pipeline(
    records: list[PromptRecord], cfg: CorpusPipelineConfig, seed: int
) -> tuple[list[PromptRecord], dict[str, int]]:
    """Run all stages in order; returns (survivors, per-stage counts)."""
    counts = {"input": len(records)}
    survivors = toxicity_filter(records, cfg.toxicity_threshold)
    counts["after_toxicity"] = len(survivors)
    survivors = jaccard_dedup(survivors, cfg.jaccard_threshold)
    counts["after_jaccard"] = len(survivors)
    survivors = embedding_dedup(survivors, cfg.cosine_threshold)
    counts["after_cosine"] = len(survivors)
    if not survivors:  # nothing left to cluster; empty in, empty out
        counts["clusters"] = 0
        counts["output"] = 0
        return [], counts
    assignments = kmeans_cluster(survivors, cfg.n_clusters, cfg.kmeans_iters, seed)
    counts["clusters"] = cfg.n_clusters
    survivors = cluster_resample(survivors, assignments, cfg.per_cluster, seed)
    counts["output"] = len(survivors)
    return survivors, counts


# --- TSV format ---------------------------------------------------------------
# header: id<TAB>text<TAB>tox<TAB>e0..e{m-1}; floats carry 17 significant digits.


def write_corpus(path: str, records: list[PromptRecord], dim: int | None = None) -> None:
    if records:
        dims = {r.embedding.size for r in records}
        if len(dims) != 1:
            raise ShapeError(f"records disagree on embedding dimension: {sorted(dims)}")
        actual = dims.pop()
        if dim is not None and dim != actual:
            raise ShapeError(f"requested dimension {dim} != record dimension {actual}")
        dim = actual
    elif dim is None:
        dim = 0
    header = ["id", "text", "tox"] + [f"e{i}" for i in range(dim)]
    lines = ["\t".join(header)]
    for rec in records:
        if "\t" in rec.text or "\n" in rec.text or "\t" in rec.id or "\n" in rec.id:
            raise DataError(f"record {rec.id!r} contains tab/newline; not representable")
        cells = [rec.id, rec.text, fmt17(rec.toxicity)] + [fmt17(v) for v in rec.embedding]
        lines.append("\t".join(cells))
    write_text(path, "\n".join(lines) + "\n")


def read_corpus(path: str) -> tuple[list[PromptRecord], int]:
    """Parse a corpus TSV. Returns (records, embedding_dim)."""
    content = read_text(path, "corpus")
    lines = content.splitlines()
    if not lines:
        return [], 0
    header = lines[0].split("\t")
    if header[:3] != ["id", "text", "tox"]:
        raise ParseError(f"bad header columns {header[:3]}", line=1)
    dim = len(header) - 3
    if header[3:] != [f"e{i}" for i in range(dim)]:
        raise ParseError("embedding columns must be e0..e{m-1} in order", line=1)
    records: list[PromptRecord] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if raw == "":
            continue
        cells = raw.split("\t")
        if len(cells) != 3 + dim:
            raise ParseError(f"expected {3 + dim} columns, found {len(cells)}", line=lineno)
        rec_id, text = cells[0], cells[1]
        if not rec_id:
            raise ParseError("empty record id", line=lineno)
        tox = parse_float(cells[2], line=lineno)
        if not 0.0 <= tox <= 1.0:
            raise ParseError(f"toxicity {tox} outside [0, 1]", line=lineno)
        embedding = np.array([parse_float(c, line=lineno) for c in cells[3:]])
        records.append(PromptRecord(id=rec_id, text=text, toxicity=tox, embedding=embedding))
    return records, dim
