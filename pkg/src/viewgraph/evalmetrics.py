"""Classification accuracy and retrieval evaluation on global shape features.

Retrieval works on Euclidean distances between global feature vectors. A
ranked list per query is produced once and every metric is computed from
it, so precision/recall/F1 at a cutoff, average precision, NDCG, and the
interpolated precision-recall curve all agree on ordering and tie handling:
equal distances rank by ascending gallery index (stable sort).

All multi-term accumulations inside the metrics use ``math.fsum``, which is
exactly rounded and therefore independent of summation order. A reference
implementation that computes the same quantities with explicit loops gets
bit-identical results, not merely close ones.
"""

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import forward


def accuracy(params, config, dataset) -> float:
    """Fraction of samples whose predicted class matches the label.

    Argmax ties resolve to the lowest class index.
    """
    if dataset.num_samples == 0:
        raise ValueError("cannot score an empty dataset")
    hits = 0
    for sample in dataset.samples:
        probs = forward(sample, params, config).probs
        hits += int(np.argmax(probs)) == sample.label
    return hits / dataset.num_samples


DISTANCES = ("euclidean", "cosine")


@dataclass
class RetrievalRun:
    """Queries against a gallery; when a query is its own gallery entry,
    ``exclude_self`` drops that entry from its ranked list. ``tag`` is a
    free-form range label (e.g. "test-test") carried into reports."""

    query_features: np.ndarray
    query_labels: np.ndarray
    gallery_features: np.ndarray
    gallery_labels: np.ndarray
    exclude_self: bool = False
    distance: str = "euclidean"
    tag: str = ""

    def __post_init__(self):
        self.query_features = np.asarray(self.query_features, dtype=np.float64)
        self.gallery_features = np.asarray(self.gallery_features, dtype=np.float64)
        self.query_labels = np.asarray(self.query_labels, dtype=np.int64)
        self.gallery_labels = np.asarray(self.gallery_labels, dtype=np.int64)
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}, got {self.distance!r}")
        if self.query_features.ndim != 2 or self.gallery_features.ndim != 2:
            raise ValueError("feature arrays must be 2-D (items, feature dim)")
        if self.query_features.shape[1] != self.gallery_features.shape[1]:
            raise ValueError("query and gallery feature dims differ")
        if self.query_labels.shape != (self.query_features.shape[0],):
            raise ValueError("query labels must be 1-D, one per query")
        if self.gallery_labels.shape != (self.gallery_features.shape[0],):
            raise ValueError("gallery labels must be 1-D, one per gallery item")
        if self.query_features.shape[0] == 0 or self.gallery_features.shape[0] == 0:
            raise ValueError("retrieval needs at least one query and one gallery item")
        if self.exclude_self:
            if self.query_features.shape[0] != self.gallery_features.shape[0]:
                raise ValueError("exclude_self requires query set == gallery set")
            if self.gallery_features.shape[0] < 2:
                raise ValueError("exclude_self leaves an empty ranked list")

    @classmethod
    def self_retrieval(cls, features, labels, distance="euclidean") -> "RetrievalRun":
        """Every item queries the rest of its own set."""
        return cls(features, labels, features, labels,
                   exclude_self=True, distance=distance)

    @property
    def num_queries(self) -> int:
        return self.query_features.shape[0]


def distance_matrix(
    queries: np.ndarray, gallery: np.ndarray, metric: str = "euclidean"
) -> np.ndarray:
    """Pairwise distances, (num queries, num gallery).

    Cosine distance is 1 minus the cosine similarity; an all-zero vector is
    treated as maximally distant (distance 1) from everything.
    """
    queries = np.asarray(queries, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if metric == "euclidean":
        rows = [np.sqrt(((gallery - q) ** 2).sum(axis=1)) for q in queries]
        return np.stack(rows)
    if metric == "cosine":
        gnorm = np.sqrt((gallery**2).sum(axis=1))
        rows = []
        for q in queries:
            qnorm = np.sqrt((q**2).sum())
            dots = (gallery * q).sum(axis=1)
            denom = qnorm * gnorm
            sim = np.where(denom > 0.0, dots / np.where(denom > 0.0, denom, 1.0), 0.0)
            rows.append(1.0 - sim)
        return np.stack(rows)
    raise ValueError(f"metric must be one of {DISTANCES}, got {metric!r}")


def rank_gallery(run: RetrievalRun) -> tuple[np.ndarray, np.ndarray]:
    """Ranked gallery indices per query, plus the relevance of each position.

    Returns ``(ranked, relevant)``: ranked is (queries, list length) int64,
    nearest first; relevant is the matching bool array. List length is the
    gallery size, minus one under ``exclude_self``.
    """
    dists = distance_matrix(run.query_features, run.gallery_features, run.distance)
    ranked_rows = []
    for qi in range(run.num_queries):
        row = dists[qi]
        candidates = np.arange(row.shape[0])
        if run.exclude_self:
            candidates = candidates[candidates != qi]
        order = np.argsort(row[candidates], kind="stable")
        ranked_rows.append(candidates[order])
    ranked = np.stack(ranked_rows)
    relevant = run.gallery_labels[ranked] == run.query_labels[:, None]
    return ranked, relevant


def average_precision(relevant_row) -> float:
    """AP of one ranked list: mean of precision at each relevant position.

    A list with no relevant items scores 0.
    """
    hits = 0
    precisions = []
    for pos, rel in enumerate(relevant_row, start=1):
        if rel:
            hits += 1
            precisions.append(hits / pos)
    if hits == 0:
        return 0.0
    return math.fsum(precisions) / hits


def mean_average_precision(run: RetrievalRun) -> float:
    """Mean AP over all queries; zero-relevant queries count as 0."""
    _, relevant = rank_gallery(run)
    return math.fsum(average_precision(row) for row in relevant) / run.num_queries


def ndcg_at(relevant_row, k: int) -> float:
    """Binary-gain NDCG with a log2 position discount, over the first k."""
    if k <= 0:
        return 0.0
    total = int(np.count_nonzero(relevant_row))
    if total == 0:
        return 0.0
    dcg = math.fsum(
        1.0 / math.log2(pos + 1)
        for pos, rel in enumerate(relevant_row[:k], start=1)
        if rel
    )
    ideal = math.fsum(1.0 / math.log2(pos + 1) for pos in range(1, min(total, k) + 1))
    return dcg / ideal


@dataclass
class QueryMetrics:
    """One query's scores at its cutoff (AP always uses the full list)."""

    query: int
    label: int
    cutoff: int
    precision: float
    recall: float
    f1: float
    ap: float
    ndcg: float


@dataclass
class MetricSummary:
    precision: float
    recall: float
    f1: float
    map: float
    ndcg: float


@dataclass
class RetrievalReport:
    """Per-query scores plus query-averaged (micro) and class-averaged
    (macro) summaries."""

    per_query: list
    micro: MetricSummary
    macro: MetricSummary


def _mean_summary(rows: list) -> MetricSummary:
    n = len(rows)
    return MetricSummary(
        precision=math.fsum(r.precision for r in rows) / n,
        recall=math.fsum(r.recall for r in rows) / n,
        f1=math.fsum(r.f1 for r in rows) / n,
        map=math.fsum(r.ap for r in rows) / n,
        ndcg=math.fsum(r.ndcg for r in rows) / n,
    )


def shrec_metrics(run: RetrievalRun, cutoff: Optional[int] = None) -> RetrievalReport:
    """Precision/recall/F1/NDCG at a cutoff plus AP, per query and averaged.

    The default cutoff for a query is the gallery population of its class,
    counted before any self-exclusion, clamped to the ranked-list length; an
    explicit ``cutoff`` applies to every query (same clamp). Queries with no
    relevant gallery items score 0 everywhere and still count in averages.
    The macro summary averages per-class means over the classes present
    among the queries, each class weighted equally.
    """
    if cutoff is not None and cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    ranked, relevant = rank_gallery(run)
    list_len = ranked.shape[1]
    per_query = []
    for qi in range(run.num_queries):
        row = relevant[qi]
        label = int(run.query_labels[qi])
        total = int(np.count_nonzero(row))
        if cutoff is None:
            k = int(np.count_nonzero(run.gallery_labels == label))
        else:
            k = cutoff
        k = min(k, list_len)
        hits = int(np.count_nonzero(row[:k]))
        precision = hits / k if k > 0 else 0.0
        recall = hits / total if total > 0 else 0.0
        f1 = (
            2.0 * precision * recall / (precision + recall)
            if precision + recall > 0
            else 0.0
        )
        per_query.append(
            QueryMetrics(
                query=qi,
                label=label,
                cutoff=k,
                precision=precision,
                recall=recall,
                f1=f1,
                ap=average_precision(row),
                ndcg=ndcg_at(row, k),
            )
        )
    micro = _mean_summary(per_query)
    class_means = [
        _mean_summary([r for r in per_query if r.label == label])
        for label in sorted({r.label for r in per_query})
    ]
    macro = MetricSummary(
        precision=math.fsum(m.precision for m in class_means) / len(class_means),
        recall=math.fsum(m.recall for m in class_means) / len(class_means),
        f1=math.fsum(m.f1 for m in class_means) / len(class_means),
        map=math.fsum(m.map for m in class_means) / len(class_means),
        ndcg=math.fsum(m.ndcg for m in class_means) / len(class_means),
    )
    return RetrievalReport(per_query=per_query, micro=micro, macro=macro)


def pr_curve(run: RetrievalRun, points: int = 21) -> tuple[np.ndarray, np.ndarray]:
    """Interpolated precision at a uniform recall grid, averaged over queries.

    At each grid recall r, a query contributes the maximum precision over
    all list depths whose recall reaches r (the standard interpolation), or
    0 if none does. Returns ``(recalls, precisions)``, both (points,).
    """
    if points < 2:
        raise ValueError(f"need at least 2 grid points, got {points}")
    _, relevant = rank_gallery(run)
    # Grid point t is exactly t/(points-1): elementwise division keeps every
    # grid value correctly rounded, so threshold comparisons against exact
    # stage recalls (hits/total) are reproducible across implementations.
    grid = np.array([t / (points - 1) for t in range(points)], dtype=np.float64)
    per_point = [[] for _ in range(points)]
    for row in relevant:
        total = int(np.count_nonzero(row))
        if total == 0:
            for bucket in per_point:
                bucket.append(0.0)
            continue
        hits = 0
        stages = []  # (recall, precision) at each depth
        for pos, rel in enumerate(row, start=1):
            hits += rel
            stages.append((hits / total, hits / pos))
        for t, r in enumerate(grid):
            reachable = [p for rec, p in stages if rec >= r]
            per_point[t].append(max(reachable) if reachable else 0.0)
    precisions = np.array(
        [math.fsum(bucket) / run.num_queries for bucket in per_point]
    )
    return grid, precisions


def write_metrics_csv(path, report: RetrievalReport) -> None:
    """Two-row summary table: micro and macro averages."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scope", "precision", "recall", "f1", "map", "ndcg"])
        for scope, s in (("micro", report.micro), ("macro", report.macro)):
            writer.writerow(
                [scope] + [f"{v:.17g}" for v in (s.precision, s.recall, s.f1, s.map, s.ndcg)]
            )


def write_per_query_csv(path, report: RetrievalReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["query", "label", "cutoff", "precision", "recall", "f1", "ap", "ndcg"]
        )
        for r in report.per_query:
            writer.writerow(
                [r.query, r.label, r.cutoff]
                + [f"{v:.17g}" for v in (r.precision, r.recall, r.f1, r.ap, r.ndcg)]
            )


def write_pr_csv(path, recalls: np.ndarray, precisions: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recall", "precision"])
        for r, p in zip(recalls, precisions):
            writer.writerow([f"{r:.17g}", f"{p:.17g}"])
