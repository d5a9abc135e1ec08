"""Cross-modal ranking and category-based retrieval metrics."""

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionMismatchError, EmptyInputError, ValidationError, ZeroNormRowError
from .numerics import as_matrix

DEFAULT_SCOPES = (10, 25, 50, 100, 250, 500, 1000)
DIRECTIONS = ("a2v", "v2a")


@dataclass
class EvalReport:
    map_a2v: float
    map_v2a: float
    map_avg: float
    precision_scope: dict = field(default_factory=dict)
    per_category_ap: dict = field(default_factory=dict)
    n_queries: int = 0
    n_candidates: int = 0

    def to_dict(self):
        d = asdict(self)
        d["precision_scope"] = {
            k: [[int(s), float(p)] for s, p in v] for k, v in self.precision_scope.items()
        }
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def precision_scope_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["direction", "K", "precision"])
        for direction in DIRECTIONS:
            for k, p in self.precision_scope.get(direction, []):
                w.writerow([direction, k, repr(float(p))])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["precision_scope"] = {
            k: [(int(s), float(p)) for s, p in v] for k, v in d["precision_scope"].items()
        }
        return cls(**d)


def _unit_rows(m, name):
    norms = np.linalg.norm(m, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ZeroNormRowError(f"{name} row {bad[0]} has zero norm", row=int(bad[0]))
    return m / norms[:, None]


def similarity_matrix(queries, candidates):
    """Cosine similarity between every query row and every candidate row."""
    q = as_matrix(queries, "queries")
    c = as_matrix(candidates, "candidates")
    if q.shape[1] != c.shape[1]:
        raise DimensionMismatchError(
            f"queries have {q.shape[1]} columns, candidates {c.shape[1]}"
        )
    s = _unit_rows(q, "queries") @ _unit_rows(c, "candidates").T
    return np.clip(s, -1.0, 1.0)


def rank(similarities):
    """Candidate indices by descending score; ties keep ascending index order."""
    s = np.asarray(similarities, dtype=np.float64)
    if np.isnan(s).any():
        raise ValidationError("similarity scores contain NaN")
    return np.argsort(-s, kind="stable")


def _relevance_rows(order, cand_labels, query_labels):
    return cand_labels[order] == np.asarray(query_labels)[:, None]


def _ap_rows(rel):
    """Average precision of each row of a boolean relevance matrix."""
    hits = np.cumsum(rel, axis=1)
    positions = np.arange(1, rel.shape[1] + 1)
    n_rel = rel.sum(axis=1)
    total = np.where(rel, hits / positions, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n_rel > 0, total / np.maximum(n_rel, 1), 0.0)


def average_precision(ranked_labels, query_label):
    """AP of one ranked list; 0 when nothing in the list is relevant."""
    labels = np.asarray(ranked_labels)
    if labels.size == 0:
        raise EmptyInputError("ranked list is empty")
    return float(_ap_rows((labels == query_label)[None, :])[0])


def _direction_metrics(order, query_labels, cand_labels, scopes, c):
    rel = _relevance_rows(order, cand_labels, query_labels)
    ap = _ap_rows(rel)
    hits = np.cumsum(rel, axis=1)
    curve = [(k, float(np.mean(hits[:, k - 1] / k))) for k in scopes]
    per_cat = []
    for cat in range(c):
        mask = query_labels == cat
        per_cat.append(float(ap[mask].mean()) if mask.any() else 0.0)
    return float(ap.mean()), curve, per_cat


def _clip_scopes(scopes, nc):
    return sorted({min(int(k), nc) for k in scopes if int(k) >= 1})


def evaluate_orders(order_a2v, order_v2a, labels, scopes=DEFAULT_SCOPES, c=None):
    """Metrics from precomputed ranked candidate lists (one row per query)."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if n == 0:
        raise EmptyInputError("no queries to evaluate")
    if c is None:
        c = int(labels.max()) + 1
    scopes = _clip_scopes(scopes, n)
    m1, p1, c1 = _direction_metrics(np.asarray(order_a2v), labels, labels, scopes, c)
    m2, p2, c2 = _direction_metrics(np.asarray(order_v2a), labels, labels, scopes, c)
    return EvalReport(
        map_a2v=m1,
        map_v2a=m2,
        map_avg=(m1 + m2) / 2.0,
        precision_scope={"a2v": p1, "v2a": p2},
        per_category_ap={"a2v": c1, "v2a": c2},
        n_queries=n,
        n_candidates=n,
    )


def rank_all(similarities):
    """Row-wise :func:`rank` of a full similarity matrix."""
    s = np.asarray(similarities, dtype=np.float64)
    if np.isnan(s).any():
        raise ValidationError("similarity scores contain NaN")
    return np.argsort(-s, axis=1, kind="stable")


def evaluate(audio_emb, visual_emb, labels, scopes=DEFAULT_SCOPES, c=None):
    """Audio→visual and visual→audio retrieval over one paired test set.

    Every item queries the complete opposite-modality set, its own paired
    counterpart included. A candidate is relevant when it shares the query's
    category.
    """
    a = as_matrix(audio_emb, "audio_emb")
    v = as_matrix(visual_emb, "visual_emb")
    labels = np.asarray(labels, dtype=np.int64)
    if not a.shape[0] == v.shape[0] == labels.size:
        raise DimensionMismatchError(
            f"row counts differ: audio {a.shape[0]}, visual {v.shape[0]}, labels {labels.size}"
        )
    sim = similarity_matrix(a, v)
    return evaluate_orders(rank_all(sim), rank_all(sim.T), labels, scopes, c)
