"""Retrieval metrics: mean average precision and precision at K.

Queries are ranked against a gallery by Euclidean distance over real
embeddings or Hamming distance over sign-binarized codes. Ties always
break toward the lower gallery index so evaluation is reproducible down
to the bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .diffcore import Tensor
from .errors import ConfigError, ShapeError

__all__ = [
    "RetrievalReport",
    "average_precision",
    "precision_at_k",
    "binarize",
    "hamming_distance",
    "rank_gallery",
    "evaluate_retrieval",
]

MODES = ("real", "binary")
METRICS = ("euclidean", "hamming")


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def average_precision(relevance) -> float:
    """AP of a ranked 0/1 relevance list; 0.0 when nothing is relevant."""
    rel = np.asarray(relevance, dtype=np.float64)
    if rel.ndim != 1 or rel.size == 0:
        raise ShapeError(f"relevance must be a non-empty 1-D list, got shape {rel.shape}")
    total = rel.sum()
    if total == 0:
        return 0.0
    hits = np.cumsum(rel)
    ranks = np.arange(1, rel.size + 1)
    return float((rel * hits / ranks).sum() / total)


def precision_at_k(relevance, k: int) -> float:
    """Relevant count in the top k over k; positions past the list count as misses."""
    if int(k) < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    rel = np.asarray(relevance, dtype=np.float64)
    if rel.ndim != 1:
        raise ShapeError(f"relevance must be 1-D, got shape {rel.shape}")
    return float(rel[: int(k)].sum() / int(k))


def binarize(x) -> np.ndarray:
    """Elementwise sign into {-1, +1}, with sign(0) = +1."""
    arr = _as_array(x)
    return np.where(arr >= 0.0, 1.0, -1.0)


def hamming_distance(a, b) -> int:
    """Number of disagreeing positions between two sign codes."""
    a, b = _as_array(a).ravel(), _as_array(b).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"code lengths differ: {a.shape} vs {b.shape}")
    return int((a != b).sum())


def rank_gallery(query, gallery, metric: str = "euclidean") -> np.ndarray:
    """Gallery indices sorted by ascending distance to the query.

    Equal distances preserve ascending index order, so the permutation is a
    deterministic function of the inputs.
    """
    if metric not in METRICS:
        raise ConfigError(f"metric must be one of {METRICS}, got {metric!r}")
    q = _as_array(query).ravel()
    g = _as_array(gallery)
    if g.ndim != 2:
        raise ShapeError(f"gallery must be 2-D, got shape {g.shape}")
    if g.shape[1] != q.size:
        raise ShapeError(f"query dim {q.size} does not match gallery dim {g.shape[1]}")
    if metric == "euclidean":
        diff = g - q[None, :]
        dists = np.sqrt((diff * diff).sum(axis=1))
    else:
        dists = (g != q[None, :]).sum(axis=1).astype(np.float64)
    return np.argsort(dists, kind="stable")


@dataclass
class RetrievalReport:
    """Aggregate retrieval quality for one query set against one gallery."""

    map_all: float
    prec_at: dict[int, float]
    per_query_ap: np.ndarray
    mode: str
    num_queries: int = field(default=0)

    def __post_init__(self):
        self.per_query_ap = np.asarray(self.per_query_ap, dtype=np.float64)
        if self.num_queries == 0:
            self.num_queries = int(self.per_query_ap.size)

    def to_json(self) -> str:
        doc = {
            "map_all": self.map_all,
            "prec": {str(k): v for k, v in sorted(self.prec_at.items())},
            "mode": self.mode,
            "num_queries": self.num_queries,
        }
        return json.dumps(doc, sort_keys=True)


def evaluate_retrieval(
    sketch_queries,
    sketch_labels,
    image_gallery,
    image_labels,
    ks=(10, 100),
    mode: str = "real",
) -> RetrievalReport:
    """Rank the gallery for every query and aggregate AP and Prec@K.

    Real mode ranks by Euclidean distance on the embeddings as given;
    binary mode sign-binarizes both sides and ranks by Hamming distance.
    Relevance is exact label match.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    q = _as_array(sketch_queries)
    g = _as_array(image_gallery)
    ql = np.asarray(sketch_labels)
    gl = np.asarray(image_labels)
    if q.ndim != 2 or g.ndim != 2:
        raise ShapeError("queries and gallery must be 2-D")
    if g.shape[0] == 0:
        raise ConfigError("gallery is empty")
    if q.shape[0] == 0:
        raise ConfigError("query set is empty")
    if q.shape[1] != g.shape[1]:
        raise ShapeError(f"query dim {q.shape[1]} does not match gallery dim {g.shape[1]}")
    if ql.shape != (q.shape[0],) or gl.shape != (g.shape[0],):
        raise ShapeError("labels must align one-to-one with embeddings")
    bad = [int(k) for k in ks if int(k) < 1]
    if bad:
        raise ConfigError(f"every K must be >= 1, got {bad}")

    metric = "euclidean"
    if mode == "binary":
        q, g = binarize(q), binarize(g)
        metric = "hamming"

    aps = np.empty(q.shape[0])
    prec_sums = {int(k): 0.0 for k in ks}
    for i in range(q.shape[0]):
        order = rank_gallery(q[i], g, metric)
        rel = (gl[order] == ql[i]).astype(np.float64)
        aps[i] = average_precision(rel)
        for k in prec_sums:
            prec_sums[k] += precision_at_k(rel, k)
    n = q.shape[0]
    return RetrievalReport(
        map_all=float(aps.mean()),
        prec_at={k: s / n for k, s in prec_sums.items()},
        per_query_ap=aps,
        mode=mode,
        num_queries=n,
    )
