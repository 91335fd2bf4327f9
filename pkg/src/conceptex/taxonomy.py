"""Topic-taxonomy induction over typical concepts.

Typical concepts are the most populous concepts in the corpus. Their pairwise
similarity is the entity-set overlap coefficient |a∩b| / (min(|a|,|b|) + delta);
spectral clustering on that matrix groups them, and the cluster count is picked
by the normalized sum of silhouette and Calinski-Harabasz scores.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from .corpus import EntityRecord


@dataclass
class ConceptNode:
    name: str
    entity_set: frozenset[str]

    @property
    def entity_count(self) -> int:
        return len(self.entity_set)


@dataclass
class SimilarityMatrix:
    concepts: list[ConceptNode]
    values: np.ndarray
    delta: float

    def __post_init__(self) -> None:
        n = len(self.concepts)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (n, n):
            raise ValueError(f"expected a {n}x{n} matrix, got {self.values.shape}")
        if not np.allclose(self.values, self.values.T):
            raise ValueError("similarity matrix must be symmetric")
        if (self.values < 0).any() or (self.values >= 1).any():
            raise ValueError("overlap coefficients must lie in [0, 1)")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.concepts]


@dataclass
class Taxonomy:
    k: int
    clusters: list[dict]  # {"topic": str, "concepts": [str]}
    delta: float = 1.0
    selection_scores: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.k != len(self.clusters):
            raise ValueError("k must equal the number of clusters")
        names = [c["topic"] for c in self.clusters]
        if len(set(names)) != len(names):
            raise ValueError("topic names must be unique")

    @property
    def topic_names(self) -> list[str]:
        return [c["topic"] for c in self.clusters]

    def concept_to_topic(self) -> dict[str, str]:
        return {concept: c["topic"] for c in self.clusters for concept in c["concepts"]}

    def topic_of(self, concept: str) -> Optional[str]:
        return self.concept_to_topic().get(concept)

    def cluster_of(self, concept: str) -> Optional[list[str]]:
        for c in self.clusters:
            if concept in c["concepts"]:
                return list(c["concepts"])
        return None

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "delta": self.delta,
            "clusters": [{"topic": c["topic"], "concepts": list(c["concepts"])} for c in self.clusters],
            "selection_scores": self.selection_scores,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Taxonomy":
        return cls(
            k=obj["k"],
            clusters=[{"topic": c["topic"], "concepts": list(c["concepts"])} for c in obj["clusters"]],
            delta=obj.get("delta", 1.0),
            selection_scores=obj.get("selection_scores", []),
        )


def select_typical_concepts(records: Sequence[EntityRecord], top_n: int) -> list[ConceptNode]:
    """Rank concepts by entity count (ties lexicographic) and keep the top_n."""
    entities_by_concept: dict[str, set[str]] = {}
    for rec in records:
        for concept in rec.concepts:
            entities_by_concept.setdefault(concept, set()).add(rec.entity)
    if len(entities_by_concept) < top_n:
        warnings.warn(
            f"only {len(entities_by_concept)} distinct concepts available "
            f"(top_n={top_n}); returning all"
        )
    ranked = sorted(entities_by_concept.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    return [ConceptNode(name=name, entity_set=frozenset(ents)) for name, ents in ranked[:top_n]]


def concept_coverage(records: Sequence[EntityRecord], nodes: Sequence[ConceptNode]) -> float:
    """Fraction of labeled entities covered by the selected concepts."""
    labeled = {rec.entity for rec in records if rec.concepts}
    if not labeled:
        return 0.0
    covered = set()
    for node in nodes:
        covered |= node.entity_set
    return len(covered & labeled) / len(labeled)


def overlap_coefficient(a: frozenset | set, b: frozenset | set, delta: float) -> float:
    """|a∩b| / (min(|a|,|b|) + delta); symmetric, in [0, 1) for delta > 0."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    inter = len(set(a) & set(b))
    return inter / (min(len(a), len(b)) + delta)


def build_similarity_matrix(nodes: Sequence[ConceptNode], delta: float = 1.0) -> SimilarityMatrix:
    if not nodes:
        raise ValueError("need at least one concept node")
    n = len(nodes)
    values = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            v = overlap_coefficient(nodes[i].entity_set, nodes[j].entity_set, delta)
            values[i, j] = values[j, i] = v
    return SimilarityMatrix(concepts=list(nodes), values=values, delta=delta)


def _spectral_embedding(values: np.ndarray, k: int) -> np.ndarray:
    """Row-normalized bottom-k eigenvectors of the symmetric normalized Laplacian."""
    degrees = values.sum(axis=1)
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(degrees > 0, 1.0 / np.sqrt(np.maximum(degrees, 1e-300)), 0.0)
    lap = np.eye(len(values)) - inv_sqrt[:, None] * values * inv_sqrt[None, :]
    eigvals, eigvecs = np.linalg.eigh(lap)
    n_components = int(np.sum(eigvals < 1e-10))
    if n_components > 1:
        warnings.warn(
            f"similarity graph has {n_components} connected components; clustering proceeds on them"
        )
    emb = eigvecs[:, :k]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return emb / norms


def spectral_cluster(matrix: SimilarityMatrix, k: int, seed: int) -> np.ndarray:
    """Cluster concepts into k groups; deterministic given seed."""
    n = len(matrix.concepts)
    if not (2 <= k <= n):
        raise ValueError(f"k={k} out of range [2, {n}]")
    emb = _spectral_embedding(matrix.values, k)
    km = KMeans(n_clusters=k, n_init=10, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        labels = km.fit_predict(emb)
    return labels


def _minmax(series: np.ndarray) -> np.ndarray:
    lo, hi = series.min(), series.max()
    if hi == lo:
        return np.zeros_like(series)
    return (series - lo) / (hi - lo)


def _calinski_harabasz(points: np.ndarray, labels: np.ndarray) -> float:
    """(between dispersion / (k-1)) / (within dispersion / (n-k)).

    A clustering with zero within-cluster dispersion scores +inf (a perfect
    partition must not lose to an imperfect one).
    """
    n = len(points)
    ids = np.unique(labels)
    k = len(ids)
    center = points.mean(axis=0)
    between = 0.0
    within = 0.0
    for cid in ids:
        members = points[labels == cid]
        c = members.mean(axis=0)
        between += len(members) * float(((c - center) ** 2).sum())
        within += float(((members - c) ** 2).sum())
    if within == 0.0:
        return float("inf")
    return (between / (k - 1)) / (within / (n - k))


def select_cluster_count(
    matrix: SimilarityMatrix, k_range: tuple[int, int], seed: int
) -> tuple[int, list[dict]]:
    """Pick k maximizing min-max-normalized silhouette + Calinski-Harabasz.

    Both scores are computed on the spectral embedding used for k-means at each
    candidate k. A k that yields degenerate clusters is skipped with a warning.
    Ties break toward the smaller k.
    """
    k_min, k_max = k_range
    n = len(matrix.concepts)
    if not (2 <= k_min <= k_max <= n):
        raise ValueError(f"k_range {k_range} outside [2, {n}]")

    candidates: list[int] = []
    sc_vals: list[float] = []
    chi_vals: list[float] = []
    skipped: list[int] = []
    for k in range(k_min, k_max + 1):
        labels = spectral_cluster(matrix, k, seed)
        emb = _spectral_embedding(matrix.values, k)
        if len(set(labels)) < k or k >= n:
            warnings.warn(f"k={k} produced degenerate clusters; skipped")
            skipped.append(k)
            continue
        try:
            sc = silhouette_score(emb, labels)
            chi = _calinski_harabasz(emb, labels)
        except ValueError:
            warnings.warn(f"k={k} not scorable; skipped")
            skipped.append(k)
            continue
        candidates.append(k)
        sc_vals.append(float(sc))
        chi_vals.append(float(chi))

    if not candidates:
        # Every k scored -inf; the tie rule picks the smallest k in range.
        scores = [{"k": k, "sc": None, "chi": None, "sum_norm": None} for k in skipped]
        return k_min, scores

    # Zero within-cluster variance makes CHI infinite; cap it at the series max
    # so the min-max normalization stays finite and the perfect k still wins.
    chi_arr = np.array(chi_vals)
    if np.isinf(chi_arr).any():
        finite = chi_arr[np.isfinite(chi_arr)]
        cap = finite.max() if finite.size else 1.0
        chi_arr = np.where(np.isinf(chi_arr), max(cap, 1.0) * (1.0 + 1e-9), chi_arr)
    sc_norm = _minmax(np.array(sc_vals))
    chi_norm = _minmax(chi_arr)
    total = sc_norm + chi_norm
    best = int(np.argmax(total))  # argmax takes the first maximum: smallest k wins ties
    k_star = candidates[best]

    scores = [
        {
            "k": k,
            "sc": sc_vals[i],
            "chi": chi_vals[i] if np.isfinite(chi_vals[i]) else None,
            "sum_norm": float(total[i]),
        }
        for i, k in enumerate(candidates)
    ]
    scores.extend({"k": k, "sc": None, "chi": None, "sum_norm": None} for k in skipped)
    scores.sort(key=lambda d: d["k"])
    return k_star, scores


def assign_topic_labels(
    matrix: SimilarityMatrix,
    assignment: np.ndarray,
    label_map: Optional[Mapping[int, str]] = None,
    selection_scores: Optional[list[dict]] = None,
) -> Taxonomy:
    """Turn a cluster assignment into a named Taxonomy; unnamed clusters get topic_<i>."""
    label_map = dict(label_map or {})
    cluster_ids = sorted(set(int(c) for c in assignment))
    names = [label_map.get(cid, f"topic_{cid}") for cid in cluster_ids]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate topic names in label map: {sorted(names)}")
    clusters = []
    for cid, name in zip(cluster_ids, names):
        members = [matrix.concepts[i].name for i in range(len(assignment)) if int(assignment[i]) == cid]
        clusters.append({"topic": name, "concepts": members})
    return Taxonomy(
        k=len(clusters),
        clusters=clusters,
        delta=matrix.delta,
        selection_scores=selection_scores or [],
    )


def induce_taxonomy(
    records: Sequence[EntityRecord],
    top_n: int = 100,
    delta: float = 1.0,
    k_range: tuple[int, int] = (3, 30),
    seed: int = 0,
    label_map: Optional[Mapping[int, str]] = None,
) -> Taxonomy:
    """Full induction: typical concepts -> similarity -> k selection -> clustering."""
    nodes = select_typical_concepts(records, top_n)
    matrix = build_similarity_matrix(nodes, delta)
    k_min, k_max = k_range
    k_max = min(k_max, len(nodes) - 1 if len(nodes) > 2 else len(nodes))
    k_min = min(k_min, k_max)
    k_star, scores = select_cluster_count(matrix, (k_min, k_max), seed)
    assignment = spectral_cluster(matrix, k_star, seed)
    return assign_topic_labels(matrix, assignment, label_map, selection_scores=scores)
