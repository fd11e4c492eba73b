"""Embedding estimation for users that never entered the training graph.

A new user contributes a handful of annotated response pairs.  Walking the
existing graph from the user's preferred responses through positive edges
only (even hop counts land on user nodes) yields candidate seen users; each
candidate is scored by how well its predicted margins agree with the new
user's labels, and the new embedding is the softmax-weighted average of the
candidates'.  Unweighted averaging and direct likelihood ascent on a free
embedding are provided as the comparison strategies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gcf import EmbeddingTable
from .graph import SignedBipartiteGraph

FALLBACK_GLOBAL_MEAN = "global_mean"
FALLBACK_ERROR = "error"


@dataclass
class AdaptConfig:
    k: int = 2
    kappa: float = 0.07
    fallback: str = FALLBACK_GLOBAL_MEAN

    def __post_init__(self):
        if self.k < 2 or self.k % 2 != 0:
            raise ValueError("k must be an even hop count >= 2")
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0")
        if self.fallback not in (FALLBACK_GLOBAL_MEAN, FALLBACK_ERROR):
            raise ValueError(f"unknown fallback {self.fallback!r}")

    def to_dict(self) -> dict:
        return {"k": self.k, "kappa": float(self.kappa), "fallback": self.fallback}

    @classmethod
    def from_dict(cls, d: dict) -> "AdaptConfig":
        return cls(**d)


@dataclass
class UnseenUser:
    """Pairwise annotations (preferred_response_id, rejected_response_id)."""

    annotations: list[tuple[int, int]]
    user_id: int | None = None

    def __post_init__(self):
        self.annotations = [(int(a), int(b)) for a, b in self.annotations]


class EmptyNeighborhoodError(RuntimeError):
    pass


def khop_positive_users(graph: SignedBipartiteGraph, unseen: UnseenUser, k: int) -> set[int]:
    """Seen users reachable from the unseen user within k hops of positive
    edges only, collected at every even depth.

    The unseen user's own positive edges point at the responses it preferred.
    """
    if k < 2 or k % 2 != 0:
        raise ValueError("k must be an even hop count >= 2")
    if not unseen.annotations:
        raise ValueError("unseen user has no annotations")
    for a, b in unseen.annotations:
        if not (0 <= a < graph.num_responses and 0 <= b < graph.num_responses):
            raise ValueError(f"annotation references unknown response ({a}, {b})")
    frontier_resps = {a for a, _ in unseen.annotations}
    seen_resps = set(frontier_resps)
    seen_users: set[int] = set()
    collected: set[int] = set()
    for _ in range(k // 2):
        new_users: set[int] = set()
        for r in frontier_resps:
            for u in graph.pos_resp_adj[r]:
                if int(u) not in seen_users:
                    new_users.add(int(u))
        seen_users |= new_users
        collected |= new_users
        frontier_resps = set()
        for u in new_users:
            for r in graph.pos_user_adj[u]:
                if int(r) not in seen_resps:
                    frontier_resps.add(int(r))
        seen_resps |= frontier_resps
        if not frontier_resps and not new_users:
            break
    return collected


def alignment_score(
    embeddings: EmbeddingTable, seen_user: int, annotations: list[tuple[int, int]]
) -> float:
    """Sum of log-sigmoid margins of ``seen_user`` over the unseen user's
    annotated pairs; always <= 0, closer to 0 means better agreement."""
    e_u = embeddings.user_embeddings[seen_user]
    a_idx = np.array([a for a, _ in annotations], dtype=np.int64)
    b_idx = np.array([b for _, b in annotations], dtype=np.int64)
    margins = (embeddings.response_embeddings[a_idx] - embeddings.response_embeddings[b_idx]) @ e_u
    # log sigmoid(m) = -log(1 + exp(-m))
    return float(-np.logaddexp(0.0, -margins).sum())


def adaptation_weights(
    graph: SignedBipartiteGraph,
    embeddings: EmbeddingTable,
    unseen: UnseenUser,
    cfg: AdaptConfig,
) -> tuple[list[int], np.ndarray]:
    """Neighborhood user ids (sorted) and their softmax(alignment/kappa)
    weights; empty neighborhood yields ([], [])."""
    neighbors = sorted(khop_positive_users(graph, unseen, cfg.k))
    if not neighbors:
        return [], np.zeros(0, dtype=np.float64)
    gammas = np.array(
        [alignment_score(embeddings, u, unseen.annotations) for u in neighbors], dtype=np.float64
    )
    shifted = (gammas - gammas.max()) / cfg.kappa
    weights = np.exp(shifted)
    return neighbors, weights / weights.sum()


def _fallback_embedding(embeddings: EmbeddingTable, fallback: str) -> np.ndarray:
    if fallback == FALLBACK_GLOBAL_MEAN:
        return embeddings.user_embeddings.mean(axis=0)
    raise EmptyNeighborhoodError("no positively-connected seen users to adapt from")


def adapt_embedding(
    graph: SignedBipartiteGraph,
    embeddings: EmbeddingTable,
    unseen: UnseenUser,
    cfg: AdaptConfig,
) -> np.ndarray:
    """Alignment-weighted average of the k-hop positive neighborhood's
    embeddings; falls back per config when the neighborhood is empty."""
    neighbors, weights = adaptation_weights(graph, embeddings, unseen, cfg)
    if not neighbors:
        return _fallback_embedding(embeddings, cfg.fallback)
    return weights @ embeddings.user_embeddings[neighbors]


def naive_average(
    graph: SignedBipartiteGraph,
    embeddings: EmbeddingTable,
    unseen: UnseenUser,
    k: int = 2,
    fallback: str = FALLBACK_GLOBAL_MEAN,
) -> np.ndarray:
    """Unweighted mean of the k-hop positive neighborhood's embeddings."""
    neighbors = sorted(khop_positive_users(graph, unseen, k))
    if not neighbors:
        return _fallback_embedding(embeddings, fallback)
    return embeddings.user_embeddings[neighbors].mean(axis=0)


def user_opt(
    embeddings: EmbeddingTable,
    unseen: UnseenUser,
    steps: int = 50,
    lr: float = 0.1,
    return_trace: bool = False,
):
    """Gradient ascent on the annotation log-likelihood of a free embedding,
    starting from zero, with response embeddings frozen."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not unseen.annotations:
        raise ValueError("user_opt requires at least one annotation")
    a_idx = np.array([a for a, _ in unseen.annotations], dtype=np.int64)
    b_idx = np.array([b for _, b in unseen.annotations], dtype=np.int64)
    diffs = embeddings.response_embeddings[a_idx] - embeddings.response_embeddings[b_idx]
    e = np.zeros(embeddings.d, dtype=np.float64)

    def objective(v: np.ndarray) -> float:
        return float(-np.logaddexp(0.0, -(diffs @ v)).sum())

    trace = [objective(e)]
    for _ in range(steps):
        margins = diffs @ e
        # d/dm log sigmoid(m) = 1 - sigmoid(m) = exp(-logaddexp(0, m))
        grad = diffs.T @ np.exp(-np.logaddexp(0.0, margins))
        e = e + lr * grad
        if not np.all(np.isfinite(e)):
            raise RuntimeError("user_opt diverged to non-finite embedding")
        trace.append(objective(e))
    return (e, trace) if return_trace else e
