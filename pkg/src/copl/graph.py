"""Signed bipartite user-response graph built from pairwise annotations.

Every annotation contributes one positive edge (user -> preferred response)
and one negative edge (user -> rejected response).  Duplicate edges with the
same sign are deduplicated; the same (user, response) pair may carry both a
positive and a negative edge when a user's annotations conflict, and both
are retained.  The graph is immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .prefdata import PREFER_A, PreferenceDataset

POSITIVE = "+"
NEGATIVE = "-"


@dataclass(frozen=True)
class SignedBipartiteGraph:
    num_users: int
    num_responses: int
    # edge lists sorted by (user, response); one row per deduplicated edge
    pos_edge_users: np.ndarray
    pos_edge_resps: np.ndarray
    neg_edge_users: np.ndarray
    neg_edge_resps: np.ndarray
    # adjacency in both directions, sorted ascending
    pos_user_adj: tuple[np.ndarray, ...]
    pos_resp_adj: tuple[np.ndarray, ...]
    neg_user_adj: tuple[np.ndarray, ...]
    neg_resp_adj: tuple[np.ndarray, ...]

    @property
    def pos_deg_user(self) -> np.ndarray:
        return np.array([len(a) for a in self.pos_user_adj], dtype=np.int64)

    @property
    def pos_deg_resp(self) -> np.ndarray:
        return np.array([len(a) for a in self.pos_resp_adj], dtype=np.int64)

    @property
    def neg_deg_user(self) -> np.ndarray:
        return np.array([len(a) for a in self.neg_user_adj], dtype=np.int64)

    @property
    def neg_deg_resp(self) -> np.ndarray:
        return np.array([len(a) for a in self.neg_resp_adj], dtype=np.int64)

    @property
    def num_pos_edges(self) -> int:
        return len(self.pos_edge_users)

    @property
    def num_neg_edges(self) -> int:
        return len(self.neg_edge_users)

    def has_edge(self, sign: str, user: int, resp: int) -> bool:
        adj = self.pos_user_adj if sign == POSITIVE else self.neg_user_adj
        if not 0 <= user < self.num_users:
            return False
        return bool(np.isin(resp, adj[user], assume_unique=True))


def build_graph(dataset: PreferenceDataset) -> SignedBipartiteGraph:
    """Index the training annotations of ``dataset`` as a signed bipartite graph."""
    num_users = len(dataset.users)
    num_responses = len(dataset.responses)
    user_ids = sorted(u.user_id for u in dataset.users)
    resp_ids = sorted(r.response_id for r in dataset.responses)
    if user_ids != list(range(num_users)) or resp_ids != list(range(num_responses)):
        raise ValueError("graph construction requires contiguous user and response ids")

    items = dataset.items_by_id()
    pos: set[tuple[int, int]] = set()
    neg: set[tuple[int, int]] = set()
    for ann in dataset.annotations:
        item = items.get(ann.item_id)
        if item is None:
            raise ValueError(f"annotation references missing item {ann.item_id}")
        if not 0 <= ann.user_id < num_users:
            raise ValueError(f"annotation references missing user {ann.user_id}")
        if ann.preferred == PREFER_A:
            liked, disliked = item.response_a_id, item.response_b_id
        else:
            liked, disliked = item.response_b_id, item.response_a_id
        pos.add((ann.user_id, liked))
        neg.add((ann.user_id, disliked))

    return SignedBipartiteGraph(
        num_users=num_users,
        num_responses=num_responses,
        **_edge_arrays("pos", pos, num_users, num_responses),
        **_edge_arrays("neg", neg, num_users, num_responses),
    )


def _edge_arrays(prefix: str, edges: set[tuple[int, int]], num_users: int, num_responses: int) -> dict:
    ordered = sorted(edges)
    users = np.array([u for u, _ in ordered], dtype=np.int64)
    resps = np.array([r for _, r in ordered], dtype=np.int64)
    user_adj: list[list[int]] = [[] for _ in range(num_users)]
    resp_adj: list[list[int]] = [[] for _ in range(num_responses)]
    for u, r in ordered:
        user_adj[u].append(r)
        resp_adj[r].append(u)
    return {
        f"{prefix}_edge_users": users,
        f"{prefix}_edge_resps": resps,
        f"{prefix}_user_adj": tuple(np.array(a, dtype=np.int64) for a in user_adj),
        f"{prefix}_resp_adj": tuple(np.array(sorted(a), dtype=np.int64) for a in resp_adj),
    }


def norm_factor(sign: str, user: int, resp: int, graph: SignedBipartiteGraph) -> float:
    """Symmetric degree normalization 1/sqrt(|N_u| * |N_r|) for an existing edge."""
    if sign not in (POSITIVE, NEGATIVE):
        raise ValueError(f"sign must be {POSITIVE!r} or {NEGATIVE!r}")
    if not graph.has_edge(sign, user, resp):
        raise ValueError(f"no {sign} edge between user {user} and response {resp}")
    if sign == POSITIVE:
        du = len(graph.pos_user_adj[user])
        dr = len(graph.pos_resp_adj[resp])
    else:
        du = len(graph.neg_user_adj[user])
        dr = len(graph.neg_resp_adj[resp])
    return 1.0 / math.sqrt(du * dr)


def edge_norm_factors(graph: SignedBipartiteGraph, sign: str) -> np.ndarray:
    """Normalization factor per edge, aligned with the graph's edge arrays."""
    if sign == POSITIVE:
        users, resps = graph.pos_edge_users, graph.pos_edge_resps
        deg_u, deg_r = graph.pos_deg_user, graph.pos_deg_resp
    else:
        users, resps = graph.neg_edge_users, graph.neg_edge_resps
        deg_u, deg_r = graph.neg_deg_user, graph.neg_deg_resp
    if len(users) == 0:
        return np.zeros(0, dtype=np.float64)
    return 1.0 / np.sqrt(deg_u[users] * deg_r[resps]).astype(np.float64)
