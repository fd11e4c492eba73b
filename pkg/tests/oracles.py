"""Independent brute-force references used to check the library.

Everything here recomputes results from first principles with dense loops:
no sparse indexing, no torch graphs, no shared code paths with the package.
"""

from __future__ import annotations

import math

import numpy as np

from copl.graph import SignedBipartiteGraph


def make_graph(
    num_users: int,
    num_responses: int,
    pos_edges: set[tuple[int, int]],
    neg_edges: set[tuple[int, int]],
) -> SignedBipartiteGraph:
    """Build a graph object directly from edge sets (test topologies)."""

    def arrays(prefix, edges):
        ordered = sorted(edges)
        users = np.array([u for u, _ in ordered], dtype=np.int64)
        resps = np.array([r for _, r in ordered], dtype=np.int64)
        user_adj = [[] for _ in range(num_users)]
        resp_adj = [[] for _ in range(num_responses)]
        for u, r in ordered:
            user_adj[u].append(r)
            resp_adj[r].append(u)
        return {
            f"{prefix}_edge_users": users,
            f"{prefix}_edge_resps": resps,
            f"{prefix}_user_adj": tuple(np.array(a, dtype=np.int64) for a in user_adj),
            f"{prefix}_resp_adj": tuple(np.array(sorted(a), dtype=np.int64) for a in resp_adj),
        }

    return SignedBipartiteGraph(
        num_users=num_users,
        num_responses=num_responses,
        **arrays("pos", pos_edges),
        **arrays("neg", neg_edges),
    )


def random_graph(rng: np.random.Generator, max_users: int = 8, max_responses: int = 8):
    """Random signed bipartite graph, possibly with conflicting-sign edges
    and isolated nodes."""
    num_users = int(rng.integers(1, max_users + 1))
    num_responses = int(rng.integers(1, max_responses + 1))
    pos, neg = set(), set()
    for u in range(num_users):
        for r in range(num_responses):
            roll = rng.random()
            if roll < 0.25:
                pos.add((u, r))
            elif roll < 0.45:
                neg.add((u, r))
            elif roll < 0.5:
                pos.add((u, r))
                neg.add((u, r))
    return make_graph(num_users, num_responses, pos, neg)


def dense_propagate(
    graph: SignedBipartiteGraph,
    e_u0: np.ndarray,
    e_r0: np.ndarray,
    layer_mats: list[dict[str, np.ndarray]],
    activation,
    use_negative_edges: bool = True,
    use_transform: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Literal per-node, per-edge recomputation of the propagation update.

    ``layer_mats`` holds, per layer, matrices keyed w1..w4, w_self and the
    hatted response-side names.  With ``use_transform`` off, every matrix is
    the identity and the activation is the identity.
    """
    pos = set(zip(graph.pos_edge_users.tolist(), graph.pos_edge_resps.tolist()))
    neg = set(zip(graph.neg_edge_users.tolist(), graph.neg_edge_resps.tolist()))
    pos_du = [0] * graph.num_users
    pos_dr = [0] * graph.num_responses
    neg_du = [0] * graph.num_users
    neg_dr = [0] * graph.num_responses
    for u, r in pos:
        pos_du[u] += 1
        pos_dr[r] += 1
    for u, r in neg:
        neg_du[u] += 1
        neg_dr[r] += 1

    d = e_u0.shape[1]
    eye = np.eye(d)
    act = activation if use_transform else (lambda x: x)
    e_u = e_u0.copy()
    e_r = e_r0.copy()
    for mats in layer_mats:
        if use_transform:
            get = lambda name: mats[name]
        else:
            get = lambda name: eye
        new_u = np.zeros_like(e_u)
        for u in range(graph.num_users):
            m = get("w_self") @ e_u[u]
            for r in range(graph.num_responses):
                if (u, r) in pos:
                    a = 1.0 / math.sqrt(pos_du[u] * pos_dr[r])
                    m = m + a * (get("w1") @ e_r[r] + get("w2") @ (e_r[r] * e_u[u]))
                if use_negative_edges and (u, r) in neg:
                    b = 1.0 / math.sqrt(neg_du[u] * neg_dr[r])
                    m = m + b * (get("w3") @ e_r[r] + get("w4") @ (e_r[r] * e_u[u]))
            new_u[u] = act(m)
        new_r = np.zeros_like(e_r)
        for r in range(graph.num_responses):
            m = get("w_self_hat") @ e_r[r]
            for u in range(graph.num_users):
                if (u, r) in pos:
                    a = 1.0 / math.sqrt(pos_du[u] * pos_dr[r])
                    m = m + a * (get("w1_hat") @ e_u[u] + get("w2_hat") @ (e_u[u] * e_r[r]))
                if use_negative_edges and (u, r) in neg:
                    b = 1.0 / math.sqrt(neg_du[u] * neg_dr[r])
                    m = m + b * (get("w3_hat") @ e_u[u] + get("w4_hat") @ (e_u[u] * e_r[r]))
            new_r[r] = act(m)
        e_u, e_r = new_u, new_r
    return e_u, e_r


def leaky_relu(slope: float):
    def act(x):
        return np.where(x >= 0, x, slope * x)

    return act


def central_differences(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar fn at x, one central difference per coordinate."""
    grad = np.zeros_like(x)
    for i in range(x.size):
        bumped = x.copy()
        bumped[i] = x[i] + h
        up = fn(bumped)
        bumped[i] = x[i] - h
        down = fn(bumped)
        grad[i] = (up - down) / (2.0 * h)
    return grad


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def naive_adapted_matrix(
    w0: np.ndarray,
    a_shared: np.ndarray,
    b_shared: np.ndarray,
    a_experts: np.ndarray,
    b_experts: np.ndarray,
    logits: np.ndarray,
    tau: float,
) -> np.ndarray:
    """Form every delta product separately with the full top-1 definition."""
    num_experts = logits.shape[0]
    exp = np.exp(logits / tau - np.max(logits / tau))
    probs = exp / exp.sum()
    top = int(np.argmax(logits))
    out = w0.copy()
    out = out + a_shared @ b_shared
    for i in range(num_experts):
        w_i = probs[i] if i == top else 0.0
        out = out + w_i * (a_experts[i] @ b_experts[i])
    return out


def log_sigmoid(x: float) -> float:
    # stable in both tails
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))
