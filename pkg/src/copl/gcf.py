"""Signed message-passing network over the preference graph.

Each layer aggregates, per node, a degree-normalized sum of neighbor
messages along positive and negative edges separately.  A neighbor message
combines a linear term and a term bilinear in the two endpoint embeddings
(elementwise product), with separate weight matrices per edge sign and per
node side, plus a self transform.  The final-layer embeddings score a
(user, response) pair by inner product, and training maximizes the
log-likelihood of the observed pairwise choices under a logistic choice
model with L2 regularization over all weights and initial embeddings.

All tensors are float64: desk-scale problems are small and the test suite
checks propagation and gradients against independent references at tight
tolerances.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .graph import NEGATIVE, POSITIVE, SignedBipartiteGraph, edge_norm_factors
from .jsonio import dump_file, format_float, load_file
from .optim import TrainingDiverged, make_warmup_cosine

ACTIVATIONS = ("leaky_relu", "identity")


class PropagationError(RuntimeError):
    pass


@dataclass
class GcfHyperparams:
    d: int = 32
    layers: int = 4
    lam: float = 1e-6
    lr: float = 1e-2
    epochs: int = 150
    batch_size: int = 1024
    warmup_ratio: float = 0.1
    activation: str = "leaky_relu"
    leaky_slope: float = 0.01
    use_negative_edges: bool = True
    use_transform: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ValueError("warmup_ratio must lie in [0, 1]")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "layers": self.layers,
            "lam": float(self.lam),
            "lr": float(self.lr),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "warmup_ratio": float(self.warmup_ratio),
            "activation": self.activation,
            "leaky_slope": float(self.leaky_slope),
            "use_negative_edges": self.use_negative_edges,
            "use_transform": self.use_transform,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GcfHyperparams":
        return cls(**d)


@dataclass
class EmbeddingTable:
    """Final-layer embeddings for all users and responses."""

    user_embeddings: np.ndarray  # (num_users, d)
    response_embeddings: np.ndarray  # (num_responses, d)

    def __post_init__(self):
        self.user_embeddings = np.asarray(self.user_embeddings, dtype=np.float64)
        self.response_embeddings = np.asarray(self.response_embeddings, dtype=np.float64)
        if not (np.all(np.isfinite(self.user_embeddings)) and np.all(np.isfinite(self.response_embeddings))):
            raise ValueError("embeddings must be finite")

    @property
    def d(self) -> int:
        return self.user_embeddings.shape[1]


def score(embeddings: EmbeddingTable, user: int, resp: int) -> float:
    """Inner-product preference score of ``resp`` for ``user``."""
    if not 0 <= user < len(embeddings.user_embeddings):
        raise IndexError(f"user index {user} out of range")
    if not 0 <= resp < len(embeddings.response_embeddings):
        raise IndexError(f"response index {resp} out of range")
    return float(embeddings.user_embeddings[user] @ embeddings.response_embeddings[resp])


def predict_pair(embeddings: EmbeddingTable, user: int, resp_a: int, resp_b: int) -> str:
    """Predicted choice between two responses; ties go to the first."""
    return "A" if score(embeddings, user, resp_a) >= score(embeddings, user, resp_b) else "B"


class _GcfLayer(nn.Module):
    """Per-layer transforms: w1..w4 + w_self on the user side, the hatted
    counterparts on the response side."""

    NAMES = ("w1", "w2", "w3", "w4", "w_self")

    def __init__(self, d: int, generator: torch.Generator):
        super().__init__()
        bound = (6.0 / (2 * d)) ** 0.5
        for name in self.NAMES:
            for side in ("", "_hat"):
                w = torch.empty(d, d, dtype=torch.float64)
                w.uniform_(-bound, bound, generator=generator)
                setattr(self, name + side, nn.Parameter(w))


class GcfModel(nn.Module):
    def __init__(self, num_users: int, num_responses: int, hyper: GcfHyperparams):
        super().__init__()
        self.num_users = num_users
        self.num_responses = num_responses
        self.hyper = hyper
        gen = torch.Generator().manual_seed(hyper.rng_seed)
        bound = 1.0 / hyper.d**0.5
        e_u = torch.empty(num_users, hyper.d, dtype=torch.float64)
        e_r = torch.empty(num_responses, hyper.d, dtype=torch.float64)
        e_u.uniform_(-bound, bound, generator=gen)
        e_r.uniform_(-bound, bound, generator=gen)
        self.user_embed0 = nn.Parameter(e_u)
        self.resp_embed0 = nn.Parameter(e_r)
        if hyper.use_transform:
            self.layers = nn.ModuleList(_GcfLayer(hyper.d, gen) for _ in range(hyper.layers))
        else:
            self.layers = nn.ModuleList()

    def _activate(self, x: torch.Tensor) -> torch.Tensor:
        if not self.hyper.use_transform or self.hyper.activation == "identity":
            return x
        return torch.nn.functional.leaky_relu(x, negative_slope=self.hyper.leaky_slope)

    def forward(self, ops: "GraphOperators") -> tuple[torch.Tensor, torch.Tensor]:
        """Run all propagation layers; returns final (user, response) embeddings."""
        hyper = self.hyper
        e_u, e_r = self.user_embed0, self.resp_embed0
        for level in range(hyper.layers):
            agg_pos_u = torch.sparse.mm(ops.pos_u2r, e_r)
            agg_pos_r = torch.sparse.mm(ops.pos_r2u, e_u)
            if hyper.use_negative_edges:
                agg_neg_u = torch.sparse.mm(ops.neg_u2r, e_r)
                agg_neg_r = torch.sparse.mm(ops.neg_r2u, e_u)
            if hyper.use_transform:
                lay = self.layers[level]
                m_u = e_u @ lay.w_self.T + agg_pos_u @ lay.w1.T + (agg_pos_u * e_u) @ lay.w2.T
                m_r = e_r @ lay.w_self_hat.T + agg_pos_r @ lay.w1_hat.T + (agg_pos_r * e_r) @ lay.w2_hat.T
                if hyper.use_negative_edges:
                    m_u = m_u + agg_neg_u @ lay.w3.T + (agg_neg_u * e_u) @ lay.w4.T
                    m_r = m_r + agg_neg_r @ lay.w3_hat.T + (agg_neg_r * e_r) @ lay.w4_hat.T
            else:
                m_u = e_u + agg_pos_u + agg_pos_u * e_u
                m_r = e_r + agg_pos_r + agg_pos_r * e_r
                if hyper.use_negative_edges:
                    m_u = m_u + agg_neg_u + agg_neg_u * e_u
                    m_r = m_r + agg_neg_r + agg_neg_r * e_r
            e_u = self._activate(m_u)
            e_r = self._activate(m_r)
            if not (torch.isfinite(e_u).all() and torch.isfinite(e_r).all()):
                raise PropagationError(f"non-finite embeddings after propagation layer {level}")
        return e_u, e_r

    def l2(self) -> torch.Tensor:
        total = torch.zeros((), dtype=torch.float64)
        for p in self.parameters():
            total = total + p.pow(2).sum()
        return total


@dataclass(frozen=True)
class GraphOperators:
    """Degree-normalized sparse adjacency operators of a signed graph."""

    pos_u2r: torch.Tensor
    pos_r2u: torch.Tensor
    neg_u2r: torch.Tensor
    neg_r2u: torch.Tensor


def graph_operators(graph: SignedBipartiteGraph) -> GraphOperators:
    def sparse(users, resps, values, shape, transpose=False):
        idx = np.stack([resps, users]) if transpose else np.stack([users, resps])
        shape = (shape[1], shape[0]) if transpose else shape
        t = torch.sparse_coo_tensor(
            torch.from_numpy(np.ascontiguousarray(idx)),
            torch.from_numpy(values),
            size=shape,
            dtype=torch.float64,
            check_invariants=True,
        )
        return t.coalesce()

    shape = (graph.num_users, graph.num_responses)
    alpha = edge_norm_factors(graph, POSITIVE)
    beta = edge_norm_factors(graph, NEGATIVE)
    pos_idx = (graph.pos_edge_users, graph.pos_edge_resps)
    neg_idx = (graph.neg_edge_users, graph.neg_edge_resps)
    return GraphOperators(
        pos_u2r=sparse(*pos_idx, alpha, shape),
        pos_r2u=sparse(*pos_idx, alpha, shape, transpose=True),
        neg_u2r=sparse(*neg_idx, beta, shape),
        neg_r2u=sparse(*neg_idx, beta, shape, transpose=True),
    )


def propagate(graph: SignedBipartiteGraph, model: GcfModel) -> EmbeddingTable:
    """Public forward pass: propagate and detach to numpy."""
    with torch.no_grad():
        e_u, e_r = model(graph_operators(graph))
    return EmbeddingTable(e_u.numpy().copy(), e_r.numpy().copy())


def pair_margins(
    user_emb: torch.Tensor, resp_emb: torch.Tensor, pairs: Sequence[tuple[int, int, int]] | np.ndarray
) -> torch.Tensor:
    """Score margins s(u, preferred) - s(u, rejected) for (u, a, b) pairs."""
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 3)
    u = torch.from_numpy(arr[:, 0])
    a = torch.from_numpy(arr[:, 1])
    b = torch.from_numpy(arr[:, 2])
    return (user_emb[u] * (resp_emb[a] - resp_emb[b])).sum(dim=1)


def gcf_loss(
    embeddings: tuple[torch.Tensor, torch.Tensor] | EmbeddingTable,
    train_pairs: Sequence[tuple[int, int, int]] | np.ndarray,
    params: GcfModel | None = None,
    lam: float = 0.0,
) -> torch.Tensor:
    """Negative log-likelihood of the observed choices plus lam * ||theta||^2.

    ``-log sigmoid(m)`` is evaluated as ``softplus(-m)`` so large margins
    underflow to zero instead of producing infinities.
    """
    if isinstance(embeddings, EmbeddingTable):
        user_emb = torch.from_numpy(embeddings.user_embeddings)
        resp_emb = torch.from_numpy(embeddings.response_embeddings)
    else:
        user_emb, resp_emb = embeddings
    arr = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 3)
    if len(arr) == 0:
        data = torch.zeros((), dtype=user_emb.dtype)
    else:
        data = torch.nn.functional.softplus(-pair_margins(user_emb, resp_emb, arr)).sum()
    if lam > 0.0:
        if params is None:
            raise ValueError("lam > 0 requires params for the L2 term")
        data = data + lam * params.l2()
    return data


def train_gcf(
    graph: SignedBipartiteGraph,
    train_pairs: Sequence[tuple[int, int, int]],
    hyper: GcfHyperparams,
) -> tuple[GcfModel, EmbeddingTable, list[float]]:
    """Fit the propagation network and initial embeddings on preference pairs.

    Mini-batch losses are summed and rescaled by total/batch pair counts so
    each step's gradient is an unbiased estimate of the full-sum objective;
    the L2 term enters once per step.  AdamW with linear-warmup cosine decay,
    reshuffling per epoch under the run seed.
    """
    pairs = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 3)
    if len(pairs) == 0:
        raise ValueError("train_gcf requires at least one training pair")
    model = GcfModel(graph.num_users, graph.num_responses, hyper)
    ops = graph_operators(graph)
    optimizer = torch.optim.AdamW(model.parameters(), lr=hyper.lr, weight_decay=0.0)
    total = len(pairs)
    batch = min(hyper.batch_size, total)
    steps_per_epoch = (total + batch - 1) // batch
    schedule = make_warmup_cosine(hyper.epochs * steps_per_epoch, hyper.warmup_ratio)
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, schedule)
    shuffler = torch.Generator().manual_seed(hyper.rng_seed)

    trace: list[float] = []
    for epoch in range(hyper.epochs):
        perm = torch.randperm(total, generator=shuffler).numpy()
        epoch_losses = []
        for start in range(0, total, batch):
            chunk = pairs[perm[start : start + batch]]
            optimizer.zero_grad()
            try:
                e_u, e_r = model(ops)
            except PropagationError as exc:
                raise TrainingDiverged(
                    f"gcf training diverged at epoch {epoch} ({exc})", trace
                ) from exc
            loss = gcf_loss((e_u, e_r), chunk) * (total / len(chunk))
            if hyper.lam > 0.0:
                loss = loss + hyper.lam * model.l2()
            value = float(loss.detach())
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"gcf training diverged at epoch {epoch} (loss={value})", trace
                )
            loss.backward()
            optimizer.step()
            scheduler.step()
            epoch_losses.append(value)
        trace.append(float(np.mean(epoch_losses)))
    return model, propagate(graph, model), trace


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _tensor_dict(t: torch.Tensor) -> dict:
    return {"shape": list(t.shape), "data": [float(x) for x in t.detach().reshape(-1).tolist()]}


def _tensor_from_dict(d: dict) -> torch.Tensor:
    return torch.tensor(d["data"], dtype=torch.float64).reshape(d["shape"])


def gcf_to_dict(model: GcfModel, embeddings: EmbeddingTable | None = None) -> dict:
    out = {
        "kind": "gcf",
        "num_users": model.num_users,
        "num_responses": model.num_responses,
        "hyper": model.hyper.to_dict(),
        "user_embed0": _tensor_dict(model.user_embed0),
        "resp_embed0": _tensor_dict(model.resp_embed0),
        "layers": [
            {
                name + side: _tensor_dict(getattr(lay, name + side))
                for name in _GcfLayer.NAMES
                for side in ("", "_hat")
            }
            for lay in model.layers
        ],
    }
    if embeddings is not None:
        out["embeddings"] = {
            "user": _tensor_dict(torch.from_numpy(embeddings.user_embeddings)),
            "response": _tensor_dict(torch.from_numpy(embeddings.response_embeddings)),
        }
    return out


def gcf_from_dict(d: dict) -> tuple[GcfModel, EmbeddingTable | None]:
    hyper = GcfHyperparams.from_dict(d["hyper"])
    model = GcfModel(d["num_users"], d["num_responses"], hyper)
    with torch.no_grad():
        model.user_embed0.copy_(_tensor_from_dict(d["user_embed0"]))
        model.resp_embed0.copy_(_tensor_from_dict(d["resp_embed0"]))
        for lay, stored in zip(model.layers, d["layers"]):
            for key, value in stored.items():
                getattr(lay, key).copy_(_tensor_from_dict(value))
    embeddings = None
    if "embeddings" in d:
        embeddings = EmbeddingTable(
            _tensor_from_dict(d["embeddings"]["user"]).numpy(),
            _tensor_from_dict(d["embeddings"]["response"]).numpy(),
        )
    return model, embeddings


def save_gcf(model: GcfModel, embeddings: EmbeddingTable, path) -> None:
    dump_file(gcf_to_dict(model, embeddings), path)


def load_gcf(path) -> tuple[GcfModel, EmbeddingTable | None]:
    return gcf_from_dict(load_file(path))


def export_embeddings_csv(embeddings: EmbeddingTable, users: Iterable, path) -> None:
    """Write all node embeddings with group labels for external plotting."""
    d = embeddings.d
    group_of = {u.user_id: u.group_id for u in users}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_type", "node_id", "group_id"] + [f"dim_{i}" for i in range(d)])
        for uid, row in enumerate(embeddings.user_embeddings):
            group = group_of.get(uid)
            writer.writerow(
                ["user", uid, "" if group is None else group] + [format_float(x) for x in row]
            )
        for rid, row in enumerate(embeddings.response_embeddings):
            writer.writerow(["response", rid, ""] + [format_float(x) for x in row])
