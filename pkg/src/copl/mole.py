"""Personalized reward model: frozen base + routed low-rank expert deltas.

A small feedforward scorer over response features stands in for a large
backbone.  Each layer keeps its frozen base matrix and adds a shared
low-rank delta plus one of M routed low-rank deltas.  Routing is hard
top-1: a per-layer two-layer gate maps the user embedding to expert
logits, only the argmax expert fires, and it is weighted by its full
softmax probability, so the user influences the score exclusively through
the gates.  During training the argmax index is treated as a constant and
gradients reach the gate through the surviving softmax value.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .jsonio import dump_file, load_file
from .optim import TrainingDiverged, make_warmup_cosine
from .prefdata import PreferenceDataset, annotations_to_pairs


@dataclass
class MoleConfig:
    input_dim: int
    embed_dim: int
    num_layers: int = 4
    width: int = 64
    num_experts: int = 8
    rank: int = 8
    gate_hidden: int = 256
    tau: float = 1.0

    def __post_init__(self):
        if self.num_experts < 1:
            raise ValueError("num_experts must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.rank < 1 or self.num_layers < 1 or self.width < 1:
            raise ValueError("rank, num_layers and width must be >= 1")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "embed_dim": self.embed_dim,
            "num_layers": self.num_layers,
            "width": self.width,
            "num_experts": self.num_experts,
            "rank": self.rank,
            "gate_hidden": self.gate_hidden,
            "tau": float(self.tau),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MoleConfig":
        return cls(**d)


@dataclass
class RewardTrainConfig:
    lr: float = 1e-3
    epochs: int = 40
    batch_size: int = 64
    warmup_ratio: float = 0.03
    rng_seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("lr, epochs and batch_size must be positive")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ValueError("warmup_ratio must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "lr": float(self.lr),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "warmup_ratio": float(self.warmup_ratio),
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RewardTrainConfig":
        return cls(**d)


def _init_uniform(t: torch.Tensor, bound: float, gen: torch.Generator) -> torch.Tensor:
    t.uniform_(-bound, bound, generator=gen)
    return t


class MoleLayer(nn.Module):
    def __init__(
        self,
        d_in: int,
        d_out: int,
        embed_dim: int,
        num_experts: int,
        rank: int,
        gate_hidden: int,
        tau: float,
        gen: torch.Generator,
    ):
        super().__init__()
        if rank > min(d_in, d_out):
            raise ValueError(f"rank {rank} exceeds min(d_in={d_in}, d_out={d_out})")
        if num_experts < 1 or tau <= 0:
            raise ValueError("need num_experts >= 1 and tau > 0")
        self.num_experts = num_experts
        self.tau = tau
        f64 = dict(dtype=torch.float64)
        w0 = _init_uniform(torch.empty(d_out, d_in, **f64), (6.0 / (d_in + d_out)) ** 0.5, gen)
        self.w0 = nn.Parameter(w0, requires_grad=False)  # frozen base
        # input-side factors start random, output-side at zero: deltas are 0 at init
        self.b_shared = nn.Parameter(_init_uniform(torch.empty(rank, d_in, **f64), (6.0 / (d_in + rank)) ** 0.5, gen))
        self.a_shared = nn.Parameter(torch.zeros(d_out, rank, **f64))
        self.b_experts = nn.Parameter(
            _init_uniform(torch.empty(num_experts, rank, d_in, **f64), (6.0 / (d_in + rank)) ** 0.5, gen)
        )
        self.a_experts = nn.Parameter(torch.zeros(num_experts, d_out, rank, **f64))
        gate_bound1 = 1.0 / embed_dim**0.5
        gate_bound2 = 1.0 / gate_hidden**0.5
        self.gate_w1 = nn.Parameter(_init_uniform(torch.empty(gate_hidden, embed_dim, **f64), gate_bound1, gen))
        self.gate_b1 = nn.Parameter(_init_uniform(torch.empty(gate_hidden, **f64), gate_bound1, gen))
        self.gate_w2 = nn.Parameter(_init_uniform(torch.empty(num_experts, gate_hidden, **f64), gate_bound2, gen))
        self.gate_b2 = nn.Parameter(_init_uniform(torch.empty(num_experts, **f64), gate_bound2, gen))

    def gate_logits(self, embed: torch.Tensor) -> torch.Tensor:
        hidden = torch.relu(embed @ self.gate_w1.T + self.gate_b1)
        return hidden @ self.gate_w2.T + self.gate_b2

    def route(
        self,
        embed: torch.Tensor,
        routes: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Expert index (argmax logits, first index on ties) and its softmax weight."""
        logits = self.gate_logits(embed)
        if routes is None:
            routes = torch.argmax(logits, dim=1)
        probs = torch.softmax(logits / self.tau, dim=1)
        weight = probs.gather(1, routes.unsqueeze(1)).squeeze(1)
        return routes, weight

    def forward(
        self,
        x: torch.Tensor,
        embed: torch.Tensor | None,
        routes: torch.Tensor | None = None,
        gate_weights: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        if gate_weights is not None:
            if routes is None:
                raise ValueError("gate_weights override requires routes")
            weight = gate_weights
        else:
            routes, weight = self.route(embed, routes)
        y = x @ self.w0.T + (x @ self.b_shared.T) @ self.a_shared.T
        b_sel = self.b_experts[routes]  # (B, rank, d_in)
        a_sel = self.a_experts[routes]  # (B, d_out, rank)
        low = torch.einsum("bri,bi->br", b_sel, x)
        y = y + weight.unsqueeze(1) * torch.einsum("bor,br->bo", a_sel, low)
        return y, routes, weight


def gate_weights(layer: MoleLayer, e_u: np.ndarray) -> np.ndarray:
    """Length-M gate vector for one user: softmax probability at the argmax
    logit, zero elsewhere."""
    embed = torch.as_tensor(np.asarray(e_u, dtype=np.float64)).reshape(1, -1)
    with torch.no_grad():
        routes, weight = layer.route(embed)
    out = np.zeros(layer.num_experts, dtype=np.float64)
    out[int(routes[0])] = float(weight[0])
    return out


def adapted_matrix(layer: MoleLayer, e_u: np.ndarray) -> np.ndarray:
    """Effective layer matrix for one user: base + shared delta + routed delta."""
    embed = torch.as_tensor(np.asarray(e_u, dtype=np.float64)).reshape(1, -1)
    with torch.no_grad():
        routes, weight = layer.route(embed)
        idx = int(routes[0])
        w = layer.w0 + layer.a_shared @ layer.b_shared
        w = w + weight[0] * (layer.a_experts[idx] @ layer.b_experts[idx])
    return w.numpy().copy()


class MoleRewardModel(nn.Module):
    def __init__(self, cfg: MoleConfig, rng_seed: int = 0):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(rng_seed)
        dims = [cfg.input_dim] + [cfg.width] * cfg.num_layers
        self.layers = nn.ModuleList(
            # rank is capped by the layer's own dimensions (narrow input layers)
            MoleLayer(
                d_in,
                d_out,
                cfg.embed_dim,
                cfg.num_experts,
                min(cfg.rank, d_in, d_out),
                cfg.gate_hidden,
                cfg.tau,
                gen,
            )
            for d_in, d_out in zip(dims[:-1], dims[1:])
        )
        head = torch.empty(cfg.width, dtype=torch.float64)
        self.head = nn.Parameter(_init_uniform(head, 1.0 / cfg.width**0.5, gen))

    def forward(
        self,
        features: torch.Tensor,
        embed: torch.Tensor | None,
        routes: Sequence[torch.Tensor] | None = None,
        gate_weights: Sequence[torch.Tensor] | None = None,
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Score a batch; returns (scores, per-layer expert indices)."""
        h = features
        taken: list[torch.Tensor] = []
        for i, layer in enumerate(self.layers):
            h, idx, _ = layer(
                h,
                embed,
                routes=None if routes is None else routes[i],
                gate_weights=None if gate_weights is None else gate_weights[i],
            )
            h = torch.relu(h)
            taken.append(idx)
        return h @ self.head, taken

    def score_batch(self, features: np.ndarray, embeds: np.ndarray) -> np.ndarray:
        feats = torch.as_tensor(np.asarray(features, dtype=np.float64)).reshape(-1, self.cfg.input_dim)
        emb = torch.as_tensor(np.asarray(embeds, dtype=np.float64)).reshape(-1, self.cfg.embed_dim)
        with torch.no_grad():
            scores, _ = self.forward(feats, emb)
        return scores.numpy().copy()


def reward(model: MoleRewardModel, e_u: np.ndarray, response_features: np.ndarray) -> float:
    """Scalar preference score of one response for one user."""
    feats = np.asarray(response_features, dtype=np.float64)
    if feats.shape != (model.cfg.input_dim,):
        raise ValueError(f"expected features of shape ({model.cfg.input_dim},), got {feats.shape}")
    return float(model.score_batch(feats.reshape(1, -1), np.asarray(e_u).reshape(1, -1))[0])


def response_feature_matrix(dataset: PreferenceDataset) -> np.ndarray:
    feats = np.zeros((len(dataset.responses), dataset.num_dims), dtype=np.float64)
    for r in dataset.responses:
        feats[r.response_id] = r.attributes
    return feats


def train_reward(
    model: MoleRewardModel,
    user_embeddings: np.ndarray | Mapping[int, np.ndarray],
    dataset: PreferenceDataset,
    cfg: RewardTrainConfig,
) -> list[float]:
    """Fit expert factors, gates and head on the dataset's training pairs.

    The frozen bases never move; user embeddings are inputs, not parameters.
    Returns the per-epoch mean loss trace.
    """
    pairs = annotations_to_pairs(dataset.annotations, dataset.items_by_id())
    if not pairs:
        raise ValueError("train_reward requires at least one training pair")
    arr = np.asarray(pairs, dtype=np.int64)
    embeds = _embedding_rows(user_embeddings, arr[:, 0], model.cfg.embed_dim)
    feats = response_feature_matrix(dataset)
    feats_t = torch.from_numpy(feats)
    emb_t = torch.from_numpy(embeds)
    a_idx = torch.from_numpy(arr[:, 1])
    b_idx = torch.from_numpy(arr[:, 2])

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(trainable, lr=cfg.lr, weight_decay=0.0)
    total = len(arr)
    batch = min(cfg.batch_size, total)
    steps_per_epoch = (total + batch - 1) // batch
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, make_warmup_cosine(cfg.epochs * steps_per_epoch, cfg.warmup_ratio)
    )
    shuffler = torch.Generator().manual_seed(cfg.rng_seed)

    trace: list[float] = []
    for epoch in range(cfg.epochs):
        perm = torch.randperm(total, generator=shuffler)
        epoch_losses = []
        for start in range(0, total, batch):
            sel = perm[start : start + batch]
            optimizer.zero_grad()
            emb_b = emb_t[sel]
            score_a, _ = model(feats_t[a_idx[sel]], emb_b)
            score_b, _ = model(feats_t[b_idx[sel]], emb_b)
            loss = torch.nn.functional.softplus(-(score_a - score_b)).mean()
            value = float(loss.detach())
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"reward training diverged at epoch {epoch} (loss={value})", trace
                )
            loss.backward()
            optimizer.step()
            scheduler.step()
            epoch_losses.append(value)
        trace.append(float(np.mean(epoch_losses)))
    return trace


def _embedding_rows(
    user_embeddings: np.ndarray | Mapping[int, np.ndarray], user_ids: np.ndarray, embed_dim: int
) -> np.ndarray:
    if isinstance(user_embeddings, Mapping):
        missing = [int(u) for u in np.unique(user_ids) if int(u) not in user_embeddings]
        if missing:
            raise ValueError(f"no embedding for users {missing[:5]}")
        return np.stack([np.asarray(user_embeddings[int(u)], dtype=np.float64) for u in user_ids])
    table = np.asarray(user_embeddings, dtype=np.float64)
    if user_ids.size and int(user_ids.max()) >= len(table):
        raise ValueError(f"no embedding for user {int(user_ids.max())}")
    if table.shape[1] != embed_dim:
        raise ValueError(f"embedding dim {table.shape[1]} != model embed_dim {embed_dim}")
    return table[user_ids]


def expert_allocation(
    model: MoleRewardModel,
    user_embeddings: np.ndarray | Mapping[int, np.ndarray],
    users: Sequence,
) -> dict[int, dict[int, int]]:
    """Per-layer map user_id -> selected expert index (routing uses only the
    user embedding, so no response features are involved)."""
    user_ids = np.array([u.user_id for u in users], dtype=np.int64)
    embeds = torch.from_numpy(_embedding_rows(user_embeddings, user_ids, model.cfg.embed_dim))
    allocation: dict[int, dict[int, int]] = {}
    with torch.no_grad():
        for li, layer in enumerate(model.layers):
            routes, _ = layer.route(embeds)
            allocation[li] = {int(u): int(r) for u, r in zip(user_ids, routes)}
    return allocation


def export_allocation_csv(
    allocation: dict[int, dict[int, int]], users: Iterable, path
) -> None:
    group_of = {u.user_id: u.group_id for u in users}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "user_id", "group_id", "expert"])
        for layer in sorted(allocation):
            for uid in sorted(allocation[layer]):
                group = group_of.get(uid)
                writer.writerow([layer, uid, "" if group is None else group, allocation[layer][uid]])


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_LAYER_TENSORS = (
    "w0",
    "a_shared",
    "b_shared",
    "a_experts",
    "b_experts",
    "gate_w1",
    "gate_b1",
    "gate_w2",
    "gate_b2",
)


def _tensor_dict(t: torch.Tensor) -> dict:
    return {"shape": list(t.shape), "data": [float(x) for x in t.detach().reshape(-1).tolist()]}


def _tensor_from_dict(d: dict) -> torch.Tensor:
    return torch.tensor(d["data"], dtype=torch.float64).reshape(d["shape"])


def mole_to_dict(model: MoleRewardModel) -> dict:
    return {
        "kind": "mole",
        "config": model.cfg.to_dict(),
        "layers": [
            {name: _tensor_dict(getattr(lay, name)) for name in _LAYER_TENSORS}
            for lay in model.layers
        ],
        "head": _tensor_dict(model.head),
    }


def mole_from_dict(d: dict) -> MoleRewardModel:
    model = MoleRewardModel(MoleConfig.from_dict(d["config"]), rng_seed=0)
    with torch.no_grad():
        for lay, stored in zip(model.layers, d["layers"]):
            for name in _LAYER_TENSORS:
                getattr(lay, name).copy_(_tensor_from_dict(stored[name]))
        model.head.copy_(_tensor_from_dict(d["head"]))
    return model


def save_mole(model: MoleRewardModel, path) -> None:
    dump_file(mole_to_dict(model), path)


def load_mole(path) -> MoleRewardModel:
    return mole_from_dict(load_file(path))
