"""End-to-end experiment runner, metrics, and reference baselines.

A run is: generate data -> build graph -> fit embeddings -> fit the
personalized reward model -> adapt unseen users -> evaluate.  Every stage
draws its randomness from a seed derived from (master_seed, stage name), so
stages can be re-run or added without disturbing each other, and two runs
of the same config produce byte-identical artifacts.

Accuracies are accumulated as integer correct/total counts and divided
once at the end.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .adapt import AdaptConfig, UnseenUser, adapt_embedding
from .gcf import (
    EmbeddingTable,
    GcfHyperparams,
    GcfModel,
    save_gcf,
    train_gcf,
)
from .graph import SignedBipartiteGraph, build_graph
from .jsonio import dump_file
from .mole import (
    MoleConfig,
    MoleRewardModel,
    RewardTrainConfig,
    expert_allocation,
    response_feature_matrix,
    save_mole,
    train_reward,
)
from .prefdata import (
    PREFER_A,
    Annotation,
    GeneratorConfig,
    PreferenceDataset,
    UserProfile,
    annotate,
    annotations_to_pairs,
    generate_dataset,
    generate_users,
    save_dataset,
    tag_pairs,
)
from .seeding import derive_seed

ARTIFACT_DATASET = "dataset.json"
ARTIFACT_GCF = "gcf_model.json"
ARTIFACT_REWARD = "reward_model.json"
ARTIFACT_UNSEEN = "unseen_users.json"
ARTIFACT_REPORT = "report.json"

CONFIG_VERSION = 1

METRIC_GROUPS = ("unseen", "breakdown", "groupwise", "purity")


class StageError(RuntimeError):
    """A pipeline stage failed; artifacts from earlier stages are kept."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class MoleSpec:
    """Reward-model architecture knobs; input/embedding dims come from the
    dataset and the embedding table at build time."""

    num_layers: int = 4
    width: int = 64
    num_experts: int = 8
    rank: int = 8
    gate_hidden: int = 256
    tau: float = 1.0

    def build(self, input_dim: int, embed_dim: int) -> MoleConfig:
        return MoleConfig(
            input_dim=input_dim,
            embed_dim=embed_dim,
            num_layers=self.num_layers,
            width=self.width,
            num_experts=self.num_experts,
            rank=self.rank,
            gate_hidden=self.gate_hidden,
            tau=self.tau,
        )

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "width": self.width,
            "num_experts": self.num_experts,
            "rank": self.rank,
            "gate_hidden": self.gate_hidden,
            "tau": float(self.tau),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MoleSpec":
        return cls(**d)


@dataclass
class UnseenSpec:
    count: int = 100
    annotations_each: int = 8
    test_pairs_each: int = 50

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "annotations_each": self.annotations_each,
            "test_pairs_each": self.test_pairs_each,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UnseenSpec":
        return cls(**d)


@dataclass
class ExperimentConfig:
    master_seed: int
    data: GeneratorConfig
    gcf: GcfHyperparams = field(default_factory=GcfHyperparams)
    mole: MoleSpec = field(default_factory=MoleSpec)
    reward: RewardTrainConfig = field(default_factory=RewardTrainConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    unseen: UnseenSpec = field(default_factory=UnseenSpec)
    uniform_rank: int = 16
    # optional metric groups to evaluate; None means all that apply
    metrics: list[str] | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.data.num_dims < 1:
            raise ValueError("data.num_dims must be >= 1")
        if self.metrics is not None:
            unknown = set(self.metrics) - set(METRIC_GROUPS)
            if unknown:
                raise ValueError(f"unknown metric groups {sorted(unknown)}; valid: {METRIC_GROUPS}")

    def wants(self, group: str) -> bool:
        return self.metrics is None or group in self.metrics

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "master_seed": self.master_seed,
            "data": self.data.to_dict(),
            "gcf": self.gcf.to_dict(),
            "mole": self.mole.to_dict(),
            "reward": self.reward.to_dict(),
            "adapt": self.adapt.to_dict(),
            "unseen": self.unseen.to_dict(),
            "uniform_rank": self.uniform_rank,
            "metrics": self.metrics,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        version = d.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {version}")
        return cls(
            master_seed=d["master_seed"],
            data=GeneratorConfig.from_dict(d["data"]),
            gcf=GcfHyperparams.from_dict(d.get("gcf", {})) if d.get("gcf") else GcfHyperparams(),
            mole=MoleSpec.from_dict(d["mole"]) if d.get("mole") else MoleSpec(),
            reward=RewardTrainConfig.from_dict(d["reward"]) if d.get("reward") else RewardTrainConfig(),
            adapt=AdaptConfig.from_dict(d["adapt"]) if d.get("adapt") else AdaptConfig(),
            unseen=UnseenSpec.from_dict(d["unseen"]) if d.get("unseen") else UnseenSpec(),
            uniform_rank=d.get("uniform_rank", 16),
            metrics=d.get("metrics"),
            out_dir=d.get("out_dir"),
        )


@dataclass
class UnseenUserData:
    profile: UserProfile
    adapt_annotations: list[Annotation]
    test_annotations: list[Annotation]
    embedding: np.ndarray | None = None


@dataclass
class MetricsReport:
    seen_accuracy: float
    gnn_test_accuracy: float
    unseen_accuracy: float | None = None
    common_accuracy: float | None = None
    controversial_accuracy: float | None = None
    groupwise_accuracy: dict[str, float] | None = None
    expert_allocation_purity: dict[str, float] | None = None
    runtime_seconds: float = 0.0

    def to_dict(self, include_runtime: bool = False) -> dict:
        out: dict = {
            "seen_accuracy": self.seen_accuracy,
            "gnn_test_accuracy": self.gnn_test_accuracy,
        }
        for key in (
            "unseen_accuracy",
            "common_accuracy",
            "controversial_accuracy",
            "groupwise_accuracy",
            "expert_allocation_purity",
        ):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        # wall time is volatile and lives in the run manifest; including it
        # here would break byte-identical reports across reruns
        if include_runtime:
            out["runtime_seconds"] = self.runtime_seconds
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            seen_accuracy=d["seen_accuracy"],
            gnn_test_accuracy=d["gnn_test_accuracy"],
            unseen_accuracy=d.get("unseen_accuracy"),
            common_accuracy=d.get("common_accuracy"),
            controversial_accuracy=d.get("controversial_accuracy"),
            groupwise_accuracy=d.get("groupwise_accuracy"),
            expert_allocation_purity=d.get("expert_allocation_purity"),
            runtime_seconds=d.get("runtime_seconds", 0.0),
        )


# ---------------------------------------------------------------------------
# Evaluation primitives
# ---------------------------------------------------------------------------


def labeled_pairs_from_annotations(
    annotations: Sequence[Annotation], survey_by_id: dict
) -> list[tuple[int, int, int, str]]:
    """(user, response_a, response_b, label) rows in survey item order."""
    out = []
    for ann in annotations:
        item = survey_by_id[ann.item_id]
        out.append((ann.user_id, item.response_a_id, item.response_b_id, ann.preferred))
    return out


def eval_gnn_testacc(
    embeddings: EmbeddingTable, test_pairs: Sequence[tuple[int, int, int, str]]
) -> float:
    """Fraction of labeled pairs whose predicted choice matches the label."""
    if not test_pairs:
        raise ValueError("no test pairs to evaluate")
    correct = sum(1 for ok in _gnn_outcomes(embeddings, test_pairs) if ok)
    return correct / len(test_pairs)


def _gnn_outcomes(
    embeddings: EmbeddingTable, pairs: Sequence[tuple[int, int, int, str]]
) -> np.ndarray:
    arr = np.array([(u, a, b) for u, a, b, _ in pairs], dtype=np.int64)
    margins = np.einsum(
        "ij,ij->i",
        embeddings.user_embeddings[arr[:, 0]],
        embeddings.response_embeddings[arr[:, 1]] - embeddings.response_embeddings[arr[:, 2]],
    )
    predicted_a = margins >= 0.0
    labels_a = np.array([label == PREFER_A for _, _, _, label in pairs])
    return predicted_a == labels_a


def _reward_outcomes(
    model: MoleRewardModel,
    embed_for_user: Callable[[int], np.ndarray],
    feats: np.ndarray,
    pairs: Sequence[tuple[int, int, int, str]],
) -> np.ndarray:
    arr = np.array([(u, a, b) for u, a, b, _ in pairs], dtype=np.int64)
    embeds = np.stack([embed_for_user(int(u)) for u in arr[:, 0]])
    score_a = model.score_batch(feats[arr[:, 1]], embeds)
    score_b = model.score_batch(feats[arr[:, 2]], embeds)
    predicted_a = score_a >= score_b
    labels_a = np.array([label == PREFER_A for _, _, _, label in pairs])
    return predicted_a == labels_a


def reward_pair_accuracy(
    model: MoleRewardModel,
    embed_for_user: Callable[[int], np.ndarray],
    dataset: PreferenceDataset,
    annotations: Sequence[Annotation],
) -> float:
    pairs = labeled_pairs_from_annotations(annotations, dataset.items_by_id())
    if not pairs:
        raise ValueError("no annotations to evaluate")
    outcomes = _reward_outcomes(model, embed_for_user, response_feature_matrix(dataset), pairs)
    return int(outcomes.sum()) / len(outcomes)


def breakdown_common_controversial(
    tags: dict[int, str],
    annotations: Sequence[Annotation],
    outcomes: np.ndarray,
) -> tuple[float | None, float | None]:
    """Accuracy over common-tagged and controversial-tagged pairs; a side
    with no pairs is reported as absent."""
    counts = {"common": [0, 0], "controversial": [0, 0]}
    for ann, ok in zip(annotations, outcomes):
        tally = counts[tags[ann.item_id]]
        tally[0] += int(bool(ok))
        tally[1] += 1
    common = counts["common"][0] / counts["common"][1] if counts["common"][1] else None
    controversial = (
        counts["controversial"][0] / counts["controversial"][1]
        if counts["controversial"][1]
        else None
    )
    return common, controversial


def allocation_purity(allocation: dict[int, dict[int, int]], users: Sequence[UserProfile]) -> dict[str, float]:
    """Per-layer majority-group fraction of expert assignments."""
    group_of = {u.user_id: u.group_id for u in users}
    purity: dict[str, float] = {}
    for layer in sorted(allocation):
        per_expert: dict[int, dict[int, int]] = {}
        total = 0
        for uid, expert in allocation[layer].items():
            group = group_of.get(uid)
            if group is None:
                continue
            per_expert.setdefault(expert, {})
            per_expert[expert][group] = per_expert[expert].get(group, 0) + 1
            total += 1
        if total == 0:
            continue
        majority = sum(max(groups.values()) for groups in per_expert.values())
        purity[str(layer)] = majority / total
    return purity


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def _zero_embed(_: int) -> np.ndarray:
    return np.zeros(1, dtype=np.float64)


def uniform_baseline(dataset: PreferenceDataset, config: ExperimentConfig) -> MoleRewardModel:
    """Pooled reward model with no user conditioning: one always-on delta
    (single expert, so its gate weight is exactly 1 for every input)."""
    mole_cfg = MoleConfig(
        input_dim=dataset.num_dims,
        embed_dim=1,
        num_layers=config.mole.num_layers,
        width=config.mole.width,
        num_experts=1,
        rank=config.uniform_rank,
        gate_hidden=config.mole.gate_hidden,
        tau=1.0,
    )
    model = MoleRewardModel(mole_cfg, rng_seed=derive_seed(config.master_seed, "uniform-init"))
    train_cfg = replace(config.reward, rng_seed=derive_seed(config.master_seed, "uniform-train"))
    zeros = np.zeros((max(u.user_id for u in dataset.users) + 1, 1), dtype=np.float64)
    train_reward(model, zeros, dataset, train_cfg)
    return model


def group_oracle_baseline(
    dataset: PreferenceDataset, config: ExperimentConfig
) -> dict[int, MoleRewardModel]:
    """One pooled model per preference group, trained on that group's
    annotations only; requires every user to carry a group label.  With a
    single group this reduces to (and reproduces bit-for-bit) the uniform
    baseline."""
    missing = [u.user_id for u in dataset.users if u.group_id is None]
    if missing:
        raise ValueError(
            f"group oracle requires group labels; users without one: {missing[:5]}"
        )
    groups = sorted({u.group_id for u in dataset.users})
    if len(groups) == 1:
        return {groups[0]: uniform_baseline(dataset, config)}
    user_group = {u.user_id: u.group_id for u in dataset.users}
    models: dict[int, MoleRewardModel] = {}
    for g in groups:
        subset = PreferenceDataset(
            survey=dataset.survey,
            responses=dataset.responses,
            users=dataset.users,
            annotations=[a for a in dataset.annotations if user_group[a.user_id] == g],
            test_annotations=[],
            meta={},
        )
        if not subset.annotations:
            raise ValueError(f"group {g} has no training annotations")
        mole_cfg = MoleConfig(
            input_dim=dataset.num_dims,
            embed_dim=1,
            num_layers=config.mole.num_layers,
            width=config.mole.width,
            num_experts=1,
            rank=config.uniform_rank,
            gate_hidden=config.mole.gate_hidden,
            tau=1.0,
        )
        model = MoleRewardModel(mole_cfg, rng_seed=derive_seed(config.master_seed, f"oracle-init:{g}"))
        train_cfg = replace(config.reward, rng_seed=derive_seed(config.master_seed, f"oracle-train:{g}"))
        train_reward(model, np.zeros((len(dataset.users), 1)), subset, train_cfg)
        models[g] = model
    return models


def oracle_pair_accuracy(
    models: dict[int, MoleRewardModel],
    dataset: PreferenceDataset,
    annotations: Sequence[Annotation],
) -> float:
    """Routes every user to its true group's model."""
    user_group = {u.user_id: u.group_id for u in dataset.users}
    feats = response_feature_matrix(dataset)
    survey = dataset.items_by_id()
    correct = total = 0
    for g, model in models.items():
        anns = [a for a in annotations if user_group[a.user_id] == g]
        if not anns:
            continue
        pairs = labeled_pairs_from_annotations(anns, survey)
        outcomes = _reward_outcomes(model, _zero_embed, feats, pairs)
        correct += int(outcomes.sum())
        total += len(outcomes)
    if total == 0:
        raise ValueError("no annotations matched any group")
    return correct / total


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------


def stage_dataset(config: ExperimentConfig) -> PreferenceDataset:
    data_cfg = replace(config.data, seed=derive_seed(config.master_seed, "dataset"))
    return generate_dataset(data_cfg)


def stage_gcf(
    config: ExperimentConfig, dataset: PreferenceDataset, graph: SignedBipartiteGraph
) -> tuple[GcfModel, EmbeddingTable, list[float]]:
    hyper = replace(config.gcf, rng_seed=derive_seed(config.master_seed, "gcf"))
    pairs = annotations_to_pairs(dataset.annotations, dataset.items_by_id())
    return train_gcf(graph, pairs, hyper)


def stage_reward(
    config: ExperimentConfig, dataset: PreferenceDataset, table: EmbeddingTable
) -> tuple[MoleRewardModel, list[float]]:
    mole_cfg = config.mole.build(dataset.num_dims, table.d)
    model = MoleRewardModel(mole_cfg, rng_seed=derive_seed(config.master_seed, "reward-init"))
    train_cfg = replace(config.reward, rng_seed=derive_seed(config.master_seed, "reward-train"))
    trace = train_reward(model, table.user_embeddings, dataset, train_cfg)
    return model, trace


def generate_unseen_users(
    config: ExperimentConfig, dataset: PreferenceDataset
) -> list[UnseenUserData]:
    spec = config.unseen
    if spec.count == 0:
        return []
    seed = derive_seed(config.master_seed, "unseen")
    needed = spec.annotations_each + spec.test_pairs_each
    if len(dataset.survey) < needed:
        raise ValueError(
            f"survey has {len(dataset.survey)} items; unseen users need {needed}"
        )
    profiles = generate_users(
        spec.count, config.data.profile, config.data.num_dims, derive_seed(seed, "profiles")
    )
    ann_seed = derive_seed(seed, "annotations")
    cohort: list[UnseenUserData] = []
    for profile in profiles:
        rng = np.random.default_rng([ann_seed, profile.user_id])
        picks = rng.choice(len(dataset.survey), size=needed, replace=False)
        adapt_anns = [
            annotate(profile, dataset.survey[i], dataset.responses, config.data.noise, rng)
            for i in picks[: spec.annotations_each]
        ]
        test_anns = [
            annotate(profile, dataset.survey[i], dataset.responses, config.data.noise, rng)
            for i in picks[spec.annotations_each :]
        ]
        cohort.append(UnseenUserData(profile, adapt_anns, test_anns))
    return cohort


def unseen_to_pairs(record: UnseenUserData, survey_by_id: dict) -> UnseenUser:
    pairs = annotations_to_pairs(record.adapt_annotations, survey_by_id)
    return UnseenUser(annotations=[(a, b) for _, a, b in pairs], user_id=record.profile.user_id)


def stage_unseen(
    config: ExperimentConfig,
    dataset: PreferenceDataset,
    graph: SignedBipartiteGraph,
    table: EmbeddingTable,
) -> list[UnseenUserData]:
    cohort = generate_unseen_users(config, dataset)
    survey = dataset.items_by_id()
    for record in cohort:
        unseen = unseen_to_pairs(record, survey)
        record.embedding = adapt_embedding(graph, table, unseen, config.adapt)
    return cohort


def unseen_accuracy(
    model: MoleRewardModel, dataset: PreferenceDataset, cohort: Sequence[UnseenUserData]
) -> float:
    feats = response_feature_matrix(dataset)
    survey = dataset.items_by_id()
    correct = total = 0
    for record in cohort:
        if record.embedding is None:
            raise ValueError("unseen user has no adapted embedding")
        pairs = labeled_pairs_from_annotations(record.test_annotations, survey)
        outcomes = _reward_outcomes(model, lambda _uid: record.embedding, feats, pairs)
        correct += int(outcomes.sum())
        total += len(outcomes)
    if total == 0:
        raise ValueError("unseen cohort has no test annotations")
    return correct / total


def stage_eval(
    config: ExperimentConfig,
    dataset: PreferenceDataset,
    table: EmbeddingTable,
    model: MoleRewardModel,
    cohort: Sequence[UnseenUserData],
    runtime_seconds: float = 0.0,
) -> MetricsReport:
    survey = dataset.items_by_id()
    seen_pairs = labeled_pairs_from_annotations(dataset.test_annotations, survey)
    feats = response_feature_matrix(dataset)
    outcomes = _reward_outcomes(
        model, lambda uid: table.user_embeddings[uid], feats, seen_pairs
    )
    seen_acc = int(outcomes.sum()) / len(outcomes)
    gnn_acc = eval_gnn_testacc(table, seen_pairs)

    unseen_acc = None
    if cohort and config.wants("unseen"):
        unseen_acc = unseen_accuracy(model, dataset, cohort)

    common_acc = controversial_acc = None
    groupwise = None
    purity = None
    group_profiles = dataset.group_profiles()
    if len(group_profiles) >= 2:
        if config.wants("breakdown"):
            tags = tag_pairs(dataset.survey, dataset.responses, group_profiles)
            common_acc, controversial_acc = breakdown_common_controversial(
                tags, dataset.test_annotations, outcomes
            )
        if config.wants("groupwise"):
            group_of = {u.user_id: u.group_id for u in dataset.users}
            tallies: dict[int, list[int]] = {}
            for ann, ok in zip(dataset.test_annotations, outcomes):
                g = group_of[ann.user_id]
                tallies.setdefault(g, [0, 0])
                tallies[g][0] += int(bool(ok))
                tallies[g][1] += 1
            groupwise = {str(g): tallies[g][0] / tallies[g][1] for g in sorted(tallies)}
        if config.wants("purity"):
            allocation = expert_allocation(model, table.user_embeddings, dataset.users)
            purity = allocation_purity(allocation, dataset.users)

    return MetricsReport(
        seen_accuracy=seen_acc,
        gnn_test_accuracy=gnn_acc,
        unseen_accuracy=unseen_acc,
        common_accuracy=common_acc,
        controversial_accuracy=controversial_acc,
        groupwise_accuracy=groupwise,
        expert_allocation_purity=purity,
        runtime_seconds=runtime_seconds,
    )


def save_unseen(cohort: Sequence[UnseenUserData], path) -> None:
    dump_file(
        {
            "users": [
                {
                    "user_id": r.profile.user_id,
                    "weights": [float(w) for w in r.profile.weights],
                    "group_id": r.profile.group_id,
                    "adapt_annotations": [
                        {"user_id": a.user_id, "item_id": a.item_id, "preferred": a.preferred}
                        for a in r.adapt_annotations
                    ],
                    "test_annotations": [
                        {"user_id": a.user_id, "item_id": a.item_id, "preferred": a.preferred}
                        for a in r.test_annotations
                    ],
                    "embedding": None if r.embedding is None else [float(x) for x in r.embedding],
                }
                for r in cohort
            ]
        },
        path,
    )


def load_unseen(d: dict) -> list[UnseenUserData]:
    cohort = []
    for u in d["users"]:
        cohort.append(
            UnseenUserData(
                profile=UserProfile(u["user_id"], np.asarray(u["weights"]), u.get("group_id")),
                adapt_annotations=[
                    Annotation(a["user_id"], a["item_id"], a["preferred"])
                    for a in u["adapt_annotations"]
                ],
                test_annotations=[
                    Annotation(a["user_id"], a["item_id"], a["preferred"])
                    for a in u["test_annotations"]
                ],
                embedding=None if u.get("embedding") is None else np.asarray(u["embedding"]),
            )
        )
    return cohort


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> MetricsReport:
    """Run the full pipeline; serialize every stage artifact when an output
    directory is given (argument wins over config.out_dir).  A stage failure
    raises StageError naming the stage and leaves earlier artifacts in place."""
    if out_dir is None:
        out_dir = config.out_dir
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    def run_stage(name: str, fn: Callable):
        try:
            return fn()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc

    dataset = run_stage("dataset", lambda: stage_dataset(config))
    if out is not None:
        save_dataset(dataset, out / ARTIFACT_DATASET)
    graph = run_stage("graph", lambda: build_graph(dataset))
    gcf_model, table, _ = run_stage("gcf", lambda: stage_gcf(config, dataset, graph))
    if out is not None:
        save_gcf(gcf_model, table, out / ARTIFACT_GCF)
    model, _ = run_stage("reward", lambda: stage_reward(config, dataset, table))
    if out is not None:
        save_mole(model, out / ARTIFACT_REWARD)
    cohort = run_stage("unseen", lambda: stage_unseen(config, dataset, graph, table))
    if out is not None:
        save_unseen(cohort, out / ARTIFACT_UNSEEN)
    runtime = time.perf_counter() - started
    report = run_stage(
        "eval", lambda: stage_eval(config, dataset, table, model, cohort, runtime)
    )
    if out is not None:
        dump_file(report.to_dict(), out / ARTIFACT_REPORT)
    return report


def imbalance_sweep(
    config: ExperimentConfig,
    ratios: Sequence[tuple[float, ...]],
    out_dir: str | Path | None = None,
) -> list[tuple[tuple[float, ...], MetricsReport]]:
    """Rerun the pipeline once per group-size ratio; each run derives its
    master seed from (master_seed, ratio) so ratios never share randomness."""
    from .prefdata import GroupSpec

    results = []
    for ratio in ratios:
        label = ":".join(format(r, "g") for r in ratio)
        sub_cfg = replace(
            config,
            master_seed=derive_seed(config.master_seed, f"ratio:{label}"),
            data=replace(config.data, profile=GroupSpec(list(ratio))),
        )
        sub_out = None
        if out_dir is not None:
            sub_out = Path(out_dir) / ("ratio_" + "_".join(format(r, "g") for r in ratio))
        results.append((tuple(ratio), run_experiment(sub_cfg, sub_out)))
    return results
