"""Preference-data domain model and synthetic dataset generation.

Users carry a mixture weight over latent attribute dimensions; responses
carry an attribute score per dimension.  A user prefers the response of a
pair with the higher weighted attribute score (ties go to side A), with an
optional independent label-flip noise.  Datasets mirror the survey-set
construction used in personalized preference work: group users (one-hot
weights) or Dirichlet-mixture users, exactly-n (ALL) or uniform-on-[1,2n-1]
(AVG) annotation counts, and an optional filter keeping only controversial
response pairs (no response strictly dominates the other on every
dimension).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .jsonio import dump_file, load_file
from .seeding import derive_seed

_REJECTION_ATTEMPTS = 1000

PREFER_A = "A"
PREFER_B = "B"


@dataclass
class SurveyItem:
    item_id: int
    response_a_id: int
    response_b_id: int
    question_id: int

    def __post_init__(self):
        if self.response_a_id == self.response_b_id:
            raise ValueError(f"item {self.item_id}: responses must be distinct")


@dataclass
class ResponseFeatures:
    response_id: int
    attributes: np.ndarray  # shape (D,)

    def __post_init__(self):
        self.attributes = np.asarray(self.attributes, dtype=np.float64)
        if self.attributes.ndim != 1 or self.attributes.size < 1:
            raise ValueError(f"response {self.response_id}: attributes must be a non-empty vector")
        if not np.all(np.isfinite(self.attributes)):
            raise ValueError(f"response {self.response_id}: attributes must be finite")


@dataclass
class UserProfile:
    user_id: int
    weights: np.ndarray  # shape (D,), nonnegative, sums to 1
    group_id: int | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(self.weights < 0):
            raise ValueError(f"user {self.user_id}: weights must be nonnegative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ValueError(f"user {self.user_id}: weights must sum to 1")
        one_hot = np.count_nonzero(self.weights) == 1
        if one_hot != (self.group_id is not None):
            raise ValueError(f"user {self.user_id}: group_id must be set exactly when weights are one-hot")


@dataclass
class Annotation:
    user_id: int
    item_id: int
    preferred: str  # PREFER_A or PREFER_B

    def __post_init__(self):
        if self.preferred not in (PREFER_A, PREFER_B):
            raise ValueError(f"preferred must be {PREFER_A!r} or {PREFER_B!r}, got {self.preferred!r}")


@dataclass
class PreferenceDataset:
    survey: list[SurveyItem]
    responses: list[ResponseFeatures]
    users: list[UserProfile]
    annotations: list[Annotation]
    test_annotations: list[Annotation]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        item_ids = {it.item_id for it in self.survey}
        if len(item_ids) != len(self.survey):
            raise ValueError("duplicate item_id in survey")
        response_ids = {r.response_id for r in self.responses}
        user_ids = {u.user_id for u in self.users}
        dims = {r.attributes.size for r in self.responses}
        if len(dims) > 1:
            raise ValueError("all responses must share one attribute dimension")
        for it in self.survey:
            if it.response_a_id not in response_ids or it.response_b_id not in response_ids:
                raise ValueError(f"item {it.item_id} references a missing response")
        for name, anns in (("train", self.annotations), ("test", self.test_annotations)):
            seen: set[tuple[int, int]] = set()
            for a in anns:
                if a.user_id not in user_ids:
                    raise ValueError(f"{name} annotation references missing user {a.user_id}")
                if a.item_id not in item_ids:
                    raise ValueError(f"{name} annotation references missing item {a.item_id}")
                key = (a.user_id, a.item_id)
                if key in seen:
                    raise ValueError(f"duplicate {name} annotation for (user={a.user_id}, item={a.item_id})")
                seen.add(key)
        train_keys = {(a.user_id, a.item_id) for a in self.annotations}
        test_keys = {(a.user_id, a.item_id) for a in self.test_annotations}
        overlap = train_keys & test_keys
        if overlap:
            raise ValueError(f"train/test annotations overlap on {sorted(overlap)[:5]}")

    @property
    def num_dims(self) -> int:
        return self.responses[0].attributes.size if self.responses else 0

    def items_by_id(self) -> dict[int, SurveyItem]:
        return {it.item_id: it for it in self.survey}

    def users_by_id(self) -> dict[int, UserProfile]:
        return {u.user_id: u for u in self.users}

    def group_profiles(self) -> list[UserProfile]:
        """One representative profile per group, ordered by group id."""
        by_group: dict[int, UserProfile] = {}
        for u in self.users:
            if u.group_id is not None and u.group_id not in by_group:
                by_group[u.group_id] = u
        return [by_group[g] for g in sorted(by_group)]


# ---------------------------------------------------------------------------
# Profile specs and annotation regimes
# ---------------------------------------------------------------------------


@dataclass
class GroupSpec:
    """One-hot preference groups with relative sizes ``ratios``."""

    ratios: list[float]

    def __post_init__(self):
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ValueError("group ratios must be positive")


@dataclass
class DirichletSpec:
    """Mixture users with weights drawn from Dirichlet(alpha)."""

    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("dirichlet alpha must be positive")


ProfileSpec = Union[GroupSpec, DirichletSpec]


@dataclass
class Regime:
    """Annotation-count scheme: ALL(n) assigns exactly n items per user,
    AVG(n) draws the count uniformly from [1, 2n-1] (mean n)."""

    kind: str  # "ALL" | "AVG"
    n: int

    def __post_init__(self):
        if self.kind not in ("ALL", "AVG"):
            raise ValueError(f"regime kind must be ALL or AVG, got {self.kind!r}")
        if self.n < 1:
            raise ValueError("regime n must be >= 1")

    @property
    def max_count(self) -> int:
        return 2 * self.n - 1


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def generate_survey(
    num_items: int,
    num_dims: int,
    rng_seed: int,
    controversial_only: bool = False,
) -> tuple[list[SurveyItem], list[ResponseFeatures]]:
    """Sample ``num_items`` response pairs with i.i.d. standard-normal attributes.

    With ``controversial_only`` every pair is rejection-sampled until neither
    response weakly dominates the other, i.e. at least two dimensions
    disagree on which response is better.
    """
    if num_items < 1:
        raise ValueError("num_items must be >= 1")
    if num_dims < 1:
        raise ValueError("num_dims must be >= 1")
    rng = np.random.default_rng(rng_seed)
    survey: list[SurveyItem] = []
    responses: list[ResponseFeatures] = []
    for i in range(num_items):
        for attempt in range(_REJECTION_ATTEMPTS):
            a = rng.standard_normal(num_dims)
            b = rng.standard_normal(num_dims)
            if not controversial_only or _is_controversial(a, b):
                break
        else:
            raise ValueError(
                f"could not sample a controversial pair in {_REJECTION_ATTEMPTS} attempts "
                f"(impossible with num_dims={num_dims})"
            )
        ra, rb = 2 * i, 2 * i + 1
        responses.append(ResponseFeatures(ra, a))
        responses.append(ResponseFeatures(rb, b))
        survey.append(SurveyItem(item_id=i, response_a_id=ra, response_b_id=rb, question_id=i))
    return survey, responses


def _is_controversial(a: np.ndarray, b: np.ndarray) -> bool:
    diff = a - b
    return bool(np.any(diff > 0) and np.any(diff < 0))


def generate_users(
    num_users: int,
    profile_spec: ProfileSpec,
    num_dims: int,
    rng_seed: int,
) -> list[UserProfile]:
    """Create user profiles: one-hot groups sized by largest-remainder
    rounding of the ratios, or Dirichlet-mixture weights on the simplex."""
    if num_users < 1:
        raise ValueError("num_users must be >= 1")
    if isinstance(profile_spec, GroupSpec):
        num_groups = len(profile_spec.ratios)
        if num_groups != num_dims:
            raise ValueError(
                f"group count ({num_groups}) must equal num_dims ({num_dims}): "
                "each group is one-hot along its own dimension"
            )
        counts = _largest_remainder(profile_spec.ratios, num_users)
        users: list[UserProfile] = []
        uid = 0
        for g, count in enumerate(counts):
            w = np.zeros(num_dims)
            w[g] = 1.0
            for _ in range(count):
                users.append(UserProfile(user_id=uid, weights=w.copy(), group_id=g))
                uid += 1
        return users
    if isinstance(profile_spec, DirichletSpec):
        rng = np.random.default_rng(rng_seed)
        alpha = np.full(num_dims, profile_spec.alpha)
        return [
            UserProfile(user_id=uid, weights=rng.dirichlet(alpha), group_id=None)
            for uid in range(num_users)
        ]
    raise TypeError(f"unknown profile spec: {type(profile_spec)!r}")


def _largest_remainder(ratios: Sequence[float], total: int) -> list[int]:
    quotas = np.asarray(ratios, dtype=np.float64)
    quotas = quotas / quotas.sum() * total
    counts = np.floor(quotas).astype(int)
    remainder = total - int(counts.sum())
    # ties broken toward the lower group index
    order = sorted(range(len(ratios)), key=lambda g: (-(quotas[g] - counts[g]), g))
    for g in order[:remainder]:
        counts[g] += 1
    return counts.tolist()


def annotate(
    profile: UserProfile,
    item: SurveyItem,
    responses: Sequence[ResponseFeatures],
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Annotation:
    """Label one survey item: prefer the response with the higher weighted
    attribute score (tie -> A), flipping the label with probability ``noise``."""
    if not 0.0 <= noise < 0.5:
        raise ValueError("noise must lie in [0, 0.5)")
    if noise > 0.0 and rng is None:
        raise ValueError("noise > 0 requires an rng")
    a = _response_by_id(responses, item.response_a_id)
    b = _response_by_id(responses, item.response_b_id)
    score_a = float(profile.weights @ a.attributes)
    score_b = float(profile.weights @ b.attributes)
    preferred = PREFER_A if score_a >= score_b else PREFER_B
    if noise > 0.0 and rng.random() < noise:
        preferred = PREFER_B if preferred == PREFER_A else PREFER_A
    return Annotation(user_id=profile.user_id, item_id=item.item_id, preferred=preferred)


def _response_by_id(responses: Sequence[ResponseFeatures], response_id: int) -> ResponseFeatures:
    # generated datasets index responses by id; fall back to a scan otherwise
    if 0 <= response_id < len(responses) and responses[response_id].response_id == response_id:
        return responses[response_id]
    for r in responses:
        if r.response_id == response_id:
            return r
    raise KeyError(f"unknown response id {response_id}")


def sample_annotations(
    users: Sequence[UserProfile],
    survey: Sequence[SurveyItem],
    responses: Sequence[ResponseFeatures],
    regime: Regime,
    rng_seed: int,
    noise: float = 0.0,
    test_per_user: int = 0,
) -> tuple[list[Annotation], list[Annotation]]:
    """Sample per-user annotations under the given regime.

    Each user draws from an independent stream seeded by (rng_seed, user_id),
    so results do not depend on user iteration order.  Train and held-out
    test items are drawn jointly without replacement, which guarantees the
    two sets are disjoint per user.
    """
    needed = regime.max_count + test_per_user
    if len(survey) < needed:
        raise ValueError(
            f"survey has {len(survey)} items but the {regime.kind}({regime.n}) regime "
            f"with {test_per_user} test pairs per user needs at least {needed}"
        )
    train: list[Annotation] = []
    test: list[Annotation] = []
    for user in users:
        rng = np.random.default_rng([rng_seed, user.user_id])
        if regime.kind == "ALL":
            count = regime.n
        else:
            count = int(rng.integers(1, regime.max_count + 1))
        picks = rng.choice(len(survey), size=count + test_per_user, replace=False)
        for j, idx in enumerate(picks):
            ann = annotate(user, survey[idx], responses, noise=noise, rng=rng)
            (train if j < count else test).append(ann)
    return train, test


def tag_pairs(
    survey: Sequence[SurveyItem],
    responses: Sequence[ResponseFeatures],
    group_profiles: Sequence[UserProfile],
) -> dict[int, str]:
    """Mark each item ``common`` when every group's noise-free label agrees,
    ``controversial`` otherwise."""
    if len(group_profiles) < 2:
        raise ValueError("tagging needs at least two group profiles")
    tags: dict[int, str] = {}
    for item in survey:
        labels = {annotate(p, item, responses).preferred for p in group_profiles}
        tags[item.item_id] = "common" if len(labels) == 1 else "controversial"
    return tags


# ---------------------------------------------------------------------------
# Whole-dataset generation and serialization
# ---------------------------------------------------------------------------


@dataclass
class GeneratorConfig:
    num_users: int
    num_items: int
    num_dims: int
    profile: ProfileSpec
    regime: Regime
    controversial_only: bool = False
    noise: float = 0.0
    test_pairs_per_user: int = 10
    seed: int = 0

    def to_dict(self) -> dict:
        if isinstance(self.profile, GroupSpec):
            profile = {"kind": "groups", "ratios": [float(r) for r in self.profile.ratios]}
        else:
            profile = {"kind": "dirichlet", "alpha": float(self.profile.alpha)}
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "num_dims": self.num_dims,
            "profile": profile,
            "regime": {"kind": self.regime.kind, "n": self.regime.n},
            "controversial_only": self.controversial_only,
            "noise": float(self.noise),
            "test_pairs_per_user": self.test_pairs_per_user,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        prof = d["profile"]
        if prof["kind"] == "groups":
            profile: ProfileSpec = GroupSpec(ratios=list(prof["ratios"]))
        elif prof["kind"] == "dirichlet":
            profile = DirichletSpec(alpha=prof["alpha"])
        else:
            raise ValueError(f"unknown profile kind {prof['kind']!r}")
        return cls(
            num_users=d["num_users"],
            num_items=d["num_items"],
            num_dims=d["num_dims"],
            profile=profile,
            regime=Regime(kind=d["regime"]["kind"], n=d["regime"]["n"]),
            controversial_only=d.get("controversial_only", False),
            noise=d.get("noise", 0.0),
            test_pairs_per_user=d.get("test_pairs_per_user", 10),
            seed=d.get("seed", 0),
        )


def generate_dataset(cfg: GeneratorConfig) -> PreferenceDataset:
    survey, responses = generate_survey(
        cfg.num_items, cfg.num_dims, derive_seed(cfg.seed, "survey"), cfg.controversial_only
    )
    users = generate_users(cfg.num_users, cfg.profile, cfg.num_dims, derive_seed(cfg.seed, "users"))
    train, test = sample_annotations(
        users,
        survey,
        responses,
        cfg.regime,
        derive_seed(cfg.seed, "annotations"),
        noise=cfg.noise,
        test_per_user=cfg.test_pairs_per_user,
    )
    return PreferenceDataset(
        survey=survey,
        responses=responses,
        users=users,
        annotations=train,
        test_annotations=test,
        meta={"config": cfg.to_dict(), "seed": cfg.seed},
    )


def dataset_to_dict(ds: PreferenceDataset) -> dict:
    return {
        "survey": [
            {
                "item_id": it.item_id,
                "response_a_id": it.response_a_id,
                "response_b_id": it.response_b_id,
                "question_id": it.question_id,
            }
            for it in ds.survey
        ],
        "responses": [
            {"response_id": r.response_id, "attributes": [float(x) for x in r.attributes]}
            for r in ds.responses
        ],
        "users": [
            {
                "user_id": u.user_id,
                "weights": [float(w) for w in u.weights],
                "group_id": u.group_id,
            }
            for u in ds.users
        ],
        "annotations": [_ann_to_dict(a) for a in ds.annotations],
        "test_annotations": [_ann_to_dict(a) for a in ds.test_annotations],
        "meta": ds.meta,
    }


def _ann_to_dict(a: Annotation) -> dict:
    return {"user_id": a.user_id, "item_id": a.item_id, "preferred": a.preferred}


def _ann_from_dict(d: dict) -> Annotation:
    return Annotation(user_id=d["user_id"], item_id=d["item_id"], preferred=d["preferred"])


def dataset_from_dict(d: dict) -> PreferenceDataset:
    return PreferenceDataset(
        survey=[
            SurveyItem(
                item_id=it["item_id"],
                response_a_id=it["response_a_id"],
                response_b_id=it["response_b_id"],
                question_id=it["question_id"],
            )
            for it in d["survey"]
        ],
        responses=[ResponseFeatures(r["response_id"], np.asarray(r["attributes"])) for r in d["responses"]],
        users=[
            UserProfile(u["user_id"], np.asarray(u["weights"]), u.get("group_id"))
            for u in d["users"]
        ],
        annotations=[_ann_from_dict(a) for a in d["annotations"]],
        test_annotations=[_ann_from_dict(a) for a in d["test_annotations"]],
        meta=d.get("meta", {}),
    )


def save_dataset(ds: PreferenceDataset, path) -> None:
    dump_file(dataset_to_dict(ds), path)


def load_dataset(path) -> PreferenceDataset:
    return dataset_from_dict(load_file(path))


def annotations_to_pairs(
    annotations: Iterable[Annotation], survey_by_id: dict[int, SurveyItem]
) -> list[tuple[int, int, int]]:
    """Convert annotations to (user_id, preferred_response, rejected_response)."""
    pairs = []
    for a in annotations:
        item = survey_by_id[a.item_id]
        if a.preferred == PREFER_A:
            pairs.append((a.user_id, item.response_a_id, item.response_b_id))
        else:
            pairs.append((a.user_id, item.response_b_id, item.response_a_id))
    return pairs
