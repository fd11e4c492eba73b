import numpy as np
import pytest

import copl


@pytest.fixture
def tiny_dataset():
    """Small 2-group controversial dataset for graph/model plumbing tests."""
    cfg = copl.GeneratorConfig(
        num_users=12,
        num_items=40,
        num_dims=2,
        profile=copl.GroupSpec([1, 1]),
        regime=copl.Regime("ALL", 4),
        controversial_only=True,
        test_pairs_per_user=3,
        seed=99,
    )
    return copl.generate_dataset(cfg)


def manual_dataset(survey_pairs, annotations, num_users=None, num_dims=2, weights=None):
    """Dataset from explicit (response_a, response_b) feature pairs and
    (user, item, side) annotations."""
    responses = []
    survey = []
    for i, (a, b) in enumerate(survey_pairs):
        responses.append(copl.ResponseFeatures(2 * i, np.asarray(a, dtype=float)))
        responses.append(copl.ResponseFeatures(2 * i + 1, np.asarray(b, dtype=float)))
        survey.append(copl.SurveyItem(i, 2 * i, 2 * i + 1, i))
    if num_users is None:
        num_users = max((u for u, _, _ in annotations), default=-1) + 1
    users = []
    for uid in range(num_users):
        if weights is not None:
            users.append(copl.UserProfile(uid, np.asarray(weights[uid], dtype=float),
                                          group_id=_group_of(weights[uid])))
        else:
            w = np.zeros(num_dims)
            w[uid % num_dims] = 1.0
            users.append(copl.UserProfile(uid, w, group_id=uid % num_dims))
    anns = [copl.Annotation(u, i, side) for u, i, side in annotations]
    return copl.PreferenceDataset(
        survey=survey, responses=responses, users=users, annotations=anns, test_annotations=[]
    )


def _group_of(w):
    w = np.asarray(w)
    return int(np.argmax(w)) if np.count_nonzero(w) == 1 else None
