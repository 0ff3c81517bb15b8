import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from spillover.covariates import (density_features, dissimilarity_index, human_mobility_index,
                                  min_max_scale, tract_dissimilarity)


@pytest.mark.parametrize("focus, reference, expected", [
    ([10, 30], [30, 10], 0.5),
    ([1, 2, 3], [10, 20, 30], 0.0),
    ([5, 0, 7], [0, 9, 0], 1.0),
])
def test_dissimilarity_hand_cases(focus, reference, expected):
    assert dissimilarity_index(focus, reference) == expected


def test_dissimilarity_zero_total_raises():
    with pytest.raises(ValueError):
        dissimilarity_index([0, 0], [1, 2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 500), st.integers(0, 500)), min_size=1, max_size=12))
def test_dissimilarity_bounds_and_symmetry(counts):
    x = [a for a, _ in counts]
    y = [b for _, b in counts]
    if sum(x) == 0 or sum(y) == 0:
        return
    di = dissimilarity_index(x, y)
    assert 0.0 <= di <= 1.0 + 1e-15
    assert di == pytest.approx(dissimilarity_index(y, x), abs=1e-15)


def test_tract_dissimilarity_broadcasts_to_member_cbgs():
    census = pd.DataFrame({"cbg_id": ["a", "b", "c"], "tract_id": ["T1", "T1", "T2"],
                           "f": [10, 30, 5], "r": [30, 10, 0]})
    di = tract_dissimilarity(census, ["f"], ["r"])
    assert di.loc["a"] == 0.5 and di.loc["b"] == 0.5
    assert np.isnan(di.loc["c"])


def test_hmi_hand_case():
    visits = pd.Series({"lo": 28, "mid": 56, "hi": 84})
    raw, hmi = human_mobility_index(visits, days=28)
    assert raw.tolist() == [1.0, 2.0, 3.0]
    assert hmi.tolist() == [0.0, 0.5, 1.0]


def test_hmi_all_zero_visits_is_all_zero():
    with pytest.warns(RuntimeWarning):
        _, hmi = human_mobility_index(pd.Series({"a": 0, "b": 0}))
    assert hmi.tolist() == [0.0, 0.0]


def test_hmi_fills_unvisited_cbgs():
    _, hmi = human_mobility_index(pd.Series({"a": 10}), cbg_ids=["a", "b"])
    assert hmi.to_dict() == {"a": 1.0, "b": 0.0}


@pytest.mark.parametrize("values, expected", [
    ([2, 4, 6], [0.0, 0.5, 1.0]),
    ([0, 1], [0.0, 1.0]),
])
def test_min_max_cases(values, expected):
    assert min_max_scale(values).tolist() == expected


def test_min_max_constant_warns_and_returns_zeros():
    with pytest.warns(RuntimeWarning, match="constant"):
        out = min_max_scale([5, 5, 5])
    assert out.tolist() == [0.0, 0.0, 0.0]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False), min_size=2,
                max_size=30))
def test_min_max_range(values):
    if min(values) == max(values):
        return
    out = min_max_scale(values)
    assert out.min() == 0.0 and out.max() == 1.0
    assert np.all(np.diff(out[np.argsort(values, kind="stable")]) >= 0)


def test_density_features():
    area = pd.Series({"a": 1.0, "b": 2.0})
    out = density_features(area, population=pd.Series({"a": 2000, "b": 1000}),
                           poi_count=pd.Series({"a": 0, "b": 4}))
    assert out.loc["a", "pop"] == 2000.0
    assert out.loc["a", "poi"] == 0.0
    assert out.loc["b", "poi"] == 2.0


def test_density_zero_area_raises():
    with pytest.raises(ValueError):
        density_features(pd.Series({"a": 0.0}), population=pd.Series({"a": 1}))
