import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spotkit.core import (DenseLabelSeq, EventClassTable, EventLabel, SoftLabelSeq, SpotError,
                          class_weights, densify, dilate)

from oracles import dilate_oracle


def test_densify_examples():
    assert densify([], 5, 3).labels.tolist() == [0, 0, 0, 0, 0]
    assert densify([(3, 2)], 5, 3).labels.tolist() == [0, 0, 0, 2, 0]
    assert densify([EventLabel("v", 3, 2)], 5, 3).mask.tolist() == [1] * 5


def test_densify_rejects_duplicates_and_out_of_range():
    with pytest.raises(SpotError, match="duplicate event frame 3"):
        densify([(3, 1), (3, 2)], 5, 3)
    with pytest.raises(SpotError, match="out of range"):
        densify([(5, 1)], 5, 3)
    with pytest.raises(SpotError, match="class"):
        densify([(1, 4)], 5, 3)


@pytest.mark.parametrize("labels, radius, expected", [
    ([0, 0, 0, 1, 0, 0, 0], 1, [0, 0, 1, 1, 1, 0, 0]),
    ([2, 0, 0], 1, [2, 2, 0]),
    ([0, 0, 1, 0, 2, 0], 1, [0, 1, 1, 1, 2, 2]),
])
def test_dilate_examples(labels, radius, expected):
    assert dilate(DenseLabelSeq(labels), radius).labels.tolist() == expected


def test_dilate_matches_tie_rule_on_all_two_event_layouts():
    for a, b in itertools.combinations(range(6), 2):
        for ca, cb in [(1, 2), (2, 1)]:
            labels = [0] * 6
            labels[a], labels[b] = ca, cb
            for radius in range(4):
                got = dilate(DenseLabelSeq(labels), radius).labels.tolist()
                assert got == dilate_oracle(labels, radius), (labels, radius)


def test_class_weights():
    assert class_weights(2, 5).tolist() == [1, 5, 5]
    assert class_weights(3, 1).tolist() == [1, 1, 1, 1]
    assert class_weights(1, 2.5).tolist() == [1, 2.5]
    with pytest.raises(SpotError):
        class_weights(0, 5)


def test_class_table_invariants():
    assert EventClassTable(("a", "b")).num_classes == 2
    for bad in [(), ("a", "a"), ("",)]:
        with pytest.raises(SpotError):
            EventClassTable(bad)


def test_soft_labels_check():
    SoftLabelSeq(np.array([[0.5, 0.5], [1.0, 0.0]])).check()
    with pytest.raises(SpotError):
        SoftLabelSeq(np.array([[0.5, 0.6]])).check()


labels_strategy = st.lists(st.integers(0, 3), min_size=1, max_size=40)


@given(labels_strategy)
def test_densify_round_trip(labels):
    events = [(t, c) for t, c in enumerate(labels) if c]
    dense = densify(events, len(labels), 3)
    assert dense.events() == events


@settings(max_examples=200)
@given(labels_strategy, st.integers(0, 5))
def test_dilate_properties(labels, radius):
    dense = DenseLabelSeq(labels)
    out = dilate(dense, radius).labels
    original = np.array(labels)
    fg = original != 0
    assert np.array_equal(out[fg], original[fg])
    assert out.tolist() == dilate_oracle(labels, radius)
    bigger = dilate(dense, radius + 1).labels
    assert set(np.flatnonzero(out)) <= set(np.flatnonzero(bigger))
    assert dilate(dense, 0).labels.tolist() == labels


@given(st.integers(1, 20), st.floats(0.01, 100))
def test_class_weights_shape(k, w):
    out = class_weights(k, w)
    assert len(out) == k + 1 and out[0] == 1
