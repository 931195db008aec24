import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusiondet.geometry import Box, area, as_array, ioa, iou, pairwise_ioa, pairwise_iou


@st.composite
def int_boxes(draw, limit=20):
    x1 = draw(st.integers(0, limit - 1))
    y1 = draw(st.integers(0, limit - 1))
    x2 = draw(st.integers(x1 + 1, limit))
    y2 = draw(st.integers(y1 + 1, limit))
    return [x1, y1, x2, y2]


@st.composite
def float_boxes(draw):
    x1 = draw(st.floats(-100, 100, allow_nan=False))
    y1 = draw(st.floats(-100, 100, allow_nan=False))
    w = draw(st.floats(0.5, 80, allow_nan=False))
    h = draw(st.floats(0.5, 80, allow_nan=False))
    return [x1, y1, x1 + w, y1 + h]


def cells(b):
    return {(x, y) for x in range(b[0], b[2]) for y in range(b[1], b[3])}


def test_area_examples():
    assert area([0, 0, 10, 10]) == 100
    assert area([0, 0, 1, 1]) == 1
    assert area([2, 3, 7, 11]) == 40
    assert area(Box(x1=2, y1=3, x2=7, y2=11)) == 40


def test_iou_examples():
    assert iou([0, 0, 10, 10], [0, 0, 10, 10]) == 1.0
    assert iou([0, 0, 5, 5], [10, 10, 20, 20]) == 0.0
    assert iou([0, 0, 10, 10], [5, 0, 15, 10]) == pytest.approx(1 / 3, abs=1e-12)


def test_ioa_examples():
    assert ioa([3, 4, 9, 9], [3, 4, 9, 9]) == 1.0
    assert ioa([0, 0, 10, 10], [0, 0, 5, 10]) == 0.5
    assert ioa([2, 2, 4, 4], [0, 0, 10, 10]) == 1.0
    # normalised by the first argument
    assert ioa([0, 0, 5, 10], [0, 0, 10, 10]) == 1.0


def test_touching_boxes_do_not_intersect():
    assert iou([0, 0, 10, 10], [10, 0, 20, 10]) == 0.0
    assert ioa([0, 0, 10, 10], [10, 0, 20, 10]) == 0.0


def test_pairwise_examples():
    result = pairwise_ioa([[0, 0, 10, 10]], [[0, 0, 5, 10], [20, 20, 30, 30]])
    np.testing.assert_allclose(result, [[0.5, 0.0]])
    np.testing.assert_allclose(pairwise_ioa([[1, 1, 4, 4]], [[1, 1, 4, 4]]), [[1.0]])
    assert pairwise_ioa([], [[0, 0, 1, 1], [2, 2, 3, 3]]).shape == (0, 2)
    assert pairwise_iou([[0, 0, 1, 1]], []).shape == (1, 0)
    assert as_array([]).shape == (0, 4)


@settings(max_examples=1000, deadline=None)
@given(int_boxes(), int_boxes())
def test_matches_cell_counting_oracle(a, b):
    ca, cb = cells(a), cells(b)
    inter = len(ca & cb)
    assert abs(iou(a, b) - inter / len(ca | cb)) <= 1e-12
    assert abs(ioa(a, b) - inter / len(ca)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(float_boxes(), float_boxes())
def test_iou_symmetric_and_bounded_by_ioa(a, b):
    assert iou(a, b) == pytest.approx(iou(b, a), abs=1e-12)
    assert ioa(a, b) >= iou(a, b) - 1e-12
    assert 0.0 <= iou(a, b) <= 1.0
    assert 0.0 <= ioa(a, b) <= 1.0 + 1e-12


@settings(max_examples=200, deadline=None)
@given(float_boxes(), st.floats(0.0, 0.4), st.floats(0.0, 0.4))
def test_contained_box_has_full_ioa(outer, fx, fy):
    w, h = outer[2] - outer[0], outer[3] - outer[1]
    inner = [outer[0] + fx * w, outer[1] + fy * h, outer[2] - fx * w, outer[3] - fy * h]
    assert ioa(inner, outer) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(int_boxes(), max_size=6), st.lists(int_boxes(), max_size=6))
def test_pairwise_matches_loop(P, Q):
    got_ioa, got_iou = pairwise_ioa(P, Q), pairwise_iou(P, Q)
    assert got_ioa.shape == (len(P), len(Q))
    for i, p in enumerate(P):
        for j, q in enumerate(Q):
            assert abs(got_ioa[i, j] - ioa(p, q)) <= 1e-12
            assert abs(got_iou[i, j] - iou(p, q)) <= 1e-12


def test_box_is_immutable_and_strict():
    b = Box(x1=0, y1=0, x2=1, y2=1)
    with pytest.raises(TypeError):
        b.x1 = 5
    with pytest.raises(ValueError):
        Box(x1=0, y1=0, x2=1, y2=1, z=3)
    assert not Box(x1=0, y1=0, x2=0, y2=1).has_positive_area()
    assert not Box(x1=0, y1=0, x2=float("inf"), y2=1).is_finite()


def test_degenerate_boxes_give_zero_not_nan():
    flat = [(5.0, 5.0, 5.0, 10.0), (5.0, 5.0, 5.0, 10.0)]
    with np.errstate(all="raise"):
        np.testing.assert_array_equal(pairwise_iou(flat, flat), np.zeros((2, 2)))
        np.testing.assert_array_equal(pairwise_ioa(flat, flat), np.zeros((2, 2)))
    assert iou(flat[0], flat[1]) == 0.0
    assert ioa(flat[0], flat[1]) == 0.0
