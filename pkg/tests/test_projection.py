import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ddse.model import Arch, EncoderModel
from ddse.projection import (
    Axis,
    CardinalityConstraint,
    check_constraints,
    project_model,
    project_topk,
)

ROW2 = CardinalityConstraint(Axis.ROW, 2)


def best_support_error(row, s):
    """Smallest residual over every support of size s."""
    best = np.inf
    for support in itertools.combinations(range(row.size), s):
        proj = np.zeros_like(row)
        proj[list(support)] = row[list(support)]
        best = min(best, float(np.sum((row - proj) ** 2)))
    return best


def test_row_example():
    out = project_topk(np.array([[0.1, -3.0, 2.0, 0.5]]), ROW2)
    np.testing.assert_array_equal(out, [[0.0, -3.0, 2.0, 0.0]])


def test_full_length_is_identity(rng):
    w = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(project_topk(w, CardinalityConstraint("row", 5)), w)
    np.testing.assert_array_equal(project_topk(w, CardinalityConstraint("column", 3)), w)


def test_s_too_large_and_invalid():
    with pytest.raises(ValueError):
        project_topk(np.zeros((2, 3)), CardinalityConstraint(Axis.ROW, 4))
    with pytest.raises(ValueError):
        project_topk(np.zeros((2, 3)), CardinalityConstraint(Axis.COLUMN, 3))
    with pytest.raises(ValueError):
        CardinalityConstraint(Axis.ROW, 0)


def test_ties_keep_lower_index():
    out = project_topk(np.array([[1.0, -1.0, 1.0, 0.5]]), ROW2)
    np.testing.assert_array_equal(out, [[1.0, -1.0, 0.0, 0.0]])


def test_random_rows_match_brute_force(rng):
    w = rng.standard_normal((5, 6))
    p = project_topk(w, ROW2)
    for i in range(5):
        assert np.sum((w[i] - p[i]) ** 2) == best_support_error(w[i], 2)


def test_column_axis_is_transposed_row(rng):
    w = rng.standard_normal((7, 4))
    a = project_topk(w, CardinalityConstraint(Axis.COLUMN, 3))
    b = project_topk(w.T, CardinalityConstraint(Axis.ROW, 3)).T
    np.testing.assert_array_equal(a, b)
    assert np.all(np.count_nonzero(a, axis=0) <= 3)


matrices = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)),
                  elements=st.floats(-10, 10, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(matrices, st.data())
def test_projection_properties(w, data):
    s = data.draw(st.integers(1, w.shape[1]))
    cons = CardinalityConstraint(Axis.ROW, s)
    p = project_topk(w, cons)
    assert p.shape == w.shape
    assert np.all(np.count_nonzero(p, axis=1) <= s)
    assert project_topk(p, cons).tobytes() == p.tobytes()
    assert np.linalg.norm(p) <= np.linalg.norm(w)
    kept = p != 0
    np.testing.assert_array_equal(p[kept], w[kept])
    for i in range(w.shape[0]):
        assert np.sum((w[i] - p[i]) ** 2) == pytest.approx(best_support_error(w[i], s), abs=1e-12)


def test_check_constraints_examples(rng):
    model = EncoderModel.random(Arch.DDSE, 8, 10, 2, s=3, seed=1)
    before = check_constraints(model)
    assert not before.passed
    project_model(model)
    report = check_constraints(model)
    assert report.passed
    assert all(c <= 3 for c in report.max_counts.values())
    assert set(report.max_counts) == {"w1", "w2.0", "w2.1", "w3.0", "w3.1"}

    model.w3_list[1][4] = 0.0
    model.w3_list[1][4, :4] = 1.0
    bad = check_constraints(model)
    assert not bad.passed
    assert bad.violations == [("w3.1", "row", 4, 4)]
    assert "w3.1 row 4" in str(bad)


def test_no_shortcut_constrained_and_fc_rejected():
    model = EncoderModel.random(Arch.NO_SHORTCUT, 8, 10, 1, s=2, seed=2)
    assert check_constraints(project_model(model)).passed
    with pytest.raises(ValueError):
        check_constraints(EncoderModel.random(Arch.FC_PLAIN, 8, 10, 1))
