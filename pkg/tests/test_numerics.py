import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prspider.numerics import (
    DRAW_INNER,
    DRAW_RESTART,
    RngStream,
    as_vector,
    axpy,
    mean_reduce,
    sq_norm,
)


def vecs(*rows):
    return [np.array(r, dtype=np.float64) for r in rows]


class TestMeanReduce:
    def test_symmetric_pair(self):
        assert np.array_equal(mean_reduce(vecs((1, 3), (3, 1))), [2, 2])

    def test_singleton_identity(self):
        v = np.array([5.0])
        out = mean_reduce([v])
        assert np.array_equal(out, v)
        assert out is not v  # always a fresh array

    def test_four_vector_hand_sum(self):
        # brute-force componentwise mean of the same list
        vectors = vecs((1, 0), (0, 1), (2, 2), (1, 1))
        expected = np.stack(vectors).sum(axis=0) / 4
        assert np.allclose(mean_reduce(vectors), expected, rtol=0, atol=1e-15)
        assert np.array_equal(mean_reduce(vectors), [1, 1])

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            mean_reduce([])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mean_reduce(vecs((1, 2), (1, 2, 3)))

    @given(
        st.integers(min_value=1, max_value=17),
        st.lists(
            st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
            min_size=1,
            max_size=8,
        ),
    )
    def test_n_copies_bitwise_identity(self, n, data):
        v = np.array(data, dtype=np.float64)
        out = mean_reduce([v] * n)
        assert out.tobytes() == v.tobytes()

    def test_repeated_calls_bitwise_identical(self):
        rng = np.random.default_rng(0)
        vectors = [rng.normal(size=6) for _ in range(5)]
        a = mean_reduce(vectors)
        b = mean_reduce(vectors)
        assert a.tobytes() == b.tobytes()


class TestAxpy:
    def test_zero_step(self):
        out = axpy(np.array([1.0, 1.0]), 0.0, np.array([9.0, 9.0]))
        assert np.array_equal(out, [1, 1])

    def test_exact_cancellation(self):
        out = axpy(np.array([1.0, 2.0]), -0.5, np.array([2.0, 4.0]))
        assert np.array_equal(out, [0, 0])

    def test_hand_arithmetic(self):
        out = axpy(np.array([0.3, 0.7]), -0.1, np.array([1.0, -1.0]))
        assert np.allclose(out, [0.2, 0.8], rtol=0, atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            axpy(np.zeros(2), 1.0, np.zeros(3))

    def test_non_finite_scalar(self):
        with pytest.raises(ValueError):
            axpy(np.zeros(2), float("nan"), np.zeros(2))

    def test_does_not_mutate_inputs(self):
        x = np.array([1.0, 2.0])
        y = np.array([3.0, 4.0])
        axpy(x, 2.0, y)
        assert np.array_equal(x, [1, 2]) and np.array_equal(y, [3, 4])


class TestSqNorm:
    def test_zero_vector(self):
        assert sq_norm(np.zeros(3)) == 0.0

    def test_pythagorean_pair(self):
        assert sq_norm(np.array([3.0, 4.0])) == 25.0

    def test_hand_sum_of_squares(self):
        assert sq_norm(np.array([0.1, 0.2, 0.3])) == pytest.approx(0.14, rel=1e-14)


class TestAsVector:
    def test_rejects_matrix(self):
        with pytest.raises(ValueError):
            as_vector(np.zeros((2, 2)))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            as_vector([1.0, float("nan")])

    def test_dim_check(self):
        with pytest.raises(ValueError):
            as_vector([1.0, 2.0], dim=3)


class TestRngStream:
    def test_same_key_same_sequence(self):
        s = RngStream(seed=42)
        a = s.substream(1, 2, 3).normal(size=10)
        b = s.substream(1, 2, 3).normal(size=10)
        assert a.tobytes() == b.tobytes()

    def test_distinct_keys_differ(self):
        s = RngStream(seed=42)
        base = s.substream(1, 2, 3).normal(size=10)
        for key in [(0, 2, 3), (1, 0, 3), (1, 2, 0)]:
            other = s.substream(*key).normal(size=10)
            assert not np.array_equal(base, other)

    def test_purpose_tags_are_disjoint(self):
        s = RngStream(seed=7)
        a = s.substream(0, 0, 0, DRAW_INNER).integers(0, 1000, size=8)
        b = s.substream(0, 0, 0, DRAW_RESTART).integers(0, 1000, size=8)
        assert not np.array_equal(a, b)

    def test_single_worker_replayable_in_isolation(self):
        # draws for worker 3 do not depend on whether other workers drew
        s = RngStream(seed=5)
        for w in range(3):
            s.substream(w, 0, 0).normal(size=4)
        isolated = RngStream(seed=5).substream(3, 0, 0).normal(size=4)
        interleaved = s.substream(3, 0, 0).normal(size=4)
        assert isolated.tobytes() == interleaved.tobytes()
