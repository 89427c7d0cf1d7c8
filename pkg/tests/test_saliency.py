import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fastcache.approx import LinearApproximator, identity_approximator
from fastcache.saliency import (
    SaliencyConfig,
    TokenPartition,
    blend,
    compute_saliency,
    partition_tokens,
    reassemble,
    static_bypass,
)


def test_config_validation():
    SaliencyConfig(0.0, 0.0)
    SaliencyConfig(10.0, 1.0)
    with pytest.raises(ValueError):
        SaliencyConfig(tau_s=-0.1)
    with pytest.raises(ValueError):
        SaliencyConfig(gamma=1.5)


def test_compute_saliency_oracle():
    prev = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
    cur = np.array([[3.0, 4.0], [1.0, 1.0], [2.0, 1.0]])
    sal = compute_saliency(cur, prev)
    np.testing.assert_allclose(sal, [25.0, 0.0, 1.0])
    assert sal.dtype == np.float64
    with pytest.raises(ValueError):
        compute_saliency(cur, prev[:2])


def test_partition_threshold_is_strict():
    cfg = SaliencyConfig(tau_s=1.0)
    part = partition_tokens([2.0, 1.0, 0.5], cfg)
    np.testing.assert_array_equal(part.motion_indices, [0])
    np.testing.assert_array_equal(part.static_indices, [1, 2])  # boundary is static


def test_partition_extremes():
    cfg = SaliencyConfig(tau_s=0.0)
    every = partition_tokens([1.0, 2.0, 3.0], cfg)
    assert every.static_indices.size == 0
    none = partition_tokens([0.0, 0.0], cfg)
    assert none.motion_indices.size == 0
    assert none.static_indices.size == 2


def test_token_partition_rejects_non_partition():
    with pytest.raises(ValueError):
        TokenPartition(np.array([0, 1]), np.array([1, 2]), 4)
    with pytest.raises(ValueError):
        TokenPartition(np.array([0]), np.array([1]), 3)


@settings(max_examples=60, deadline=None)
@given(
    sal=hnp.arrays(np.float64, st.integers(1, 30),
                   elements=st.floats(0, 100, allow_nan=False)),
    tau=st.floats(0, 100, allow_nan=False),
)
def test_partition_property(sal, tau):
    part = partition_tokens(sal, SaliencyConfig(tau_s=tau))
    seen = np.concatenate([part.motion_indices, part.static_indices])
    assert sorted(seen.tolist()) == list(range(sal.size))
    assert all(sal[i] > tau for i in part.motion_indices)
    assert all(sal[i] <= tau for i in part.static_indices)


def test_static_bypass_identity_default():
    rows = np.random.default_rng(0).normal(size=(4, 6)).astype(np.float32)
    out = static_bypass(rows, identity_approximator(6))
    np.testing.assert_array_equal(out, rows)
    assert out.dtype == np.float32


def test_static_bypass_applies_affine_map():
    w = np.diag([2.0, 3.0])
    b = np.array([1.0, -1.0])
    rows = np.array([[1.0, 1.0], [0.0, 2.0]])
    out = static_bypass(rows, LinearApproximator(w, b))
    np.testing.assert_allclose(out, [[3.0, 2.0], [1.0, 5.0]])


def test_static_bypass_dim_check():
    with pytest.raises(ValueError):
        static_bypass(np.ones((2, 3)), identity_approximator(4))


def test_blend_is_convex_combination():
    a = np.full((2, 2), 4.0, dtype=np.float32)
    b = np.zeros((2, 2), dtype=np.float32)
    np.testing.assert_array_equal(blend(a, b, 1.0), a)
    np.testing.assert_array_equal(blend(a, b, 0.0), b)
    out = blend(a, b, 0.25)
    np.testing.assert_allclose(out, np.full((2, 2), 1.0))
    assert out.dtype == np.float32
    with pytest.raises(ValueError):
        blend(a, b, 1.2)
    with pytest.raises(ValueError):
        blend(a, np.zeros((3, 2)), 0.5)


def test_reassemble_restores_original_positions():
    x = np.arange(12, dtype=np.float32).reshape(4, 3)
    part = TokenPartition(np.array([2, 0]), np.array([1, 3]), 4)
    out = reassemble(part, x[[2, 0]], x[[1, 3]])
    np.testing.assert_array_equal(out, x)


def test_reassemble_row_count_mismatch():
    part = TokenPartition(np.array([0]), np.array([1]), 2)
    with pytest.raises(ValueError):
        reassemble(part, np.ones((2, 3)), np.ones((1, 3)))
    with pytest.raises(ValueError):
        reassemble(part, np.ones((1, 3)), np.ones((0, 3)))


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_partition_then_reassemble_is_identity(data):
    n = data.draw(st.integers(1, 12))
    d = data.draw(st.integers(1, 5))
    rng = np.random.default_rng(data.draw(st.integers(0, 1000)))
    prev = rng.normal(size=(n, d))
    cur = prev + rng.normal(scale=0.5, size=(n, d))
    tau = data.draw(st.floats(0, 4))
    part = partition_tokens(compute_saliency(cur, prev), SaliencyConfig(tau_s=tau))
    rebuilt = reassemble(part, cur[part.motion_indices], cur[part.static_indices])
    np.testing.assert_array_equal(rebuilt, cur)
