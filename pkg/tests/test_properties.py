"""Randomized invariants checked with Hypothesis."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from glasscav.cavity_optics import mehler_kernel
from glasscav.glass_analysis import entropy_from_class_counts, overlap_matrix
from glasscav.randmat import frustration_stats, hellinger_distance
from glasscav.replica_dynamics import binarize

finite = st.floats(-3.0, 3.0, allow_nan=False)
points = arrays(float, (2,), elements=finite)
weights = arrays(float, st.integers(2, 12), elements=st.floats(0.0, 1.0))


@given(points, points, st.floats(0.01, 3.0))
def test_mehler_positive_and_symmetric(r, rp, phi):
    a = mehler_kernel(r, rp, phi).real
    assert a >= 0
    assert a == mehler_kernel(rp, r, phi).real
    # Cauchy-Schwarz for a positive definite kernel
    bound = np.sqrt(mehler_kernel(r, r, phi).real * mehler_kernel(rp, rp, phi).real)
    assert a <= bound * (1 + 1e-12)


@given(weights, st.data())
def test_hellinger_is_a_bounded_symmetric_distance(p, data):
    q = data.draw(arrays(float, p.shape, elements=st.floats(0.0, 1.0)))
    if p.sum() == 0 or q.sum() == 0:
        return
    d = hellinger_distance(p, q)
    assert 0.0 <= d <= 1.0
    assert d == hellinger_distance(q, p)
    assert hellinger_distance(p, p) <= 1e-7


@settings(max_examples=50)
@given(st.integers(2, 8), st.integers(2, 10), st.integers(0, 2 ** 32 - 1))
def test_overlaps_bounded_and_flip_covariant(n, reps, seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(reps, n))
    s /= np.linalg.norm(s, axis=1, keepdims=True)
    Q = overlap_matrix(s)
    assert np.all(np.abs(Q) <= 1 + 1e-12)
    flips = rng.choice([-1.0, 1.0], reps)
    assert np.allclose(overlap_matrix(s * flips[:, None]), Q * np.outer(flips, flips), atol=1e-15)


@given(arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 9)), elements=finite))
def test_binarize_unit_norm_and_idempotent(x):
    b = binarize(x)
    assert np.allclose(np.linalg.norm(b, axis=-1), 1.0)
    assert np.array_equal(binarize(b), b)


@given(st.lists(st.integers(0, 500), min_size=1, max_size=20).filter(lambda c: sum(c) > 0))
def test_plugin_entropy_range(counts):
    k = sum(1 for c in counts if c > 0)
    h = entropy_from_class_counts(counts).plugin
    assert 1.0 - 1e-12 <= h <= 1.0 + np.log2(k) + 1e-12


@settings(max_examples=30)
@given(st.integers(3, 9), st.integers(0, 2 ** 32 - 1))
def test_global_sign_flip_swaps_fractions(n, seed):
    A = np.random.default_rng(seed).normal(size=(n, n))
    J = A + A.T
    a, b = frustration_stats(J), frustration_stats(-J)
    assert abs(a.p_neg + b.p_neg - 1.0) < 1e-12
    assert abs(a.p_frustrated_triple + b.p_frustrated_triple - 1.0) < 1e-12
