import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dplab import (
    ClipSpec,
    ContractViolation,
    LayeredVector,
    NoisePlan,
    RngStream,
    aggregate_and_perturb,
    aggregate_and_perturb_scalars,
    clip_alpha_vec,
    clip_to_norm,
    dot,
    l2_norm,
)
from tests.conftest import random_vector


class TestClipToNorm:
    def test_halves_overlong_vector(self):
        v = LayeredVector.from_blocks([[0.0, 2.0]])
        out = clip_to_norm(v, 1.0)
        assert list(out.blocks[0]) == [0.0, 1.0]

    def test_within_bound_unchanged(self):
        v = random_vector((4, 3), seed=1, scale=0.1)
        assert clip_to_norm(v, 10.0) is v

    def test_zero_vector(self):
        z = LayeredVector.zeros((3,))
        assert clip_to_norm(z, 1.0).equals(z)

    def test_nonpositive_bound_rejected(self):
        with pytest.raises(ContractViolation):
            clip_to_norm(random_vector((2,), 1), 0.0)
        with pytest.raises(ContractViolation):
            clip_to_norm(random_vector((2,), 1), -1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 100.0, allow_nan=False))
    def test_idempotent_exactly(self, seed, c):
        v = random_vector((5, 3), seed=seed, scale=10.0)
        once = clip_to_norm(v, c)
        twice = clip_to_norm(once, c)
        assert twice.equals(once)
        assert l2_norm(once) <= c * (1 + 1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_direction_preserved(self, seed):
        v = random_vector((6, 2), seed=seed, scale=5.0)
        out = clip_to_norm(v, 0.5)
        cos = dot(v, out) / (l2_norm(v) * l2_norm(out))
        assert cos == pytest.approx(1.0, abs=1e-12)
        assert l2_norm(out) <= l2_norm(v)


class TestClipAlphaVec:
    def test_three_four(self):
        out = clip_alpha_vec(np.array([3.0, 4.0]), 1.0)
        assert out == pytest.approx([0.6, 0.8], rel=1e-12)

    def test_signs_preserved(self):
        out = clip_alpha_vec(np.array([-3.0, 4.0]), 1.0)
        assert out == pytest.approx([-0.6, 0.8], rel=1e-12)

    def test_within_bound_unchanged(self):
        a = np.array([0.1, -0.2])
        assert np.array_equal(clip_alpha_vec(a, 1.0), a)

    def test_norm_bounded(self):
        out = clip_alpha_vec(np.array([10.0, -7.0, 2.0]), 2.5)
        assert math.sqrt(np.sum(out * out)) <= 2.5 * (1 + 1e-15)


class TestAggregateAndPerturb:
    def test_sigma_zero_is_plain_mean(self):
        vecs = [random_vector((3, 2), seed=i, scale=0.1) for i in range(4)]
        out = aggregate_and_perturb(vecs, 100.0, 0.0)
        expected = np.mean([v.concat() for v in vecs], axis=0)
        assert out.concat() == pytest.approx(expected, rel=1e-12)

    def test_single_overlong_sample_halved(self):
        v = LayeredVector.from_blocks([[0.0, 4.0]])  # norm 4 = 2c
        out = aggregate_and_perturb([v], 2.0, 0.0)
        assert list(out.blocks[0]) == [0.0, 2.0]

    def test_empty_list_rejected(self):
        with pytest.raises(ContractViolation):
            aggregate_and_perturb([], 1.0, 0.0)

    def test_noise_std_matches_sigma_c_over_b(self):
        # per-coordinate std of (output - clipped mean) is sigma*c/B within 3%
        b, sigma, c = 4, 1.0, 2.0
        vecs = [random_vector((5,), seed=i, scale=0.4) for i in range(b)]
        clean = aggregate_and_perturb(vecs, c, 0.0).concat()
        samples = []
        for rep in range(2000):
            noisy = aggregate_and_perturb(vecs, c, sigma, RngStream(5, rep, "noise-g"))
            samples.append(noisy.concat() - clean)
        noise = np.concatenate(samples)
        assert noise.size == 10_000
        expected = sigma * c / b
        assert abs(noise.std() - expected) / expected < 0.03

    def test_deterministic_given_stream(self):
        vecs = [random_vector((4,), seed=i) for i in range(3)]
        s = RngStream(9, 4, "noise-g")
        a = aggregate_and_perturb(vecs, 1.0, 0.7, s)
        b = aggregate_and_perturb(vecs, 1.0, 0.7, s)
        assert a.equals(b)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            aggregate_and_perturb([random_vector((2,), 1), random_vector((3,), 1)], 1.0, 0.0)


class TestAggregateAndPerturbScalars:
    def test_one_sample_clipped(self):
        out = aggregate_and_perturb_scalars([np.array([0.5]), np.array([1.5])], 1.0, 0.0)
        assert out == pytest.approx([0.75], rel=1e-12)

    def test_sigma_zero_within_bounds_is_mean(self):
        vecs = [np.array([0.1, 0.2]), np.array([-0.1, 0.4])]
        out = aggregate_and_perturb_scalars(vecs, 5.0, 0.0)
        assert out == pytest.approx([0.0, 0.3], abs=1e-15)

    def test_noise_std_matches_sigma_c_over_b(self):
        b, sigma, c = 4, 1.0, 2.0
        vecs = [np.array([0.3, -0.2, 0.5]) for _ in range(b)]
        clean = aggregate_and_perturb_scalars(vecs, c, 0.0)
        samples = []
        for rep in range(3400):
            noisy = aggregate_and_perturb_scalars(vecs, c, sigma, RngStream(6, rep, "noise-alpha"))
            samples.append(noisy - clean)
        noise = np.concatenate(samples)
        assert noise.size >= 10_000
        expected = sigma * c / b
        assert abs(noise.std() - expected) / expected < 0.03

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            aggregate_and_perturb_scalars([], 1.0, 0.0)


class TestSpecs:
    def test_clip_spec_positive(self):
        with pytest.raises(ContractViolation):
            ClipSpec(0.0, 1.0, 1.0)
        with pytest.raises(ContractViolation):
            ClipSpec(1.0, -1.0, 1.0)
        ClipSpec(1.0, 0.5, 1.5)

    def test_noise_plan_nonnegative(self):
        with pytest.raises(ContractViolation):
            NoisePlan(-0.1, 1.0, 1.0)
        NoisePlan(0.0, 0.0, 0.0)
