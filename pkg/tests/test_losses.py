import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from tsfn import oracles
from tsfn.errors import ConfigError, DimensionError, DistanceRangeError, InvalidInputError
from tsfn.losses import (Batch, LossWeights, ViewGenerator, composite_loss, cross_entropy,
                         distance_loss, global_context_loss, mean_cross_entropy,
                         robustness_loss, subsample_clip, symmetric_kl, view_variance_loss)
from tsfn.model import init_params
from tsfn.selfcheck import MICRO_SYNTH, micro_batch, micro_config
from tsfn.synth import Sample, VideoClip
from tsfn.tensor import Tensor, backward

ces = hnp.arrays(np.float64, st.integers(1, 8), elements=st.floats(0, 20))


def probs_row(y, p):
    out = np.full(6, (1 - p) / 5)
    out[y] = p
    return out


class TestCrossEntropy:
    def test_perfect(self):
        assert cross_entropy(Tensor(probs_row(2, 1.0)), 2).item() == 0.0

    def test_uniform(self):
        assert cross_entropy(Tensor(np.full(6, 1 / 6)), 0).item() == pytest.approx(math.log(6), abs=1e-12)

    def test_quarter(self):
        assert cross_entropy(Tensor(probs_row(4, 0.25)), 4).item() == pytest.approx(math.log(4), abs=1e-12)

    def test_clamped_zero(self):
        ce = cross_entropy(Tensor(np.eye(6)[0]), 3).item()
        assert ce == pytest.approx(-math.log(1e-12))

    def test_batch(self):
        p = np.stack([probs_row(0, 0.5), probs_row(1, 0.1)])
        np.testing.assert_allclose(cross_entropy(Tensor(p), np.array([0, 1])).data,
                                   [math.log(2), math.log(10)], atol=1e-12)

    @pytest.mark.parametrize("y", [-1, 6])
    def test_label_range(self, y):
        with pytest.raises(InvalidInputError):
            cross_entropy(Tensor(np.full(6, 1 / 6)), y)

    def test_label_count(self):
        with pytest.raises(DimensionError):
            cross_entropy(Tensor(np.full((2, 6), 1 / 6)), np.array([0, 1, 2]))


class TestDistanceLoss:
    def test_hand_case_exact(self):
        assert distance_loss([4.0, 28.0], Tensor(np.array([0.5, 1.0]))).item() == 15.0

    @given(ces)
    def test_unit_distance_is_mean(self, ce):
        got = distance_loss(np.ones(len(ce)), Tensor(ce)).item()
        assert abs(got - ce.mean()) <= 1e-12 * max(1.0, ce.mean())

    def test_zero_ce(self):
        assert distance_loss([4.0, 17.0, 28.0], Tensor(np.zeros(3))).item() == 0.0

    def test_ratio_seven(self):
        ce = Tensor(np.array([0.8, 0.8]), requires_grad=True)
        backward(distance_loss([4.0, 28.0], ce))
        assert ce.grad[1] / ce.grad[0] == 7.0
        np.testing.assert_array_equal(ce.grad, [4.0 / 2, 28.0 / 2])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            distance_loss([4.0, 5.0], Tensor(np.ones(3)))


class TestViewVariance:
    def test_hand_case(self):
        assert view_variance_loss(np.array([0.2, 0.6])).item() == pytest.approx(0.08, abs=1e-15)

    def test_identical_views(self):
        assert view_variance_loss(np.full((3, 4), 0.7)).item() == 0.0

    @given(hnp.arrays(np.float64, st.integers(2, 8), elements=st.floats(0, 20)))
    def test_m_times_population_variance(self, ce):
        got = view_variance_loss(ce).item()
        assert abs(got - len(ce) * oracles.population_variance(ce)) <= 1e-12 * max(1.0, got)

    @settings(max_examples=30)
    @given(hnp.arrays(np.float64, (3, 5), elements=st.floats(0, 10)), st.randoms())
    def test_permutation_invariant(self, ce, rnd):
        perm = list(range(5))
        rnd.shuffle(perm)
        a, b = view_variance_loss(ce).item(), view_variance_loss(ce[:, perm]).item()
        assert a == pytest.approx(b, rel=1e-12, abs=1e-14)
        assert a >= 0

    def test_single_view_rejected(self):
        with pytest.raises(ConfigError):
            view_variance_loss(np.ones((2, 1)))


class TestSymmetricKL:
    def test_self(self):
        p = np.array([0.5, 0.5, 0, 0, 0, 0])
        assert symmetric_kl(Tensor(p), Tensor(p)).item() == 0.0

    def test_summation_oracle(self):
        p = np.array([0.7, 0.3, 0, 0, 0, 0])
        q = np.array([0.3, 0.7, 0, 0, 0, 0])
        got = symmetric_kl(Tensor(p), Tensor(q)).item()
        assert got == pytest.approx(oracles.sym_kl_sum(p, q), abs=1e-12)
        assert got == pytest.approx(0.8 * math.log(7 / 3), abs=1e-12)

    @given(hnp.arrays(np.float64, 6, elements=st.floats(0.01, 1)),
           hnp.arrays(np.float64, 6, elements=st.floats(0.01, 1)))
    def test_non_negative_symmetric(self, a, b):
        p, q = a / a.sum(), b / b.sum()
        x, y = symmetric_kl(Tensor(p), Tensor(q)).item(), symmetric_kl(Tensor(q), Tensor(p)).item()
        assert x >= 0 and x == pytest.approx(y, abs=1e-14)


class TestSubsample:
    def test_layout(self):
        frames = np.arange(8.0)[:, None, None, None] * np.ones((8, 1, 1, 3))
        out = subsample_clip(frames)
        assert out.shape == frames.shape
        np.testing.assert_array_equal(out[:, 0, 0, 0], [0, 0, 0, 0, 0, 2, 4, 6])

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            subsample_clip(np.zeros((3, 2, 2, 3)))


class TestModelTerms:
    def test_global_zero_for_constant_model(self):
        p = init_params(micro_config())
        for t in p.tensors():
            t.data[...] = 0.0
        assert global_context_loss(p, micro_batch()).item() == 0.0

    def test_global_sample_and_batch(self):
        p = init_params(micro_config(1))
        b = micro_batch(2)
        s = Sample(VideoClip(b.clips[0]), int(b.labels[0]), float(b.distances[0]))
        assert global_context_loss(p, s).item() >= 0
        assert global_context_loss(p, b).item() >= 0

    def test_robustness_matches_variance_oracle(self):
        p = init_params(micro_config(3))
        b = micro_batch(3, n=2, views=3)
        w = LossWeights(views=3)
        got = robustness_loss(p, b, w, ViewGenerator(MICRO_SYNTH)).item()
        views = b.views
        ce = np.array([[cross_entropy(mean_scores(p, views[i, j]), b.labels[i]).item()
                        for j in range(3)] for i in range(2)])
        want = np.mean([3 * oracles.population_variance(row) for row in ce])
        assert got == pytest.approx(want, abs=1e-12)

    def test_robustness_needs_two_views(self):
        with pytest.raises(ConfigError):
            robustness_loss(init_params(micro_config()), micro_batch(), LossWeights(gamma=0, views=1))

    def test_view_generator_deterministic(self):
        gen = ViewGenerator(MICRO_SYNTH)
        clip = VideoClip(micro_batch(4).clips[0])
        a, b = gen(clip, 9, 3), gen(clip, 9, 3)
        assert all(np.array_equal(x.frames, y.frames) for x, y in zip(a, b))
        assert not np.array_equal(a[0].frames, a[2].frames)


def mean_scores(p, clip):
    from tsfn.model import forward
    return forward(VideoClip(clip), p)


class TestWeightsAndBatch:
    def test_defaults(self):
        w = LossWeights()
        assert (w.alpha, w.beta, w.gamma, w.views) == (0.1, 0.05, 0.1, 3)

    @pytest.mark.parametrize("kw", [dict(alpha=-1), dict(beta=-0.1), dict(gamma=-2), dict(views=1)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            LossWeights(**kw)

    def test_gamma_zero_allows_one_view(self):
        LossWeights(gamma=0.0, views=1)

    def test_batch_validation(self):
        clips = np.zeros((2, 8, 8, 8, 3))
        with pytest.raises(DistanceRangeError):
            Batch(clips, [0, 1], [4.0, 30.0])
        with pytest.raises(InvalidInputError):
            Batch(clips, [0, 6], [4.0, 5.0])
        with pytest.raises(DimensionError):
            Batch(clips, [0, 1, 2], [4.0, 5.0, 6.0])
        with pytest.raises(InvalidInputError):
            Batch(np.zeros((0, 8, 8, 8, 3)), [], [])


class TestComposite:
    def setup_method(self):
        self.p = init_params(micro_config(5))
        self.b = micro_batch(5, n=2, views=2)
        self.gen = ViewGenerator(MICRO_SYNTH)

    def loss(self, **kw):
        return composite_loss(self.p, self.b, LossWeights(**{"views": 2, **kw}), self.gen)

    def test_zero_weights_is_mean_ce(self):
        out = self.loss(alpha=0, beta=0, gamma=0)
        want = mean_cross_entropy(self.p, self.b).item()
        assert abs(out.total.item() - want) <= 1e-12

    def test_breakdown_resums(self):
        out = self.loss()
        f = out.as_floats()
        assert f["total"] == pytest.approx(f["ce"] + 0.1 * f["global"] + 0.05 * f["dist"]
                                           + 0.1 * f["robust"], abs=1e-12)
        assert min(f.values()) >= 0

    def test_components_match_independent(self):
        out = self.loss()
        w = LossWeights(views=2)
        ce = cross_entropy(mean_scores_batch(self.p, self.b.clips), self.b.labels)
        assert out.ce.item() == pytest.approx(ce.data.mean(), abs=1e-12)
        assert out.distance.item() == pytest.approx(distance_loss(self.b.distances, ce).item(), abs=1e-12)
        assert out.global_context.item() == pytest.approx(global_context_loss(self.p, self.b).item(),
                                                          abs=1e-12)
        assert out.robustness.item() == pytest.approx(
            robustness_loss(self.p, self.b, w, self.gen).item(), abs=1e-12)

    def test_linear_in_beta(self):
        a, b = self.loss(beta=0.05), self.loss(beta=0.1)
        rest = lambda o: o.total.item() - o.ce.item() - 0.1 * o.global_context.item() - 0.1 * o.robustness.item()
        assert rest(b) == pytest.approx(2 * rest(a), rel=1e-12)

    def test_view_reuse_matches_full_forward(self):
        out = self.loss()
        views = self.b.views.copy()
        views[:, 0, 0, 0, 0, 0] = np.nextafter(views[:, 0, 0, 0, 0, 0], 2.0)  # defeat reuse
        b2 = Batch(self.b.clips, self.b.labels, self.b.distances, self.b.seeds, views)
        other = composite_loss(self.p, b2, LossWeights(views=2), self.gen)
        assert other.robustness.item() == pytest.approx(out.robustness.item(), abs=1e-9)

    def test_identical_views_zero_robust(self):
        views = np.repeat(self.b.clips[:, None], 2, axis=1)
        b2 = Batch(self.b.clips, self.b.labels, self.b.distances, self.b.seeds, views)
        out = composite_loss(self.p, b2, LossWeights(views=2), self.gen)
        assert abs(out.robustness.item()) <= 1e-12

    def test_gradients_flow_everywhere(self):
        out = self.loss()
        backward(out.total)
        assert all(t.grad is not None and np.isfinite(t.grad).all() for t in self.p.tensors())


def mean_scores_batch(p, clips):
    from tsfn.model import forward
    return forward(clips, p)
