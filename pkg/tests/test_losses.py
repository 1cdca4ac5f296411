"""Symlog transforms, two-hot bucket codec, reward/termination losses."""
import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from maskwm.losses import (SymlogBuckets, categorical_cross_entropy,
                           reward_loss, symexp, symlog, termination_loss)
from maskwm.numerics import RngStream, finite_difference_check


def test_symlog_symexp_inverse():
    v = torch.from_numpy(RngStream(0, "v").uniform((1000,), -50.0, 50.0))
    assert torch.allclose(symexp(symlog(v)), v, atol=1e-9, rtol=0)


def test_symlog_known_values():
    x = torch.tensor([0.0, 1.0, -1.0, np.e - 1.0], dtype=torch.float64)
    y = symlog(x)
    assert torch.allclose(
        y, torch.tensor([0.0, np.log(2.0), -np.log(2.0), 1.0], dtype=torch.float64)
    )


class TestBuckets:
    def setup_method(self):
        self.buckets = SymlogBuckets(dtype=torch.float64)

    def test_count_and_center(self):
        assert self.buckets.centers.shape == (255,)
        assert float(self.buckets.centers[127]) == 0.0

    def test_two_hot_weights_sum_to_one(self):
        v = torch.from_numpy(RngStream(1, "v").uniform((64,), -100.0, 100.0))
        probs = self.buckets.encode(v)
        assert torch.allclose(probs.sum(-1), torch.ones(64, dtype=torch.float64))
        assert int((probs > 0).sum(-1).max()) <= 2

    def test_roundtrip_tolerance(self):
        # criterion: decode(encode(v)) within 1e-4 over 1000 random values
        v = torch.from_numpy(RngStream(2, "v").uniform((1000,), -20.0, 20.0))
        out = self.buckets.decode_probs(self.buckets.encode(v))
        assert float((out - v).abs().max()) < 1e-4

    def test_exact_on_bucket_centers(self):
        centers = symexp(self.buckets.centers)
        out = self.buckets.decode_probs(self.buckets.encode(centers))
        assert torch.allclose(out, centers, atol=1e-9, rtol=1e-12)

    def test_clamps_out_of_range(self):
        big = torch.tensor([1e12, -1e12], dtype=torch.float64)
        probs = self.buckets.encode(big)
        edge = symexp(torch.tensor([20.0, -20.0], dtype=torch.float64))
        assert torch.allclose(self.buckets.decode_probs(probs), edge)

    def test_decode_softmaxes_logits(self):
        # uniform logits -> symmetric bucket centers average to exactly zero
        logits = torch.zeros(255, dtype=torch.float64)
        assert float(self.buckets.decode(logits)) == pytest.approx(0.0, abs=1e-12)

    @given(st.floats(-1e6, 1e6, allow_nan=False))
    @settings(max_examples=200, deadline=None)
    def test_roundtrip_property(self, v):
        t = torch.tensor([v], dtype=torch.float64)
        out = self.buckets.decode_probs(self.buckets.encode(t))
        target = torch.clamp(symlog(t), -20.0, 20.0)
        assert torch.allclose(symlog(out), target, atol=2e-4, rtol=1e-6)


def test_categorical_cross_entropy_matches_manual():
    logits = torch.randn(4, 7, dtype=torch.float64)
    target = torch.softmax(torch.randn(4, 7, dtype=torch.float64), -1)
    ce = categorical_cross_entropy(logits, target)
    manual = -(target * torch.log_softmax(logits, -1)).sum(-1)
    assert torch.allclose(ce, manual)


class TestRewardLoss:
    def test_perfect_prediction_attains_entropy_floor(self):
        buckets = SymlogBuckets(dtype=torch.float64)
        rewards = torch.tensor([[0.0, 1.0, -2.5]], dtype=torch.float64)
        target = buckets.encode(rewards)
        # drive logits toward log of the target distribution
        logits = torch.log(target + 1e-12)
        per = reward_loss(logits, rewards, buckets)
        entropy = -(target * torch.log(target + 1e-12)).sum(-1)
        assert torch.allclose(per, entropy, atol=1e-6)

    def test_gradients_pass_fd(self):
        buckets = SymlogBuckets(dtype=torch.float64)
        rewards = torch.from_numpy(RngStream(3, "r").normal((2, 3)))
        logits = torch.from_numpy(RngStream(4, "l").normal((2, 3, 255), std=0.3))

        report = finite_difference_check(
            lambda lg: reward_loss(lg, rewards, buckets).mean(),
            logits,
            max_probes=120,
            probe_stream=RngStream(5, "p"),
        )
        assert report.passed, report.failures[:3]


class TestTerminationLoss:
    def test_matches_bce(self):
        prob = torch.tensor([0.1, 0.9, 0.5], dtype=torch.float64)
        flag = torch.tensor([0.0, 1.0, 1.0], dtype=torch.float64)
        per = termination_loss(prob, flag)
        manual = -(flag * torch.log(prob) + (1 - flag) * torch.log(1 - prob))
        assert torch.allclose(per, manual, atol=1e-6)

    def test_saturated_probabilities_stay_finite(self):
        prob = torch.tensor([0.0, 1.0], dtype=torch.float64)
        flag = torch.tensor([1.0, 0.0], dtype=torch.float64)
        per = termination_loss(prob, flag)
        assert torch.isfinite(per).all()

    def test_gradients_pass_fd(self):
        prob = torch.from_numpy(RngStream(6, "p").uniform((2, 3), 0.05, 0.95))
        flag = (torch.from_numpy(RngStream(7, "f").uniform((2, 3))) > 0.5).to(torch.float64)
        report = finite_difference_check(
            lambda p: termination_loss(p, flag).mean(), prob
        )
        assert report.passed, report.failures[:3]
