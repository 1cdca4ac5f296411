"""Pixel codec: encoder/decoder shapes, unimix floor, straight-through path."""
import numpy as np
import pytest
import torch

from maskwm.codec import (Codec, Encoder, Decoder, N_CLASSES, N_TOKENS,
                          reconstruction_loss, straight_through, unimix)
from maskwm.numerics import RngStream, init_module_params


def tiny_codec(dtype=torch.float64):
    codec = Codec(channels=(4, 4, 8, 8)).to(dtype)
    init_module_params(codec, RngStream(0, "codec"))
    return codec


def rand_obs(shape, seed=0, dtype=torch.float64):
    return torch.from_numpy(RngStream(seed, "obs").uniform(shape)).to(dtype)


class TestUnimix:
    def test_floor_value(self):
        # criterion: probability floor epsilon / n_classes
        probs = torch.zeros(5, N_CLASSES, dtype=torch.float64)
        probs[:, 0] = 1.0
        mixed = unimix(probs, 0.01)
        assert torch.allclose(mixed.min(-1).values,
                              torch.full((5,), 0.01 / N_CLASSES, dtype=torch.float64))
        assert torch.allclose(mixed.sum(-1), torch.ones(5, dtype=torch.float64))

    def test_identity_at_zero(self):
        probs = torch.softmax(torch.randn(4, N_CLASSES, dtype=torch.float64), -1)
        assert torch.equal(unimix(probs, 0.0), probs)

    def test_uniform_fixed_point(self):
        probs = torch.full((3, N_CLASSES), 1.0 / N_CLASSES, dtype=torch.float64)
        assert torch.allclose(unimix(probs, 0.37), probs)


class TestStraightThrough:
    def test_forward_equals_onehot(self):
        probs = torch.softmax(torch.randn(6, N_CLASSES, dtype=torch.float64), -1)
        onehot = torch.nn.functional.one_hot(probs.argmax(-1), N_CLASSES).to(probs.dtype)
        out = straight_through(probs, onehot)
        assert torch.equal(out.detach(), onehot)

    def test_backward_equals_probs_path(self):
        # criterion: gradient-path equality - d out / d logits == d probs / d logits
        logits = torch.randn(4, N_CLASSES, dtype=torch.float64, requires_grad=True)
        probs = torch.softmax(logits, -1)
        onehot = torch.nn.functional.one_hot(probs.argmax(-1), N_CLASSES).to(probs.dtype)
        out = straight_through(probs, onehot)
        up = torch.randn_like(out)
        (out * up).sum().backward()
        g_st = logits.grad.clone()
        logits.grad = None
        (torch.softmax(logits, -1) * up).sum().backward()
        assert torch.equal(g_st, logits.grad)


class TestEncoder:
    def test_output_shape_and_stochasticity(self):
        codec = tiny_codec()
        obs = rand_obs((2, 3, 3, 64, 64))
        latent = codec.encode(obs, RngStream(1, "lat"))
        assert latent.logits.shape == (2, 3, N_TOKENS, N_CLASSES)
        assert latent.sample.shape == (2, 3, N_TOKENS, N_CLASSES)
        assert latent.flat.shape == (2, 3, N_TOKENS * N_CLASSES)
        assert torch.equal(latent.sample.detach().sum(-1),
                           torch.ones(2, 3, N_TOKENS, dtype=obs.dtype))

    def test_wrong_input_shape_rejected(self):
        codec = tiny_codec()
        with pytest.raises(ValueError):
            codec.encode(rand_obs((2, 3, 32, 32)), RngStream(0, "s"))

    def test_hard_mode_needs_stream(self):
        codec = tiny_codec()
        with pytest.raises(ValueError):
            codec.encode(rand_obs((1, 3, 64, 64)), None, sample_mode="hard")

    def test_mode_sampling_is_argmax(self):
        codec = tiny_codec()
        latent = codec.encode(rand_obs((2, 3, 64, 64)), None, sample_mode="mode")
        assert torch.equal(latent.sample.argmax(-1), latent.probs.argmax(-1))

    def test_soft_mode_sample_is_probs(self):
        codec = tiny_codec()
        latent = codec.encode(rand_obs((2, 3, 64, 64)), None, sample_mode="soft")
        assert torch.equal(latent.sample, latent.probs)

    def test_probs_respect_unimix_floor(self):
        codec = tiny_codec()
        latent = codec.encode(rand_obs((2, 3, 64, 64)), None, sample_mode="mode")
        assert float(latent.probs.detach().min()) >= 0.01 / N_CLASSES - 1e-12

    def test_indices_detached_argmax(self):
        codec = tiny_codec()
        latent = codec.encode(rand_obs((2, 3, 64, 64)), RngStream(2, "s"))
        assert latent.indices.dtype == torch.int64
        assert torch.equal(latent.indices, latent.sample.argmax(-1))

    def test_encoding_deterministic_given_stream(self):
        codec = tiny_codec()
        obs = rand_obs((2, 3, 64, 64))
        a = codec.encode(obs, RngStream(3, "s")).sample
        b = codec.encode(obs, RngStream(3, "s")).sample
        assert torch.equal(a, b)


class TestDecoder:
    def test_decode_shape(self):
        codec = tiny_codec()
        obs = rand_obs((2, 2, 3, 64, 64))
        latent = codec.encode(obs, RngStream(1, "s"))
        recon = codec.decode(latent.flat)
        assert recon.shape == (2, 2, 3, 64, 64)

    def test_accepts_tokens_or_flat(self):
        codec = tiny_codec()
        latent = codec.encode(rand_obs((2, 3, 64, 64)), RngStream(1, "s"))
        a = codec.decode(latent.sample)
        b = codec.decode(latent.flat)
        assert torch.equal(a, b)

    def test_gradient_reaches_encoder_through_st(self):
        codec = tiny_codec()
        obs = rand_obs((2, 3, 64, 64))
        latent = codec.encode(obs, RngStream(1, "s"))
        recon = codec.decode(latent.sample)
        loss = reconstruction_loss(recon, obs).mean()
        loss.backward()
        conv0 = next(codec.encoder.parameters())
        assert conv0.grad is not None and float(conv0.grad.abs().sum()) > 0


def test_reconstruction_loss_matches_manual():
    recon = torch.randn(2, 3, 3, 64, 64, dtype=torch.float64)
    obs = torch.randn(2, 3, 3, 64, 64, dtype=torch.float64)
    per = reconstruction_loss(recon, obs)
    manual = ((recon - obs) ** 2).mean(dim=(-1, -2, -3))
    assert torch.allclose(per, manual)
    assert per.shape == (2, 3)


def test_batchnorm_eval_uses_running_stats():
    codec = tiny_codec()
    obs = rand_obs((4, 3, 64, 64))
    codec.train()
    for _ in range(3):
        codec.encode(obs, None, sample_mode="mode")
    codec.eval()
    a = codec.encode(obs[:1], None, sample_mode="mode").logits
    b = codec.encode(obs[:2], None, sample_mode="mode").logits[:1]
    assert torch.allclose(a, b, atol=1e-10)
