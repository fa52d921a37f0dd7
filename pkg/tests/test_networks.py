import numpy as np
import pytest
import torch

from codagan.conditioning import encode_onehot
from codagan.losses import cross_entropy_masked
from codagan.segmenter import LatentSegmenter, UNet, baseline_predict, binarize, predict
from codagan.translation import (
    Discriminator, Generator, LatentCode, decode, discriminate, encode, sample_style, translate,
)


@pytest.fixture(scope="module")
def gen():
    torch.manual_seed(0)
    return Generator(3, base_filters=8).eval()


def test_full_scale_latent_has_524288_values():
    torch.manual_seed(0)
    G = Generator(6, base_filters=32)
    with torch.no_grad():
        latent = G.encode(torch.zeros(1, 1, 256, 256), encode_onehot(0, 6))
    assert tuple(latent.content.shape[1:]) == (128, 64, 64)
    assert latent.content[0].numel() == 524_288


def test_encode_shapes_and_divisibility(gen):
    with torch.no_grad():
        assert encode(gen, torch.zeros(2, 1, 64, 64), 1).content.shape == (2, 32, 16, 16)
        with pytest.raises(ValueError):
            gen.encode(torch.zeros(1, 1, 250, 250), 0)


def test_encode_deterministic(gen):
    x = torch.randn(2, 1, 32, 32)
    with torch.no_grad():
        assert torch.equal(gen.encode(x, 0).content, gen.encode(x, 0).content)


def test_decode_restores_shape_and_is_bounded(gen):
    with torch.no_grad():
        for size in (16, 32, 48):
            x = torch.randn(1, 1, size, size)
            y = decode(gen, gen.encode(x, 0), 2)
            assert y.shape == x.shape
        zero = LatentCode(torch.zeros(1, 32, 16, 16))
        y = gen.decode(zero, 1)
        assert torch.isfinite(y).all()
        assert float(y.min()) >= -1 and float(y.max()) <= 1
        extreme = LatentCode(torch.full((1, 32, 8, 8), 1e4))
        y = gen.decode(extreme, 1)
        assert float(y.abs().max()) <= 1


def test_decode_channel_mismatch(gen):
    with pytest.raises(ValueError):
        gen.decode(LatentCode(torch.zeros(1, 16, 8, 8)), 0)


def test_code_length_mismatch(gen):
    with pytest.raises(ValueError):
        gen.encode(torch.zeros(1, 1, 16, 16), encode_onehot(0, 4))


def test_translate_same_domain_equals_reconstruction(gen):
    x = torch.randn(2, 1, 64, 64)
    with torch.no_grad():
        t = translate(gen, x, 1, 1)
        r = gen.decode(gen.encode(x, 1), 1)
    assert torch.equal(t, r)
    assert t.shape == x.shape


def test_decoder_code_changes_output(gen):
    x = torch.randn(1, 1, 32, 32)
    with torch.no_grad():
        assert float((gen.translate(x, 0, 1) - gen.translate(x, 0, 2)).abs().mean()) > 0


def test_parameter_count_grows_only_through_code_channels():
    def count(n):
        torch.manual_seed(0)
        return sum(p.numel() for p in Generator(n, base_filters=8).parameters())
    # encoder first conv (7x7, 8 filters) and decoder inject conv (3x3, 32 filters) see one more plane per dataset
    per_dataset = 7 * 7 * 8 + 3 * 3 * 32
    assert count(3) - count(2) == per_dataset
    assert count(10) - count(2) == 8 * per_dataset


def test_content_style_variant():
    torch.manual_seed(0)
    G = Generator(3, base_filters=8, variant="content-style", style_dim=8).eval()
    x = torch.randn(2, 1, 32, 32)
    with torch.no_grad():
        latent = G.encode(x, 0)
        assert latent.style.shape == (2, 8)
        s1 = sample_style(8, torch.Generator().manual_seed(0), n=2)
        s2 = sample_style(8, torch.Generator().manual_seed(1), n=2)
        assert float((G.translate(x, 0, 1, s1) - G.translate(x, 0, 1, s2)).abs().mean()) > 0
        with pytest.raises(ValueError):
            G.decode(LatentCode(latent.content), 1)


def test_unknown_variant():
    with pytest.raises(ValueError):
        Generator(2, variant="other")


def test_sample_style_moments():
    draws = sample_style(8, np.random.default_rng(0), n=100_000)
    assert draws.shape == (100_000, 8)
    assert np.all(np.abs(draws.mean(axis=0)) <= 0.02)
    var = draws.var(axis=0)
    assert np.all((var >= 0.97) & (var <= 1.03))


def test_sample_style_seeded_and_validated():
    a = sample_style(8, np.random.default_rng(3))
    b = sample_style(8, np.random.default_rng(3))
    assert a.shape == (8,) and np.array_equal(a, b)
    ta = sample_style(8, torch.Generator().manual_seed(3))
    tb = sample_style(8, torch.Generator().manual_seed(3))
    assert torch.equal(ta, tb)
    with pytest.raises(ValueError):
        sample_style(0, np.random.default_rng(0))


def test_discriminator_map_and_batch_consistency():
    torch.manual_seed(0)
    D = Discriminator(3, base_filters=16).eval()
    x = torch.rand(4, 1, 64, 64) * 2 - 1
    with torch.no_grad():
        batched = discriminate(D, x, 2)
        assert batched.shape == (4, 1, 16, 16)
        assert torch.equal(D(x, 2), batched)
        for i in range(4):
            single = D(x[i:i + 1], 2)
            assert float((single - batched[i:i + 1]).abs().max()) <= 1e-5
        with pytest.raises(ValueError):
            D(x, encode_onehot(0, 5))


def test_segmenter_restores_full_resolution():
    torch.manual_seed(0)
    M = LatentSegmenter(128).eval()
    with torch.no_grad():
        pm = predict(M, torch.randn(1, 128, 64, 64))
    assert pm.probabilities.shape == (1, 1, 256, 256)
    assert float(pm.probabilities.min()) > 0 and float(pm.probabilities.max()) < 1


def test_segmenter_single_instance_reads_any_latent(gen):
    torch.manual_seed(0)
    M = LatentSegmenter(32).eval()
    x = torch.randn(2, 1, 64, 64)
    with torch.no_grad():
        I_a = gen.encode(x, 0)
        I_ab = gen.encode(gen.decode(I_a, 1), 1)
        assert predict(M, I_a).probabilities.shape == predict(M, I_ab).probabilities.shape == (2, 1, 64, 64)


def test_segmenter_channel_mismatch():
    M = LatentSegmenter(32)
    with pytest.raises(ValueError):
        M(torch.randn(1, 16, 16, 16))


def test_baseline_unet_probabilities_valid():
    torch.manual_seed(0)
    B = UNet(1, 8, 4).eval()
    with torch.no_grad():
        pm = baseline_predict(B, torch.randn(2, 1, 64, 64))
        huge = baseline_predict(B, torch.full((1, 1, 64, 64), 1e6))
    assert pm.probabilities.shape == (2, 1, 64, 64)
    for p in (pm.probabilities, huge.probabilities):
        assert torch.isfinite(p).all() and float(p.min()) > 0 and float(p.max()) < 1
    with pytest.raises(ValueError):
        B(torch.randn(1, 1, 60, 60))


def test_binarize():
    assert binarize(torch.tensor([0.5]), 0.5).tolist() == [1]
    assert binarize(torch.zeros(3, 3)).sum() == 0
    assert binarize(np.array([0.4, 0.6])).tolist() == [0, 1]
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            binarize(torch.zeros(2), bad)


def test_prediction_map_binarized_property():
    pm = predict(LatentSegmenter(32).eval(), torch.randn(1, 32, 8, 8))
    assert torch.equal(pm.binarized, (pm.probabilities >= 0.5).to(torch.uint8))


def test_segmenter_gradient_matches_finite_differences():
    # tiny M (8 latent channels, 8x8 output) in float64, eval-mode batch norm
    torch.manual_seed(0)
    M = LatentSegmenter(8, depth=3, truncate=2).double().eval()
    z = torch.randn(1, 8, 2, 2, dtype=torch.float64)
    y = (torch.rand(1, 1, 8, 8) > 0.5).double()

    def loss():
        p = torch.sigmoid(M(z))
        return cross_entropy_masked(y, p, [True])

    params = [p for p in M.parameters()]
    M.zero_grad()
    loss().backward()
    h = 1e-6
    for p in (params[0], params[-2], params[-1]):  # first conv, head weight, head bias
        analytic = p.grad.detach().clone().view(-1)
        flat = p.data.view(-1)
        numeric = torch.zeros_like(analytic)
        for i in range(min(flat.numel(), 24)):
            old = flat[i].item()
            flat[i] = old + h
            up = loss().item()
            flat[i] = old - h
            down = loss().item()
            flat[i] = old
            numeric[i] = (up - down) / (2 * h)
        k = min(flat.numel(), 24)
        err = (analytic[:k] - numeric[:k]).abs().max() / numeric[:k].abs().max().clamp_min(1e-12)
        assert float(err) < 1e-3
