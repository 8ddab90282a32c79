import numpy as np
import pytest
import torch

import oracles
from scam.encoder import EncoderConfig, SatBlock, SatEncoder, SatOperation
from scam.errors import ConfigError


def tiny_config(**overrides):
    base = dict(num_labels=3, latents_per_label=2, latent_dim=8, num_blocks=2,
                conv_channels=(8, 12), attn_dim=8, num_heads=2)
    base.update(overrides)
    return EncoderConfig(**base)


class TestSatOperation:
    @pytest.mark.parametrize("mode", ["input", "intermediate"])
    def test_matches_compositional_oracle(self, mode):
        rng = np.random.default_rng(20)
        for _ in range(5):
            torch.manual_seed(int(rng.integers(0, 2 ** 31)))
            op = SatOperation(6, 4, 8, num_heads=2, residual_mode=mode).double()
            primary = torch.from_numpy(rng.standard_normal((5, 6)))
            context = torch.from_numpy(rng.standard_normal((7, 4)))
            bits = (rng.random((5, 7)) < 0.6).astype(np.float64)
            bits[bits.sum(axis=1) == 0, 0] = 1.0
            out = op(primary, context, torch.from_numpy(bits))
            want = oracles.sat_operation(op, primary.numpy(), context.numpy(),
                                         bits, residual_mode=mode)
            assert np.max(np.abs(out.detach().numpy() - want)) < 1e-9

    def test_zeroed_attention_and_ffn_reduce_to_layernorm(self):
        torch.manual_seed(3)
        op = SatOperation(6, 4, 8, num_heads=2)
        with torch.no_grad():
            op.attention.value_proj.weight.zero_()
            op.attention.value_proj.bias.zero_()
            op.ffn[0].weight.zero_()
            op.ffn[0].bias.zero_()
            op.ffn[2].weight.zero_()
            op.ffn[2].bias.zero_()
        primary = torch.randn(5, 6)
        out = op(primary, torch.randn(3, 4), torch.ones(5, 3))
        want = torch.nn.functional.layer_norm(primary, (6,))
        assert torch.allclose(out, want, atol=1e-6)

    def test_residual_modes_differ(self):
        torch.manual_seed(4)
        kwargs = dict(primary_dim=6, context_dim=4, attn_dim=8, num_heads=2)
        torch.manual_seed(4)
        op_in = SatOperation(residual_mode="input", **kwargs)
        torch.manual_seed(4)
        op_mid = SatOperation(residual_mode="intermediate", **kwargs)
        primary = torch.randn(5, 6)
        context = torch.randn(3, 4)
        bits = torch.ones(5, 3)
        assert not torch.allclose(op_in(primary, context, bits),
                                  op_mid(primary, context, bits))


class TestRegionIsolation:
    def _perturbed_pair(self, seed):
        torch.manual_seed(seed)
        cfg = tiny_config(use_conv=False, conv_channels=(8, 8))
        enc = SatEncoder(cfg)
        rng = np.random.default_rng(seed)
        labels = torch.from_numpy(rng.integers(0, 3, size=(1, 8, 8)))
        image = torch.randn(1, 3, 8, 8)
        noisy = image.clone()
        target = 1
        region = labels[0] == target
        assert region.any()
        noisy[0, :, region] += torch.randn(3, int(region.sum()))
        return enc, image, noisy, labels, target

    def test_perturbing_one_region_leaves_other_latents_bitwise_equal(self):
        for seed in (0, 1, 2):
            enc, image, noisy, labels, target = self._perturbed_pair(seed)
            with torch.no_grad():
                a = enc(image, labels)
                b = enc(noisy, labels)
            k = enc.cfg.latents_per_label
            for label in range(enc.cfg.num_labels):
                rows = slice(label * k, (label + 1) * k)
                if label == target:
                    assert not torch.equal(a[0, rows], b[0, rows])
                else:
                    assert torch.equal(a[0, rows], b[0, rows])

    def test_absent_label_latents_ignore_the_image(self):
        # latents of a label missing from the mask never read any pixels, so
        # their refined values depend only on module parameters
        torch.manual_seed(5)
        cfg = tiny_config(use_conv=False, conv_channels=(8, 8))
        enc = SatEncoder(cfg)
        labels = torch.zeros(1, 8, 8, dtype=torch.long)  # only label 0 present
        with torch.no_grad():
            a = enc(torch.randn(1, 3, 8, 8), labels)
            b = enc(torch.randn(1, 3, 8, 8), labels)
        k = cfg.latents_per_label
        for absent in (1, 2):
            rows = slice(absent * k, (absent + 1) * k)
            assert torch.equal(a[0, rows], b[0, rows])
        assert not torch.equal(a[0, :k], b[0, :k])


class TestEncoderStructure:
    def test_output_shape_and_conv_pyramid(self):
        torch.manual_seed(6)
        cfg = tiny_config(num_blocks=3, conv_channels=(8, 12, 16))
        enc = SatEncoder(cfg)
        out = enc(torch.randn(2, 3, 16, 16), torch.randint(0, 3, (2, 16, 16)))
        assert out.shape == (2, 6, 8)
        # blocks 0 and 1 carry convs, the last block does not
        assert enc.blocks[0].conv is not None
        assert enc.blocks[1].conv is not None
        assert enc.blocks[2].conv is None

    def test_parameter_count_law(self):
        # growing latents_per_label only grows the query bank
        cfgs = {k: tiny_config(latents_per_label=k) for k in (2, 5)}
        torch.manual_seed(0)
        small = sum(p.numel() for p in SatEncoder(cfgs[2]).parameters())
        torch.manual_seed(0)
        big = sum(p.numel() for p in SatEncoder(cfgs[5]).parameters())
        want = (5 - 2) * cfgs[2].num_labels * cfgs[2].latent_dim
        assert big - small == want

    def test_capture_keys(self):
        torch.manual_seed(7)
        cfg = tiny_config()
        enc = SatEncoder(cfg)
        capture = {}
        enc(torch.randn(1, 3, 8, 8), torch.randint(0, 3, (1, 8, 8)), capture=capture)
        assert ("encoder", 0, "cross") in capture
        assert ("encoder", 1, "self") in capture
        rec = capture[("encoder", 0, "cross")]
        assert rec.weights.shape[-2:] == (6, 64)

    def test_no_self_attention_ablation(self):
        cfg = tiny_config(use_self_attention=False)
        enc = SatEncoder(cfg)
        assert all(b.self_op is None for b in enc.blocks)
        capture = {}
        enc(torch.randn(1, 3, 8, 8), torch.randint(0, 3, (1, 8, 8)), capture=capture)
        assert ("encoder", 0, "self") not in capture

    def test_mismatched_label_shape_rejected(self):
        enc = SatEncoder(tiny_config())
        with pytest.raises(ValueError):
            enc(torch.randn(1, 3, 8, 8), torch.zeros(1, 4, 4, dtype=torch.long))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            tiny_config(conv_channels=(8,))  # wrong length
        with pytest.raises(ConfigError):
            tiny_config(conv_channels=(6, 8))  # not divisible by 4
        with pytest.raises(ConfigError):
            tiny_config(residual_mode="after")

    def test_attn_dim_zero_defaults_to_latent_dim(self):
        cfg = tiny_config(attn_dim=0)
        assert cfg.attn_dim == cfg.latent_dim
