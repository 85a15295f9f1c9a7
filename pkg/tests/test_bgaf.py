import itertools

import pytest
import torch

from bilie.bgaf import (BGAF_MODES, DEFAULT_HEADS, BgafBlock,
                        EfficientCrossAttention)

from _grad import max_rel_error


def rand(*shape, seed=0, scale=1.0):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=gen, dtype=torch.double) * scale


def quadratic_order_attention(attn: EfficientCrossAttention, fq, fkv):
    """Oracle: materialize the full (n x n) attention map, then apply to V."""
    b, c, h, w = fq.shape
    q = attn._split(attn.q_proj(fq))
    k = attn._split(attn.k_proj(fkv))
    v = attn._split(attn.v_proj(fkv))
    q = torch.softmax(q, dim=2).transpose(2, 3)   # (b, heads, n, d)
    k = torch.softmax(k, dim=3).transpose(2, 3)   # (b, heads, n, d)
    v = v.transpose(2, 3)
    full = q @ k.transpose(2, 3)                  # (b, heads, n, n)
    out = (full @ v).transpose(2, 3)
    return out.reshape(b, c, h, w)


class TestEfficientCrossAttention:
    def test_zero_value_gives_zero_output(self):
        attn = EfficientCrossAttention(4, 2).double()
        with torch.no_grad():
            attn.v_proj.pointwise.weight.zero_()
            attn.v_proj.pointwise.bias.zero_()
            attn.v_proj.depthwise.weight.zero_()
            attn.v_proj.depthwise.bias.zero_()
        out = attn(rand(1, 4, 8, 8, seed=1), rand(1, 4, 8, 8, seed=2))
        assert out.abs().max() == 0

    @pytest.mark.parametrize("c,hw,heads", [(4, 8, 2), (8, 16, 4), (2, 4, 1), (8, 8, 2)])
    def test_matches_quadratic_oracle(self, c, hw, heads):
        torch.manual_seed(c * hw + heads)
        attn = EfficientCrossAttention(c, heads).double()
        fq = rand(1, c, hw, hw, seed=c)
        fkv = rand(1, c, hw, hw, seed=hw)
        assert (attn(fq, fkv) - quadratic_order_attention(attn, fq, fkv)).abs().max() < 1e-5

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            EfficientCrossAttention(6, 4)

    def test_shape_mismatch_rejected(self):
        attn = EfficientCrossAttention(4, 2).double()
        with pytest.raises(ValueError, match="shape"):
            attn(rand(1, 4, 8, 8), rand(1, 4, 4, 4))

    def test_default_head_schedule(self):
        assert DEFAULT_HEADS == [2, 4, 4, 4, 6]

    def test_finite_for_large_inputs(self):
        attn = EfficientCrossAttention(4, 2).double()
        out = attn(rand(1, 4, 8, 8, scale=1e3), rand(1, 4, 8, 8, seed=5, scale=1e3))
        assert torch.isfinite(out).all()

    def test_permutation_equivariance_without_context_filter(self):
        # identity depthwise kernels make every projection pointwise, so a
        # joint spatial permutation of both inputs permutes the output
        torch.manual_seed(2)
        attn = EfficientCrossAttention(4, 2).double()
        with torch.no_grad():
            for proj in (attn.q_proj, attn.k_proj, attn.v_proj):
                proj.depthwise.weight.zero_()
                proj.depthwise.weight[:, 0, 1, 1] = 1.0
                proj.depthwise.bias.zero_()
        fq, fkv = rand(1, 4, 4, 4, seed=7), rand(1, 4, 4, 4, seed=8)
        perm = torch.randperm(16, generator=torch.Generator().manual_seed(3))

        def permute(x):
            return x.reshape(1, 4, 16)[:, :, perm].reshape(1, 4, 4, 4)

        out = attn(fq, fkv)
        out_p = attn(permute(fq), permute(fkv))
        assert torch.allclose(permute(out), out_p, atol=1e-10)


class TestBgafBlock:
    def _zero_value(self, attn):
        with torch.no_grad():
            for mod in (attn.v_proj.pointwise, attn.v_proj.depthwise):
                mod.weight.zero_()
                mod.bias.zero_()

    def test_stage1_residual_identity(self):
        block = BgafBlock(4, 2).double()
        self._zero_value(block.ca_img_guides_evt)
        fi, fe = rand(1, 4, 8, 8, seed=1), rand(1, 4, 8, 8, seed=2)
        assert torch.equal(block.stage1(fi, fe), fi)

    def test_stage2_residual_identity(self):
        block = BgafBlock(4, 2).double()
        self._zero_value(block.ca_evt_guides_img)
        fi, fe = rand(1, 4, 8, 8, seed=3), rand(1, 4, 8, 8, seed=4)
        assert torch.equal(block.stage2(fe, fi), fe)

    def test_output_channels_and_shape(self):
        block = BgafBlock(8, 4).double()
        out = block(rand(1, 8, 8, 8, seed=1), rand(1, 8, 8, 8, seed=2))
        assert out.shape == (1, 8, 8, 8)

    def test_sequential_differs_from_parallel(self):
        torch.manual_seed(5)
        block = BgafBlock(4, 2).double()
        fi, fe = rand(1, 4, 8, 8, seed=5), rand(1, 4, 8, 8, seed=6)
        seq = block(fi, fe, mode="sequential")
        par = block(fi, fe, mode="parallel")
        assert not torch.allclose(seq, par)

    def test_all_modes_run(self):
        torch.manual_seed(6)
        block = BgafBlock(4, 2).double()
        fi, fe = rand(1, 4, 8, 8, seed=7), rand(1, 4, 8, 8, seed=8)
        outs = {m: block(fi, fe, mode=m) for m in BGAF_MODES}
        for pair in itertools.combinations(BGAF_MODES, 2):
            assert not torch.allclose(outs[pair[0]], outs[pair[1]]), pair

    def test_concat_only_is_projected_concat(self):
        torch.manual_seed(7)
        block = BgafBlock(4, 2).double()
        fi, fe = rand(1, 4, 8, 8, seed=9), rand(1, 4, 8, 8, seed=10)
        expected = block.fuse_proj(torch.cat([fi, fe], dim=1))
        assert torch.equal(block(fi, fe, mode="concat_only"), expected)

    def test_unknown_mode_rejected(self):
        block = BgafBlock(4, 2)
        with pytest.raises(ValueError, match="mode"):
            block(torch.zeros(1, 4, 4, 4), torch.zeros(1, 4, 4, 4), mode="diagonal")
        with pytest.raises(ValueError, match="mode"):
            BgafBlock(4, 2, mode="diagonal")

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(8)
        block = BgafBlock(4, 2).double()
        fi, fe = rand(1, 4, 6, 6, seed=11), rand(1, 4, 6, 6, seed=12)
        tgt = rand(1, 4, 6, 6, seed=13)

        def loss():
            return ((block(fi, fe) - tgt) ** 2).mean()

        err, where = max_rel_error(loss, dict(block.named_parameters()), n_coords=3)
        assert err < 1e-4, f"worst {err:.2e} at {where}"
