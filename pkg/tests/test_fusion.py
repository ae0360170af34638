import pytest
import torch

from hybrid_ar.errors import ConfigError, ContractError
from hybrid_ar.fusion import FusionBlock, FusionConfig, FusionMode, fuse, reference_attention_ratio

from gradcheck import REL_TOL, check_gradients
from oracles import fusion_add, fusion_concat, fusion_concat_ca, linear_params

LAYERS = ("proj_trainable", "proj_reference", "merge", "squeeze", "excite")


def block(mode, d=4, r=2, seed=0, scale=None):
    torch.manual_seed(seed)
    b = FusionBlock(FusionConfig(mode, d, r)).double()
    if scale is not None:  # hand-set small weights
        with torch.no_grad():
            for p in b.parameters():
                p.uniform_(-scale, scale)
    return b


def params(b):
    return {n: linear_params(getattr(b, n)) for n in LAYERS if hasattr(b, n)}


def test_concat_ca_matches_scalar_transcription():
    b = block(FusionMode.CONCAT_CA, scale=0.5)
    a_t = torch.randn(1, 2, 4, dtype=torch.float64)
    a_r = torch.randn(1, 2, 4, dtype=torch.float64)
    out = fuse(a_t, a_r, b)
    merged, ca = fusion_concat_ca(a_t[0].tolist(), a_r[0].tolist(), params(b))
    torch.testing.assert_close(out.merged[0], torch.tensor(merged, dtype=torch.float64), atol=1e-6, rtol=0)
    torch.testing.assert_close(out.channel_attention[0], torch.tensor(ca, dtype=torch.float64), atol=1e-6, rtol=0)


def test_add_and_concat_match_scalar_transcription():
    a_t = torch.randn(1, 3, 4, dtype=torch.float64)
    a_r = torch.randn(1, 3, 4, dtype=torch.float64)
    b = block(FusionMode.ADD, scale=0.5)
    ref = fusion_add(a_t[0].tolist(), a_r[0].tolist(), params(b))
    torch.testing.assert_close(b(a_t, a_r).merged[0], torch.tensor(ref, dtype=torch.float64), atol=1e-6, rtol=0)
    b = block(FusionMode.CONCAT, scale=0.5)
    ref = fusion_concat(a_t[0].tolist(), a_r[0].tolist(), params(b))
    torch.testing.assert_close(b(a_t, a_r).merged[0], torch.tensor(ref, dtype=torch.float64), atol=1e-6, rtol=0)


def test_add_with_identity_projections_and_zero_reference():
    b = block(FusionMode.ADD)
    with torch.no_grad():
        for lin in (b.proj_trainable, b.proj_reference):
            lin.weight.copy_(torch.eye(4))
            lin.bias.zero_()
    a_t = torch.randn(2, 5, 4, dtype=torch.float64)
    torch.testing.assert_close(b(a_t, torch.zeros_like(a_t)).merged, a_t)


def test_channel_attention_is_a_gate():
    b = block(FusionMode.CONCAT_CA, d=8, r=4, scale=1.0)
    for _ in range(5):
        ca = b(torch.randn(3, 6, 8, dtype=torch.float64),
               torch.randn(3, 6, 8, dtype=torch.float64)).channel_attention
        assert ca.shape == (3, 16)
        assert ((ca > 0) & (ca < 1)).all()


def test_fresh_channel_attention_is_balanced():
    b = block(FusionMode.CONCAT_CA, d=8, r=4)
    ca = b(torch.randn(2, 5, 8, dtype=torch.float64), torch.randn(2, 5, 8, dtype=torch.float64)).channel_attention
    assert (ca - 0.5).abs().max() < 0.05


@pytest.mark.parametrize("mode", list(FusionMode))
def test_frame_permutation_equivariance(mode):
    b = block(mode, d=8, r=4, scale=0.5)
    a_t = torch.randn(2, 7, 8, dtype=torch.float64)
    a_r = torch.randn(2, 7, 8, dtype=torch.float64)
    perm = torch.randperm(7)
    out = b(a_t, a_r).merged
    torch.testing.assert_close(b(a_t[:, perm], a_r[:, perm]).merged, out[:, perm])


def test_padding_is_ignored_by_channel_attention():
    b = block(FusionMode.CONCAT_CA, d=4, scale=0.5)
    a_t = torch.randn(1, 3, 4, dtype=torch.float64)
    a_r = torch.randn(1, 3, 4, dtype=torch.float64)
    pad = lambda x: torch.cat([x, 100 * torch.ones(1, 2, 4, dtype=torch.float64)], 1)
    full = b(a_t, a_r)
    padded = b(pad(a_t), pad(a_r), torch.tensor([3]))
    torch.testing.assert_close(padded.channel_attention, full.channel_attention)
    torch.testing.assert_close(padded.merged[:, :3], full.merged)


def test_reference_ratio():
    assert reference_attention_ratio(torch.full((8,), 0.5)) == 1.0
    ca = torch.tensor([0.1, 0.3, 0.2, 0.6])
    assert reference_attention_ratio(ca) == pytest.approx((0.2 + 0.6) / (0.1 + 0.3))
    with pytest.raises(ContractError):
        reference_attention_ratio(torch.ones(3))


def test_forced_half_attention_gives_unit_ratio():
    b = block(FusionMode.CONCAT_CA, d=4)
    with torch.no_grad():
        for lin in (b.squeeze, b.excite):
            lin.weight.zero_()
            lin.bias.zero_()
    ca = b(torch.randn(1, 3, 4, dtype=torch.float64), torch.randn(1, 3, 4, dtype=torch.float64)).channel_attention
    assert (ca == 0.5).all()
    assert reference_attention_ratio(ca[0]) == 1.0


def test_contracts():
    b = block(FusionMode.CONCAT)
    with pytest.raises(ContractError):
        b(torch.zeros(1, 3, 4, dtype=torch.float64), torch.zeros(1, 2, 4, dtype=torch.float64))
    with pytest.raises(ContractError):
        b(torch.zeros(1, 3, 5, dtype=torch.float64), torch.zeros(1, 3, 5, dtype=torch.float64))
    with pytest.raises(ConfigError):
        FusionConfig(FusionMode.CONCAT_CA, d_emb=4, squeeze_ratio=3)


@pytest.mark.parametrize("mode", list(FusionMode))
def test_gradients(mode):
    b = block(mode, d=4, r=2, scale=0.5)
    a_t = torch.randn(2, 3, 4, dtype=torch.float64, requires_grad=True)
    a_r = torch.randn(2, 3, 4, dtype=torch.float64, requires_grad=True)
    tensors = dict(b.named_parameters(), a_t=a_t, a_r=a_r)
    weights = torch.randn(2, 3, 4, dtype=torch.float64)
    errs = check_gradients(lambda: (b(a_t, a_r).merged * weights).sum(), tensors)
    assert max(errs.values()) < REL_TOL, errs
