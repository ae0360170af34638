import math

import pytest
import torch

from hybrid_ar.aggregation import (AggregationConfig, Aggregator, MultiHeadSelfAttention,
                                   aggregate, argmax_lowest, mha, statistic_pool)
from hybrid_ar.errors import ConfigError, ContractError

from gradcheck import REL_TOL, check_gradients
from oracles import linear_params, multi_head_attention

EPS = 1e-5


def attn(d=4, h=2, seed=0):
    torch.manual_seed(seed)
    return MultiHeadSelfAttention(d, h).double().eval()


def tiny_aggregator(pe=True, seed=0):
    torch.manual_seed(seed)
    cfg = AggregationConfig(d_emb=6, d_attn=4, d_ff=8, heads=2, n_layers=2, d_accent=3,
                            dropout=0.0, positional_encoding=pe)
    return Aggregator(cfg).double().eval()


def test_mha_matches_scalar_transcription():
    block = attn()
    x = torch.randn(1, 3, 4, dtype=torch.float64)
    out, weights = mha(x, block)
    p = {n: linear_params(getattr(block, n)) for n in ("w_q", "w_k", "w_v", "w_o")}
    ref_out, ref_w = multi_head_attention(x[0].tolist(), p, 2)
    torch.testing.assert_close(out[0], torch.tensor(ref_out, dtype=torch.float64), atol=1e-9, rtol=0)
    torch.testing.assert_close(weights[0], torch.tensor(ref_w, dtype=torch.float64), atol=1e-9, rtol=0)


def test_attention_rows_sum_to_one_over_valid_positions():
    block = attn(8, 4)
    x = torch.randn(3, 6, 8, dtype=torch.float64) * 5
    valid = torch.arange(6)[None, :] < torch.tensor([6, 3, 1])[:, None]
    _, w = block(x, valid)
    torch.testing.assert_close(w.sum(-1), torch.ones(3, 4, 6, dtype=torch.float64), atol=1e-6, rtol=0)
    assert (w.masked_select(~valid[:, None, None, :].expand_as(w)) == 0).all()


def test_single_frame_attention_returns_value_projection():
    block = attn()
    x = torch.randn(1, 1, 4, dtype=torch.float64)
    out, w = block(x)
    assert (w == 1).all()
    torch.testing.assert_close(out, block.w_o(block.w_v(x)))


def test_fully_masked_attention_is_an_error():
    with pytest.raises(ContractError):
        attn()(torch.randn(1, 3, 4, dtype=torch.float64), torch.zeros(1, 3, dtype=torch.bool))


def test_heads_must_divide_width():
    with pytest.raises(ConfigError):
        MultiHeadSelfAttention(6, 4)
    with pytest.raises(ConfigError):
        AggregationConfig(d_attn=10, heads=4)


def test_statistic_pool_examples():
    v = torch.tensor([1.0, -2.0, 3.0], dtype=torch.float64)
    torch.testing.assert_close(statistic_pool(v.repeat(5, 1)),
                               torch.cat([v, torch.full((3,), math.sqrt(EPS), dtype=torch.float64)]))
    torch.testing.assert_close(statistic_pool(v[None]),
                               torch.cat([v, torch.full((3,), math.sqrt(EPS), dtype=torch.float64)]))
    out = statistic_pool(torch.tensor([[0.0], [2.0]], dtype=torch.float64))
    assert out[0].item() == 1.0
    assert out[1].item() == pytest.approx(math.sqrt(1 + EPS), abs=1e-15)
    with pytest.raises(ContractError):
        statistic_pool(torch.zeros(1, 3, 2), torch.tensor([0]))


def test_statistic_pool_masks_and_is_order_free():
    x = torch.randn(2, 5, 3, dtype=torch.float64)
    pooled = statistic_pool(x, torch.tensor([5, 2]))
    torch.testing.assert_close(pooled[1], statistic_pool(x[1, :2]))
    perm = torch.randperm(5)
    torch.testing.assert_close(statistic_pool(x[:, perm]), statistic_pool(x))


def test_statistic_pool_gradient():
    x = torch.randn(2, 4, 3, dtype=torch.float64, requires_grad=True)
    w = torch.randn(2, 6, dtype=torch.float64)
    errs = check_gradients(lambda: (statistic_pool(x, torch.tensor([4, 3])) * w).sum(), {"x": x})
    assert errs["x"] < REL_TOL


def test_mha_gradient():
    block = attn()
    x = torch.randn(2, 3, 4, dtype=torch.float64, requires_grad=True)
    w = torch.randn(2, 3, 4, dtype=torch.float64)
    errs = check_gradients(lambda: (block(x)[0] * w).sum(), dict(block.named_parameters(), x=x))
    assert max(errs.values()) < REL_TOL, errs


def test_aggregator_end_to_end_gradient():
    agg = tiny_aggregator()
    x = torch.randn(2, 4, 6, dtype=torch.float64, requires_grad=True)
    w = torch.randn(2, 3, dtype=torch.float64)
    lengths = torch.tensor([4, 2])
    errs = check_gradients(lambda: (agg(x, lengths).logits * w).sum(), dict(agg.named_parameters(), x=x))
    assert max(errs.values()) < REL_TOL, errs


def test_padding_does_not_change_logits():
    agg = tiny_aggregator()
    x = torch.randn(1, 5, 6, dtype=torch.float64)
    padded = torch.cat([x, torch.randn(1, 3, 6, dtype=torch.float64) * 50], 1)
    torch.testing.assert_close(agg(padded, torch.tensor([5])).logits, agg(x).logits)


def test_full_preset_logits_shape():
    torch.manual_seed(0)
    agg = Aggregator(AggregationConfig.full()).eval()
    pred = aggregate(torch.randn(1, 7, 1024), agg)
    assert pred.logits.shape == (1, 8) and pred.pooled.shape == (1, 256)
    assert pred.logits[0].shape == (8,)


def test_permutation_invariance_without_positional_encoding():
    x = torch.randn(1, 6, 6, dtype=torch.float64)
    perm = torch.tensor([3, 0, 5, 1, 4, 2])
    agg = tiny_aggregator(pe=False)
    torch.testing.assert_close(agg(x[:, perm]).logits, agg(x).logits)
    agg = tiny_aggregator(pe=True)
    assert not torch.allclose(agg(x[:, perm]).logits, agg(x).logits)


def test_argmax_invariances_and_ties():
    logits = torch.randn(10, 8)
    base = argmax_lowest(logits)
    assert torch.equal(argmax_lowest(logits + 3.0), base)
    assert torch.equal(argmax_lowest(logits * 2.5), base)
    assert argmax_lowest(torch.tensor([1.0, 3.0, 3.0, 0.0])).item() == 1
    assert argmax_lowest(torch.zeros(8)).item() == 0
