import copy

import numpy as np
import pytest
import torch

from hybrid_ar.acoustic import (AcousticConfig, AcousticModel, SubBlock, acoustic_forward,
                                edit_distance, freeze, greedy_ctc_decode, load_acoustic,
                                phone_error_rate, save_acoustic)
from hybrid_ar.errors import (CheckpointError, ConfigError, ContractError, EmptyInputError,
                              NumericError)
from hybrid_ar.features import FeatureSequence

from gradcheck import REL_TOL, check_gradients

AE, AH, L, OW, P = 2, 3, 22, 25, 27


def tiny_model(dtype=torch.float64, seed=0):
    torch.manual_seed(seed)
    return AcousticModel(AcousticConfig.tiny()).to(dtype).eval()


@pytest.mark.parametrize("t_in,t", [(1, 1), (2, 1), (10, 5), (11, 6), (257, 129)])
def test_downsampled_lengths(t_in, t):
    model = tiny_model()
    out = acoustic_forward(FeatureSequence(np.random.randn(t_in, 40), t_in), model)
    assert out.embedding.shape == (t, 8)
    assert out.phoneme_logits.shape == (t, 40)
    assert int(out.lengths) == t


def test_zero_input_gives_zero_embedding():
    model = tiny_model()  # fresh BN: zero shift, unit scale, zero running mean
    out = model(torch.zeros(2, 9, 40, dtype=torch.float64))
    assert torch.count_nonzero(out.embedding) == 0


def test_padding_does_not_change_valid_frames():
    model = tiny_model()
    x = torch.randn(1, 7, 40, dtype=torch.float64)
    padded = torch.cat([x, torch.randn(1, 6, 40, dtype=torch.float64)], 1)
    a = model(x)
    b = model(padded, torch.tensor([7]))
    torch.testing.assert_close(b.embedding[:, :4], a.embedding)
    assert (b.embedding[:, 4:] == 0).all()


def test_empty_and_malformed_input():
    model = tiny_model()
    with pytest.raises(EmptyInputError):
        model(torch.zeros(1, 0, 40, dtype=torch.float64))
    with pytest.raises(EmptyInputError):
        acoustic_forward(FeatureSequence(np.zeros((0, 40)), 0), model)
    with pytest.raises(ContractError):
        model(torch.zeros(1, 5, 39, dtype=torch.float64))


def test_non_finite_activation_names_layer():
    model = tiny_model()
    with torch.no_grad():
        model.blocks[0].subs[0].conv.weight.fill_(float("inf"))
    with pytest.raises(NumericError, match="layer 1"):
        model(torch.randn(1, 6, 40, dtype=torch.float64))


def test_config_validation():
    with pytest.raises(ConfigError):
        AcousticConfig(downsample_factor=3)
    with pytest.raises(ConfigError):
        AcousticConfig(n_blocks=3)
    AcousticConfig.full()


def test_gradients_whole_tiny_model():
    model = tiny_model()
    x = torch.randn(1, 3, 40, dtype=torch.float64)
    params = dict(model.named_parameters())
    errs = check_gradients(lambda: model(x).embedding.sum() + model(x).phoneme_logits.sum(), params)
    assert max(errs.values()) < REL_TOL, errs


def test_gradients_subblock_with_residual():
    torch.manual_seed(1)
    sub = SubBlock(4, 5, 3, dropout=0.0).double().eval()
    with torch.no_grad():  # non-trivial BN statistics
        sub.bn.running_mean.uniform_(-0.5, 0.5)
        sub.bn.running_var.uniform_(0.5, 2.0)
    x = torch.randn(2, 4, 6, dtype=torch.float64, requires_grad=True)
    res = torch.randn(2, 5, 6, dtype=torch.float64, requires_grad=True)
    tensors = dict(sub.named_parameters(), x=x, residual=res)
    errs = check_gradients(lambda: sub(x, res).sum(), tensors)
    assert max(errs.values()) < REL_TOL, errs


def test_greedy_decode_examples():
    blank_row = np.eye(40)[0]
    assert greedy_ctc_decode(np.stack([blank_row] * 3)) == []
    rows = np.stack([np.eye(40)[k] for k in (AE, AE, 0, P)])
    assert greedy_ctc_decode(rows) == [AE, P]
    assert greedy_ctc_decode(np.zeros((4, 40))) == []
    assert greedy_ctc_decode(torch.tensor(rows * 7.5)) == [AE, P]


def test_greedy_decode_scale_invariance():
    logits = np.random.default_rng(0).normal(size=(20, 40))
    assert greedy_ctc_decode(logits) == greedy_ctc_decode(logits * 3.3)


def test_phone_error_rate():
    assert phone_error_rate([AE, P, AH, L], [AE, P, AH, L]) == 0.0
    assert phone_error_rate([AE, P, AH, L], [AE, P, OW, L]) == 0.25
    assert phone_error_rate([AE], []) == 1.0
    assert edit_distance("kitten", "sitting") == 3
    with pytest.raises(ContractError):
        phone_error_rate([], [AE])


def test_freeze_keeps_parameters_and_eval_mode():
    model = freeze(tiny_model())
    before = copy.deepcopy(model.state_dict())
    model.train()
    assert not model.training
    assert not any(p.requires_grad for p in model.parameters())
    model(torch.randn(2, 9, 40, dtype=torch.float64))
    for k, v in model.state_dict().items():
        assert torch.equal(v, before[k])


def test_checkpoint_round_trip(tmp_path):
    model = tiny_model(torch.float32)
    save_acoustic(tmp_path / "am.pt", model)
    loaded = load_acoustic(tmp_path / "am.pt").eval()
    x = torch.randn(1, 9, 40)
    torch.testing.assert_close(loaded(x).embedding, model(x).embedding)
    with pytest.raises(CheckpointError):
        load_acoustic(tmp_path / "am.pt", AcousticConfig.tiny(d_emb=16))
    torch.save({"x": 1}, tmp_path / "junk.pt")
    with pytest.raises(CheckpointError):
        load_acoustic(tmp_path / "junk.pt")
