import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from hybrid_ar.errors import ContractError, InfeasibleAlignmentError
from hybrid_ar.losses import ce_loss, ctc_loss, min_ctc_frames

from gradcheck import REL_TOL, check_gradients
from oracles import ctc_brute_force

AE, P = 2, 27


def test_ctc_single_forced_alignment_is_free():
    logits = torch.full((1, 40), -1e4, dtype=torch.float64)
    logits[0, AE] = 0.0
    assert ctc_loss(logits, [AE]).item() == pytest.approx(0.0, abs=1e-12)


def test_ctc_two_uniform_frames_one_label():
    # B.AE, AE.B, AE.AE each have probability 1/1600
    loss = ctc_loss(torch.zeros(2, 40, dtype=torch.float64), [AE])
    assert loss.item() == pytest.approx(-math.log(3 / 1600), rel=1e-12)


def test_ctc_matches_full_enumeration_small():
    rng = np.random.default_rng(1)
    for T, target in [(1, [5]), (2, [5]), (2, [5, 7]), (3, [5, 5]), (3, [9])]:
        logits = rng.normal(size=(T, 40))
        expected = ctc_brute_force(logits.tolist(), target)
        got = ctc_loss(torch.tensor(logits), target).item()
        assert got == pytest.approx(expected, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.lists(st.integers(1, 39), min_size=0, max_size=2), st.integers(0, 2**31))
def test_ctc_equals_path_enumeration(T, target, seed):
    if min_ctc_frames(target) > T:
        with pytest.raises(InfeasibleAlignmentError):
            ctc_loss(torch.zeros(T, 40, dtype=torch.float64), target)
        return
    logits = np.random.default_rng(seed).normal(scale=3.0, size=(T, 40))
    expected = ctc_brute_force(logits.tolist(), target, alphabet=target)
    assert ctc_loss(torch.tensor(logits), target).item() == pytest.approx(expected, rel=1e-9)


def test_ctc_batch_matches_torch_reference():
    rng = np.random.default_rng(0)
    B, T, V = 4, 12, 40
    logits = torch.tensor(rng.normal(size=(B, T, V)))
    targets = [[3, 4, 4, 9], [1], [7, 8, 9, 10, 11], [39, 39]]
    lengths = [12, 5, 10, 7]
    ours = ctc_loss(logits, targets, lengths)
    flat = torch.tensor([k for t in targets for k in t])
    ref = torch.nn.functional.ctc_loss(
        torch.log_softmax(logits, -1).transpose(0, 1), flat, torch.tensor(lengths),
        torch.tensor([len(t) for t in targets]), blank=0, reduction="none")
    torch.testing.assert_close(ours, ref, rtol=1e-9, atol=1e-9)


def test_ctc_padded_target_tensor():
    logits = torch.randn(2, 6, 40, dtype=torch.float64)
    padded = torch.tensor([[3, 4, 0], [5, 6, 7]])
    a = ctc_loss(logits, padded, [6, 6], target_lengths=[2, 3])
    b = ctc_loss(logits, [[3, 4], [5, 6, 7]], [6, 6])
    torch.testing.assert_close(a, b)


def test_ctc_infeasible_target_is_an_error_not_infinity():
    with pytest.raises(InfeasibleAlignmentError):
        ctc_loss(torch.zeros(2, 40), [5, 5])  # repeat needs a separating blank
    with pytest.raises(InfeasibleAlignmentError):
        ctc_loss(torch.zeros(2, 40), [1, 2, 3])


def test_ctc_rejects_blank_in_target():
    with pytest.raises(ContractError):
        ctc_loss(torch.zeros(3, 40), [0, 2])


def test_ctc_loss_is_finite_and_nonnegative_for_long_inputs():
    logits = torch.randn(3, 200, 40) * 20
    loss = ctc_loss(logits, [[1, 2, 3] * 10] * 3, [200, 150, 100])
    assert torch.isfinite(loss).all() and (loss >= 0).all()


def test_ctc_gradient_matches_finite_differences():
    torch.manual_seed(0)
    logits = torch.randn(2, 5, 6, dtype=torch.float64, requires_grad=True)
    fn = lambda: ctc_loss(logits, [[1, 2], [3, 3]], [5, 4]).sum()
    errs = check_gradients(fn, {"logits": logits})
    assert errs["logits"] < REL_TOL


def test_ce_uniform_logits():
    assert ce_loss(torch.zeros(8, dtype=torch.float64), 3).item() == pytest.approx(math.log(8), abs=1e-12)


def test_ce_goes_to_zero_with_margin():
    losses = []
    for margin in (1.0, 10.0, 100.0):
        logits = torch.zeros(8, dtype=torch.float64)
        logits[2] = margin
        losses.append(ce_loss(logits, 2).item())
    assert losses[0] > losses[1] > losses[2] >= 0
    assert losses[2] < 1e-30


def test_ce_shift_invariance():
    logits = torch.randn(5, 8, dtype=torch.float64)
    labels = torch.tensor([0, 1, 2, 3, 7])
    torch.testing.assert_close(ce_loss(logits + 5, labels), ce_loss(logits, labels), atol=1e-6, rtol=0)


def test_ce_out_of_range_label():
    with pytest.raises(ContractError):
        ce_loss(torch.zeros(8), 8)


def test_ce_gradient_matches_finite_differences():
    logits = torch.randn(3, 8, dtype=torch.float64, requires_grad=True)
    errs = check_gradients(lambda: ce_loss(logits, [1, 4, 7]).sum(), {"logits": logits})
    assert errs["logits"] < REL_TOL
