"""CTC (forward algorithm in log space) and cross-entropy losses."""
from __future__ import annotations

from typing import Sequence

import torch

from .data import BLANK_ID
from .errors import ContractError, InfeasibleAlignmentError

# Finite stand-in for log(0): keeps logsumexp gradients free of NaNs.
_LOG_ZERO = -1e30


def min_ctc_frames(target: Sequence[int]) -> int:
    """Fewest frames that can emit ``target``: one per label plus a blank between repeats."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_loss(log_probs_or_logits: torch.Tensor, targets, input_lengths=None,
             target_lengths=None, blank: int = BLANK_ID, reduction: str = "none",
             from_logits: bool = True) -> torch.Tensor:
    """Negative log-likelihood of ``targets`` summed over all CTC alignments.

    Accepts a single utterance (``(T, V)`` logits and a target list) or a
    batch (``(B, T, V)`` logits, a list of target lists or a padded ``(B, L)``
    tensor with ``target_lengths``). Returns per-utterance losses unless
    ``reduction`` is ``"mean"`` or ``"sum"``.
    """
    x = log_probs_or_logits
    single = x.dim() == 2
    if single:
        x = x.unsqueeze(0)
        targets = [list(targets)]
        if input_lengths is not None:
            input_lengths = [int(input_lengths)]
    B, T, V = x.shape
    log_probs = torch.log_softmax(x, dim=-1) if from_logits else x

    if isinstance(targets, torch.Tensor):
        if target_lengths is None:
            raise ContractError("padded target tensor needs target_lengths")
        targets = [targets[b, : int(target_lengths[b])].tolist() for b in range(B)]
    targets = [list(map(int, t)) for t in targets]
    if input_lengths is None:
        input_lengths = [T] * B
    input_lengths = [int(n) for n in input_lengths]
    if len(targets) != B or len(input_lengths) != B:
        raise ContractError("batch size mismatch between logits, targets and lengths")

    for b, (tgt, n) in enumerate(zip(targets, input_lengths)):
        if not 1 <= n <= T:
            raise ContractError(f"input length {n} outside [1, {T}]")
        if any(k == blank or not 0 <= k < V for k in tgt):
            raise ContractError(f"target {b} contains the blank or an out-of-range label")
        need = min_ctc_frames(tgt)
        if need > n:
            raise InfeasibleAlignmentError(
                f"utterance {b}: {len(tgt)} labels need at least {need} frames, got {n}")

    # Extended label sequence: blank, l1, blank, l2, ..., lL, blank.
    L = max((len(t) for t in targets), default=0)
    S = 2 * L + 1
    ext = torch.full((B, S), blank, dtype=torch.long)
    skip = torch.zeros(B, S, dtype=torch.bool)
    for b, tgt in enumerate(targets):
        for i, k in enumerate(tgt):
            ext[b, 2 * i + 1] = k
            if i > 0 and tgt[i - 1] != k:
                skip[b, 2 * i + 1] = True
    n_states = torch.tensor([2 * len(t) + 1 for t in targets])
    state_valid = torch.arange(S)[None, :] < n_states[:, None]

    emit = log_probs.gather(2, ext[:, None, :].expand(B, T, S))  # (B, T, S)
    neg = torch.full((B, S), _LOG_ZERO, dtype=log_probs.dtype)
    alpha = neg.clone()
    alpha[:, 0] = emit[:, 0, 0]
    if S > 1:
        alpha[:, 1] = torch.where(n_states > 1, emit[:, 0, 1], neg[:, 1])
    lengths_t = torch.tensor(input_lengths)
    for t in range(1, T):
        stay = alpha
        step = torch.cat([neg[:, :1], alpha[:, :-1]], dim=1)
        jump = torch.cat([neg[:, :2], alpha[:, :-2]], dim=1)[:, :S]
        jump = torch.where(skip, jump, neg)
        new = torch.logsumexp(torch.stack([stay, step, jump]), dim=0) + emit[:, t]
        new = torch.where(state_valid, new, neg)
        alpha = torch.where((t < lengths_t)[:, None], new, alpha)

    last = (n_states - 1)[:, None]
    end = alpha.gather(1, last).squeeze(1)
    before = alpha.gather(1, (last - 1).clamp(min=0)).squeeze(1)
    before = torch.where(n_states > 1, before, torch.full_like(before, _LOG_ZERO))
    loss = -torch.logaddexp(end, before)

    if single:
        return loss[0]
    if reduction == "mean":
        return loss.mean()
    if reduction == "sum":
        return loss.sum()
    return loss


def ce_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    """-log softmax(logits)[label]; per-row for 2-D input."""
    single = logits.dim() == 1
    if single:
        logits = logits.unsqueeze(0)
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    if labels.numel() != logits.shape[0]:
        raise ContractError("one label per row of logits is required")
    if ((labels < 0) | (labels >= logits.shape[-1])).any():
        raise ContractError(f"label outside [0, {logits.shape[-1]})")
    loss = -torch.log_softmax(logits, dim=-1).gather(1, labels[:, None]).squeeze(1)
    return loss[0] if single else loss
