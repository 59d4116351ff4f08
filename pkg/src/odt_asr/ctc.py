"""CTC loss via log-space forward-backward, its logit gradient, and greedy decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, logsumexp

from .errors import InfeasibleAlignment

BLANK = 0


@dataclass(frozen=True)
class CtcResult:
    loss: float
    grad_logits: np.ndarray


def min_frames(target) -> int:
    """Shortest input that can emit ``target``: one frame per label plus a blank between repeats."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _extend(target) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, BLANK, dtype=np.int64)
    ext[1::2] = target
    return ext


def ctc_loss_grad(logits: np.ndarray, target) -> CtcResult:
    """Negative log-likelihood of ``target`` under frame logits (T, K), and d loss / d logits.

    ``target`` holds label indices without blanks.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = [int(c) for c in target]
    if not target:
        raise InfeasibleAlignment("empty target")
    if any(c == BLANK for c in target):
        raise ValueError("target must not contain the blank symbol")
    n_frames = logits.shape[0]
    if n_frames < min_frames(target):
        raise InfeasibleAlignment(
            f"{n_frames} frames cannot align a {len(target)}-label target "
            f"(needs {min_frames(target)})")

    logp = log_softmax(logits, axis=1)
    ext = _extend(target)
    S = ext.size
    # skip transition s-2 -> s allowed into a label that differs from the previous label
    skip = np.zeros(S, dtype=bool)
    skip[3::2] = ext[3::2] != ext[1:-2:2]

    emit = logp[:, ext]  # (T, S)
    neg_inf = -np.inf
    alpha = np.full((n_frames, S), neg_inf)
    alpha[0, 0] = emit[0, 0]
    alpha[0, 1] = emit[0, 1]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([neg_inf], prev[:-1]))
        jump = np.where(skip, np.concatenate(([neg_inf, neg_inf], prev[:-2])), neg_inf)
        alpha[t] = np.logaddexp(np.logaddexp(stay, step), jump) + emit[t]

    beta = np.full((n_frames, S), neg_inf)
    beta[-1, -1] = emit[-1, -1]
    beta[-1, -2] = emit[-1, -2]
    skip_back = np.concatenate((skip[2:], [False, False]))  # s -> s+2 allowed
    for t in range(n_frames - 2, -1, -1):
        nxt = beta[t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [neg_inf]))
        jump = np.where(skip_back, np.concatenate((nxt[2:], [neg_inf, neg_inf])), neg_inf)
        beta[t] = np.logaddexp(np.logaddexp(stay, step), jump) + emit[t]

    log_like = np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    if not np.isfinite(log_like):
        raise InfeasibleAlignment("no valid alignment")

    # alpha and beta both include the emission at t, so remove one copy
    occupancy = alpha + beta - emit - log_like
    gamma = np.zeros_like(logp)
    for k in np.unique(ext):
        cols = occupancy[:, ext == k]
        gamma[:, k] = np.exp(logsumexp(cols, axis=1))
    grad = np.exp(logp) - gamma
    return CtcResult(float(-log_like), grad)


def greedy_decode(logits: np.ndarray) -> list[int]:
    """Per-frame argmax (lowest index wins ties), collapse repeats, drop blanks."""
    best = np.argmax(np.asarray(logits), axis=1)
    out = []
    prev = None
    for k in best:
        k = int(k)
        if k != prev and k != BLANK:
            out.append(k)
        prev = k
    return out
