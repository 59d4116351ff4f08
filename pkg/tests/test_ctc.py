import math

import numpy as np
import pytest
from helpers import brute_ctc_loss, numerical_grad
from hypothesis import given, settings
from hypothesis import strategies as st

from odt_asr.ctc import BLANK, ctc_loss_grad, greedy_decode, min_frames
from odt_asr.errors import InfeasibleAlignment


def one_hot_logits(path, k=28, high=10.0):
    z = np.zeros((len(path), k))
    z[np.arange(len(path)), path] = high
    return z


def test_single_frame_single_path():
    probs = np.full(28, 1e-12)
    probs[0], probs[1] = 0.2, 0.8
    probs /= probs.sum()
    res = ctc_loss_grad(np.log(probs)[None, :], [1])
    assert res.loss == pytest.approx(-math.log(probs[1]), abs=1e-12)


def test_uniform_two_frames():
    res = ctc_loss_grad(np.zeros((2, 28)), [1])
    assert res.loss == pytest.approx(-math.log(3 / 784), abs=1e-12)


def test_repeat_needs_separating_blank():
    assert min_frames([1, 1]) == 3
    with pytest.raises(InfeasibleAlignment):
        ctc_loss_grad(np.zeros((2, 28)), [1, 1])
    ctc_loss_grad(np.zeros((3, 28)), [1, 1])


def test_empty_target_rejected():
    with pytest.raises(ValueError):
        ctc_loss_grad(np.zeros((3, 28)), [])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_path_enumeration(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 7))
    target = list(rng.integers(1, 3, size=int(rng.integers(1, 4))))
    if min_frames(target) > T:
        return
    logits = rng.normal(0, 2, size=(T, 3))
    assert ctc_loss_grad(logits, target).loss == pytest.approx(brute_ctc_loss(logits, target), abs=1e-9)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    logits = rng.normal(0, 1, size=(7, 28))
    target = [3, 1, 3, 27]
    analytic = ctc_loss_grad(logits, target).grad_logits
    numeric = numerical_grad(lambda: ctc_loss_grad(logits, target).loss, logits)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    assert rel.max() < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_rows_sum_to_zero(seed):
    rng = np.random.default_rng(seed)
    logits = rng.uniform(-100, 100, size=(12, 28))
    res = ctc_loss_grad(logits, [5, 6, 5])
    assert np.isfinite(res.loss)
    assert np.all(np.isfinite(res.grad_logits))
    assert np.abs(res.grad_logits.sum(axis=1)).max() < 1e-10


def test_relabelling_unused_symbols_keeps_loss():
    rng = np.random.default_rng(4)
    logits = np.zeros((6, 28))
    logits[:, [0, 2, 5]] = rng.normal(0, 1, size=(6, 3))
    perm = np.arange(28)
    unused = np.array([i for i in range(28) if i not in (0, 2, 5)])
    perm[unused] = rng.permutation(unused)
    assert ctc_loss_grad(logits[:, perm], [2, 5]).loss == pytest.approx(ctc_loss_grad(logits, [2, 5]).loss,
                                                                        abs=1e-12)


@pytest.mark.parametrize("path, decoded", [
    ([BLANK, 1, 1, BLANK, 2], [1, 2]),
    ([BLANK, BLANK, BLANK], []),
    ([1, BLANK, 1], [1, 1]),
])
def test_greedy_decode(path, decoded):
    assert greedy_decode(one_hot_logits(path)) == decoded


def test_greedy_ties_pick_lowest_index():
    assert greedy_decode(np.zeros((4, 28))) == []
    z = np.zeros((1, 28))
    z[0, [3, 7]] = 1.0
    assert greedy_decode(z) == [3]
