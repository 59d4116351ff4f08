"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools
import math

import numpy as np

from odt_asr.net import NetConfig

# Small enough for exhaustive finite differences, with an output layer under 10 %.
GRADCHECK_NET = NetConfig(conv_layers=((8, 5),), birnn_layers=(3, 3), fc_layers=(5,), seed=7)

# (criterion name, passed, detail) rows collected by the acceptance suite
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def brute_ctc_loss(logits: np.ndarray, target) -> float:
    """-log p(target | logits) by enumerating every frame-level path."""
    T, K = logits.shape
    z = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    target = list(target)
    total = 0.0
    for path in itertools.product(range(K), repeat=T):
        collapsed = [s for i, s in enumerate(path) if s != 0 and (i == 0 or s != path[i - 1])]
        if collapsed == target:
            total += math.prod(probs[t, s] for t, s in enumerate(path))
    return -math.log(total)


def dp_edit_distance(a, b) -> int:
    """Full-matrix Levenshtein distance."""
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[len(a)][len(b)]


def numerical_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error, safe when both sides vanish."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def model_gradcheck(model, feats: np.ndarray, target) -> dict[str, float]:
    """Relative error of every trainable tensor's analytic gradient against central differences."""
    from odt_asr.ctc import ctc_loss_grad

    logits, cache = model.forward(feats)
    analytic = model.backward(cache, ctc_loss_grad(logits, target).grad_logits)
    params = model.named_parameters()

    def loss():
        return ctc_loss_grad(model.logits(feats), target).loss

    return {name: rel_error(g, numerical_grad(loss, params[name])) for name, g in analytic.items()}
