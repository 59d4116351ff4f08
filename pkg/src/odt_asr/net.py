"""Toy layered acoustic model: conv -> bidirectional LSTM -> fully connected.

Everything runs in float64 with hand-written backpropagation. Sequences are
time-major ``(T, D)`` arrays; every layer has stride 1 so the output has one
row per input frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import NonFiniteGradient, NoForwardCache, ShapeMismatch
from .topology import LayerSpec, ModelTopology, SubModelSpec


@dataclass(frozen=True)
class NetConfig:
    n_mels: int = 80
    conv_layers: tuple[tuple[int, int], ...] = ((16, 5),)  # (out_channels, kernel_time)
    birnn_layers: tuple[int, ...] = (48, 48)  # hidden size per direction
    fc_layers: tuple[int, ...] = (64,)
    output_units: int = 28
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple(tuple(c) for c in self.conv_layers))
        object.__setattr__(self, "birnn_layers", tuple(self.birnn_layers))
        object.__setattr__(self, "fc_layers", tuple(self.fc_layers))
        if self.output_units != 28:
            raise ValueError("output layer must have 28 units (27 characters + blank)")

    def to_dict(self) -> dict:
        return {
            "n_mels": self.n_mels,
            "conv_layers": [list(c) for c in self.conv_layers],
            "birnn_layers": list(self.birnn_layers),
            "fc_layers": list(self.fc_layers),
            "output_units": self.output_units,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def _uniform(rng, shape, fan_in):
    s = np.sqrt(1.0 / fan_in)
    return rng.uniform(-s, s, size=shape)


class Conv1D:
    """Convolution over time with same padding, followed by ReLU."""

    kind = "conv"

    def __init__(self, name, in_ch, out_ch, kernel, rng):
        self.name = name
        self.kernel = kernel
        fan_in = in_ch * kernel
        self.params = {
            "weight": _uniform(rng, (out_ch, in_ch, kernel), fan_in),
            "bias": np.zeros(out_ch),
        }

    def forward(self, x):
        k = self.kernel
        xp = np.pad(x, (((k - 1) // 2, k // 2), (0, 0)))
        # (T, in, k) windows flattened to match weight.reshape(out, in * k)
        cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0).reshape(x.shape[0], -1)
        w = self.params["weight"].reshape(self.params["weight"].shape[0], -1)
        z = cols @ w.T + self.params["bias"]
        return np.maximum(z, 0.0), (x.shape, cols, z)

    def backward(self, dy, cache, need_dx):
        shape, cols, z = cache
        dz = dy * (z > 0)
        weight = self.params["weight"]
        grads = {"weight": (dz.T @ cols).reshape(weight.shape), "bias": dz.sum(axis=0)}
        if not need_dx:
            return None, grads
        k = self.kernel
        dcols = (dz @ weight.reshape(weight.shape[0], -1)).reshape(shape[0], shape[1], k)
        dxp = np.zeros((shape[0] + k - 1, shape[1]))
        for j in range(k):
            dxp[j:j + shape[0]] += dcols[:, :, j]
        return dxp[(k - 1) // 2:(k - 1) // 2 + shape[0]], grads


def _lstm_forward(x, w_x, w_h, b):
    T = x.shape[0]
    h_size = w_h.shape[1]
    xp = x @ w_x.T + b
    gates = np.empty((T, 4 * h_size))
    cs = np.empty((T + 1, h_size))
    hs = np.empty((T + 1, h_size))
    cs[0] = 0.0
    hs[0] = 0.0
    for t in range(T):
        a = xp[t] + w_h @ hs[t]
        g = np.empty_like(a)
        g[:h_size] = expit(a[:h_size])
        g[h_size:2 * h_size] = expit(a[h_size:2 * h_size])
        g[2 * h_size:3 * h_size] = np.tanh(a[2 * h_size:3 * h_size])
        g[3 * h_size:] = expit(a[3 * h_size:])
        gates[t] = g
        cs[t + 1] = g[h_size:2 * h_size] * cs[t] + g[:h_size] * g[2 * h_size:3 * h_size]
        hs[t + 1] = g[3 * h_size:] * np.tanh(cs[t + 1])
    return hs[1:], (x, gates, cs, hs)


def _lstm_backward(dh_out, cache, w_x, w_h, need_dx):
    x, gates, cs, hs = cache
    T, h_size = dh_out.shape
    da = np.empty((T, 4 * h_size))
    dh_next = np.zeros(h_size)
    dc_next = np.zeros(h_size)
    for t in range(T - 1, -1, -1):
        g = gates[t]
        i, f, gg, o = g[:h_size], g[h_size:2 * h_size], g[2 * h_size:3 * h_size], g[3 * h_size:]
        tc = np.tanh(cs[t + 1])
        dh = dh_out[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da[t, :h_size] = dc * gg * i * (1.0 - i)
        da[t, h_size:2 * h_size] = dc * cs[t] * f * (1.0 - f)
        da[t, 2 * h_size:3 * h_size] = dc * i * (1.0 - gg * gg)
        da[t, 3 * h_size:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = w_h.T @ da[t]
    grads = {"w_x": da.T @ x, "w_h": da.T @ hs[:-1], "b": da.sum(axis=0)}
    dx = da @ w_x if need_dx else None
    return dx, grads


class BiLSTM:
    """Bidirectional LSTM; output concatenates forward and backward hidden states.

    Gate layout along the 4h axis is input, forget, cell candidate, output.
    """

    kind = "birnn"

    def __init__(self, name, in_dim, hidden, rng):
        self.name = name
        self.hidden = hidden
        self.params = {}
        for d in ("fw", "bw"):
            self.params[f"{d}.w_x"] = _uniform(rng, (4 * hidden, in_dim), in_dim)
            self.params[f"{d}.w_h"] = _uniform(rng, (4 * hidden, hidden), hidden)
            self.params[f"{d}.b"] = np.zeros(4 * hidden)

    def _dir(self, d):
        p = self.params
        return p[f"{d}.w_x"], p[f"{d}.w_h"], p[f"{d}.b"]

    def forward(self, x):
        h_fw, c_fw = _lstm_forward(x, *self._dir("fw"))
        h_bw, c_bw = _lstm_forward(x[::-1], *self._dir("bw"))
        return np.concatenate([h_fw, h_bw[::-1]], axis=1), (c_fw, c_bw)

    def backward(self, dy, cache, need_dx):
        c_fw, c_bw = cache
        h = self.hidden
        w_x, w_h, _ = self._dir("fw")
        dx_fw, g_fw = _lstm_backward(dy[:, :h], c_fw, w_x, w_h, need_dx)
        w_x, w_h, _ = self._dir("bw")
        dx_bw, g_bw = _lstm_backward(dy[::-1, h:], c_bw, w_x, w_h, need_dx)
        grads = {f"fw.{k}": v for k, v in g_fw.items()}
        grads.update({f"bw.{k}": v for k, v in g_bw.items()})
        dx = dx_fw + dx_bw[::-1] if need_dx else None
        return dx, grads


class Dense:
    kind = "fc"

    def __init__(self, name, in_dim, out_dim, rng, relu=True):
        self.name = name
        self.relu = relu
        self.params = {"weight": _uniform(rng, (out_dim, in_dim), in_dim), "bias": np.zeros(out_dim)}

    def forward(self, x):
        z = x @ self.params["weight"].T + self.params["bias"]
        if self.relu:
            return np.maximum(z, 0.0), (x, z)
        return z, (x, z)

    def backward(self, dy, cache, need_dx):
        x, z = cache
        dz = dy * (z > 0) if self.relu else dy
        grads = {"weight": dz.T @ x, "bias": dz.sum(axis=0)}
        return (dz @ self.params["weight"] if need_dx else None), grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


class ToyAcousticModel:
    def __init__(self, cfg: NetConfig, layers):
        self.cfg = cfg
        self.layers = layers
        self.trainable_mask = [True] * len(layers)
        self.adam = AdamState(
            m={k: np.zeros_like(v) for k, v in self.named_parameters().items()},
            v={k: np.zeros_like(v) for k, v in self.named_parameters().items()},
        )

    def named_parameters(self) -> dict[str, np.ndarray]:
        return {f"{layer.name}.{k}": v for layer in self.layers for k, v in layer.params.items()}

    def layer_of(self, tensor_name: str) -> int:
        prefix = tensor_name.split(".", 1)[0]
        return [layer.name for layer in self.layers].index(prefix)

    def topology(self) -> ModelTopology:
        return ModelTopology(tuple(
            LayerSpec(layer.name, layer.kind, sum(p.size for p in layer.params.values()))
            for layer in self.layers))

    def apply_submodel(self, spec: SubModelSpec) -> None:
        self.trainable_mask = spec.mask(len(self.layers))

    @property
    def first_trainable(self) -> int:
        return self.trainable_mask.index(True) if any(self.trainable_mask) else len(self.layers)

    def forward(self, feats):
        """Logits (T, 28) and the activation cache for :meth:`backward`.

        ``feats`` is a FeatureMatrix or an (n_mels, T) array.
        """
        values = getattr(feats, "values", feats)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != self.cfg.n_mels:
            raise ShapeMismatch(f"expected ({self.cfg.n_mels}, T) features, got {values.shape}")
        x = values.T
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def logits(self, feats) -> np.ndarray:
        return self.forward(feats)[0]

    def backward(self, cache, grad_logits) -> dict[str, np.ndarray]:
        """Gradients for the trainable suffix only; frozen tensors get no entry."""
        if cache is None:
            raise NoForwardCache("backward called without a forward cache")
        first = self.first_trainable
        grads = {}
        dy = np.asarray(grad_logits, dtype=np.float64)
        for idx in range(len(self.layers) - 1, first - 1, -1):
            layer = self.layers[idx]
            dy, g = layer.backward(dy, cache[idx], need_dx=idx > first)
            grads.update({f"{layer.name}.{k}": v for k, v in g.items()})
        return grads

    def copy_parameters(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_parameters().items()}

    def load_parameters(self, tensors: dict[str, np.ndarray]) -> None:
        own = self.named_parameters()
        if set(tensors) != set(own):
            missing = sorted(set(own) - set(tensors))
            extra = sorted(set(tensors) - set(own))
            raise ShapeMismatch(f"tensor names differ: missing {missing}, unexpected {extra}")
        for name, value in tensors.items():
            if own[name].shape != value.shape:
                raise ShapeMismatch(f"{name}: shape {value.shape} != {own[name].shape}")
            own[name][...] = value


def init_model(cfg: NetConfig = NetConfig()) -> ToyAcousticModel:
    rng = np.random.default_rng(cfg.seed)
    layers = []
    dim = cfg.n_mels
    for n, (out_ch, kernel) in enumerate(cfg.conv_layers, 1):
        layers.append(Conv1D(f"conv{n}", dim, out_ch, kernel, rng))
        dim = out_ch
    for n, hidden in enumerate(cfg.birnn_layers, 1):
        layers.append(BiLSTM(f"birnn{n}", dim, hidden, rng))
        dim = 2 * hidden
    for n, width in enumerate(cfg.fc_layers, 1):
        layers.append(Dense(f"fc{n}", dim, width, rng))
        dim = width
    layers.append(Dense(f"fc{len(cfg.fc_layers) + 1}", dim, cfg.output_units, rng, relu=False))
    return ToyAcousticModel(cfg, layers)


def expected_param_count(cfg: NetConfig) -> int:
    """Closed-form parameter count for ``cfg``."""
    total = 0
    dim = cfg.n_mels
    for out_ch, kernel in cfg.conv_layers:
        total += out_ch * dim * kernel + out_ch
        dim = out_ch
    for h in cfg.birnn_layers:
        total += 2 * (4 * (h * (dim + h) + h))
        dim = 2 * h
    for width in (*cfg.fc_layers, cfg.output_units):
        total += width * dim + width
        dim = width
    return total


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def adam_step(model: ToyAcousticModel, grads: dict[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ToyAcousticModel:
    """One bias-corrected Adam update on trainable tensors; mutates and returns ``model``.

    ``grads`` must already be averaged over the batch.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    params = model.named_parameters()
    first = model.first_trainable
    model.adam.step += 1
    t = model.adam.step
    for name, g in grads.items():
        if model.layer_of(name) < first:
            continue
        m = model.adam.m[name]
        v = model.adam.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return model
