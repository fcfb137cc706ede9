"""Sequential SFC anomaly detector.

Per time step, every VNF's metric vector goes through a shared linear map,
the chain of mapped vectors is encoded by an LSTM, a bidirectional LSTM or a
Transformer encoder, and a pooling readout collapses the chain into one
vector. The readouts of the ``window_len`` frames in a window are fed to an
LSTM whose last hidden state goes through a small ReLU head and a sigmoid.

With ``feedback=True`` the previous step's anomaly probability is appended
to every VNF vector before the feature map.

Parameters are plain ``dict[str, np.ndarray]``; every function here also
accepts dicts of :class:`~sfcad.autodiff.Tensor` (e.g. from
``GradientTape.watch_all``) so the same code serves training and inference.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CapacityError, ConfigError, ContractError, DimensionError

ENCODERS = ("uni_rnn", "bi_rnn", "transformer")
READOUTS = ("max", "mean", "self_attention")

# sigmoid saturates to exactly 0/1 in float64; keep outputs strictly inside.
PROB_EPS = 1e-12
LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    d_input: int = 23
    d_z: int = 16
    encoder_kind: str = "uni_rnn"
    readout_kind: str = "mean"
    window_len: int = 5
    classifier_hidden: tuple | None = None  # None -> one layer of width d_z
    n_heads: int = 2
    n_enc_layers: int = 1
    feedback: bool = False
    hard_feedback: bool = False
    max_vnfs: int = 16
    ff_width: int = 32

    def __post_init__(self):
        hidden = (self.d_z,) if self.classifier_hidden is None else self.classifier_hidden
        object.__setattr__(self, "classifier_hidden", tuple(int(w) for w in hidden))
        if self.encoder_kind not in ENCODERS:
            raise ConfigError(f"encoder_kind must be one of {ENCODERS}, got {self.encoder_kind!r}")
        if self.readout_kind not in READOUTS:
            raise ConfigError(f"readout_kind must be one of {READOUTS}, got {self.readout_kind!r}")
        widths = [self.d_input, self.d_z, self.window_len, self.n_heads, self.n_enc_layers,
                  self.max_vnfs, self.ff_width, *self.classifier_hidden]
        if any(w < 1 for w in widths):
            raise ConfigError("all widths, window_len, n_heads and layer counts must be >= 1")
        if self.encoder_kind == "transformer" and self.d_z % self.n_heads:
            raise ConfigError(f"d_z={self.d_z} not divisible by n_heads={self.n_heads}")
        if self.encoder_kind == "bi_rnn" and self.d_z % 2:
            raise ConfigError(f"bi_rnn splits d_z into two halves; d_z={self.d_z} is odd")

    @property
    def input_width(self) -> int:
        return self.d_input + (1 if self.feedback else 0)

    @property
    def head_width(self) -> int:
        return self.d_z // self.n_heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classifier_hidden"] = list(self.classifier_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class MonitoringWindow:
    """``frames`` has shape (l, V, d_input); ``prev_labels[i]`` is y_{i-1}."""

    frames: np.ndarray
    label: int | None = None
    prev_labels: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise DimensionError(f"window frames must be (l, V, d), got {self.frames.shape}")


# --- parameters ------------------------------------------------------------


def _uniform(rng, fan_in, shape):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _lstm_params(rng, prefix, d_in, hidden, out):
    out[f"{prefix}.W_ih"] = _uniform(rng, d_in, (d_in, 4 * hidden))
    out[f"{prefix}.W_hh"] = _uniform(rng, hidden, (hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget gate
    out[f"{prefix}.b"] = b


def init_params(config: ModelConfig, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    dz = config.d_z
    p: dict[str, np.ndarray] = {}
    p["map.W"] = _uniform(rng, config.input_width, (config.input_width, dz))
    p["map.b"] = np.zeros(dz)

    if config.encoder_kind == "uni_rnn":
        _lstm_params(rng, "enc", dz, dz, p)
    elif config.encoder_kind == "bi_rnn":
        _lstm_params(rng, "enc.fwd", dz, dz // 2, p)
        _lstm_params(rng, "enc.bwd", dz, dz // 2, p)
    else:
        p["enc.pos"] = _uniform(rng, dz, (config.max_vnfs, dz))
        for k in range(config.n_enc_layers):
            pre = f"enc.L{k}"
            for name in ("q", "k", "v", "o"):
                p[f"{pre}.W{name}"] = _uniform(rng, dz, (dz, dz))
                p[f"{pre}.b{name}"] = np.zeros(dz)
            p[f"{pre}.ln1.g"] = np.ones(dz)
            p[f"{pre}.ln1.b"] = np.zeros(dz)
            p[f"{pre}.W1"] = _uniform(rng, dz, (dz, config.ff_width))
            p[f"{pre}.b1"] = np.zeros(config.ff_width)
            p[f"{pre}.W2"] = _uniform(rng, config.ff_width, (config.ff_width, dz))
            p[f"{pre}.b2"] = np.zeros(dz)
            p[f"{pre}.ln2.g"] = np.ones(dz)
            p[f"{pre}.ln2.b"] = np.zeros(dz)

    if config.readout_kind == "self_attention":
        p["att.U"] = _uniform(rng, dz, (dz, dz))
        p["att.w"] = _uniform(rng, dz, (dz,))

    _lstm_params(rng, "cls", dz, dz, p)
    width = dz
    for j, h in enumerate(config.classifier_hidden):
        p[f"head.W{j}"] = _uniform(rng, width, (width, h))
        p[f"head.b{j}"] = np.zeros(h)
        width = h
    p["head.Wout"] = _uniform(rng, width, (width, 1))
    p["head.bout"] = np.zeros(1)
    return p


def param_count(params: dict) -> int:
    return int(sum(np.asarray(v.data if isinstance(v, Tensor) else v).size for v in params.values()))


# --- building blocks -------------------------------------------------------


def _linear(x: Tensor, w, b) -> Tensor:
    y = ad.matmul(x, w)
    return ad.add(y, ad.expand(b, y.shape))


def _lstm_step(gates: Tensor, c, hidden: int):
    act = ad.sigmoid(gates)
    i = act[..., :hidden]
    f = act[..., hidden:2 * hidden]
    o = act[..., 3 * hidden:]
    g = ad.tanh(gates[..., 2 * hidden:3 * hidden])
    c = ad.mul(i, g) if c is None else ad.add(ad.mul(f, c), ad.mul(i, g))
    return ad.mul(o, ad.tanh(c)), c


def _lstm(x: Tensor, params, prefix: str, reverse: bool = False) -> list:
    """Run an LSTM over axis 1 of ``x`` (N, S, d) from a zero state."""
    w_hh = params[f"{prefix}.W_hh"]
    hidden = w_hh.shape[0]
    proj = _linear(x, params[f"{prefix}.W_ih"], params[f"{prefix}.b"])
    steps = range(x.shape[1] - 1, -1, -1) if reverse else range(x.shape[1])
    h = c = None
    outs = [None] * x.shape[1]
    for pos in steps:
        gates = proj[:, pos, :]
        if h is not None:
            gates = ad.add(gates, ad.matmul(h, w_hh))
        h, c = _lstm_step(gates, c, hidden)
        outs[pos] = h
    return outs


def layer_norm(x: Tensor, gain, bias) -> Tensor:
    mu = ad.mean(x, axis=-1, keepdims=True)
    xc = ad.sub(x, ad.expand(mu, x.shape))
    var = ad.mean(ad.mul(xc, xc), axis=-1, keepdims=True)
    inv = ad.rsqrt(ad.add(var, LN_EPS))
    y = ad.mul(xc, ad.expand(inv, x.shape))
    return ad.add(ad.mul(y, ad.expand(gain, x.shape)), ad.expand(bias, x.shape))


def _self_attention(x: Tensor, params, pre: str, n_heads: int, attn: list | None) -> Tensor:
    n, v, dz = x.shape
    dh = dz // n_heads

    def heads(t):
        return ad.transpose(ad.reshape(t, (n, v, n_heads, dh)), (0, 2, 1, 3))

    q = heads(_linear(x, params[f"{pre}.Wq"], params[f"{pre}.bq"]))
    k = heads(_linear(x, params[f"{pre}.Wk"], params[f"{pre}.bk"]))
    val = heads(_linear(x, params[f"{pre}.Wv"], params[f"{pre}.bv"]))
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    weights = ad.softmax(scores, axis=-1)
    if attn is not None:
        attn.append(weights.data)
    ctx = ad.reshape(ad.transpose(ad.matmul(weights, val), (0, 2, 1, 3)), (n, v, dz))
    return _linear(ctx, params[f"{pre}.Wo"], params[f"{pre}.bo"])


def _batched(x) -> tuple[Tensor, bool]:
    x = ad.as_tensor(x)
    if x.ndim == 2:
        return ad.reshape(x, (1,) + x.shape), True
    return x, False


# --- the four layers -------------------------------------------------------


def feature_map(frames, params) -> Tensor:
    """(V, d) or (N, V, d) -> same leading shape with width d_z."""
    x, single = _batched(frames)
    w = params["map.W"]
    w_in = w.shape[0]
    if x.shape[-1] != w_in:
        raise DimensionError(f"feature_map: frame width {x.shape[-1]} != mapping input width {w_in}")
    out = _linear(x, w, params["map.b"])
    return out[0] if single else out


def encode(x_mapped, config: ModelConfig, params, attn: list | None = None) -> Tensor:
    """Encode the VNF chain. (V, d_z) or (N, V, d_z) in, same shape out."""
    x, single = _batched(x_mapped)
    n, v, dz = x.shape
    if v < 1:
        raise ContractError("encode: empty VNF chain")
    kind = config.encoder_kind
    if kind == "uni_rnn":
        z = ad.stack(_lstm(x, params, "enc"), axis=1)
    elif kind == "bi_rnn":
        fwd = ad.stack(_lstm(x, params, "enc.fwd"), axis=1)
        bwd = ad.stack(_lstm(x, params, "enc.bwd", reverse=True), axis=1)
        z = ad.concat([fwd, bwd], axis=-1)
    else:
        if v > config.max_vnfs:
            raise CapacityError(f"chain length {v} exceeds the positional table size {config.max_vnfs}")
        z = ad.add(x, ad.expand(params["enc.pos"][:v], x.shape))
        for k in range(config.n_enc_layers):
            pre = f"enc.L{k}"
            z = layer_norm(ad.add(z, _self_attention(z, params, pre, config.n_heads, attn)),
                           params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
            ff = _linear(ad.relu(_linear(z, params[f"{pre}.W1"], params[f"{pre}.b1"])),
                         params[f"{pre}.W2"], params[f"{pre}.b2"])
            z = layer_norm(ad.add(z, ff), params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
    return z[0] if single else z


def attention_pool_weights(z, params) -> Tensor:
    """Softmax weights over positions, scored per position as w . tanh(U z_v)."""
    z, single = _batched(z)
    n, v, _ = z.shape
    w = params["att.w"]
    scores = ad.matmul(ad.tanh(ad.matmul(z, params["att.U"])), ad.reshape(w, (w.shape[0], 1)))
    alpha = ad.softmax(ad.reshape(scores, (n, v)), axis=1)
    return alpha[0] if single else alpha


def readout(z, kind: str, params=None) -> Tensor:
    """Pool (V, d_z) -> (d_z,) or (N, V, d_z) -> (N, d_z)."""
    z, single = _batched(z)
    n, v, dz = z.shape
    if v < 1:
        raise ContractError("readout of an empty sequence")
    if kind == "max":
        out = ad.max(z, axis=1)
    elif kind == "mean":
        out = ad.mean(z, axis=1, order_free=True)
    elif kind == "self_attention":
        alpha = attention_pool_weights(z, params)
        weighted = ad.mul(z, ad.expand(ad.reshape(alpha, (n, v, 1)), z.shape))
        out = ad.sum(weighted, axis=1)
    else:
        raise ConfigError(f"unknown readout {kind!r}")
    return out[0] if single else out


def _head(h: Tensor, config: ModelConfig, params) -> Tensor:
    for j in range(len(config.classifier_hidden)):
        h = ad.relu(_linear(h, params[f"head.W{j}"], params[f"head.b{j}"]))
    logit = _linear(h, params["head.Wout"], params["head.bout"])
    prob = ad.sigmoid(ad.reshape(logit, (logit.shape[0],)))
    return ad.clip(prob, PROB_EPS, 1.0 - PROB_EPS)


def classify(z_seq, config: ModelConfig, params) -> Tensor:
    """(l, d_z) -> scalar probability, or (B, l, d_z) -> (B,)."""
    z, single = _batched(z_seq)
    if z.shape[1] != config.window_len:
        raise DimensionError(f"classify: sequence length {z.shape[1]} != window_len {config.window_len}")
    h = _lstm(z, params, "cls")[-1]
    y = _head(h, config, params)
    return y[0] if single else y


# --- whole-window forward passes ------------------------------------------


def _with_feedback(x: np.ndarray, fb: np.ndarray, config: ModelConfig) -> np.ndarray:
    if config.hard_feedback:
        fb = (fb >= 0.5).astype(np.float64)
    col = np.broadcast_to(fb[..., None, None], x.shape[:-1] + (1,))
    return np.concatenate([x, col], axis=-1)


def frame_readouts(frames: np.ndarray, config: ModelConfig, params, feedback=None) -> Tensor:
    """Readout vectors for a stack of frames (N, V, d_input) -> (N, d_z)."""
    x = np.asarray(frames, dtype=np.float64)
    if config.feedback:
        if feedback is None:
            raise ContractError("feedback model needs one previous prediction per frame")
        x = _with_feedback(x, np.asarray(feedback, dtype=np.float64), config)
    return readout(encode(feature_map(x, params), config, params), config.readout_kind, params)


def forward_batch(x: np.ndarray, config: ModelConfig, params, feedback=None) -> Tensor:
    """Probabilities for a batch of windows ``x`` of shape (B, l, V, d_input).

    ``feedback`` (B, l) holds the value paired with each frame, i.e. y_{i-1}
    or its prediction. It is ignored unless ``config.feedback``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise DimensionError(f"expected windows of shape (B, l, V, d), got {x.shape}")
    b, l, v, d = x.shape
    if config.feedback and feedback is not None:
        feedback = np.asarray(feedback, dtype=np.float64).reshape(b * l)
    z = frame_readouts(x.reshape(b * l, v, d), config, params, feedback)
    return classify(ad.reshape(z, (b, l, config.d_z)), config, params)


def forward_window(window: MonitoringWindow, prev_preds, config: ModelConfig, params) -> float:
    """Probability that the window's final step is anomalous.

    ``prev_preds`` supplies, per frame, y_{i-1} or its prediction; it is only
    read when ``config.feedback`` is set.
    """
    frames = window.frames
    if frames.shape[0] != config.window_len:
        raise DimensionError(f"window has {frames.shape[0]} frames, expected {config.window_len}")
    fb = None
    if config.feedback:
        if prev_preds is None:
            raise ContractError("feedback model needs prev_preds")
        fb = np.asarray(prev_preds, dtype=np.float64).reshape(1, -1)
        if fb.shape[1] != config.window_len:
            raise ContractError(f"prev_preds needs {config.window_len} values, got {fb.shape[1]}")
        if np.any((fb < 0) | (fb > 1)):
            raise ContractError("prev_preds must lie in [0, 1]")
    return float(forward_batch(frames[None], config, params, fb).data[0])
