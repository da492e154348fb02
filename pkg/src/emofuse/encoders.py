"""The two modality branches: LSTM text encoder and pluggable image encoder.

Backward passes are written by hand and validated against central differences
(see numkernel.finite_difference_check); there is no autograd here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, StateError
from .numkernel import Parameter, sigmoid

IMAGE_VECTOR_DIM = 256  # width of the image representation entering fusion


# ---------------------------------------------------------------------------
# LSTM text branch


@dataclass
class LstmParams:
    """Gate weights act on the concatenation [x; h_prev] of size E+H."""

    input_dim: int
    hidden_dim: int
    w_i: Parameter
    w_f: Parameter
    w_o: Parameter
    w_g: Parameter
    b_i: Parameter
    b_f: Parameter
    b_o: Parameter
    b_g: Parameter

    def parameters(self) -> list[Parameter]:
        return [self.w_i, self.w_f, self.w_o, self.w_g,
                self.b_i, self.b_f, self.b_o, self.b_g]


@dataclass
class HiddenState:
    h: np.ndarray
    c: np.ndarray


def zero_state(hidden_dim: int) -> HiddenState:
    return HiddenState(np.zeros(hidden_dim), np.zeros(hidden_dim))


def init_lstm_params(
    input_dim: int, hidden_dim: int, rng: np.random.Generator, prefix: str = "lstm"
) -> LstmParams:
    """Uniform weights in [-k, k] with k = 1/sqrt(E+H); forget bias starts at 1."""
    k = 1.0 / np.sqrt(input_dim + hidden_dim)

    def w(name):
        return Parameter(f"{prefix}.{name}", rng.uniform(-k, k, (hidden_dim, input_dim + hidden_dim)))

    return LstmParams(
        input_dim=input_dim,
        hidden_dim=hidden_dim,
        w_i=w("w_i"),
        w_f=w("w_f"),
        w_o=w("w_o"),
        w_g=w("w_g"),
        b_i=Parameter(f"{prefix}.b_i", np.zeros(hidden_dim)),
        b_f=Parameter(f"{prefix}.b_f", np.ones(hidden_dim)),
        b_o=Parameter(f"{prefix}.b_o", np.zeros(hidden_dim)),
        b_g=Parameter(f"{prefix}.b_g", np.zeros(hidden_dim)),
    )


def lstm_step(params: LstmParams, x: np.ndarray, state: HiddenState) -> HiddenState:
    """One LSTM cell update.

    i = sig(Wi.[x;h]+bi), f = sig(Wf.[x;h]+bf), o = sig(Wo.[x;h]+bo),
    g = tanh(Wg.[x;h]+bg), c' = f*c + i*g, h' = o*tanh(c').
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise DimensionError(f"input shape {x.shape} does not match ({params.input_dim},)")
    if state.h.shape != (params.hidden_dim,) or state.c.shape != (params.hidden_dim,):
        raise DimensionError(
            f"state shapes {state.h.shape}/{state.c.shape} do not match ({params.hidden_dim},)"
        )
    z = np.concatenate([x, state.h])
    i = sigmoid(params.w_i.value @ z + params.b_i.value)
    f = sigmoid(params.w_f.value @ z + params.b_f.value)
    o = sigmoid(params.w_o.value @ z + params.b_o.value)
    g = np.tanh(params.w_g.value @ z + params.b_g.value)
    c = f * state.c + i * g
    return HiddenState(o * np.tanh(c), c)


@dataclass
class LstmCache:
    """Per-step activations saved by lstm_forward for backpropagation through time."""

    hidden_dim: int
    zs: np.ndarray       # (T, E+H) gate inputs [x_t; h_{t-1}]
    gates_i: np.ndarray  # (T, H)
    gates_f: np.ndarray
    gates_o: np.ndarray
    gates_g: np.ndarray
    cs: np.ndarray       # (T, H) cell states after each step
    tanh_cs: np.ndarray


def lstm_forward(params: LstmParams, seq) -> tuple[np.ndarray, LstmCache]:
    """Run the cell over every row (pads included) from the zero state."""
    rows = seq.vectors if hasattr(seq, "vectors") else np.asarray(seq, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != params.input_dim:
        raise DimensionError(f"sequence shape {rows.shape} does not match input dim {params.input_dim}")
    steps, hidden = rows.shape[0], params.hidden_dim
    cache = LstmCache(
        hidden_dim=hidden,
        zs=np.zeros((steps, params.input_dim + hidden)),
        gates_i=np.zeros((steps, hidden)),
        gates_f=np.zeros((steps, hidden)),
        gates_o=np.zeros((steps, hidden)),
        gates_g=np.zeros((steps, hidden)),
        cs=np.zeros((steps, hidden)),
        tanh_cs=np.zeros((steps, hidden)),
    )
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    for t in range(steps):
        z = np.concatenate([rows[t], h])
        i = sigmoid(params.w_i.value @ z + params.b_i.value)
        f = sigmoid(params.w_f.value @ z + params.b_f.value)
        o = sigmoid(params.w_o.value @ z + params.b_o.value)
        g = np.tanh(params.w_g.value @ z + params.b_g.value)
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        cache.zs[t] = z
        cache.gates_i[t] = i
        cache.gates_f[t] = f
        cache.gates_o[t] = o
        cache.gates_g[t] = g
        cache.cs[t] = c
        cache.tanh_cs[t] = tc
    return h, cache


def lstm_encode(params: LstmParams, seq) -> np.ndarray:
    """Final hidden state after consuming the whole (padded) sequence."""
    h, _ = lstm_forward(params, seq)
    return h


def lstm_backward(
    params: LstmParams, cache: LstmCache, upstream: np.ndarray, scale: float = 1.0
) -> np.ndarray:
    """Backpropagate d(loss)/d(final h) through time.

    Accumulates scale * gradients into the params' .grad buffers and returns
    the gradient with respect to the input rows, shape (T, E).
    """
    if cache is None:
        raise StateError("lstm_backward requires the cache from lstm_forward")
    if cache.hidden_dim != params.hidden_dim:
        raise StateError("cache does not match these parameters")
    steps = cache.zs.shape[0]
    input_dim = params.input_dim
    dx = np.zeros((steps, input_dim))
    dh = np.asarray(upstream, dtype=np.float64).copy()
    if dh.shape != (params.hidden_dim,):
        raise DimensionError(f"upstream shape {dh.shape} does not match ({params.hidden_dim},)")
    dc = np.zeros(params.hidden_dim)
    for t in range(steps - 1, -1, -1):
        i = cache.gates_i[t]
        f = cache.gates_f[t]
        o = cache.gates_o[t]
        g = cache.gates_g[t]
        tc = cache.tanh_cs[t]
        c_prev = cache.cs[t - 1] if t > 0 else np.zeros(params.hidden_dim)
        do = dh * tc
        dc_total = dc + dh * o * (1.0 - tc * tc)
        da_i = (dc_total * g) * i * (1.0 - i)
        da_f = (dc_total * c_prev) * f * (1.0 - f)
        da_o = do * o * (1.0 - o)
        da_g = (dc_total * i) * (1.0 - g * g)
        z = cache.zs[t]
        params.w_i.grad += scale * np.outer(da_i, z)
        params.w_f.grad += scale * np.outer(da_f, z)
        params.w_o.grad += scale * np.outer(da_o, z)
        params.w_g.grad += scale * np.outer(da_g, z)
        params.b_i.grad += scale * da_i
        params.b_f.grad += scale * da_f
        params.b_o.grad += scale * da_o
        params.b_g.grad += scale * da_g
        dz = (
            params.w_i.value.T @ da_i
            + params.w_f.value.T @ da_f
            + params.w_o.value.T @ da_o
            + params.w_g.value.T @ da_g
        )
        dx[t] = scale * dz[:input_dim]
        dh = dz[input_dim:]
        dc = dc_total * f
    return dx


# ---------------------------------------------------------------------------
# Image branch


@dataclass
class ImageEncoderConfig:
    """Either a small trainable conv stack or a projection over precomputed
    backbone features. Output width is fixed at 256.

    With trainable_backbone=False the conv stack of tiny_cnn is frozen and
    only the final dense layer trains (for frozen_features the backbone lives
    upstream of the feature file, so the flag has no parameters to act on).
    """

    kind: str  # "tiny_cnn" or "frozen_features"
    feature_dim: int | None = None
    channels: tuple[int, int, int] = (8, 16, 32)
    trainable_backbone: bool = False
    output_dim: int = IMAGE_VECTOR_DIM

    def __post_init__(self):
        if self.kind not in ("tiny_cnn", "frozen_features"):
            raise ConfigError(f"unknown image encoder kind {self.kind!r}")
        if self.output_dim != IMAGE_VECTOR_DIM:
            raise ConfigError(f"image encoder output dim is fixed at {IMAGE_VECTOR_DIM}")
        if self.kind == "frozen_features" and (self.feature_dim is None or self.feature_dim < 1):
            raise ConfigError("frozen_features requires a positive feature_dim")


@dataclass
class TinyCnnParams:
    conv_w: list[Parameter]  # three (3, 3, c_in, c_out) kernels
    conv_b: list[Parameter]
    dense_w: Parameter       # (256, channels[-1])
    dense_b: Parameter

    def parameters(self, include_backbone: bool = True) -> list[Parameter]:
        ps: list[Parameter] = []
        if include_backbone:
            for w, b in zip(self.conv_w, self.conv_b):
                ps.extend([w, b])
        ps.extend([self.dense_w, self.dense_b])
        return ps


@dataclass
class ProjectionParams:
    w: Parameter  # (256, feature_dim)
    b: Parameter

    def parameters(self, include_backbone: bool = True) -> list[Parameter]:
        return [self.w, self.b]


def init_image_params(
    config: ImageEncoderConfig, rng: np.random.Generator, prefix: str = "image"
):
    if config.kind == "frozen_features":
        k = 1.0 / np.sqrt(config.feature_dim)
        return ProjectionParams(
            w=Parameter(f"{prefix}.proj.w", rng.uniform(-k, k, (IMAGE_VECTOR_DIM, config.feature_dim))),
            b=Parameter(f"{prefix}.proj.b", np.zeros(IMAGE_VECTOR_DIM)),
        )
    conv_w, conv_b = [], []
    c_in = 3
    for layer, c_out in enumerate(config.channels):
        k = 1.0 / np.sqrt(9 * c_in)
        conv_w.append(Parameter(f"{prefix}.conv{layer}.w", rng.uniform(-k, k, (3, 3, c_in, c_out))))
        conv_b.append(Parameter(f"{prefix}.conv{layer}.b", np.zeros(c_out)))
        c_in = c_out
    k = 1.0 / np.sqrt(config.channels[-1])
    return TinyCnnParams(
        conv_w=conv_w,
        conv_b=conv_b,
        dense_w=Parameter(f"{prefix}.dense.w", rng.uniform(-k, k, (IMAGE_VECTOR_DIM, config.channels[-1]))),
        dense_b=Parameter(f"{prefix}.dense.b", np.zeros(IMAGE_VECTOR_DIM)),
    )


def image_parameters(config: ImageEncoderConfig, params, trainable_only: bool = True):
    include_backbone = config.trainable_backbone or not trainable_only
    return params.parameters(include_backbone)


def _conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Same padding, stride 1; accumulate the nine taps as (H*W, Cin) @ (Cin, Cout).
    h, wd, _ = x.shape
    c_out = w.shape[3]
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros((h, wd, c_out))
    for di in range(3):
        for dj in range(3):
            out += xp[di : di + h, dj : dj + wd, :] @ w[di, dj]
    out += b
    return out


def _conv3x3_backward(x, w, dout):
    h, wd, _ = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    flat_dout = dout.reshape(-1, dout.shape[2])
    for di in range(3):
        for dj in range(3):
            window = xp[di : di + h, dj : dj + wd, :].reshape(-1, x.shape[2])
            dw[di, dj] = window.T @ flat_dout
            dxp[di : di + h, dj : dj + wd, :] += dout @ w[di, dj].T
    db = flat_dout.sum(axis=0)
    return dw, db, dxp[1 : 1 + h, 1 : 1 + wd, :]


def _maxpool2_forward(x: np.ndarray):
    h, wd, c = x.shape
    h2, w2 = h // 2, wd // 2
    blocks = (
        x[: 2 * h2, : 2 * w2, :]
        .reshape(h2, 2, w2, 2, c)
        .transpose(0, 2, 4, 1, 3)
        .reshape(h2, w2, c, 4)
    )
    idx = blocks.argmax(axis=3)  # first max wins ties: deterministic
    out = np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0]
    return out, (idx, x.shape)


def _maxpool2_backward(dout: np.ndarray, pool_cache):
    idx, shape = pool_cache
    h, wd, c = shape
    h2, w2 = h // 2, wd // 2
    dblocks = np.zeros((h2, w2, c, 4))
    np.put_along_axis(dblocks, idx[..., None], dout[..., None], axis=3)
    dx = np.zeros(shape)
    dx[: 2 * h2, : 2 * w2, :] = (
        dblocks.reshape(h2, w2, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(2 * h2, 2 * w2, c)
    )
    return dx


def image_forward(config: ImageEncoderConfig, params, image_input) -> tuple[np.ndarray, dict]:
    """Encode a pixel array or feature vector into the 256-wide image vector."""
    x = np.asarray(image_input, dtype=np.float64)
    if config.kind == "frozen_features":
        if x.ndim != 1 or x.shape[0] != config.feature_dim:
            raise ConfigError(
                f"frozen_features expects a {config.feature_dim}-d feature vector, got shape {x.shape}"
            )
        return params.w.value @ x + params.b.value, {"kind": "frozen_features", "x": x}
    if x.ndim != 3 or x.shape[2] != 3:
        raise ConfigError(f"tiny_cnn expects an (H, W, 3) pixel array, got shape {x.shape}")
    cache: dict = {"kind": "tiny_cnn", "layers": []}
    cur = x
    for w, b in zip(params.conv_w, params.conv_b):
        pre = _conv3x3_forward(cur, w.value, b.value)
        act = np.maximum(pre, 0.0)
        pooled, pool_cache = _maxpool2_forward(act)
        cache["layers"].append({"x": cur, "pre": pre, "pool": pool_cache})
        cur = pooled
    cache["gap_in_shape"] = cur.shape
    pooled_vec = cur.mean(axis=(0, 1))
    cache["gap"] = pooled_vec
    return params.dense_w.value @ pooled_vec + params.dense_b.value, cache


def image_encode(config: ImageEncoderConfig, params, image_input) -> np.ndarray:
    vec, _ = image_forward(config, params, image_input)
    return vec


def image_backward(
    config: ImageEncoderConfig, params, cache: dict, upstream: np.ndarray, scale: float = 1.0
):
    """Accumulate gradients for the trainable image parameters.

    With a frozen backbone only the head (projection or dense layer) receives
    gradients; conv parameters are left untouched and not even computed.
    """
    if cache is None or "kind" not in cache:
        raise StateError("image_backward requires the cache from image_forward")
    if cache["kind"] != config.kind:
        raise StateError(f"cache kind {cache['kind']!r} does not match config {config.kind!r}")
    up = np.asarray(upstream, dtype=np.float64)
    if config.kind == "frozen_features":
        params.w.grad += scale * np.outer(up, cache["x"])
        params.b.grad += scale * up
        return
    params.dense_w.grad += scale * np.outer(up, cache["gap"])
    params.dense_b.grad += scale * up
    if not config.trainable_backbone:
        return
    h, wd, _ = cache["gap_in_shape"]
    dcur = np.broadcast_to(params.dense_w.value.T @ up / (h * wd), cache["gap_in_shape"]).copy()
    for layer_idx in range(len(params.conv_w) - 1, -1, -1):
        layer = cache["layers"][layer_idx]
        dact = _maxpool2_backward(dcur, layer["pool"])
        dpre = dact * (layer["pre"] > 0.0)
        dw, db, dcur = _conv3x3_backward(layer["x"], params.conv_w[layer_idx].value, dpre)
        params.conv_w[layer_idx].grad += scale * dw
        params.conv_b[layer_idx].grad += scale * db
