"""The fusion network: image vector + LSTM text vector -> dense -> 15-way softmax.

The same architecture serves the three ablations: in text_only mode the image
branch output is replaced by zeros (and vice versa), so single-branch and
combined models share every code path.
"""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import dataclass

import numpy as np

from .dataset import EMOTION_WORDS, N_EMOTIONS, LabeledExample
from .encoders import (
    IMAGE_VECTOR_DIM,
    ImageEncoderConfig,
    image_backward,
    image_forward,
    image_parameters,
    init_image_params,
    init_lstm_params,
    lstm_backward,
    lstm_forward,
)
from .errors import CheckpointError, ConfigError, DimensionError, TrainingError
from .numkernel import (
    OptimizerState,
    Parameter,
    cross_entropy,
    optimizer_step,
    softmax,
    zero_grads,
)

MODES = ("multimodal", "text_only", "image_only")

_CHECKPOINT_MAGIC = b"EMOFUSE\x00"
_CHECKPOINT_VERSION = 1


class DeepSentimentModel:
    """Both branch parameter sets plus the fusion head, built from one seed."""

    def __init__(
        self,
        *,
        embed_dim: int,
        image_config: ImageEncoderConfig,
        hidden_size: int = 64,
        fusion_width: int = 128,
        mode: str = "multimodal",
        seed: int = 0,
        max_len: int = 50,
    ):
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        if max_len < 1 or hidden_size < 1 or fusion_width < 1:
            raise ConfigError("hidden_size, fusion_width and max_len must be positive")
        self.embed_dim = embed_dim
        self.hidden_size = hidden_size
        self.fusion_width = fusion_width
        self.mode = mode
        self.seed = seed
        self.max_len = max_len
        self.image_config = image_config
        rng = np.random.default_rng(seed)
        self.lstm = init_lstm_params(embed_dim, hidden_size, rng)
        self.image_params = init_image_params(image_config, rng)
        concat_dim = IMAGE_VECTOR_DIM + hidden_size
        k = 1.0 / np.sqrt(concat_dim)
        self.fusion_w = Parameter("fusion.w", rng.uniform(-k, k, (fusion_width, concat_dim)))
        self.fusion_b = Parameter("fusion.b", np.zeros(fusion_width))
        k = 1.0 / np.sqrt(fusion_width)
        self.output_w = Parameter("output.w", rng.uniform(-k, k, (N_EMOTIONS, fusion_width)))
        self.output_b = Parameter("output.b", np.zeros(N_EMOTIONS))

    def parameters(self, trainable_only: bool = True) -> list[Parameter]:
        ps: list[Parameter] = []
        if not (trainable_only and self.mode == "image_only"):
            ps.extend(self.lstm.parameters())
        if not (trainable_only and self.mode == "text_only"):
            ps.extend(image_parameters(self.image_config, self.image_params, trainable_only))
        ps.extend([self.fusion_w, self.fusion_b, self.output_w, self.output_b])
        return ps


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0
    shuffle: bool = True


@dataclass
class EpochMetrics:
    epoch: int
    split: str
    loss: float
    accuracy: float
    seconds: float


def _forward_cached(model: DeepSentimentModel, example: LabeledExample):
    if model.mode != "image_only":
        rows = example.embedded_text.vectors
        if rows.shape != (model.max_len, model.embed_dim):
            raise DimensionError(
                f"embedded text shape {rows.shape} does not match "
                f"({model.max_len}, {model.embed_dim})"
            )
        text_vec, text_cache = lstm_forward(model.lstm, example.embedded_text)
    else:
        text_vec, text_cache = np.zeros(model.hidden_size), None
    if model.mode != "text_only":
        image_vec, image_cache = image_forward(
            model.image_config, model.image_params, example.image_input
        )
    else:
        image_vec, image_cache = np.zeros(IMAGE_VECTOR_DIM), None
    concat = np.concatenate([image_vec, text_vec])
    pre_fusion = model.fusion_w.value @ concat + model.fusion_b.value
    hidden = np.maximum(pre_fusion, 0.0)
    logits = model.output_w.value @ hidden + model.output_b.value
    probs = softmax(logits)
    cache = {
        "text": text_cache,
        "image": image_cache,
        "concat": concat,
        "pre_fusion": pre_fusion,
        "hidden": hidden,
    }
    return probs, cache


def forward(model: DeepSentimentModel, example: LabeledExample) -> np.ndarray:
    """Posterior distribution over the 15 emotions for one example."""
    probs, _ = _forward_cached(model, example)
    return probs


def loss_and_grads(model: DeepSentimentModel, batch: list[LabeledExample]) -> float:
    """Mean cross-entropy over the batch; exact gradients accumulate into the
    trainable parameters (in fixed batch order)."""
    if not batch:
        raise ValueError("empty batch")
    params = model.parameters()
    zero_grads(params)
    inv = 1.0 / len(batch)
    total = 0.0
    for example in batch:
        probs, cache = _forward_cached(model, example)
        loss = cross_entropy(probs, int(example.label))
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss for example {example.id!r}")
        total += loss
        dlogits = probs.copy()
        dlogits[int(example.label)] -= 1.0
        dlogits *= inv
        model.output_w.grad += np.outer(dlogits, cache["hidden"])
        model.output_b.grad += dlogits
        dhidden = model.output_w.value.T @ dlogits
        dpre = dhidden * (cache["pre_fusion"] > 0.0)
        model.fusion_w.grad += np.outer(dpre, cache["concat"])
        model.fusion_b.grad += dpre
        dconcat = model.fusion_w.value.T @ dpre
        if model.mode != "text_only":
            image_backward(
                model.image_config, model.image_params, cache["image"], dconcat[:IMAGE_VECTOR_DIM]
            )
        if model.mode != "image_only":
            lstm_backward(model.lstm, cache["text"], dconcat[IMAGE_VECTOR_DIM:])
    return total * inv


def _score(model: DeepSentimentModel, examples: list[LabeledExample]) -> tuple[float, float]:
    total_loss = 0.0
    correct = 0
    for example in examples:
        probs = forward(model, example)
        total_loss += cross_entropy(probs, int(example.label))
        if int(np.argmax(probs)) == int(example.label):  # argmax takes lowest index on ties
            correct += 1
    return total_loss / len(examples), correct / len(examples)


def evaluate(
    model: DeepSentimentModel,
    examples: list[LabeledExample],
    *,
    split: str = "test",
    epoch: int = 0,
) -> EpochMetrics:
    if not examples:
        raise ValueError("cannot evaluate an empty dataset")
    start = time.perf_counter()
    loss, accuracy = _score(model, examples)
    return EpochMetrics(epoch, split, loss, accuracy, time.perf_counter() - start)


def train(
    model: DeepSentimentModel,
    examples: list[LabeledExample],
    config: TrainConfig,
    test_examples: list[LabeledExample] | None = None,
) -> list[EpochMetrics]:
    """Seeded mini-batch training; records train (and optional test) metrics
    after every epoch. Bit-reproducible for a fixed config and seed."""
    if config.batch_size < 1 or config.epochs < 1:
        raise ConfigError("batch_size and epochs must be >= 1")
    if not examples:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    state = OptimizerState(kind=config.optimizer, learning_rate=config.learning_rate)
    n = len(examples)
    metrics: list[EpochMetrics] = []
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        for batch_idx, lo in enumerate(range(0, n, config.batch_size)):
            batch = [examples[i] for i in order[lo : lo + config.batch_size]]
            try:
                loss_and_grads(model, batch)
                optimizer_step(state, model.parameters())
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch} batch {batch_idx}: {exc}") from exc
        seconds = time.perf_counter() - start
        loss, accuracy = _score(model, examples)
        metrics.append(EpochMetrics(epoch, "train", loss, accuracy, seconds))
        if test_examples:
            metrics.append(evaluate(model, test_examples, split="test", epoch=epoch))
    return metrics


def metrics_to_csv(metrics: list[EpochMetrics]) -> str:
    """Deterministic CSV of per-epoch metrics.

    Wall-clock seconds are deliberately left out of the file (they are in the
    EpochMetrics records and the log) so identical runs produce identical
    bytes.
    """
    lines = ["epoch,split,loss,accuracy"]
    for m in metrics:
        lines.append(f"{m.epoch},{m.split},{m.loss!r},{m.accuracy!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Checkpoint format: magic, version, then length-prefixed named sections.
# The "meta" section is JSON; each parameter section is ndim, dims, then
# little-endian float64 data.


def _pack_section(name: str, payload: bytes) -> bytes:
    name_b = name.encode("utf-8")
    return struct.pack("<H", len(name_b)) + name_b + struct.pack("<Q", len(payload)) + payload


def save_checkpoint(model: DeepSentimentModel, path):
    meta = {
        "embed_dim": model.embed_dim,
        "hidden_size": model.hidden_size,
        "fusion_width": model.fusion_width,
        "mode": model.mode,
        "seed": model.seed,
        "max_len": model.max_len,
        "emotions": list(EMOTION_WORDS),
        "image": {
            "kind": model.image_config.kind,
            "feature_dim": model.image_config.feature_dim,
            "channels": list(model.image_config.channels),
            "trainable_backbone": model.image_config.trainable_backbone,
        },
    }
    params = model.parameters(trainable_only=False)
    blob = bytearray()
    blob += _CHECKPOINT_MAGIC
    blob += struct.pack("<I", _CHECKPOINT_VERSION)
    blob += struct.pack("<I", 1 + len(params))
    blob += _pack_section("meta", json.dumps(meta, sort_keys=True).encode("utf-8"))
    for p in params:
        dims = p.value.shape
        payload = struct.pack("<B", len(dims))
        payload += struct.pack(f"<{len(dims)}I", *dims) if dims else b""
        payload += np.ascontiguousarray(p.value, dtype="<f8").tobytes()
        blob += _pack_section(p.name, payload)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(blob))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def load_checkpoint(path) -> DeepSentimentModel:
    try:
        with open(path, "rb") as fh:
            reader = _Reader(fh.read())
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    if reader.take(len(_CHECKPOINT_MAGIC)) != _CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", reader.take(4))
    if version != _CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n_sections,) = struct.unpack("<I", reader.take(4))
    sections: dict[str, bytes] = {}
    for _ in range(n_sections):
        (name_len,) = struct.unpack("<H", reader.take(2))
        name = reader.take(name_len).decode("utf-8")
        (payload_len,) = struct.unpack("<Q", reader.take(8))
        sections[name] = reader.take(payload_len)
    if reader.pos != len(reader.data):
        raise CheckpointError("trailing bytes after final section")
    if "meta" not in sections:
        raise CheckpointError("checkpoint has no meta section")
    try:
        meta = json.loads(sections.pop("meta"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt meta section: {exc}") from exc
    if meta.get("emotions") != list(EMOTION_WORDS):
        raise CheckpointError("checkpoint emotion ordering does not match this build")
    image_meta = meta["image"]
    config = ImageEncoderConfig(
        kind=image_meta["kind"],
        feature_dim=image_meta["feature_dim"],
        channels=tuple(image_meta["channels"]),
        trainable_backbone=image_meta["trainable_backbone"],
    )
    model = DeepSentimentModel(
        embed_dim=meta["embed_dim"],
        image_config=config,
        hidden_size=meta["hidden_size"],
        fusion_width=meta["fusion_width"],
        mode=meta["mode"],
        seed=meta["seed"],
        max_len=meta["max_len"],
    )
    by_name = {p.name: p for p in model.parameters(trainable_only=False)}
    if set(by_name) != set(sections):
        missing = set(by_name) - set(sections)
        extra = set(sections) - set(by_name)
        raise CheckpointError(f"parameter sections mismatch (missing {missing}, extra {extra})")
    for name, payload in sections.items():
        sub = _Reader(payload)
        (ndim,) = struct.unpack("<B", sub.take(1))
        dims = struct.unpack(f"<{ndim}I", sub.take(4 * ndim)) if ndim else ()
        count = int(np.prod(dims)) if dims else 1
        raw = sub.take(8 * count)
        if sub.pos != len(payload):
            raise CheckpointError(f"trailing bytes in parameter section {name!r}")
        value = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
        if value.shape != by_name[name].value.shape:
            raise CheckpointError(
                f"parameter {name!r} has shape {value.shape}, expected {by_name[name].value.shape}"
            )
        by_name[name].value[...] = value
    return model
