"""Finite-difference verification of every hand-written backward pass.

Builds tiny seeded fixtures for each layer family plus the composed model and
compares analytic gradients against central differences. This is the master
numeric gate: everything must come in under 1e-4 relative error.
"""

from __future__ import annotations

import numpy as np

from .dataset import Emotion, LabeledExample
from .embeddings import EmbeddedSequence
from .encoders import (
    ImageEncoderConfig,
    image_backward,
    image_forward,
    init_image_params,
    init_lstm_params,
    lstm_backward,
    lstm_forward,
)
from .model import DeepSentimentModel, forward, loss_and_grads
from .numkernel import Parameter, cross_entropy, finite_difference_report, softmax, zero_grads

THRESHOLD = 1e-4
EPS = 1e-5


def _check(component: str, loss_fn, params: list[Parameter], results: list):
    report = finite_difference_report(loss_fn, params, EPS)
    for name, err in report.items():
        results.append((component, name, err))


def _lstm_component(results: list, corrupt: bool = False):
    rng = np.random.default_rng(101)
    params = init_lstm_params(3, 4, rng)
    rows = rng.normal(0.0, 1.0, (5, 3))
    probe = rng.normal(0.0, 1.0, 4)
    plist = params.parameters()

    def loss_fn():
        h, _ = lstm_forward(params, rows)
        return float(probe @ h)

    zero_grads(plist)
    _, cache = lstm_forward(params, rows)
    lstm_backward(params, cache, probe)
    if corrupt:
        params.w_i.grad[0, 0] += 0.5
    _check("lstm", loss_fn, plist, results)


def _tiny_cnn_component(results: list):
    rng = np.random.default_rng(102)
    config = ImageEncoderConfig(kind="tiny_cnn", trainable_backbone=True)
    params = init_image_params(config, rng)
    image = rng.uniform(0.05, 0.95, (8, 8, 3))
    probe = rng.normal(0.0, 1.0, 256)
    plist = params.parameters(include_backbone=True)

    def loss_fn():
        vec, _ = image_forward(config, params, image)
        return float(probe @ vec)

    zero_grads(plist)
    _, cache = image_forward(config, params, image)
    image_backward(config, params, cache, probe)
    _check("tiny_cnn", loss_fn, plist, results)


def _projection_component(results: list):
    rng = np.random.default_rng(103)
    config = ImageEncoderConfig(kind="frozen_features", feature_dim=5)
    params = init_image_params(config, rng)
    feature = rng.normal(0.0, 1.0, 5)
    probe = rng.normal(0.0, 1.0, 256)
    plist = params.parameters()

    def loss_fn():
        vec, _ = image_forward(config, params, feature)
        return float(probe @ vec)

    zero_grads(plist)
    _, cache = image_forward(config, params, feature)
    image_backward(config, params, cache, probe)
    _check("projection", loss_fn, plist, results)


def _fusion_component(results: list):
    rng = np.random.default_rng(104)
    w = Parameter("fusion.w", rng.uniform(-0.5, 0.5, (6, 9)))
    b = Parameter("fusion.b", rng.uniform(-0.5, 0.5, 6))
    x = rng.normal(0.0, 1.0, 9)
    probe = rng.normal(0.0, 1.0, 6)

    def loss_fn():
        return float(probe @ np.maximum(w.value @ x + b.value, 0.0))

    zero_grads([w, b])
    pre = w.value @ x + b.value
    dpre = probe * (pre > 0.0)
    w.grad += np.outer(dpre, x)
    b.grad += dpre
    _check("fusion", loss_fn, [w, b], results)


def _output_component(results: list):
    rng = np.random.default_rng(105)
    w = Parameter("output.w", rng.uniform(-0.5, 0.5, (15, 6)))
    b = Parameter("output.b", rng.uniform(-0.5, 0.5, 15))
    x = rng.normal(0.0, 1.0, 6)
    label = 3

    def loss_fn():
        return cross_entropy(softmax(w.value @ x + b.value), label)

    zero_grads([w, b])
    probs = softmax(w.value @ x + b.value)
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    w.grad += np.outer(dlogits, x)
    b.grad += dlogits
    _check("output", loss_fn, [w, b], results)


def _model_fixture(image_kind: str, rng: np.random.Generator):
    if image_kind == "frozen_features":
        config = ImageEncoderConfig(kind="frozen_features", feature_dim=5)
        inputs = [rng.normal(0.0, 1.0, 5) for _ in range(2)]
    else:
        config = ImageEncoderConfig(kind="tiny_cnn", trainable_backbone=True)
        inputs = [rng.uniform(0.05, 0.95, (8, 8, 3)) for _ in range(2)]
    model = DeepSentimentModel(
        embed_dim=4,
        image_config=config,
        hidden_size=6,
        fusion_width=8,
        mode="multimodal",
        seed=106,
        max_len=3,
    )
    examples = [
        LabeledExample(
            id=f"g{i}",
            embedded_text=EmbeddedSequence(rng.normal(0.0, 1.0, (3, 4)), 3),
            image_input=inputs[i],
            label=Emotion(i + 1),
        )
        for i in range(2)
    ]
    return model, examples


def _full_model_component(image_kind: str, results: list):
    rng = np.random.default_rng(107 if image_kind == "frozen_features" else 108)
    model, examples = _model_fixture(image_kind, rng)
    plist = model.parameters()

    def loss_fn():
        total = 0.0
        for ex in examples:
            total += cross_entropy(forward(model, ex), int(ex.label))
        return total / len(examples)

    loss_and_grads(model, examples)
    _check(f"full_model_{image_kind}", loss_fn, plist, results)


def run_gradcheck(corrupt: bool = False) -> list[tuple[str, str, float]]:
    """All per-layer and whole-model checks as (component, parameter, error).

    corrupt=True deliberately poisons one analytic gradient first, as a
    negative control for the reporting and exit-code path.
    """
    results: list[tuple[str, str, float]] = []
    _lstm_component(results, corrupt=corrupt)
    _tiny_cnn_component(results)
    _projection_component(results)
    _fusion_component(results)
    _output_component(results)
    _full_model_component("frozen_features", results)
    return results
