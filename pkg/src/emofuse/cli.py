"""Command-line driver: ingest/filter, train/eval, analyses, gradient check.

Subcommands: ingest, train, eval, probe, cluster, pca, oasis, gradcheck.
Configuration comes from a flat `key = value` file; the --seed/--out/--mode
flags override it. Diagnostics go to stderr, data to files and stdout, and
output files are written via temp-and-rename so failures leave nothing
partial behind.

Exit codes: 0 ok, 2 I/O error, 3 config error, 4 training error,
5 missing/unreadable checkpoint, 6 analysis error, 7 gradient check failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import analysis, svgplot
from .dataset import (
    EMOTION_WORDS,
    class_priors,
    filter_dataset,
    ingest,
    load_dataset,
    load_feature_file,
    mean_image,
    prior_baseline_accuracy,
    read_image,
    save_dataset,
    split,
)
from .embeddings import load_embedding_file, word_frequencies
from .encoders import ImageEncoderConfig
from .errors import (
    CheckpointError,
    ConfigError,
    ParseError,
    TrainingError,
)
from .gradcheck import THRESHOLD, run_gradcheck
from .model import (
    MODES,
    DeepSentimentModel,
    TrainConfig,
    evaluate,
    load_checkpoint,
    metrics_to_csv,
    save_checkpoint,
    train,
)

EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_TRAINING = 4
EXIT_CHECKPOINT = 5
EXIT_ANALYSIS = 6
EXIT_GRADCHECK = 7


@dataclass
class RunConfig:
    # input/output paths
    posts: str | None = None
    embeddings: str | None = None
    features: str | None = None
    ratings: str | None = None
    out: str = "out"
    dataset: str | None = None     # defaults to <out>/dataset.jsonl
    checkpoint: str | None = None  # defaults to <out>/checkpoint.bin
    # model
    mode: str = "multimodal"
    encoder: str = "frozen_features"
    feature_dim: int | None = None  # inferred from the feature file when absent
    trainable_backbone: bool = False
    hidden_size: int = 64
    fusion_width: int = 128
    max_len: int = 50
    # training
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    test_fraction: float = 0.2
    shuffle: bool = True
    seed: int = 0
    # analysis
    n_words: int = 1000
    top_k: int = 10
    n_components: int = 3
    linkage: str = "average"
    pca_standardize: bool = False


_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def parse_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


def build_run_config(file_values: dict[str, str], overrides: dict) -> RunConfig:
    config = RunConfig()
    by_name = {f.name: f for f in fields(RunConfig)}
    for key, raw in file_values.items():
        if key not in by_name:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(config, key, _coerce(key, raw, getattr(config, key)))
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    if config.mode not in MODES:
        raise ConfigError(f"unknown mode {config.mode!r}")
    if config.encoder not in ("frozen_features", "tiny_cnn"):
        raise ConfigError(f"unknown encoder {config.encoder!r}")
    if config.dataset is None:
        config.dataset = os.path.join(config.out, "dataset.jsonl")
    if config.checkpoint is None:
        config.checkpoint = os.path.join(config.out, "checkpoint.bin")
    return config


def _coerce(key: str, raw: str, default):
    if isinstance(default, bool):
        if raw.lower() not in _BOOL_WORDS:
            raise ConfigError(f"config key {key!r}: expected a boolean, got {raw!r}")
        return _BOOL_WORDS[raw.lower()]
    if isinstance(default, int) or key == "feature_dim":
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: expected an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: expected a number, got {raw!r}") from exc
    return raw


def _require_paths(config: RunConfig, *keys: str):
    for key in keys:
        path = getattr(config, key)
        if path is None:
            raise ConfigError(f"config key {key!r} is required for this command")
        if not os.path.exists(path):
            raise ConfigError(f"{key} path does not exist: {path}")


def _write_text(path, text: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _log(message: str):
    print(message, file=sys.stderr)


# ---------------------------------------------------------------------------
# Commands


def _load_inputs(config: RunConfig, need_features: bool):
    table = load_embedding_file(config.embeddings)
    features = None
    if config.features is not None and os.path.exists(config.features):
        features = load_feature_file(config.features)
    elif need_features and config.encoder == "frozen_features":
        raise ConfigError("frozen_features encoder needs a features file")
    return table, features


def cmd_ingest(config: RunConfig) -> int:
    _require_paths(config, "posts", "embeddings")
    if config.features is not None:
        _require_paths(config, "features")
    table, features = _load_inputs(config, need_features=False)
    with open(config.posts, encoding="utf-8") as fh:
        posts, errors = ingest(fh)
    for lineno, message in errors:
        _log(f"ingest: skipped line {lineno}: {message}")
    examples, report = filter_dataset(
        posts, table, features=features, load_pixels=read_image, max_len=config.max_len
    )
    os.makedirs(config.out, exist_ok=True)
    save_dataset(examples, config.dataset)
    _write_text(os.path.join(config.out, "filter_report.json"), report.to_json() + "\n")
    print("emotion,labeled,text_filtered,text_and_image_filtered")
    for word in EMOTION_WORDS:
        labeled, text_ok, kept = report.per_emotion[word]
        print(f"{word},{labeled},{text_ok},{kept}")
    drops = ",".join(f"{k}={v}" for k, v in report.dropped.items())
    _log(f"ingest: {report.total_posts} posts in, {report.kept} kept ({drops})")
    return 0


def _load_examples(config: RunConfig):
    _require_paths(config, "embeddings", "dataset")
    table, features = _load_inputs(config, need_features=True)
    examples = load_dataset(
        config.dataset,
        table,
        features=features,
        load_pixels=read_image,
        max_len=config.max_len,
    )
    if not examples:
        raise ConfigError(f"dataset {config.dataset} is empty")
    return table, features, examples


def _build_model(config: RunConfig, table, features) -> DeepSentimentModel:
    feature_dim = config.feature_dim
    if config.encoder == "frozen_features" and feature_dim is None:
        if not features:
            raise ConfigError("feature_dim is required when no features file is given")
        feature_dim = len(next(iter(features.values())))
    image_config = ImageEncoderConfig(
        kind=config.encoder,
        feature_dim=feature_dim,
        trainable_backbone=config.trainable_backbone,
    )
    return DeepSentimentModel(
        embed_dim=table.dim,
        image_config=image_config,
        hidden_size=config.hidden_size,
        fusion_width=config.fusion_width,
        mode=config.mode,
        seed=config.seed,
        max_len=config.max_len,
    )


def cmd_train(config: RunConfig) -> int:
    table, features, examples = _load_examples(config)
    train_set, test_set = split(examples, config.test_fraction, config.seed)
    model = _build_model(config, table, features)
    train_config = TrainConfig(
        optimizer=config.optimizer,
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        epochs=config.epochs,
        seed=config.seed,
        shuffle=config.shuffle,
    )
    metrics = train(model, train_set, train_config, test_set or None)
    for m in metrics:
        _log(
            f"epoch {m.epoch} {m.split}: loss={m.loss:.4f} acc={m.accuracy:.4f} "
            f"({m.seconds:.2f}s)"
        )
    os.makedirs(config.out, exist_ok=True)
    save_checkpoint(model, config.checkpoint)
    _write_text(os.path.join(config.out, "metrics.csv"), metrics_to_csv(metrics))
    baseline = prior_baseline_accuracy(class_priors(examples))
    print(f"random_guessing_accuracy,{baseline!r}")
    return 0


def cmd_eval(config: RunConfig) -> int:
    model = _load_model(config)
    _, _, examples = _load_examples(config)
    train_set, test_set = split(examples, config.test_fraction, config.seed)
    print("split,loss,accuracy")
    m = evaluate(model, train_set, split="train")
    print(f"train,{m.loss!r},{m.accuracy!r}")
    if test_set:
        m = evaluate(model, test_set, split="test")
        print(f"test,{m.loss!r},{m.accuracy!r}")
    return 0


def _load_model(config: RunConfig) -> DeepSentimentModel:
    if not os.path.exists(config.checkpoint):
        raise CheckpointError(f"checkpoint not found: {config.checkpoint}")
    return load_checkpoint(config.checkpoint)


def _neutral_image(examples) -> np.ndarray:
    if examples[0].image_input.ndim == 3:
        return mean_image(examples)
    return np.mean([ex.image_input for ex in examples], axis=0)


def cmd_probe(config: RunConfig) -> int:
    model = _load_model(config)
    table, _, examples = _load_examples(config)
    ranking = word_frequencies(ex.tokens for ex in examples)
    result = analysis.top_words(
        model, table, _neutral_image(examples), ranking, n_words=config.n_words, k=config.top_k
    )
    _write_text(os.path.join(config.out, "topwords.json"), analysis.topwords_to_json(result))
    _log(f"probe: scored {min(config.n_words, len(ranking))} words")
    return 0


def cmd_cluster(config: RunConfig) -> int:
    model = _load_model(config)
    _, _, examples = _load_examples(config)
    posteriors = analysis.posterior_matrix(model, examples)
    corr = analysis.correlation_matrix(posteriors)
    dendro = analysis.hierarchical_cluster(analysis.to_distance(corr), linkage=config.linkage)
    _write_text(os.path.join(config.out, "corr.csv"), analysis.correlation_to_csv(corr))
    _write_text(os.path.join(config.out, "dendrogram.json"), analysis.dendrogram_to_json(dendro))
    _write_text(
        os.path.join(config.out, "dendrogram.svg"),
        svgplot.dendrogram_svg(dendro, list(EMOTION_WORDS)),
    )
    _log(f"cluster: {len(dendro.merges)} merges")
    return 0


def cmd_pca(config: RunConfig) -> int:
    if config.n_components < 2:
        raise ConfigError("the pca command needs n_components >= 2 for the scatter plot")
    model = _load_model(config)
    _, _, examples = _load_examples(config)
    posteriors = analysis.posterior_matrix(model, examples)
    result = analysis.pca(posteriors, config.n_components, standardize=config.pca_standardize)
    _write_text(os.path.join(config.out, "pca.csv"), analysis.pca_to_csv(result))
    _write_text(
        os.path.join(config.out, "scores.csv"),
        analysis.scores_to_csv(result.scores, [ex.id for ex in examples], posteriors.argmax(axis=1)),
    )
    _write_text(
        os.path.join(config.out, "pca_scatter.svg"),
        svgplot.pca_scatter_svg(
            result.scores,
            posteriors.argmax(axis=1),
            list(EMOTION_WORDS),
            result.loadings,
            list(EMOTION_WORDS),
        ),
    )
    _write_text(os.path.join(config.out, "scree.svg"), svgplot.scree_svg(result.ratios))
    _log("pca: ratios " + ", ".join(f"{float(r):.4f}" for r in result.ratios))
    return 0


def cmd_oasis(config: RunConfig) -> int:
    _require_paths(config, "ratings")
    model = _load_model(config)
    table, features, examples = _load_examples(config)
    with open(config.ratings, encoding="utf-8") as fh:
        ratings = analysis.read_ratings_csv(fh)
    if features is None:
        raise ConfigError("the oasis command needs a features file for the rated items")
    items = []
    for item_id in ratings.ids:
        if item_id not in features:
            raise ConfigError(f"rated item {item_id!r} has no feature vector")
        # rated-image ids carry their class word before the first underscore,
        # e.g. "dog_032" is the image of a dog
        word = item_id.split("_", 1)[0].lower()
        items.append(analysis.RatedItem(item_id, features[item_id], word))
    posteriors = analysis.posterior_matrix(model, examples)
    fitted = analysis.pca(posteriors, config.n_components, standardize=config.pca_standardize)
    _, scores = analysis.oasis_protocol(model, table, items, fitted)
    corr = analysis.scale_correlations(scores, ratings)
    _write_text(os.path.join(config.out, "scale_corr.csv"), analysis.scale_correlations_to_csv(corr))
    _log(f"oasis: {len(items)} rated items against {config.n_components} components")
    return 0


def cmd_gradcheck(config: RunConfig, corrupt: bool = False) -> int:
    results = run_gradcheck(corrupt=corrupt)
    print("component,parameter,max_rel_error")
    for component, name, err in results:
        print(f"{component},{name},{err:.3e}")
    worst = max(results, key=lambda row: row[2])
    if worst[2] >= THRESHOLD:
        _log(f"gradcheck FAILED: {worst[0]}/{worst[1]} error {worst[2]:.3e} >= {THRESHOLD}")
        return EXIT_GRADCHECK
    _log(f"gradcheck ok: worst {worst[0]}/{worst[1]} error {worst[2]:.3e}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emofuse",
        description="Multimodal emotion classifier: data filtering, training and analyses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "train", "eval", "probe", "cluster", "pca", "oasis", "gradcheck"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--mode", choices=MODES, help="override the model mode")
        if name == "gradcheck":
            p.add_argument("--inject-gradient-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        overrides = {"seed": args.seed, "out": args.out, "mode": args.mode}
        config = build_run_config(file_values, overrides)
        if args.command == "ingest":
            return cmd_ingest(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "eval":
            return cmd_eval(config)
        if args.command == "probe":
            return cmd_probe(config)
        if args.command == "cluster":
            return cmd_cluster(config)
        if args.command == "pca":
            return cmd_pca(config)
        if args.command == "oasis":
            return cmd_oasis(config)
        if args.command == "gradcheck":
            return cmd_gradcheck(config, corrupt=getattr(args, "inject_gradient_fault", False))
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except CheckpointError as exc:
        _log(f"checkpoint error: {exc}")
        return EXIT_CHECKPOINT
    except TrainingError as exc:
        _log(f"training error: {exc}")
        return EXIT_TRAINING
    except (ParseError, OSError) as exc:
        _log(f"I/O error: {exc}")
        return EXIT_IO
    except (ValueError, ArithmeticError) as exc:
        _log(f"analysis error: {exc}")
        return EXIT_ANALYSIS


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
