"""Post ingestion, tag-based labeling, filtering, priors and splitting.

The label set is the fixed 15-emotion list below; class indices are part of
every serialized artifact and must never be reordered.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .embeddings import (
    DEFAULT_MAX_LEN,
    EmbeddedSequence,
    EmbeddingTable,
    encode_text,
    english_fraction,
    tokenize,
)
from .errors import ParseError


class Emotion(enum.IntEnum):
    HAPPY = 0
    CALM = 1
    SAD = 2
    SCARED = 3
    BORED = 4
    ANGRY = 5
    ANNOYED = 6
    LOVE = 7
    EXCITED = 8
    SURPRISED = 9
    OPTIMISTIC = 10
    AMAZED = 11
    ASHAMED = 12
    DISGUSTED = 13
    PENSIVE = 14

    @property
    def word(self) -> str:
        return self.name.lower()


EMOTION_WORDS = tuple(e.word for e in Emotion)
N_EMOTIONS = len(Emotion)

# Tag counts for the 2011-2017 Tumblr crawl this pipeline models, with the
# fraction surviving the text filter and the text+image filter. Used for the
# reference class priors and the random-guessing baseline.
REFERENCE_TAG_STATS: dict[Emotion, tuple[int, float, float]] = {
    Emotion.HAPPY: (189_841, 0.62, 0.29),
    Emotion.CALM: (139_911, 0.37, 0.29),
    Emotion.SAD: (124_900, 0.53, 0.15),
    Emotion.SCARED: (104_161, 0.65, 0.20),
    Emotion.BORED: (101_856, 0.54, 0.29),
    Emotion.ANGRY: (100_033, 0.60, 0.21),
    Emotion.ANNOYED: (72_993, 0.78, 0.10),
    Emotion.LOVE: (66_146, 0.61, 0.39),
    Emotion.EXCITED: (37_240, 0.58, 0.41),
    Emotion.SURPRISED: (18_322, 0.47, 0.32),
    Emotion.OPTIMISTIC: (16_111, 0.64, 0.36),
    Emotion.AMAZED: (10_367, 0.61, 0.35),
    Emotion.ASHAMED: (10_066, 0.63, 0.22),
    Emotion.DISGUSTED: (9_178, 0.69, 0.17),
    Emotion.PENSIVE: (8_409, 0.57, 0.34),
}


@dataclass
class Post:
    id: str
    text: str
    tags: list[str]
    image_path: str | None = None
    feature_id: str | None = None
    timestamp: str | None = None


@dataclass
class Rejection:
    reason: str  # "no-emotion" or "multiple-emotions"


@dataclass
class LabeledExample:
    id: str
    embedded_text: EmbeddedSequence
    image_input: np.ndarray  # (H, W, 3) pixels in [0,1] or a 1-d feature vector
    label: Emotion
    tokens: list[str] = field(default_factory=list)
    feature_id: str | None = None
    image_path: str | None = None


@dataclass
class ClassPriors:
    counts: np.ndarray  # per-emotion counts (float64: derived counts may be fractional)
    proportions: np.ndarray


@dataclass
class FilterReport:
    """Per-stage drop counts for one run of the filter pipeline."""

    total_posts: int = 0
    dropped: dict[str, int] = field(
        default_factory=lambda: {
            "no_emotion": 0,
            "multiple_emotions": 0,
            "non_english": 0,
            "no_image": 0,
        }
    )
    kept: int = 0
    # emotion word -> [labeled, survived text filter, survived text+image filter]
    per_emotion: dict[str, list[int]] = field(
        default_factory=lambda: {w: [0, 0, 0] for w in EMOTION_WORDS}
    )

    def to_json(self) -> str:
        return json.dumps(
            {
                "total_posts": self.total_posts,
                "dropped": self.dropped,
                "kept": self.kept,
                "per_emotion": self.per_emotion,
            },
            indent=2,
        )


def ingest(lines: Iterable[str]) -> tuple[list[Post], list[tuple[int, str]]]:
    """Parse a JSON-lines post stream.

    Malformed lines are skipped and reported as (line_number, message); the
    run continues. Duplicate post ids count as malformed.
    """
    posts: list[Post] = []
    errors: list[tuple[int, str]] = []
    seen_ids: set[str] = set()
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            errors.append((lineno, "blank line"))
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            errors.append((lineno, f"invalid JSON: {exc.msg}"))
            continue
        if not isinstance(obj, dict):
            errors.append((lineno, "not a JSON object"))
            continue
        problem = _validate_post_obj(obj)
        if problem:
            errors.append((lineno, problem))
            continue
        if obj["id"] in seen_ids:
            errors.append((lineno, f"duplicate post id {obj['id']!r}"))
            continue
        seen_ids.add(obj["id"])
        posts.append(
            Post(
                id=obj["id"],
                text=obj["text"],
                tags=list(obj["tags"]),
                image_path=obj.get("image_path"),
                feature_id=obj.get("feature_id"),
                timestamp=obj.get("timestamp"),
            )
        )
    return posts, errors


def _validate_post_obj(obj: dict) -> str | None:
    for key, kind in (("id", str), ("text", str), ("tags", list)):
        if key not in obj:
            return f"missing field {key!r}"
        if not isinstance(obj[key], kind):
            return f"field {key!r} must be {kind.__name__}"
    if not obj["id"]:
        return "empty id"
    if not all(isinstance(t, str) for t in obj["tags"]):
        return "tags must be strings"
    for key in ("image_path", "feature_id", "timestamp"):
        if obj.get(key) is not None and not isinstance(obj[key], str):
            return f"field {key!r} must be a string"
    return None


def assign_label(post: Post) -> Emotion | Rejection:
    """Case-insensitive exact match of tags against the 15 emotion words.

    Exactly one matching emotion labels the post; zero or several reject it.
    """
    found = {tag.lower() for tag in post.tags} & set(EMOTION_WORDS)
    if len(found) == 1:
        return Emotion(EMOTION_WORDS.index(next(iter(found))))
    return Rejection("no-emotion" if not found else "multiple-emotions")


def remove_label_word(text: str, label: Emotion) -> str:
    """Delete whole whitespace tokens equal to the label word (case-insensitive)."""
    word = label.word
    kept = [tok for tok in text.split() if tok.lower() != word]
    return " ".join(kept)


def _image_input_kind(arr: np.ndarray) -> str:
    if arr.ndim == 1:
        return "features"
    if arr.ndim == 3 and arr.shape[2] == 3:
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("pixel values outside [0, 1]")
        return "pixels"
    raise ValueError(f"unsupported image input shape {arr.shape}")


def _resolve_image(
    post: Post,
    features: dict[str, np.ndarray] | None,
    load_pixels: Callable[[str], np.ndarray | None] | None,
) -> np.ndarray | None:
    if post.feature_id is not None and features is not None:
        vec = features.get(post.feature_id)
        if vec is not None:
            return vec
    if post.image_path is not None and load_pixels is not None:
        try:
            return load_pixels(post.image_path)
        except FileNotFoundError:
            return None
    return None


def filter_dataset(
    posts: Iterable[Post],
    table: EmbeddingTable,
    *,
    features: dict[str, np.ndarray] | None = None,
    load_pixels: Callable[[str], np.ndarray | None] | None = None,
    max_len: int = DEFAULT_MAX_LEN,
) -> tuple[list[LabeledExample], FilterReport]:
    """Run the fixed pipeline: label, strip label word, tokenize, drop posts
    under 50% in-vocabulary words, drop posts without an image, encode."""
    report = FilterReport()
    examples: list[LabeledExample] = []
    for post in posts:
        report.total_posts += 1
        label = assign_label(post)
        if isinstance(label, Rejection):
            key = "no_emotion" if label.reason == "no-emotion" else "multiple_emotions"
            report.dropped[key] += 1
            continue
        row = report.per_emotion[label.word]
        row[0] += 1
        cleaned = remove_label_word(post.text, label)
        tokens = tokenize(cleaned)
        if english_fraction(tokens, table) < 0.5:
            report.dropped["non_english"] += 1
            continue
        row[1] += 1
        image = _resolve_image(post, features, load_pixels)
        if image is None:
            report.dropped["no_image"] += 1
            continue
        _image_input_kind(image)
        row[2] += 1
        report.kept += 1
        examples.append(
            LabeledExample(
                id=post.id,
                embedded_text=encode_text(tokens, table, max_len),
                image_input=np.asarray(image, dtype=np.float64),
                label=label,
                tokens=tokens.tokens,
                feature_id=post.feature_id,
                image_path=post.image_path,
            )
        )
    return examples, report


def class_priors(examples: list[LabeledExample]) -> ClassPriors:
    if not examples:
        raise ValueError("cannot compute priors of an empty dataset")
    counts = np.zeros(N_EMOTIONS, dtype=np.float64)
    for ex in examples:
        counts[int(ex.label)] += 1.0
    return ClassPriors(counts, counts / counts.sum())


def reference_filtered_priors() -> ClassPriors:
    """Class priors implied by the reference crawl after the text+image filter."""
    counts = np.zeros(N_EMOTIONS, dtype=np.float64)
    for emotion, (posts, _text_frac, both_frac) in REFERENCE_TAG_STATS.items():
        counts[int(emotion)] = posts * both_frac
    return ClassPriors(counts, counts / counts.sum())


def prior_baseline_accuracy(priors: ClassPriors) -> float:
    """Expected accuracy of guesses sampled from the class priors (sum of p^2)."""
    p = priors.proportions
    return float(np.dot(p, p))


def mean_image(examples: list[LabeledExample]) -> np.ndarray:
    """Element-wise mean of all pixel inputs (each channel independently)."""
    if not examples:
        raise ValueError("mean_image needs at least one example")
    acc = None
    for ex in examples:
        if ex.image_input.ndim != 3:
            raise ValueError("mean_image requires a pixel dataset (found feature inputs)")
        acc = ex.image_input.copy() if acc is None else acc + ex.image_input
    return acc / len(examples)


def split(
    examples: list[LabeledExample], test_fraction: float, seed: int
) -> tuple[list[LabeledExample], list[LabeledExample]]:
    """Seeded stratified split; per-class test share is within one example of
    test_fraction. Classes with fewer than 2 examples go entirely to train."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = {}
    for idx, ex in enumerate(examples):
        by_class.setdefault(int(ex.label), []).append(idx)
    test_idx: set[int] = set()
    for label in sorted(by_class):
        idxs = by_class[label]
        if len(idxs) < 2:
            warnings.warn(
                f"class {Emotion(label).word!r} has {len(idxs)} example(s); keeping all in train"
            )
            continue
        n_test = int(round(len(idxs) * test_fraction))
        n_test = min(max(n_test, 0), len(idxs) - 1)
        order = rng.permutation(len(idxs))
        test_idx.update(idxs[i] for i in order[:n_test])
    train = [ex for i, ex in enumerate(examples) if i not in test_idx]
    test = [ex for i, ex in enumerate(examples) if i in test_idx]
    return train, test


# ---------------------------------------------------------------------------
# File formats


def save_dataset(examples: list[LabeledExample], path):
    """Write the filtered dataset as JSON lines (tokens + image reference).

    Embeddings and image values are not stored; loading re-encodes text and
    re-resolves images, both of which are deterministic.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            obj = {"id": ex.id, "label": ex.label.word, "tokens": ex.tokens}
            if ex.feature_id is not None:
                obj["feature_id"] = ex.feature_id
            if ex.image_path is not None:
                obj["image_path"] = ex.image_path
            fh.write(json.dumps(obj) + "\n")


def load_dataset(
    path,
    table: EmbeddingTable,
    *,
    features: dict[str, np.ndarray] | None = None,
    load_pixels: Callable[[str], np.ndarray | None] | None = None,
    max_len: int = DEFAULT_MAX_LEN,
) -> list[LabeledExample]:
    examples: list[LabeledExample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                obj = json.loads(raw)
                label = Emotion(EMOTION_WORDS.index(obj["label"]))
                tokens = list(obj["tokens"])
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ParseError(f"bad dataset record: {exc}", line=lineno) from exc
            post = Post(
                id=obj["id"],
                text="",
                tags=[],
                image_path=obj.get("image_path"),
                feature_id=obj.get("feature_id"),
            )
            image = _resolve_image(post, features, load_pixels)
            if image is None:
                raise ParseError(f"unresolvable image for post {obj['id']!r}", line=lineno)
            examples.append(
                LabeledExample(
                    id=obj["id"],
                    embedded_text=encode_text(tokens, table, max_len),
                    image_input=np.asarray(image, dtype=np.float64),
                    label=label,
                    tokens=tokens,
                    feature_id=post.feature_id,
                    image_path=post.image_path,
                )
            )
    return examples


def parse_feature_file(lines: Iterable[str]) -> dict[str, np.ndarray]:
    """Parse `<feature_id> <f1> ... <fD>` lines; D is fixed by the first line."""
    dim = None
    features: dict[str, np.ndarray] = {}
    n_lines = 0
    for lineno, raw in enumerate(lines, start=1):
        n_lines = lineno
        parts = raw.split()
        if not parts:
            raise ParseError("empty feature line", line=lineno)
        fid = parts[0]
        if dim is None:
            dim = len(parts) - 1
            if dim < 1:
                raise ParseError("first line has no feature values", line=lineno)
        if len(parts) - 1 != dim:
            raise ParseError(
                f"expected {dim} values for {fid!r}, got {len(parts) - 1}", line=lineno
            )
        try:
            features[fid] = np.array([float(x) for x in parts[1:]], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(f"bad float for {fid!r}: {exc}", line=lineno) from exc
    if n_lines == 0:
        raise ParseError("empty feature file", line=1)
    return features


def load_feature_file(path) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        return parse_feature_file(fh)


def read_image(path) -> np.ndarray:
    """Read a pre-decoded image: .npy raster or binary PPM (P6), as [0,1] floats."""
    path = str(path)
    if path.endswith(".npy"):
        arr = np.load(path)
        if arr.dtype == np.uint8:
            arr = arr.astype(np.float64) / 255.0
        arr = np.asarray(arr, dtype=np.float64)
        _image_input_kind(arr)
        return arr
    if path.endswith(".ppm"):
        return _read_ppm(path)
    raise ValueError(f"unsupported image format: {path}")


def _read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"not a binary PPM file: {path}")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if not 0 < maxval <= 255:
        raise ValueError(f"unsupported PPM maxval {maxval} (one byte per sample only)")
    pos += 1  # single whitespace after maxval
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=pos)
    return raster.reshape(height, width, 3).astype(np.float64) / maxval
