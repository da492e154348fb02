"""Deterministic synthetic corpora for demos, gradient checks and tests.

Every generator takes an explicit seed. The multimodal corpus plants a
separable class signal in both modalities: each class has a trigger word that
appears in its texts and a feature-space direction its image features sit on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import Emotion, Post
from .embeddings import EmbeddingTable


@dataclass
class SynthCorpus:
    posts: list[Post]
    features: dict[str, np.ndarray]
    table: EmbeddingTable
    emotions: list[Emotion]
    trigger_words: list[str]
    embed_dim: int
    feature_dim: int


def make_embedding_table(
    words: list[str], dim: int, rng: np.random.Generator, scale: float = 1.0
) -> EmbeddingTable:
    entries = {}
    for word in words:
        vec = rng.normal(0.0, scale, dim)
        vec.flags.writeable = False
        entries[word] = vec
    return EmbeddingTable(dim, entries)


def make_multimodal_corpus(
    n_per_class: int = 16,
    n_classes: int = 4,
    embed_dim: int = 12,
    feature_dim: int = 8,
    n_filler: int = 30,
    text_len: int = 6,
    seed: int = 0,
) -> SynthCorpus:
    """Posts with one emotion tag each, trigger-word texts and class-direction
    image features. All posts survive the filter pipeline."""
    if feature_dim < n_classes:
        raise ValueError("feature_dim must be >= n_classes")
    rng = np.random.default_rng(seed)
    emotions = [Emotion(i) for i in range(n_classes)]
    fillers = [f"filler{i:02d}" for i in range(n_filler)]
    triggers = [f"signal{e.word}" for e in emotions]
    # trigger embeddings get 3x magnitude so the text signal stays salient at
    # any position in the sequence
    table = make_embedding_table(fillers, embed_dim, rng)
    entries = dict(table.entries)
    for word, vec in make_embedding_table(triggers, embed_dim, rng, scale=3.0).entries.items():
        entries[word] = vec
    table = EmbeddingTable(embed_dim, entries)
    posts: list[Post] = []
    features: dict[str, np.ndarray] = {}
    idx = 0
    for emotion, trigger in zip(emotions, triggers):
        for _ in range(n_per_class):
            words = [trigger] + list(rng.choice(fillers, size=text_len - 1, replace=True))
            rng.shuffle(words)
            fid = f"f{idx:04d}"
            posts.append(
                Post(
                    id=f"p{idx:04d}",
                    text=" ".join(words),
                    tags=[emotion.word, "daily"],
                    feature_id=fid,
                )
            )
            vec = rng.normal(0.0, 0.4, feature_dim)
            vec[int(emotion)] += 2.5
            features[fid] = vec
            idx += 1
    return SynthCorpus(posts, features, table, emotions, triggers, embed_dim, feature_dim)


def make_noisy_corpus(seed: int = 0, n_clean: int = 40) -> tuple[list[Post], dict, EmbeddingTable, dict[str, int]]:
    """A corpus with planted drop causes; returns the expected per-stage drops."""
    base = make_multimodal_corpus(n_per_class=n_clean // 4, seed=seed)
    rng = np.random.default_rng(seed + 1)
    posts = list(base.posts)
    plan = {"no_emotion": 5, "multiple_emotions": 4, "non_english": 6, "no_image": 3}
    idx = len(posts)
    for _ in range(plan["no_emotion"]):
        posts.append(Post(id=f"x{idx:04d}", text="filler00 filler01", tags=["travel"], feature_id="f0000"))
        idx += 1
    for _ in range(plan["multiple_emotions"]):
        posts.append(
            Post(id=f"x{idx:04d}", text="filler00 filler01", tags=["happy", "sad"], feature_id="f0000")
        )
        idx += 1
    for _ in range(plan["non_english"]):
        posts.append(
            Post(id=f"x{idx:04d}", text="zzqy qqzz xq yy", tags=["happy"], feature_id="f0000")
        )
        idx += 1
    for _ in range(plan["no_image"]):
        posts.append(Post(id=f"x{idx:04d}", text="filler00 filler01 filler02", tags=["happy"]))
        idx += 1
    order = rng.permutation(len(posts))
    posts = [posts[i] for i in order]
    return posts, base.features, base.table, plan


def plant_ratings(
    primary_scores: np.ndarray, rho_valence: float, rho_arousal: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Ratings whose sample Pearson correlation with primary_scores is exactly
    (rho_valence, rho_arousal), built by Gram-Schmidt against the scores."""
    s = np.asarray(primary_scores, dtype=np.float64)
    n = s.shape[0]
    if n < 3:
        raise ValueError("need at least 3 scores to plant correlations")
    s_hat = s - s.mean()
    s_hat /= np.sqrt((s_hat * s_hat).sum())
    rng = np.random.default_rng(seed)

    def orthogonal_noise() -> np.ndarray:
        e = rng.normal(0.0, 1.0, n)
        e -= e.mean()
        e -= (e @ s_hat) * s_hat
        return e / np.sqrt((e * e).sum())

    valence = rho_valence * s_hat + np.sqrt(1.0 - rho_valence**2) * orthogonal_noise()
    arousal = rho_arousal * s_hat + np.sqrt(1.0 - rho_arousal**2) * orthogonal_noise()
    # affine scaling leaves Pearson r untouched; rough 1..7 rating scale
    return 4.0 + 3.0 * valence / np.abs(valence).max(), 4.0 + 3.0 * arousal / np.abs(arousal).max()


def posts_to_jsonl(posts: list[Post]) -> str:
    lines = []
    for post in posts:
        obj = {"id": post.id, "text": post.text, "tags": post.tags}
        if post.image_path is not None:
            obj["image_path"] = post.image_path
        if post.feature_id is not None:
            obj["feature_id"] = post.feature_id
        if post.timestamp is not None:
            obj["timestamp"] = post.timestamp
        lines.append(json.dumps(obj))
    return "\n".join(lines) + "\n"


def features_to_text(features: dict[str, np.ndarray]) -> str:
    lines = []
    for fid, vec in features.items():
        lines.append(fid + " " + " ".join(repr(float(x)) for x in vec))
    return "\n".join(lines) + "\n"


def write_corpus(corpus: SynthCorpus, out_dir) -> dict[str, str]:
    """Write posts.jsonl, embeddings.txt and features.txt; returns the paths."""
    import os

    from .embeddings import serialize_embedding_table

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "posts": os.path.join(out_dir, "posts.jsonl"),
        "embeddings": os.path.join(out_dir, "embeddings.txt"),
        "features": os.path.join(out_dir, "features.txt"),
    }
    with open(paths["posts"], "w", encoding="utf-8") as fh:
        fh.write(posts_to_jsonl(corpus.posts))
    with open(paths["embeddings"], "w", encoding="utf-8") as fh:
        fh.write(serialize_embedding_table(corpus.table))
    with open(paths["features"], "w", encoding="utf-8") as fh:
        fh.write(features_to_text(corpus.features))
    return paths
