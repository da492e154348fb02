"""Emotion-structure analyses over model posteriors.

Four families: the single-word probe against a neutral image, the posterior
correlation matrix with hierarchical clustering, principal component analysis
of the posteriors, and correlation of component scores with external
valence/arousal ratings.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .dataset import EMOTION_WORDS, N_EMOTIONS, Emotion, LabeledExample
from .embeddings import EmbeddingTable, encode_text
from .errors import ConfigError, DimensionError
from .model import DeepSentimentModel, forward


def posterior_matrix(model: DeepSentimentModel, examples: list[LabeledExample]) -> np.ndarray:
    """Stack forward() over the dataset, one row per example in dataset order."""
    if not examples:
        raise ValueError("cannot build a posterior matrix from an empty dataset")
    rows = np.zeros((len(examples), N_EMOTIONS))
    for i, example in enumerate(examples):
        try:
            rows[i] = forward(model, example)
        except Exception as exc:
            raise type(exc)(f"{exc} (example {example.id!r})") from exc
    return rows


def correlation_matrix(posteriors: np.ndarray) -> np.ndarray:
    """Pearson correlation of every posterior column pair.

    Zero-variance columns get 0 off-diagonal and 1 on the diagonal, with a
    warning. The result is exactly symmetric with an exact unit diagonal.
    """
    p = np.asarray(posteriors, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 2:
        raise ValueError("correlation_matrix needs at least 2 rows")
    centered = p - p.mean(axis=0)
    norms = np.sqrt((centered * centered).sum(axis=0))
    dead = norms == 0.0
    if dead.any():
        names = [EMOTION_WORDS[i] for i in np.flatnonzero(dead) if i < N_EMOTIONS]
        warnings.warn(f"zero-variance posterior columns: {names or np.flatnonzero(dead).tolist()}")
    safe = np.where(dead, 1.0, norms)
    z = centered / safe
    corr = z.T @ z
    corr = (corr + corr.T) / 2.0
    np.clip(corr, -1.0, 1.0, out=corr)
    corr[dead, :] = 0.0
    corr[:, dead] = 0.0
    np.fill_diagonal(corr, 1.0)
    return corr


def to_distance(corr: np.ndarray) -> np.ndarray:
    """d = 1 - correlation, with an exactly zero diagonal."""
    dist = 1.0 - np.asarray(corr, dtype=np.float64)
    np.fill_diagonal(dist, 0.0)
    return dist


@dataclass
class Merge:
    a: int
    b: int
    height: float
    new_id: int


@dataclass
class Dendrogram:
    n_leaves: int
    merges: list[Merge]


def hierarchical_cluster(distances: np.ndarray, linkage: str = "average") -> Dendrogram:
    """Agglomerative clustering over a distance matrix.

    Cluster ids: leaves are 0..n-1, each merge creates id n, n+1, ... Ties in
    the minimum distance go to the smallest (a, b) id pair. Average linkage
    uses the running Lance-Williams update.
    """
    if linkage not in ("average", "single", "complete"):
        raise ValueError(f"unknown linkage {linkage!r}")
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] < 2:
        raise ValueError(f"distance matrix must be square with n >= 2, got shape {d.shape}")
    n = d.shape[0]
    if not np.array_equal(d, d.T):
        raise ValueError("distance matrix must be symmetric")
    if np.diagonal(d).any():
        raise ValueError("distance matrix must have a zero diagonal")
    if (d < 0).any():
        raise ValueError("distances must be non-negative")

    pair_dist = {(i, j): float(d[i, j]) for i in range(n) for j in range(i + 1, n)}
    sizes = {i: 1 for i in range(n)}
    active = list(range(n))  # kept in ascending id order
    merges: list[Merge] = []
    next_id = n
    while len(active) > 1:
        best_pair = None
        best = np.inf
        for ai in range(len(active)):
            for bj in range(ai + 1, len(active)):
                pair = (active[ai], active[bj])
                val = pair_dist[pair]
                if val < best:  # strict: first (lexicographically smallest) pair wins ties
                    best = val
                    best_pair = pair
        a, b = best_pair
        merges.append(Merge(a, b, best, next_id))
        for k in active:
            if k == a or k == b:
                continue
            dka = pair_dist[(min(k, a), max(k, a))]
            dkb = pair_dist[(min(k, b), max(k, b))]
            if linkage == "average":
                new = (sizes[a] * dka + sizes[b] * dkb) / (sizes[a] + sizes[b])
            elif linkage == "single":
                new = min(dka, dkb)
            else:
                new = max(dka, dkb)
            pair_dist[(k, next_id)] = new
        sizes[next_id] = sizes[a] + sizes[b]
        active.remove(a)
        active.remove(b)
        active.append(next_id)
        next_id += 1
    return Dendrogram(n, merges)


def _jacobi_eigh(matrix: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60):
    """Cyclic Jacobi rotations on a symmetric matrix until the off-diagonal
    norm drops below tol. Returns (eigenvalues, eigenvector columns)."""
    a = np.asarray(matrix, dtype=np.float64).copy()
    n = a.shape[0]
    vecs = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2.0)
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                app, aqq = a[p, p], a[q, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = a[q, p] = 0.0
                for k in range(n):
                    if k == p or k == q:
                        continue
                    akp, akq = a[k, p], a[k, q]
                    a[k, p] = a[p, k] = c * akp - s * akq
                    a[k, q] = a[q, k] = s * akp + c * akq
                vp = vecs[:, p].copy()
                vq = vecs[:, q].copy()
                vecs[:, p] = c * vp - s * vq
                vecs[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("Jacobi eigensolver did not converge")
    return np.diagonal(a).copy(), vecs


@dataclass
class PcaResult:
    loadings: np.ndarray  # (n_vars, n_components), orthonormal columns
    ratios: np.ndarray    # explained variance ratios, descending
    means: np.ndarray     # column means used for centering
    scores: np.ndarray    # (n_rows, n_components)
    stds: np.ndarray | None = None  # set when standardize=True


def pca(posteriors: np.ndarray, n_components: int, standardize: bool = False) -> PcaResult:
    """Principal components of the (centered) posterior matrix.

    Covariance uses the n-1 denominator; the eigenproblem is solved with
    cyclic Jacobi rotations. Sign convention: the largest-magnitude entry of
    each loading column is positive.
    """
    p = np.asarray(posteriors, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 2:
        raise ValueError("pca needs at least 2 rows")
    n_vars = p.shape[1]
    if not 1 <= n_components <= n_vars:
        raise ValueError(f"n_components must be in [1, {n_vars}], got {n_components}")
    means = p.mean(axis=0)
    centered = p - means
    stds = None
    if standardize:
        stds = centered.std(axis=0, ddof=1)
        if (stds == 0.0).any():
            warnings.warn("zero-variance columns left unscaled during standardization")
        stds = np.where(stds == 0.0, 1.0, stds)
        centered = centered / stds
    cov = centered.T @ centered / (p.shape[0] - 1)
    cov = (cov + cov.T) / 2.0
    eigenvalues, eigenvectors = _jacobi_eigh(cov)
    eigenvalues = np.maximum(eigenvalues, 0.0)  # covariance is PSD; clamp rounding noise
    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]
    total = eigenvalues.sum()
    if total <= 0.0:
        warnings.warn("posterior matrix has zero total variance")
        ratios_all = np.zeros(n_vars)
    else:
        ratios_all = eigenvalues / total
    loadings = eigenvectors[:, :n_components].copy()
    for j in range(n_components):
        lead = np.argmax(np.abs(loadings[:, j]))
        if loadings[lead, j] < 0.0:
            loadings[:, j] = -loadings[:, j]
    scores = centered @ loadings
    return PcaResult(loadings, ratios_all[:n_components], means, scores, stds)


def project(posteriors: np.ndarray, fitted: PcaResult) -> np.ndarray:
    """Scores of new rows under a fitted PCA (centering and loadings reused)."""
    p = np.asarray(posteriors, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != fitted.means.shape[0]:
        raise DimensionError(
            f"cannot project shape {p.shape} with {fitted.means.shape[0]}-column PCA"
        )
    centered = p - fitted.means
    if fitted.stds is not None:
        centered = centered / fitted.stds
    return centered @ fitted.loadings


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denom == 0.0:
        return float("nan")
    return float((dx * dy).sum() / denom)


@dataclass
class ScaleRatings:
    """Row-aligned mean human ratings on the valence and arousal scales."""

    ids: list[str]
    valence: np.ndarray
    arousal: np.ndarray


def scale_correlations(scores: np.ndarray, ratings: ScaleRatings) -> np.ndarray:
    """Pearson r of each score column against (valence, arousal); undefined
    entries (zero variance) come back as nan with a warning."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != len(ratings.valence):
        raise DimensionError(
            f"scores shape {s.shape} does not align with {len(ratings.valence)} ratings"
        )
    out = np.zeros((s.shape[1], 2))
    for c in range(s.shape[1]):
        out[c, 0] = _pearson(s[:, c], ratings.valence)
        out[c, 1] = _pearson(s[:, c], ratings.arousal)
    if np.isnan(out).any():
        warnings.warn("zero-variance column produced undefined correlations (nan)")
    return out


# ---------------------------------------------------------------------------
# Single-word probe


@dataclass
class WordScore:
    word: str
    score: float
    frequency_rank: int  # 1-based position in the frequency ranking
    oov: bool


def top_words(
    model: DeepSentimentModel,
    table: EmbeddingTable,
    mean_image: np.ndarray,
    word_ranking: list[tuple[str, int]],
    n_words: int = 1000,
    k: int = 10,
) -> dict[Emotion, list[WordScore]]:
    """Score the n_words most frequent words as single-word posts against the
    neutral (mean) image; per emotion, keep the k highest-posterior words.

    Ties go to the better frequency rank (the ranking is already ordered by
    count then lexicographically).
    """
    if model.mode != "multimodal":
        raise ConfigError("the word probe needs a multimodal model")
    words = [w for w, _count in word_ranking[:n_words]]
    scores = np.zeros((len(words), N_EMOTIONS))
    oov = [w not in table for w in words]
    for i, word in enumerate(words):
        probe = LabeledExample(
            id=f"probe:{word}",
            embedded_text=encode_text([word], table, model.max_len),
            image_input=mean_image,
            label=Emotion.HAPPY,  # unused by forward
        )
        scores[i] = forward(model, probe)
    result: dict[Emotion, list[WordScore]] = {}
    for emotion in Emotion:
        ranked = sorted(range(len(words)), key=lambda i: (-scores[i, int(emotion)], i))
        result[emotion] = [
            WordScore(words[i], float(scores[i, int(emotion)]), i + 1, oov[i])
            for i in ranked[:k]
        ]
    return result


# ---------------------------------------------------------------------------
# OASIS-style protocol: image with its single-word label as the whole text


@dataclass
class RatedItem:
    id: str
    image_input: np.ndarray
    label_word: str


def oasis_protocol(
    model: DeepSentimentModel,
    table: EmbeddingTable,
    items: list[RatedItem],
    fitted: PcaResult,
) -> tuple[np.ndarray, np.ndarray]:
    """Posteriors and PCA scores for externally rated items.

    Each item is forwarded with its one-word label as the entire text (OOV
    words simply embed to zero vectors), then projected onto the fitted
    components. Returns (posteriors, scores).
    """
    if model.mode != "multimodal":
        raise ConfigError("the rated-image protocol needs a multimodal model")
    posteriors = np.zeros((len(items), N_EMOTIONS))
    for i, item in enumerate(items):
        try:
            posteriors[i] = forward(
                model,
                LabeledExample(
                    id=item.id,
                    embedded_text=encode_text([item.label_word.lower()], table, model.max_len),
                    image_input=item.image_input,
                    label=Emotion.HAPPY,  # unused by forward
                ),
            )
        except Exception as exc:
            raise type(exc)(f"{exc} (item {item.id!r})") from exc
    return posteriors, project(posteriors, fitted)


# ---------------------------------------------------------------------------
# File formats


def read_ratings_csv(lines: Iterable[str]) -> ScaleRatings:
    """CSV with header item_id,valence,arousal."""
    reader = csv.DictReader(lines)
    ids: list[str] = []
    valence: list[float] = []
    arousal: list[float] = []
    for row in reader:
        ids.append(row["item_id"])
        valence.append(float(row["valence"]))
        arousal.append(float(row["arousal"]))
    return ScaleRatings(ids, np.array(valence), np.array(arousal))


def write_ratings_csv(ratings: ScaleRatings) -> str:
    lines = ["item_id,valence,arousal"]
    for i, item_id in enumerate(ratings.ids):
        lines.append(f"{item_id},{float(ratings.valence[i])!r},{float(ratings.arousal[i])!r}")
    return "\n".join(lines) + "\n"


def topwords_to_json(result: dict[Emotion, list[WordScore]]) -> str:
    obj = {
        emotion.word: [
            {"word": ws.word, "score": ws.score, "frequency_rank": ws.frequency_rank, "oov": ws.oov}
            for ws in scores
        ]
        for emotion, scores in result.items()
    }
    return json.dumps(obj, indent=2) + "\n"


def correlation_to_csv(corr: np.ndarray) -> str:
    lines = ["emotion," + ",".join(EMOTION_WORDS)]
    for i, word in enumerate(EMOTION_WORDS):
        lines.append(word + "," + ",".join(repr(float(v)) for v in corr[i]))
    return "\n".join(lines) + "\n"


def dendrogram_to_json(dendro: Dendrogram) -> str:
    obj = {
        "n_leaves": dendro.n_leaves,
        "leaf_names": list(EMOTION_WORDS[: dendro.n_leaves]),
        "merges": [
            {"a": m.a, "b": m.b, "height": m.height, "new_id": m.new_id} for m in dendro.merges
        ],
    }
    return json.dumps(obj, indent=2) + "\n"


def pca_to_csv(result: PcaResult) -> str:
    n_components = result.loadings.shape[1]
    header = "emotion," + ",".join(f"pc{j + 1}" for j in range(n_components))
    lines = [header]
    for i, word in enumerate(EMOTION_WORDS[: result.loadings.shape[0]]):
        lines.append(word + "," + ",".join(repr(float(v)) for v in result.loadings[i]))
    lines.append("explained_variance_ratio," + ",".join(repr(float(r)) for r in result.ratios))
    return "\n".join(lines) + "\n"


def scores_to_csv(scores: np.ndarray, ids: list[str], posterior_argmax: np.ndarray) -> str:
    n_components = scores.shape[1]
    header = "id," + ",".join(f"pc{j + 1}" for j in range(n_components)) + ",emotion"
    lines = [header]
    for i, row_id in enumerate(ids):
        row = ",".join(repr(float(v)) for v in scores[i])
        lines.append(f"{row_id},{row},{EMOTION_WORDS[int(posterior_argmax[i])]}")
    return "\n".join(lines) + "\n"


def scale_correlations_to_csv(corr: np.ndarray) -> str:
    lines = ["component,valence_r,arousal_r,valence_abs,arousal_abs"]
    for c in range(corr.shape[0]):
        rv, ra = float(corr[c, 0]), float(corr[c, 1])
        lines.append(f"pc{c + 1},{rv!r},{ra!r},{abs(rv)!r},{abs(ra)!r}")
    return "\n".join(lines) + "\n"
