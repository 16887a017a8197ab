"""Embedding extraction and exact t-SNE projection.

Embeddings are the 32-d final GRU state (the dense head's input) taken
per 5-second segment in inference mode. The t-SNE here is the exact
O(N^2) variant: per-point sigma from a binary search on entropy,
symmetrized joint P, Student-t low-dimensional kernel, gradient descent
with gains, momentum switch at iteration 250, and early exaggeration.
Desk-scale N keeps this affordable and the gradient directly testable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import build_variant
from .errors import DegenerateDistances, TooFewPoints
from .features import load_item_features
from .model import forward_batch
from .nnet import RngStream


@dataclass
class EmbeddingSet:
    vectors: np.ndarray = field(repr=False)
    song_ids: list = field(default_factory=list)
    segments: list = field(default_factory=list)
    artists: list = field(default_factory=list)

    def __post_init__(self):
        n = self.vectors.shape[0]
        if not (len(self.song_ids) == len(self.segments) == len(self.artists) == n):
            raise ValueError("metadata length must match the number of rows")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("non-finite embedding rows")

    def __len__(self):
        return self.vectors.shape[0]


def extract_embeddings(checkpoint, manifest, cache_dir, split: str = "test",
                       batch_size: int = 16) -> EmbeddingSet:
    """One embedding row per cached 5-s mixture segment of one split.

    ``checkpoint`` only needs ``params`` and ``stats`` attributes.  Rows come
    out in item then segment order, so a rerun is bit-identical.
    """
    params, stats = checkpoint.params, checkpoint.stats
    items = build_variant(manifest, "origin").items(split)
    needs_melody = params.spec.n_branches == 2
    rows = []
    song_ids, segments, artists = [], [], []
    for item in items:
        mel, melody = load_item_features(cache_dir, item)
        if mel.shape[0] == 0:
            continue
        mel = stats.apply(mel) if stats is not None else mel
        for start in range(0, mel.shape[0], batch_size):
            mb = mel[start:start + batch_size]
            yb = melody[start:start + batch_size] if needs_melody else None
            _, embedding, _ = forward_batch(params, mb, yb, training=False)
            rows.append(embedding)
            for j in range(mb.shape[0]):
                song_ids.append(item.song_id)
                segments.append(start + j)
                artists.append(item.artist)
    if not rows:
        vectors = np.zeros((0, params.spec.gru_hidden), dtype=np.float32)
    else:
        vectors = np.concatenate(rows, axis=0)
    return EmbeddingSet(vectors, song_ids, segments, artists)


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    s = np.sum(x * x, axis=1)
    d = s[:, None] + s[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_entropy_and_p(d_row: np.ndarray, beta: float):
    """Shannon entropy (nats) and probabilities for one conditional row."""
    p = np.exp(-d_row * beta)
    total = p.sum()
    if total <= 0:
        return 0.0, p
    h = np.log(total) + beta * float(d_row @ p) / total
    return h, p / total

def conditional_p(points: np.ndarray, perplexity: float,
                  tol: float = 1e-5, max_iter: int = 100) -> np.ndarray:
    """Row-stochastic conditional P with per-row entropy ln(perplexity).

    beta = 1/(2 sigma^2) per row is found by expanding then bisecting a
    bracket until the entropy matches within ``tol`` (log space).
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    d = _pairwise_sq_dists(x)
    if np.all(d == 0):
        raise DegenerateDistances("all pairwise distances are zero")
    target = np.log(perplexity)
    p_matrix = np.zeros((n, n), dtype=np.float64)
    mask = ~np.eye(n, dtype=bool)
    for i in range(n):
        d_row = d[i][mask[i]]
        beta, lo, hi = 1.0, 0.0, np.inf
        h, p = _row_entropy_and_p(d_row, beta)
        for _ in range(max_iter):
            if abs(h - target) < tol:
                break
            if h > target:      # too flat: raise beta (narrow the kernel)
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (lo + beta) / 2.0
            h, p = _row_entropy_and_p(d_row, beta)
        p_matrix[i][mask[i]] = p
    return p_matrix


def joint_p(points: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized joint distribution used by the t-SNE objective."""
    cond = conditional_p(points, perplexity)
    p = (cond + cond.T) / (2.0 * cond.shape[0])
    return np.maximum(p, 1e-12)


def kl_and_grad(p: np.ndarray, y: np.ndarray):
    """KL(P || Q) and its gradient w.r.t. the 2-D layout ``y``."""
    d = _pairwise_sq_dists(y)
    num = 1.0 / (1.0 + d)
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), 1e-12)
    kl = float(np.sum(p * np.log(p / q)))
    pq_num = (p - q) * num
    grad = 4.0 * ((np.diag(pq_num.sum(axis=1)) - pq_num) @ y)
    return kl, grad


def tsne(points: np.ndarray, perplexity: float = 30.0, iters: int = 1000,
         seed: int = 0, eta: float = 200.0,
         exaggeration: float = 12.0, exaggeration_iters: int = 250,
         momentum_switch: int = 250) -> np.ndarray:
    """Exact t-SNE projection to 2-D; deterministic given the seed."""
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if n < 3 * perplexity + 1:
        raise TooFewPoints(
            f"need at least {int(3 * perplexity + 1)} points for "
            f"perplexity {perplexity}, got {n}")
    p = joint_p(x, perplexity)
    stream = RngStream(seed, "tsne-init")
    y = stream.normal((n, 2)).astype(np.float64) * 1e-4
    inc = np.zeros_like(y)
    gains = np.ones_like(y)
    for it in range(iters):
        p_eff = p * exaggeration if it < exaggeration_iters else p
        _, grad = kl_and_grad(p_eff, y)
        momentum = 0.5 if it < momentum_switch else 0.8
        flipped = np.sign(grad) != np.sign(inc)
        gains = np.where(flipped, gains + 0.2, gains * 0.8)
        np.maximum(gains, 0.01, out=gains)
        inc = momentum * inc - eta * gains * grad
        y += inc
        y -= y.mean(axis=0)
    y -= y.mean(axis=0)
    return y


def write_embedding_csv(embeddings: EmbeddingSet, layout: np.ndarray, path) -> None:
    """CSV `song_id,segment,artist,x,y` pairing metadata with the layout."""
    if layout.shape[0] != len(embeddings):
        raise ValueError("layout rows must match embedding rows")
    lines = ["song_id,segment,artist,x,y"]
    for i in range(len(embeddings)):
        lines.append(f"{embeddings.song_ids[i]},{embeddings.segments[i]},"
                     f"{embeddings.artists[i]},{layout[i, 0]:.6f},{layout[i, 1]:.6f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
