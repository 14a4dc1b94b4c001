"""Similarity, retrieval and posterior-diversity metrics over face embeddings."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import DegenerateBatch, EmptyIdentity, IndexMismatch, KTooLarge

DEFAULT_KS = (1, 2, 5, 10)
KL_EPS = 1e-12


@dataclass
class EmbeddingMatrix:
    """One unit-norm row per identity, in a fixed identity order."""
    rows: np.ndarray
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise IndexMismatch(f"embedding matrix must be 2-D, got shape {self.rows.shape}")
        if not self.ids:
            self.ids = list(range(len(self.rows)))
        if len(self.ids) != len(self.rows):
            raise IndexMismatch("one id per row required")
        norms = np.linalg.norm(self.rows, axis=1)
        if len(norms) and np.max(np.abs(norms - 1.0)) > 1e-6:
            raise ValueError("embedding rows must be unit-norm")

    @property
    def N(self) -> int:
        return len(self.rows)

    @classmethod
    def from_vectors(cls, vectors, ids=None) -> "EmbeddingMatrix":
        v = np.asarray(vectors, dtype=np.float64)
        return cls(v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12), list(ids or []))


def _as_numpy_embeddings(embed, images) -> np.ndarray:
    if isinstance(embed, torch.nn.Module):
        x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
        with torch.no_grad():
            return embed(x).double().numpy()
    return np.asarray(embed(np.asarray(images)), dtype=np.float64)


def build_gt_matrix(faces_by_identity, embed, ids=None) -> EmbeddingMatrix:
    """Average each identity's image embeddings, then re-normalise.

    ``faces_by_identity`` is a sequence (or dict) of image stacks; ``embed`` maps a
    stack to per-image embeddings (a torch module or any callable on arrays).
    """
    if isinstance(faces_by_identity, dict):
        ids = list(faces_by_identity) if ids is None else ids
        stacks = [faces_by_identity[k] for k in ids]
    else:
        stacks = list(faces_by_identity)
    rows = []
    for n, stack in enumerate(stacks):
        if len(stack) == 0:
            raise EmptyIdentity(f"identity {ids[n] if ids else n} has no images")
        e = _as_numpy_embeddings(embed, stack)
        rows.append(e.mean(axis=0))
    return EmbeddingMatrix.from_vectors(np.stack(rows), ids)


def _aligned(U: EmbeddingMatrix, V: EmbeddingMatrix):
    if U.rows.shape != V.rows.shape:
        raise IndexMismatch(f"matrix shapes differ: {U.rows.shape} vs {V.rows.shape}")
    if list(U.ids) != list(V.ids):
        raise IndexMismatch("identity order differs between matrices")


def _unit(rows: np.ndarray) -> np.ndarray:
    return rows / np.maximum(np.linalg.norm(rows, axis=1, keepdims=True), 1e-12)


def similarity_metrics(U: EmbeddingMatrix, V: EmbeddingMatrix) -> tuple[float, float]:
    """``(mean cosine, mean L1 distance)`` between row-aligned matrices."""
    _aligned(U, V)
    cos = np.sum(_unit(U.rows) * _unit(V.rows), axis=1)
    l1 = np.sum(np.abs(U.rows - V.rows), axis=1)
    return float(cos.mean()), float(l1.mean())


def retrieval_ranks(U: EmbeddingMatrix, V: EmbeddingMatrix) -> np.ndarray:
    """1-based rank of the true identity for each query row of ``V``.

    Candidates are ordered by cosine descending; equal scores go to the lower
    identity index first.
    """
    _aligned(U, V)
    sims = _unit(V.rows) @ _unit(U.rows).T
    own = np.diag(sims)[:, None]
    idx = np.arange(U.N)
    better = (sims > own).sum(axis=1)
    tied_before = ((sims == own) & (idx[None, :] < idx[:, None])).sum(axis=1)
    return 1 + better + tied_before


def recall_at_k(U: EmbeddingMatrix, V: EmbeddingMatrix, ks=DEFAULT_KS) -> dict[int, float]:
    """Percentage of queries whose identity lands in the top K, for each K."""
    ks = sorted(int(k) for k in ks)
    if ks and ks[-1] >= U.N:
        raise KTooLarge(f"need N > max K, got N={U.N}, K={ks[-1]}")
    ranks = retrieval_ranks(U, V)
    return {k: 100.0 * float(np.count_nonzero(ranks <= k)) / U.N for k in ks}


def usable_ks(ks, n: int) -> list[int]:
    """Drop the Ks that are not smaller than ``n``, with a warning."""
    keep = [k for k in ks if k < n]
    if len(keep) != len(list(ks)):
        warnings.warn(f"dropping recall Ks >= N={n}: {[k for k in ks if k >= n]}", stacklevel=2)
    return keep


def vfs(posteriors, eps: float = KL_EPS) -> float:
    """exp of the mean KL divergence between each posterior row and the batch marginal."""
    p = np.asarray(posteriors, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 2:
        raise DegenerateBatch(f"need at least two posterior rows, got shape {p.shape}")
    marginal = p.mean(axis=0)
    kl = np.sum(p * (np.log(np.maximum(p, eps)) - np.log(np.maximum(marginal, eps))[None, :]), axis=1)
    # mutual information is bounded by [0, ln C]; clip float noise only
    mean_kl = min(max(float(kl.mean()), 0.0), math.log(p.shape[1]))
    return math.exp(mean_kl)


def vggface_score(image_runs, clf, eps: float = KL_EPS) -> tuple[float, float, list[float]]:
    """Per-run VFS from a classifier's posteriors, returned as ``(mean, std, per_run)``."""
    scores = []
    for images in image_runs:
        if len(images) < 2:
            raise DegenerateBatch("each run needs at least two images")
        x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
        with torch.no_grad():
            post = clf.posteriors(x).double().numpy()
        scores.append(vfs(post, eps))
    return float(np.mean(scores)), float(np.std(scores)), scores
