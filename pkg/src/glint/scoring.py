"""Late-interaction (MaxSim) scoring, batch score matrices, ranking, pooling.

The relevance of a document to a query is the sum, over active query rows, of
the maximum dot product against any active document row. With all flags on the
row sets are (tokens + query global) x (patches + document global). Flags
exist so scoring ablations (drop patches / drop either global) reuse one code
path. Inputs are assumed row-normalized, so dot products are cosines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embeddings import DocumentEmbedding, QueryEmbedding, l2_normalize
from .errors import ConfigurationError


@dataclass(frozen=True)
class ScoringFlags:
    """Which rows participate in MaxSim. Query tokens are always active."""

    use_query_global: bool = True
    use_doc_global: bool = True
    use_patches: bool = True

    def validate(self) -> None:
        if not self.use_patches and not self.use_doc_global:
            raise ConfigurationError(
                "scoring flags leave zero document rows (patches and doc global both disabled)"
            )


ALL_ROWS = ScoringFlags()


@dataclass
class ScoreMatrix:
    """Query-by-document relevance grid with aligned id lists."""

    values: np.ndarray  # (B_q, B_d)
    query_ids: list
    doc_ids: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.query_ids), len(self.doc_ids)):
            raise ConfigurationError(
                f"ScoreMatrix shape {self.values.shape} does not match "
                f"{len(self.query_ids)} query ids x {len(self.doc_ids)} doc ids"
            )


@dataclass
class Ranking:
    """Top-k result list for one query: doc ids by descending score, ties by ascending id."""

    query_id: int | str
    doc_ids: list
    scores: list = field(default_factory=list)


def query_rows(q: QueryEmbedding, flags: ScoringFlags = ALL_ROWS) -> np.ndarray:
    """Stack the active query rows: tokens first, global last."""
    if flags.use_query_global:
        return np.vstack([q.tokens, q.global_vec[None, :]])
    return q.tokens


def doc_rows(d: DocumentEmbedding, flags: ScoringFlags = ALL_ROWS) -> np.ndarray:
    """Stack the active document rows: patches first, global last."""
    flags.validate()
    if flags.use_patches and flags.use_doc_global:
        return np.vstack([d.patches, d.global_vec[None, :]])
    if flags.use_patches:
        return d.patches
    return d.global_vec[None, :]


def _maxsim_kernel(q_rows: np.ndarray, d_rows: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of per-query-row maxima over the similarity grid.

    Returns (score, argmax document-row index per query row). np.argmax takes
    the lowest index on ties; the summation runs in fixed query-row order so
    batch and pairwise scoring are bit-identical.
    """
    sims = q_rows @ d_rows.T
    arg = np.argmax(sims, axis=1)
    score = float(np.sum(sims[np.arange(sims.shape[0]), arg]))
    return score, arg


def maxsim_score(
    q: QueryEmbedding,
    d: DocumentEmbedding,
    flags: ScoringFlags = ALL_ROWS,
) -> float:
    """Late-interaction relevance of document d to query q under the given flags."""
    score, _ = _maxsim_kernel(query_rows(q, flags), doc_rows(d, flags))
    return score


def maxsim_with_argmax(
    q: QueryEmbedding,
    d: DocumentEmbedding,
    flags: ScoringFlags = ALL_ROWS,
) -> tuple[float, np.ndarray]:
    """maxsim_score plus, per query row, the index of its best document row.

    The argmax indices are what the trainer uses to route score gradients back
    into the embedding rows; ties resolve to the lowest index.
    """
    return _maxsim_kernel(query_rows(q, flags), doc_rows(d, flags))


def score_batch(
    queries: list[QueryEmbedding],
    docs: list[DocumentEmbedding],
    flags: ScoringFlags = ALL_ROWS,
) -> ScoreMatrix:
    """Pairwise MaxSim grid. Each entry is computed by the same kernel as
    maxsim_score, so the matrix equals pairwise calls bit-for-bit."""
    if not queries or not docs:
        raise ConfigurationError("score_batch: empty query or document list")
    q_stacks = [query_rows(q, flags) for q in queries]
    d_stacks = [doc_rows(d, flags) for d in docs]
    values = np.empty((len(queries), len(docs)), dtype=np.float64)
    for i, qr in enumerate(q_stacks):
        for j, dr in enumerate(d_stacks):
            values[i, j], _ = _maxsim_kernel(qr, dr)
    return ScoreMatrix(values=values, query_ids=[q.query_id for q in queries], doc_ids=[d.page_id for d in docs])


def rank(
    q: QueryEmbedding,
    index: list[DocumentEmbedding],
    k: int,
    flags: ScoringFlags = ALL_ROWS,
) -> Ranking:
    """Top-min(k, |index|) documents by maxsim_score; ties broken by ascending page id."""
    if k < 1:
        raise ValueError(f"rank: k must be >= 1, got {k}")
    if not index:
        raise ConfigurationError("rank: empty document index")
    qr = query_rows(q, flags)
    scored = []
    for d in index:
        s, _ = _maxsim_kernel(qr, doc_rows(d, flags))
        scored.append((s, d.page_id))
    scored.sort(key=lambda t: (-t[0], t[1]))
    top = scored[: min(k, len(scored))]
    return Ranking(query_id=q.query_id, doc_ids=[pid for _, pid in top], scores=[s for s, _ in top])


def pool_patches(patches: np.ndarray, mode: str) -> np.ndarray:
    """Collapse a patch matrix to one L2-normalized vector.

    mode: "mean" (column average), "max" (column-wise maximum), or "median"
    (column-wise median, even counts averaged). These are the deterministic
    stand-ins that the ablation table substitutes for the trained global row.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[0] < 1:
        raise ConfigurationError(f"pool_patches: expected a nonempty matrix, got shape {patches.shape}")
    if mode == "mean":
        pooled = np.mean(patches, axis=0)
    elif mode == "max":
        pooled = np.max(patches, axis=0)
    elif mode == "median":
        pooled = np.median(patches, axis=0)
    else:
        raise ConfigurationError(f"pool_patches: unknown mode {mode!r}")
    return l2_normalize(pooled)
