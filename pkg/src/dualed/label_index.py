"""Cached label-embedding store: refresh, write-back, search, mining.

The cache holds one embedding row per label in the full label set.
During training it goes stale as the label encoder moves, so it is
fully re-encoded at intervals and patched on-the-fly for labels a
training step just embedded. Search is an exact linear scan — at the
pool sizes this package targets that is both affordable and its own
ground truth; ties always break toward the lowest row index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderParams, embed_span, pooled_width, POOLING_METHODS
from .errors import ValidationError
from .losses import SimilaritySpec, SIMILARITY_KINDS, similarity_to_matrix
from .verbalizer import Verbalization

CACHE_MAGIC = b"VRBCACHE"


@dataclass
class LabelCache:
    ids: list[str]
    matrix: np.ndarray             # (|E|, p)
    pooling: str
    sim_spec: SimilaritySpec
    last_full_refresh: int = 0     # span-counter value at the last full refresh
    dirty_writes: int = 0          # on-the-fly writes since the last full refresh
    row_of: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.row_of:
            self.row_of = {label_id: i for i, label_id in enumerate(self.ids)}
        if len(self.row_of) != len(self.ids):
            raise ValidationError("duplicate label ids in cache")
        if self.matrix.shape[0] != len(self.ids):
            raise ValidationError("cache matrix row count does not match ids")

    @classmethod
    def empty(
        cls, ids: list[str], dim: int, pooling: str, sim_spec: SimilaritySpec
    ) -> "LabelCache":
        if pooling not in POOLING_METHODS:
            raise ValidationError(f"unknown pooling method {pooling!r}")
        return cls(
            ids=list(ids),
            matrix=np.zeros((len(ids), pooled_width(dim, pooling))),
            pooling=pooling,
            sim_spec=sim_spec,
        )

    def embedding(self, label_id: str) -> np.ndarray:
        return self.matrix[self.row_of[label_id]]


def full_refresh(
    cache: LabelCache,
    label_params: EncoderParams,
    verbalizations: dict[str, Verbalization],
    batch_size: int = 128,
    span_count: int | None = None,
) -> LabelCache:
    """Re-encode every cached row with the current label-encoder params.

    Rows are processed in batches of ``batch_size`` labels (a progress /
    memory knob only; results are batch-invariant). Resets the
    staleness bookkeeping.
    """
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    missing = [i for i in cache.ids if i not in verbalizations]
    if missing:
        raise ValidationError(f"missing verbalizations for {len(missing)} labels, "
                              f"first: {missing[0]!r}")
    for lo in range(0, len(cache.ids), batch_size):
        for row, label_id in enumerate(cache.ids[lo:lo + batch_size], start=lo):
            verb = verbalizations[label_id]
            cache.matrix[row] = embed_span(
                verb.text, verb.title_char_span, label_params, cache.pooling
            )
    cache.dirty_writes = 0
    if span_count is not None:
        cache.last_full_refresh = span_count
    return cache


def write_back(cache: LabelCache, label_id: str, fresh: np.ndarray) -> LabelCache:
    """Patch one row with a freshly computed embedding (on-the-fly update)."""
    if label_id not in cache.row_of:
        raise ValidationError(f"unknown label id {label_id!r}")
    if fresh.shape != (cache.matrix.shape[1],):
        raise ValidationError(
            f"embedding width {fresh.shape} does not match cache width "
            f"{cache.matrix.shape[1]}"
        )
    cache.matrix[cache.row_of[label_id]] = fresh
    cache.dirty_writes += 1
    return cache


def mine_hard_negatives(
    cache: LabelCache, anchor: np.ndarray, gold_id: str, k: int
) -> list[tuple[str, float]]:
    """The k non-gold labels most similar to the anchor, per cached rows.

    Descending similarity; ties break by ascending row index. Asking for
    more than |E|-1 negatives returns all non-gold labels.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if gold_id not in cache.row_of:
        raise ValidationError(f"gold id {gold_id!r} not in cache")
    sims = similarity_to_matrix(anchor, cache.matrix, cache.sim_spec)
    sims[cache.row_of[gold_id]] = -np.inf
    order = np.argsort(-sims, kind="stable")[: min(k, len(cache.ids) - 1)]
    return [(cache.ids[i], float(sims[i])) for i in order]


def sample_in_batch_negatives(
    batch_gold_ids: list[str], gold_id: str, k: int, rng: np.random.Generator
) -> list[str]:
    """Up to k distinct other-mention gold ids, sampled without replacement.

    Returns an empty list when no other gold id exists in the batch (the
    trainer then skips the mention's loss term).
    """
    eligible = sorted(set(batch_gold_ids) - {gold_id})
    if not eligible:
        return []
    take = min(k, len(eligible))
    picked = rng.choice(len(eligible), size=take, replace=False)
    return [eligible[i] for i in picked]


def nearest_label(
    cache: LabelCache, anchor: np.ndarray, allowed_ids: set[str] | None = None
) -> tuple[str, float]:
    """Most similar label over the allowed set (full set when absent)."""
    sims = similarity_to_matrix(anchor, cache.matrix, cache.sim_spec)
    if allowed_ids is not None:
        if not allowed_ids:
            raise ValidationError("allowed_ids must be non-empty")
        unknown = [i for i in allowed_ids if i not in cache.row_of]
        if unknown:
            raise ValidationError(f"allowed id {unknown[0]!r} not in cache")
        rows = np.array(sorted(cache.row_of[i] for i in allowed_ids))
        best = rows[np.argmax(sims[rows])]
    else:
        best = int(np.argmax(sims))
    return cache.ids[best], float(sims[best])


# ── snapshot format ──────────────────────────────────────────────────────────
#
# Header: magic "VRBCACHE", |E| and p as little-endian uint32, one byte
# each for similarity kind and pooling method; then every id as a
# uint32-length-prefixed UTF-8 string; then the matrix as row-major
# little-endian float32.

_POOLING_CODES = {name: i for i, name in enumerate(POOLING_METHODS)}
_SIM_CODES = {name: i for i, name in enumerate(SIMILARITY_KINDS)}


def save_cache(path, cache: LabelCache) -> None:
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(
            struct.pack(
                "<IIBB",
                len(cache.ids),
                cache.matrix.shape[1],
                _SIM_CODES[cache.sim_spec.kind],
                _POOLING_CODES[cache.pooling],
            )
        )
        for label_id in cache.ids:
            raw = label_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(cache.matrix, dtype="<f4").tobytes())


def load_cache(path) -> LabelCache:
    with open(path, "rb") as fh:
        magic = fh.read(len(CACHE_MAGIC))
        if magic != CACHE_MAGIC:
            raise ValidationError(f"not a cache snapshot (bad magic {magic!r})")
        n, p, sim_code, pool_code = struct.unpack("<IIBB", fh.read(10))
        ids = []
        for _ in range(n):
            (length,) = struct.unpack("<I", fh.read(4))
            ids.append(fh.read(length).decode("utf-8"))
        buf = fh.read(4 * n * p)
        if len(buf) != 4 * n * p:
            raise ValidationError("truncated cache snapshot")
        matrix = np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(n, p)
    return LabelCache(
        ids=ids,
        matrix=matrix,
        pooling=POOLING_METHODS[pool_code],
        sim_spec=SimilaritySpec(kind=SIMILARITY_KINDS[sim_code]),
    )
