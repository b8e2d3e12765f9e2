#!/usr/bin/env python3
"""Encode mentions and labels into one space and search it exactly.

Builds both encoders, fills a label cache, and compares the package's
vectorized nearest-label search against a hand-rolled scan.
"""

from dualed import (
    EncoderParams,
    EntityRecord,
    FormatSpec,
    LabelCache,
    SimilaritySpec,
    encode,
    full_refresh,
    mine_hard_negatives,
    nearest_label,
    pool_span,
    similarity,
    token_range,
    tokenize,
)
from dualed.verbalizer import verbalize_all

records = {
    "Italy": EntityRecord(id="Italy", title="Italy",
                          description="country in Southern Europe"),
    "Italy_rugby": EntityRecord(id="Italy_rugby", title="Italy rugby team",
                                description="national rugby union side"),
    "Italy_football": EntityRecord(id="Italy_football", title="Italy football team",
                                   description="national association football side"),
    "Wembley": EntityRecord(id="Wembley", title="Wembley Stadium",
                            description="football stadium in London"),
}

dim, vocab = 16, 1 << 12
mention_encoder = EncoderParams.init(vocab, dim, window=4, seed=0)
label_encoder = EncoderParams.init(vocab, dim, window=4, seed=1)

# the cache holds one pooled embedding per label, refreshed from the
# label encoder over the verbalization text (title tokens pooled, the
# description acting as context)
verbs = verbalize_all(records, FormatSpec.from_name("title_desc"))
cache = LabelCache.empty(sorted(records), dim, "first_last",
                         SimilaritySpec(kind="euclidean"))
full_refresh(cache, label_encoder, verbs)
print(f"cache: {len(cache.ids)} labels x {cache.matrix.shape[1]} dims\n")

text = "Italy beat England at rugby in Rome"
seq = tokenize(text, vocab)
vectors = encode(seq, mention_encoder)
anchor = pool_span(vectors, token_range(seq, (0, 5)), "first_last")

label_id, score = nearest_label(cache, anchor)
print(f"mention 'Italy' in {text!r}")
print(f"  nearest label: {label_id}  (similarity {score:.4f})")

print("\nhard negatives for gold 'Italy_rugby' (most confusable first):")
for neg_id, neg_score in mine_hard_negatives(cache, anchor, "Italy_rugby", k=3):
    print(f"  {neg_id:<16} {neg_score:.4f}")

print("\nthe exact scan doubles as its own oracle:")
by_hand = max(
    ((i, similarity(anchor, cache.matrix[i], cache.sim_spec))
     for i in range(len(cache.ids))),
    key=lambda t: t[1],
)
print(f"  hand-rolled argmax: {cache.ids[by_hand[0]]}  (similarity {by_hand[1]:.4f})")
assert cache.ids[by_hand[0]] == label_id

print("\nrestricting the allowed set changes the answer deterministically:")
restricted, r_score = nearest_label(cache, anchor, allowed_ids={"Wembley"})
print(f"  allowed={{Wembley}} -> {restricted}  (similarity {r_score:.4f})")
