#!/usr/bin/env python3
"""Iterative prediction: insert confident labels, re-predict the rest.

Constructs a two-mention document where the second mention is ambiguous
on its own. Once the first mention's description is inserted into the
text, the extra context flips the second prediction.
"""

import numpy as np

from dualed import (
    EncoderParams,
    EntityRecord,
    LabelCache,
    SimilaritySpec,
    encode,
    pool_span,
    predict_document,
    predict_iterative,
    token_range,
    tokenize,
)
from dualed.corpus import Document, Mention

vocab = 256
text = "aaa likes bbb"
doc = Document(
    id="demo",
    text=text,
    mentions=[
        Mention(0, 3, "Label_A", "aaa"),
        Mention(10, 13, "Label_Two", "bbb"),
    ],
)
records = {
    "Label_A": EntityRecord(id="Label_A", title="Label A", description="shift"),
    "Label_One": EntityRecord(id="Label_One", title="Label One"),
    "Label_Two": EntityRecord(id="Label_Two", title="Label Two"),
}

# a handcrafted encoder: the context mean flows straight into each token
table = np.zeros((vocab, 2))
tok = lambda w: int(tokenize(w, vocab).token_ids[0])
table[tok("aaa")] = [1.0, 0.0]
table[tok("bbb")] = [0.0, 1.0]
table[tok("shift")] = [8.0, 8.0]
params = EncoderParams(table=table, w_self=np.eye(2), w_ctx=np.eye(2),
                       bias=np.zeros(2), window=8)

# cache rows engineered from the two context states of mention "bbb"
seq = tokenize(text, vocab)
vectors = encode(seq, params)
anchor_a = pool_span(vectors, token_range(seq, (0, 3)), "mean")
anchor_b_plain = pool_span(vectors, token_range(seq, (10, 13)), "mean")
seq2 = tokenize("aaa (shift) likes bbb", vocab)
anchor_b_enriched = pool_span(encode(seq2, params),
                              token_range(seq2, (18, 21)), "mean")
cache = LabelCache(
    ids=["Label_A", "Label_One", "Label_Two"],
    matrix=np.vstack([anchor_a, anchor_b_plain + [0.05, 0.0], anchor_b_enriched]),
    pooling="mean",
    sim_spec=SimilaritySpec(kind="euclidean"),
)

print(f"document: {text!r}\n")
print("one-shot predictions:")
for pred in predict_document(doc, params, cache):
    print(f"  {pred.mention.surface!r} -> {pred.predicted_id}  "
          f"(score {pred.score:.3f})")

result = predict_iterative(doc, params, cache, records)
print(f"\niterative run, {result.iterations} rounds:")
print(f"  enriched text: {result.state.working_text!r}")
for first, final in zip(result.first_pass, result.predictions):
    arrow = "==" if first.predicted_id == final.predicted_id else "->"
    print(f"  {final.mention.surface!r}: {first.predicted_id} {arrow} "
          f"{final.predicted_id}  (score {first.score:.3f} -> {final.score:.3f})")

print(f"\nstripping insertions restores the input: "
      f"{result.state.strip_insertions() == text}")
