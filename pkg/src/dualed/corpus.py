"""Corpus and label-set file formats, validation, and document chunking.

Both file formats are UTF-8 JSONL, one object per line:

Corpus line::

    {"id": "d1", "text": "Italy won.",
     "mentions": [{"start": 0, "end": 5, "label": "Italy"}]}

Label-set line::

    {"id": "Albert_Einstein", "title": "Albert Einstein",
     "description": "German-born theoretical physicist (1879-1955)",
     "categories": {"occupation": ["physicist", "scientist"]},
     "paragraph": null}

Absent keys mean empty. Character offsets are Unicode scalar-value
counts, never bytes. Long documents are split into chunks that respect
both a mention-count and a character limit without ever cutting through
a mention span.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError

RELATION_KEYS = ("instance_of", "subclass_of", "country", "occupation")


@dataclass
class Mention:
    """A character span linked to a gold entity id.

    ``start`` is inclusive, ``end`` exclusive; ``surface`` is the text
    slice the offsets select. ``unlinkable`` marks mentions whose gold
    label is absent from the loaded label set (see flag_unlinkable).
    """

    start: int
    end: int
    gold_label: str
    surface: str
    unlinkable: bool = False


@dataclass
class Document:
    id: str
    text: str
    mentions: list[Mention]


@dataclass
class EntityRecord:
    """One knowledge-base entry: the raw material for verbalization."""

    id: str
    title: str
    description: str | None = None
    categories: dict[str, list[str]] = field(default_factory=dict)
    paragraph: str | None = None


@dataclass
class Chunk:
    """A contiguous slice of a parent document with re-offset mentions.

    ``parent_offset`` is the chunk's start in the parent text, so global
    mention offsets are recoverable as local + parent_offset.
    """

    parent_doc: str
    text: str
    mentions: list[Mention]
    parent_offset: int = 0


def _parse_mention(obj: dict, text: str, doc_id: str, line_no: int) -> Mention:
    try:
        start, end, label = int(obj["start"]), int(obj["end"]), str(obj["label"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(
            f"line {line_no}: document {doc_id!r}: malformed mention {obj!r}: {exc}"
        ) from exc
    if start >= end:
        raise ValidationError(
            f"line {line_no}: document {doc_id!r}: mention start >= end ({start} >= {end})"
        )
    if start < 0 or end > len(text):
        raise ValidationError(
            f"line {line_no}: document {doc_id!r}: mention ({start}, {end}) "
            f"outside text of length {len(text)}"
        )
    return Mention(start=start, end=end, gold_label=label, surface=text[start:end])


def load_corpus(path: str | Path) -> list[Document]:
    """Load and fully validate a JSONL corpus.

    Returns documents in file order. Mentions are normalized to
    ascending start order; overlapping mentions, bad offsets, duplicate
    document ids, and malformed JSON all raise ValidationError with the
    offending line number.
    """
    docs: list[Document] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {line_no}: malformed JSON: {exc}") from exc
            try:
                doc_id, text = str(obj["id"]), str(obj["text"])
            except KeyError as exc:
                raise ValidationError(f"line {line_no}: missing key {exc}") from exc
            if doc_id in seen_ids:
                raise ValidationError(f"line {line_no}: duplicate document id {doc_id!r}")
            seen_ids.add(doc_id)

            mentions = [
                _parse_mention(m, text, doc_id, line_no)
                for m in obj.get("mentions", [])
            ]
            mentions.sort(key=lambda m: m.start)
            for prev, cur in zip(mentions, mentions[1:]):
                if cur.start < prev.end:
                    raise ValidationError(
                        f"line {line_no}: document {doc_id!r}: overlapping mentions "
                        f"({prev.start}, {prev.end}) and ({cur.start}, {cur.end})"
                    )
            if mentions and not text:
                raise ValidationError(
                    f"line {line_no}: document {doc_id!r}: empty text with mentions"
                )
            docs.append(Document(id=doc_id, text=text, mentions=mentions))
    return docs


def load_label_set(path: str | Path) -> dict[str, EntityRecord]:
    """Load a JSONL label set keyed by entity id.

    Duplicate ids and unknown category relation keys are rejected.
    """
    records: dict[str, EntityRecord] = {}
    first_line: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {line_no}: malformed JSON: {exc}") from exc
            try:
                rec_id, title = str(obj["id"]), str(obj["title"])
            except KeyError as exc:
                raise ValidationError(f"line {line_no}: missing key {exc}") from exc
            if not title:
                raise ValidationError(f"line {line_no}: entity {rec_id!r}: empty title")
            if rec_id in records:
                raise ValidationError(
                    f"duplicate entity id {rec_id!r} on lines "
                    f"{first_line[rec_id]} and {line_no}"
                )
            categories: dict[str, list[str]] = {}
            for key, values in (obj.get("categories") or {}).items():
                if key not in RELATION_KEYS:
                    raise ValidationError(
                        f"line {line_no}: entity {rec_id!r}: unknown relation key {key!r} "
                        f"(expected one of {', '.join(RELATION_KEYS)})"
                    )
                categories[key] = [str(v) for v in values]
            records[rec_id] = EntityRecord(
                id=rec_id,
                title=title,
                description=obj.get("description") or None,
                categories=categories,
                paragraph=obj.get("paragraph") or None,
            )
            first_line[rec_id] = line_no
    return records


def flag_unlinkable(docs: list[Document], label_ids: set[str]) -> int:
    """Mark mentions whose gold label is missing from the label set.

    Flagged mentions are kept: trainers skip them and evaluators count
    them against the model (unless a restricted label set injects the
    missing ids). Returns the number of flagged mentions.
    """
    count = 0
    for doc in docs:
        for m in doc.mentions:
            m.unlinkable = m.gold_label not in label_ids
            count += m.unlinkable
    return count


def chunk_document(doc: Document, max_mentions: int, max_chars: int) -> list[Chunk]:
    """Split a document into chunks of at most max_mentions / max_chars.

    Greedy left-to-right: each chunk ends at the latest whitespace
    boundary satisfying both limits (the boundary whitespace character
    is dropped, so re-joining chunks with it restores the text). A cut
    never falls inside a mention span; when no usable whitespace exists
    the split is hard at the limit. Mentions are re-offset to
    chunk-local coordinates.
    """
    if max_mentions < 1 or max_chars < 1:
        raise ValidationError("chunk limits must be >= 1")
    for m in doc.mentions:
        if m.end - m.start > max_chars:
            raise ValidationError(
                f"document {doc.id!r}: mention ({m.start}, {m.end}) is longer "
                f"than max_chars={max_chars}; cannot chunk"
            )

    text, mentions = doc.text, doc.mentions
    n = len(text)
    chunks: list[Chunk] = []
    pos = 0
    mi = 0  # first mention not yet assigned to a chunk

    def emit(end: int, next_pos: int) -> None:
        nonlocal pos, mi
        local = []
        while mi < len(mentions) and mentions[mi].start < end:
            m = mentions[mi]
            local.append(
                Mention(
                    start=m.start - pos,
                    end=m.end - pos,
                    gold_label=m.gold_label,
                    surface=m.surface,
                    unlinkable=m.unlinkable,
                )
            )
            mi += 1
        chunks.append(
            Chunk(parent_doc=doc.id, text=text[pos:end], mentions=local, parent_offset=pos)
        )
        pos = next_pos

    while True:
        remaining = mentions[mi:]
        if n - pos <= max_chars and len(remaining) <= max_mentions:
            emit(n, n)
            break

        cap = pos + max_chars
        if len(remaining) > max_mentions:
            # chunk must end before the first mention over the count limit
            cap = min(cap, remaining[max_mentions].start)
        for m in remaining:
            if m.start >= cap:
                break
            if m.start < cap < m.end:
                cap = m.start  # never cut through a span
                break

        cut = None
        for w in range(cap, pos, -1):
            if w < n and text[w].isspace() and not _inside_mention(remaining, w):
                cut = w
                break
        if cut is not None:
            emit(cut, cut + 1)  # drop the boundary whitespace
        else:
            emit(cap, cap)
    return chunks


def _inside_mention(mentions: list[Mention], idx: int) -> bool:
    for m in mentions:
        if m.start > idx:
            return False
        if m.start <= idx < m.end:
            return True
    return False
