"""Mention corpora, word embeddings, and distant supervision.

A mention is a tokenized sentence plus an inclusive token span naming an
entity.  Distant supervision turns a mention whose entity carries raw type
names into a training example labeled with the hierarchy closure of the
names that exist in the hierarchy; mentions with no usable type are skipped.

Corpus files are JSONL (one object per line with ``tokens``, ``span``,
``entity_id``, optional ``types``) or a TSV fallback
``entity_id<TAB>t1<TAB>t2<TAB>space-joined-tokens<TAB>comma-joined-types``.
Embedding files are whitespace separated: ``token v1 ... vd``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import HiertypeError
from .hierarchy import TypeHierarchy, TypeId

log = logging.getLogger(__name__)


class CorpusError(HiertypeError):
    """Malformed corpus, span, or batching request."""


class EmbeddingError(HiertypeError):
    """Malformed or unusable embedding file."""


@dataclass(frozen=True)
class Mention:
    """A tokenized sentence with an inclusive [t1, t2] entity span."""

    tokens: tuple[str, ...]
    span: tuple[int, int]
    entity_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "span", tuple(self.span))
        if not self.tokens:
            raise CorpusError("mention has no tokens")
        if len(self.span) != 2:
            raise CorpusError(f"span must have two endpoints, got {self.span!r}")
        t1, t2 = self.span
        if not (isinstance(t1, int) and isinstance(t2, int)):
            raise CorpusError(f"span endpoints must be integers, got {self.span!r}")
        if not (0 <= t1 <= t2 < len(self.tokens)):
            raise CorpusError(
                f"span {self.span!r} out of range for {len(self.tokens)} token(s)"
            )


@dataclass(frozen=True)
class CorpusRecord:
    """One raw corpus row: a mention plus the entity's raw type names."""

    tokens: tuple[str, ...]
    span: tuple[int, int]
    entity_id: str = ""
    types: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "span", tuple(self.span))
        object.__setattr__(self, "types", tuple(self.types))
        self.to_mention()  # validates tokens and span

    def to_mention(self) -> Mention:
        return Mention(self.tokens, self.span, self.entity_id)


@dataclass(frozen=True)
class LabeledExample:
    """A mention with its closed gold type set (never empty)."""

    mention: Mention
    gold_types: tuple[TypeId, ...]

    def __post_init__(self):
        object.__setattr__(self, "gold_types", tuple(self.gold_types))
        if not self.gold_types:
            raise CorpusError("labeled example with empty gold set")


class EmbeddingTable:
    """Case-sensitive token -> d-dim float64 vector; unknown tokens read as zeros."""

    def __init__(self, tokens: Sequence[str], matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(tokens):
            raise EmbeddingError(
                f"matrix shape {matrix.shape} does not match {len(tokens)} token(s)"
            )
        self._tokens = tuple(tokens)
        self._lookup = {t: i for i, t in enumerate(self._tokens)}
        if len(self._lookup) != len(self._tokens):
            raise EmbeddingError("duplicate tokens in embedding table")
        self._matrix = matrix
        self._matrix.flags.writeable = False
        self._oov = np.zeros(matrix.shape[1], dtype=np.float64)
        self._oov.flags.writeable = False

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._lookup

    def lookup(self, token: str) -> np.ndarray:
        i = self._lookup.get(token)
        return self._oov if i is None else self._matrix[i]

    def vectors(self, tokens: Sequence[str]) -> np.ndarray:
        """Stack per-token vectors into an (n, d) array."""
        out = np.zeros((len(tokens), self.dim), dtype=np.float64)
        for j, token in enumerate(tokens):
            i = self._lookup.get(token)
            if i is not None:
                out[j] = self._matrix[i]
        return out

    @classmethod
    def load(cls, path: str, dim: int) -> "EmbeddingTable":
        if dim < 1:
            raise EmbeddingError(f"embedding dimension must be positive, got {dim}")
        tokens: list[str] = []
        rows: list[list[float]] = []
        seen: set[str] = set()
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                token, values = parts[0], parts[1:]
                if len(values) != dim:
                    raise EmbeddingError(
                        f"{path}:{line_no}: expected {dim} values, got {len(values)}"
                    )
                if token in seen:
                    log.warning("%s:%d: duplicate token %r, keeping first", path, line_no, token)
                    continue
                try:
                    row = [float(v) for v in values]
                except ValueError as exc:
                    raise EmbeddingError(f"{path}:{line_no}: {exc}") from exc
                seen.add(token)
                tokens.append(token)
                rows.append(row)
        if not tokens:
            raise EmbeddingError(f"{path}: no embeddings found")
        return cls(tokens, np.array(rows, dtype=np.float64))


# ----------------------------------------------------------------------
# corpus io


def read_corpus(path: str) -> list[CorpusRecord]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return _read_jsonl(text, path)
    return _read_tsv(text, path)


def _read_jsonl(text: str, source: str) -> list[CorpusRecord]:
    records = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise CorpusError("record is not an object")
            tokens = obj["tokens"]
            span = obj["span"]
            if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
                raise CorpusError("tokens must be a list of strings")
            if not isinstance(span, list) or len(span) != 2:
                raise CorpusError("span must be a two-element list")
            record = CorpusRecord(
                tokens=tuple(tokens),
                span=(span[0], span[1]),
                entity_id=str(obj.get("entity_id", "")),
                types=tuple(str(t) for t in obj.get("types", [])),
            )
        except (json.JSONDecodeError, KeyError, TypeError, CorpusError) as exc:
            raise CorpusError(f"{source}:{line_no}: {exc}") from exc
        records.append(record)
    return records


def _read_tsv(text: str, source: str) -> list[CorpusRecord]:
    records = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (4, 5):
            raise CorpusError(f"{source}:{line_no}: expected 4 or 5 tab-separated fields, got {len(fields)}")
        try:
            t1, t2 = int(fields[1]), int(fields[2])
            types = ()
            if len(fields) == 5:
                types = tuple(t.strip() for t in fields[4].split(",") if t.strip())
            record = CorpusRecord(
                tokens=tuple(fields[3].split(" ")),
                span=(t1, t2),
                entity_id=fields[0],
                types=types,
            )
        except (ValueError, CorpusError) as exc:
            raise CorpusError(f"{source}:{line_no}: {exc}") from exc
        records.append(record)
    return records


def write_corpus(path: str, records: Iterable[CorpusRecord]) -> None:
    """Write records as JSONL with a fixed key order (deterministic bytes)."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "tokens": list(rec.tokens),
                "span": [rec.span[0], rec.span[1]],
                "entity_id": rec.entity_id,
                "types": list(rec.types),
            }
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")


def examples_to_records(examples: Iterable[LabeledExample]) -> list[CorpusRecord]:
    return [
        CorpusRecord(
            tokens=ex.mention.tokens,
            span=ex.mention.span,
            entity_id=ex.mention.entity_id,
            types=tuple(t.name for t in ex.gold_types),
        )
        for ex in examples
    ]


# ----------------------------------------------------------------------
# distant supervision


def distant_label(
    hierarchy: TypeHierarchy,
    entity_types: Iterable[str],
    mention: Mention,
) -> LabeledExample | None:
    """Label a mention with the closure of its entity's in-hierarchy types.

    Raw names missing from the hierarchy are dropped; if nothing is left the
    mention is skipped and None is returned, never an empty gold set.
    """
    present = [t for t in entity_types if t in hierarchy]
    if not present:
        return None
    return LabeledExample(mention=mention, gold_types=hierarchy.closure(present))


def label_records(
    hierarchy: TypeHierarchy,
    records: Iterable[CorpusRecord],
) -> tuple[list[LabeledExample], int]:
    """Distantly label a whole corpus; returns (examples, skipped count)."""
    examples: list[LabeledExample] = []
    skipped = 0
    for rec in records:
        ex = distant_label(hierarchy, rec.types, rec.to_mention())
        if ex is None:
            skipped += 1
        else:
            examples.append(ex)
    return examples, skipped


def batch_iter(
    examples: Sequence[LabeledExample],
    batch_size: int,
    seed: int,
    epoch: int = 0,
) -> Iterator[list[LabeledExample]]:
    """Shuffled minibatches; epoch e reshuffles with seed + e.

    The final short batch is emitted, so each epoch yields every example
    exactly once.  An empty corpus is an error, not an empty stream.
    """
    if not examples:
        raise CorpusError("cannot batch an empty corpus")
    if batch_size < 1:
        raise CorpusError(f"batch size must be positive, got {batch_size}")
    rng = np.random.default_rng(seed + epoch)
    order = rng.permutation(len(examples))
    for start in range(0, len(examples), batch_size):
        yield [examples[i] for i in order[start:start + batch_size]]
