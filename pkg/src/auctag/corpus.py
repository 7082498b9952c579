"""Dialogue corpus data model, JSONL ingestion, context windows, and features.

A corpus is an ordered set of tutoring sessions; each session is an ordered
list of sentences with optional dialogue-act label codes.  Classification
inputs are context windows (a sentence plus its two in-session predecessors),
turned into sparse L2-normalized hashed n-gram vectors with one disjoint
index namespace per window slot.
"""

from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ._hashing import HASH_NAME, hash64

SPEAKERS = ("tutor", "student")

# Shipped 31-code catalogue.  Codes are opaque identifiers; NF, FP and ACK
# keep their conventional short names, the rest are numbered placeholders.
DEFAULT_LABEL_CODES = ("NF", "FP", "ACK") + tuple(f"DA{i:02d}" for i in range(3, 31))


class CorpusFormatError(ValueError):
    """A dataset file violates the corpus schema (message carries the line number)."""


@dataclass(frozen=True)
class Sentence:
    session_id: str
    turn_index: int
    sentence_index: int
    speaker: str
    text: str
    label: str | None = None

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.session_id, self.turn_index, self.sentence_index)


@dataclass(frozen=True)
class LabelSet:
    """Ordered, distinct label codes; position defines the class index."""

    codes: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.codes) < 2:
            raise ValueError(f"label set needs at least 2 codes, got {len(self.codes)}")
        if len(set(self.codes)) != len(self.codes):
            raise ValueError("label codes must be distinct")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.codes)})

    @property
    def K(self) -> int:
        return len(self.codes)

    def __contains__(self, code: str) -> bool:
        return code in self._index

    def index(self, code: str) -> int:
        try:
            return self._index[code]
        except KeyError:
            raise ValueError(f"unknown label code {code!r}") from None

    @classmethod
    def default(cls) -> "LabelSet":
        return cls(DEFAULT_LABEL_CODES)


@dataclass(frozen=True)
class Corpus:
    """Sessions in first-appearance order; sentences sorted within each session."""

    sessions: tuple[str, ...]
    by_session: dict[str, tuple[Sentence, ...]]
    label_set: LabelSet

    @property
    def n_sentences(self) -> int:
        return sum(len(s) for s in self.by_session.values())

    def iter_sentences(self) -> Iterator[Sentence]:
        for sid in self.sessions:
            yield from self.by_session[sid]

    def subset(self, session_ids: Sequence[str]) -> "Corpus":
        """Sub-corpus containing only the given sessions, in original order."""
        wanted = set(session_ids)
        missing = wanted - set(self.sessions)
        if missing:
            raise ValueError(f"unknown session ids: {sorted(missing)}")
        kept = tuple(s for s in self.sessions if s in wanted)
        return Corpus(kept, {s: self.by_session[s] for s in kept}, self.label_set)


@dataclass(frozen=True)
class ContextWindow:
    """A sentence with up to two in-session predecessors (nearest first)."""

    current: Sentence
    prev1: Sentence | None = None
    prev2: Sentence | None = None


def corpus_from_sentences(sentences: Sequence[Sentence], label_set: LabelSet) -> Corpus:
    """Group and order sentences into a validated Corpus.

    Sessions keep first-appearance order; within a session, sentences are
    sorted by (turn_index, sentence_index).  Duplicate keys, unknown labels,
    and empty texts are rejected.
    """
    sessions: list[str] = []
    grouped: dict[str, list[Sentence]] = {}
    seen: set[tuple[str, int, int]] = set()
    for sent in sentences:
        _validate_sentence(sent, label_set)
        if sent.key in seen:
            raise ValueError(f"duplicate sentence key {sent.key}")
        seen.add(sent.key)
        if sent.session_id not in grouped:
            sessions.append(sent.session_id)
            grouped[sent.session_id] = []
        grouped[sent.session_id].append(sent)
    by_session = {
        sid: tuple(sorted(sents, key=lambda s: (s.turn_index, s.sentence_index)))
        for sid, sents in grouped.items()
    }
    return Corpus(tuple(sessions), by_session, label_set)


def _validate_sentence(sent: Sentence, label_set: LabelSet) -> None:
    if sent.speaker not in SPEAKERS:
        raise ValueError(f"speaker must be one of {SPEAKERS}, got {sent.speaker!r}")
    if sent.turn_index < 0 or sent.sentence_index < 0:
        raise ValueError(f"negative turn/sentence index in {sent.key}")
    if not sent.text.strip():
        raise ValueError(f"empty text in sentence {sent.key}")
    if sent.label is not None and sent.label not in label_set:
        raise ValueError(f"unknown label code {sent.label!r}")


def load_label_set(path: str | Path) -> LabelSet:
    """Read a JSON array of label-code strings."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list) or not all(isinstance(c, str) for c in data):
        raise CorpusFormatError(f"{path}: label set file must be a JSON array of strings")
    return LabelSet(tuple(data))


_REQUIRED_KEYS = ("session_id", "turn_index", "sentence_index", "speaker", "text")


def load_corpus(path: str | Path, label_set: LabelSet) -> Corpus:
    """Load a UTF-8 JSONL corpus file, one sentence object per line.

    Every schema violation is reported with its 1-based line number.
    """
    path = Path(path)
    sentences: list[Sentence] = []
    lines_by_key: dict[tuple[str, int, int], int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusFormatError(f"{path}:{lineno}: expected a JSON object")
            for k in _REQUIRED_KEYS:
                if k not in obj:
                    raise CorpusFormatError(f"{path}:{lineno}: missing key {k!r}")
            sent = Sentence(
                session_id=str(obj["session_id"]),
                turn_index=_as_index(obj["turn_index"], "turn_index", path, lineno),
                sentence_index=_as_index(obj["sentence_index"], "sentence_index", path, lineno),
                speaker=obj["speaker"],
                text=obj["text"] if isinstance(obj["text"], str) else "",
                label=obj.get("label"),
            )
            try:
                _validate_sentence(sent, label_set)
            except ValueError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
            if sent.key in lines_by_key:
                raise CorpusFormatError(
                    f"{path}:{lineno}: duplicate key {sent.key} (first seen on line {lines_by_key[sent.key]})"
                )
            lines_by_key[sent.key] = lineno
            sentences.append(sent)
    if not sentences:
        raise CorpusFormatError(f"{path}: empty corpus file")
    return corpus_from_sentences(sentences, label_set)


def _as_index(value: object, name: str, path: Path, lineno: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise CorpusFormatError(f"{path}:{lineno}: {name} must be a non-negative integer")
    return value


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus back to the JSONL interchange format."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for sent in corpus.iter_sentences():
            fh.write(
                json.dumps(
                    {
                        "session_id": sent.session_id,
                        "turn_index": sent.turn_index,
                        "sentence_index": sent.sentence_index,
                        "speaker": sent.speaker,
                        "text": sent.text,
                        "label": sent.label,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def build_context_windows(
    corpus: Corpus, labeled_only: bool = True
) -> list[tuple[ContextWindow, str | None]]:
    """One (window, label) pair per sentence, in corpus order.

    Context slots are the immediately preceding sentences of the same session
    (adjacency over all retained sentences, labeled or not) and never cross a
    session boundary.  With ``labeled_only`` windows are emitted only for
    labeled sentences; their context may still include unlabeled sentences.
    """
    out: list[tuple[ContextWindow, str | None]] = []
    for sid in corpus.sessions:
        sents = corpus.by_session[sid]
        for i, sent in enumerate(sents):
            if labeled_only and sent.label is None:
                continue
            prev1 = sents[i - 1] if i >= 1 else None
            prev2 = sents[i - 2] if i >= 2 else None
            out.append((ContextWindow(sent, prev1, prev2), sent.label))
    return out


# --- featurization ---------------------------------------------------------

@dataclass(frozen=True)
class FeatureConfig:
    """Hashed n-gram feature space.

    ``dimension`` must be a power of two: the current sentence owns indices
    [0, d/2), prev1 owns [d/2, 3d/4), prev2 owns [3d/4, d).  The hash is
    keyed blake2b (``hash_name``), so vectors are bit-reproducible across
    runs and platforms for a fixed ``hash_seed``.
    """

    dimension: int = 32768
    ngram_orders: tuple[int, ...] = (1, 2)
    hash_seed: int = 0
    hash_name: str = field(default=HASH_NAME, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        d = self.dimension
        if d < 4 or (d & (d - 1)) != 0:
            raise ValueError(f"dimension must be a power of two >= 4, got {d}")
        orders = tuple(self.ngram_orders)
        if not orders or any(n < 1 for n in orders) or len(set(orders)) != len(orders):
            raise ValueError(f"ngram_orders must be distinct positive ints, got {orders}")
        object.__setattr__(self, "ngram_orders", orders)

    def slot_ranges(self) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
        d = self.dimension
        return ((0, d // 2), (d // 2, 3 * d // 4), (3 * d // 4, d))

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "ngram_orders": list(self.ngram_orders),
            "hash_seed": self.hash_seed,
            "hash_name": self.hash_name,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "FeatureConfig":
        return cls(
            dimension=int(obj.get("dimension", 32768)),
            ngram_orders=tuple(obj.get("ngram_orders", (1, 2))),
            hash_seed=int(obj.get("hash_seed", 0)),
        )


@dataclass(frozen=True)
class FeatureVector:
    """Sparse vector: strictly increasing indices, finite values."""

    dimension: int
    indices: np.ndarray  # int64, strictly increasing
    values: np.ndarray   # float64

    @property
    def nnz(self) -> int:
        return int(self.indices.size)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip ASCII punctuation at token edges."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            out.append(tok)
    return out


def _grams(tokens: list[str], orders: tuple[int, ...]) -> Iterator[str]:
    for n in orders:
        for i in range(len(tokens) - n + 1):
            yield " ".join(tokens[i : i + n])


def featurize(window: ContextWindow, config: FeatureConfig) -> FeatureVector:
    """Hash each slot's n-grams into its namespace and L2-normalize per slot.

    Absent slots (and slots whose text yields no tokens) contribute nothing,
    so each present slot's sub-vector has L2 norm 1 and absent slots norm 0.
    Pure: identical (window, config) gives byte-identical output.
    """
    slots = (window.current, window.prev1, window.prev2)
    ranges = config.slot_ranges()
    all_idx: list[int] = []
    all_val: list[float] = []
    for sent, (lo, hi) in zip(slots, ranges):
        if sent is None:
            continue
        counts: dict[int, float] = {}
        size = hi - lo
        for gram in _grams(tokenize(sent.text), config.ngram_orders):
            idx = lo + hash64(gram, config.hash_seed) % size
            counts[idx] = counts.get(idx, 0.0) + 1.0
        if not counts:
            continue
        norm = math.sqrt(sum(v * v for v in counts.values()))
        for idx in sorted(counts):
            all_idx.append(idx)
            all_val.append(counts[idx] / norm)
    return FeatureVector(
        dimension=config.dimension,
        indices=np.asarray(all_idx, dtype=np.int64),
        values=np.asarray(all_val, dtype=np.float64),
    )
