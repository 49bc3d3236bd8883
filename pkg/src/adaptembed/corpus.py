"""Corpus ingestion: tokenization, vocabulary building, encoding, windows.

Documents are stored as numpy int32 arrays of dense vocabulary ids.  All
construction here is single-threaded; the resulting Vocabulary/Corpus values
are immutable and safe to share across threads.
"""

from __future__ import annotations

import hashlib
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

# Tokens are runs of alphanumerics optionally joined by hyphens, slashes,
# apostrophes, or dots between digits ("x-ray", "km/h", "don't", "13.7").
_ATOM = r"[^\W_]+"
_TOKEN_RE = re.compile(rf"{_ATOM}(?:(?:[-/']|(?<=\d)\.(?=\d)){_ATOM})*")

CORPUS_MAGIC = b"AEC1"
CORPUS_VERSION = 1


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation.

    Intra-token hyphens, slashes, apostrophes and dots inside numerals are
    preserved, so "X-ray at 13.7 km/h" -> ["x-ray", "at", "13.7", "km/h"].
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    """Dense word<->id map with frequency counts.

    Ids are 0..V-1.  When built by :func:`build_vocabulary`, entries are
    ordered by descending count with lexicographic tie-breaking.
    """

    words: tuple[str, ...]
    counts: np.ndarray  # int64, aligned with words
    id_of: dict[str, int] = field(repr=False)

    def __post_init__(self) -> None:
        if len(self.words) != len(self.counts):
            raise ValueError("words and counts must be aligned")

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.id_of

    @property
    def total_tokens(self) -> int:
        return int(self.counts.sum())

    def hash(self) -> str:
        h = hashlib.sha256()
        for word, count in zip(self.words, self.counts):
            h.update(f"{word}\t{int(count)}\n".encode("utf-8"))
        return h.hexdigest()

    def save_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for word, count in zip(self.words, self.counts):
                fh.write(f"{word}\t{int(count)}\n")

    @classmethod
    def load_tsv(cls, path: str | Path) -> "Vocabulary":
        words: list[str] = []
        counts: list[int] = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                word, count = line.rstrip("\n").split("\t")
                words.append(word)
                counts.append(int(count))
        return cls.from_entries(list(zip(words, counts)))

    @classmethod
    def from_entries(cls, entries: Sequence[tuple[str, int]]) -> "Vocabulary":
        words = tuple(w for w, _ in entries)
        counts = np.array([c for _, c in entries], dtype=np.int64)
        return cls(words, counts, {w: i for i, w in enumerate(words)})


def build_vocabulary(tokens: Iterable[str], min_count: int = 5) -> Vocabulary:
    """Count tokens and keep those with count >= min_count.

    Entries are sorted by descending count, ties broken lexicographically,
    which makes ids deterministic regardless of stream order.
    """
    if min_count < 1:
        raise ValueError("min_count must be positive")
    freq = Counter(tokens)
    kept = sorted(
        ((w, c) for w, c in freq.items() if c >= min_count),
        key=lambda wc: (-wc[1], wc[0]),
    )
    return Vocabulary.from_entries(kept)


@dataclass(frozen=True)
class Document:
    doc_id: int
    tokens: np.ndarray  # int32 vocabulary ids


@dataclass(frozen=True)
class Corpus:
    """Ordered non-empty documents of vocabulary ids."""

    vocabulary: Vocabulary
    docs: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.docs)

    @property
    def total_tokens(self) -> int:
        return sum(len(d) for d in self.docs)

    def document(self, doc_id: int) -> Document:
        return Document(doc_id, self.docs[doc_id])

    def decode(self) -> list[list[str]]:
        words = self.vocabulary.words
        return [[words[t] for t in doc] for doc in self.docs]


def encode(documents: Iterable[Sequence[str]], vocab: Vocabulary) -> Corpus:
    """Encode token documents to ids, silently dropping OOV tokens.

    Documents emptied by OOV dropping are omitted entirely.
    """
    id_of = vocab.id_of
    docs = []
    for doc in documents:
        ids = [id_of[t] for t in doc if t in id_of]
        if ids:
            docs.append(np.array(ids, dtype=np.int32))
    return Corpus(vocab, tuple(docs))


@dataclass(frozen=True)
class WindowSample:
    focus: int
    context: tuple[int, ...]
    doc_id: int
    position: int


def iter_windows(
    corpus: Corpus,
    window: int,
    seed: int | None = None,
    shrink: bool = False,
) -> Iterator[WindowSample]:
    """Yield one (focus, context) sample per token position.

    The context covers positions t-window..t+window excluding t, clipped at
    document boundaries.  Positions with an empty context are skipped.  The
    window is fixed by default; ``shrink=True`` enables word2vec-style random
    shrinking (each side reduced to a uniform 1..window), which requires a
    seed.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    rng = np.random.default_rng(seed) if shrink else None
    for doc_id, doc in enumerate(corpus.docs):
        n = len(doc)
        for t in range(n):
            w = int(rng.integers(1, window + 1)) if shrink else window
            lo = max(0, t - w)
            hi = min(n, t + w + 1)
            if hi - lo <= 1:
                continue
            context = tuple(int(doc[j]) for j in range(lo, hi) if j != t)
            yield WindowSample(int(doc[t]), context, doc_id, t)


def permute_vocabulary(
    corpus: Corpus,
    seed: int,
    permutation: np.ndarray | None = None,
) -> Corpus:
    """Apply a random vocabulary permutation to every token.

    Produces the calibration negative control: the word list is unchanged but
    every mention of word i is replaced by perm[i], destroying all original
    co-occurrence attribution.  A derangement is preferred (retry on fixed
    points); ``permutation`` overrides the random draw for tests.
    """
    vocab = corpus.vocabulary
    size = len(vocab)
    if size < 2:
        raise ValueError("cannot permute a vocabulary of size < 2")
    if permutation is None:
        rng = np.random.default_rng(seed)
        for _ in range(100):
            permutation = rng.permutation(size)
            if not np.any(permutation == np.arange(size)):
                break
    perm = np.asarray(permutation, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(size)):
        raise ValueError("not a permutation of vocabulary ids")
    # Word at id j now carries the count of its preimage.
    inverse = np.empty(size, dtype=np.int64)
    inverse[perm] = np.arange(size)
    new_counts = vocab.counts[inverse]
    new_vocab = Vocabulary(vocab.words, new_counts, dict(vocab.id_of))
    docs = tuple(perm[doc].astype(np.int32) for doc in corpus.docs)
    return Corpus(new_vocab, docs)


def read_documents(
    path: str | Path,
    paragraph_mode: bool = False,
) -> list[list[str]]:
    """Read a UTF-8 text file into tokenized documents.

    One document per line by default; ``paragraph_mode`` groups lines into
    blank-line-separated paragraphs instead.
    """
    text = Path(path).read_text(encoding="utf-8")
    if paragraph_mode:
        chunks = re.split(r"\n\s*\n", text)
    else:
        chunks = text.splitlines()
    return [toks for chunk in chunks if (toks := tokenize(chunk))]


def _write_varint(out: bytearray, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    shift = 0
    result = 0
    while True:
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the versioned binary corpus cache (token ids only)."""
    out = bytearray()
    out += CORPUS_MAGIC
    out += struct.pack("<H", CORPUS_VERSION)
    out += bytes.fromhex(corpus.vocabulary.hash())
    _write_varint(out, len(corpus.docs))
    for doc in corpus.docs:
        _write_varint(out, len(doc))
        for token in doc.tolist():
            _write_varint(out, token)
    Path(path).write_bytes(bytes(out))


def load_corpus(path: str | Path, vocab: Vocabulary) -> Corpus:
    buf = Path(path).read_bytes()
    if buf[:4] != CORPUS_MAGIC:
        raise ValueError(f"{path}: not a corpus cache file")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != CORPUS_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    stored_hash = buf[6:38].hex()
    if stored_hash != vocab.hash():
        raise ValueError(f"{path}: vocabulary hash mismatch")
    pos = 38
    ndocs, pos = _read_varint(buf, pos)
    docs = []
    for _ in range(ndocs):
        length, pos = _read_varint(buf, pos)
        ids = np.empty(length, dtype=np.int32)
        for i in range(length):
            ids[i], pos = _read_varint(buf, pos)
        docs.append(ids)
    return Corpus(vocab, tuple(docs))
