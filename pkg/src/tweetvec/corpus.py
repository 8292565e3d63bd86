"""Timeline ingestion, vocabulary building and hierarchical-softmax coding trees."""

from __future__ import annotations

import heapq
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus input."""


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    # replace punctuation other than # and @ with spaces
    strip_punct: bool = False


_PUNCT = re.compile(r"[^\w\s#@]+")


def tokenize(text: str, config: TokenizerConfig | None = None) -> list[str]:
    """Split ``text`` on whitespace, keeping ``#tags`` and ``@names`` whole."""
    config = config or TokenizerConfig()
    if config.lowercase:
        text = text.lower()
    if config.strip_punct:
        text = _PUNCT.sub(" ", text)
    return text.split()


@dataclass(frozen=True)
class TimelineRecord:
    user_id: str
    tweet_id: str
    seq_no: int
    text: str


@dataclass(frozen=True)
class Tweet:
    tweet_index: int
    user_index: int
    tokens: np.ndarray


class Vocabulary:
    """Bidirectional word/index map with corpus counts."""

    def __init__(self, counts: dict[str, int] | Counter, min_count: int = 1):
        self.min_count = min_count
        kept = [(w, c) for w, c in counts.items() if c >= min_count]
        # most frequent first, ties alphabetical, so ids are stable across runs
        kept.sort(key=lambda wc: (-wc[1], wc[0]))
        self.index_to_word = [w for w, _ in kept]
        self.word_to_index = {w: i for i, w in enumerate(self.index_to_word)}
        self.counts = np.array([c for _, c in kept], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.index_to_word)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_index

    def encode(self, words: Iterable[str]) -> np.ndarray:
        idx = [self.word_to_index[w] for w in words if w in self.word_to_index]
        return np.asarray(idx, dtype=np.int64)

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.index_to_word[i] for i in indices]


@dataclass
class CodingTree:
    """Binary prefix code over ``leaf_count`` leaves.

    ``codes[k]`` holds the branch bits from the root down to leaf ``k`` and
    ``paths[k]`` the internal-node indices visited, root first.
    """

    leaf_count: int
    codes: list[np.ndarray]
    paths: list[np.ndarray]

    @property
    def internal_node_count(self) -> int:
        return max(self.leaf_count - 1, 0)

    def code_lengths(self) -> np.ndarray:
        return np.array([len(c) for c in self.codes], dtype=np.int64)

    def descend(self, bits: Sequence[int]) -> int | None:
        """Return the leaf reached by following ``bits`` from the root, if any."""
        for leaf, code in enumerate(self.codes):
            if len(code) == len(bits) and all(int(a) == int(b) for a, b in zip(code, bits)):
                return leaf
        return None


def _tree_from_children(leaf_count: int, children: dict[int, tuple[int, int]], root: int) -> CodingTree:
    # node ids: leaves are 0..L-1, internal nodes L..2L-2 -> internal index id-L
    codes: list[np.ndarray] = [np.zeros(0, dtype=np.int8)] * leaf_count
    paths: list[np.ndarray] = [np.zeros(0, dtype=np.int64)] * leaf_count
    stack = [(root, [], [])]
    while stack:
        node, bits, path = stack.pop()
        if node < leaf_count:
            codes[node] = np.asarray(bits, dtype=np.int8)
            paths[node] = np.asarray(path, dtype=np.int64)
            continue
        left, right = children[node]
        inner = path + [node - leaf_count]
        stack.append((right, bits + [1], inner))
        stack.append((left, bits + [0], inner))
    return CodingTree(leaf_count, codes, paths)


def build_huffman(counts: Sequence[float]) -> CodingTree:
    """Minimum-redundancy code; equal weights merge the lower leaf index first."""
    counts = list(counts)
    if not counts:
        raise ValueError("build_huffman needs at least one leaf")
    if any(c <= 0 for c in counts):
        raise ValueError("leaf counts must be positive")
    n = len(counts)
    if n == 1:
        return _tree_from_children(1, {}, 0)
    # (weight, tie key, node id); internal nodes sort after every leaf at equal weight
    heap = [(c, i, i) for i, c in enumerate(counts)]
    heapq.heapify(heap)
    children: dict[int, tuple[int, int]] = {}
    next_id = n
    while len(heap) > 1:
        w1, _, a = heapq.heappop(heap)
        w2, _, b = heapq.heappop(heap)
        children[next_id] = (a, b)
        heapq.heappush(heap, (w1 + w2, next_id, next_id))
        next_id += 1
    return _tree_from_children(n, children, heap[0][2])


LEAF_ORDER_SEED = 0


def build_balanced(leaf_count: int, seed: int | None = None) -> CodingTree:
    """Complete binary tree in heap layout; code lengths differ by at most one.

    With ``seed`` the leaves are placed in a seeded random order instead of
    index order, so that neighbouring ids do not share most of their path.
    """
    if leaf_count < 1:
        raise ValueError("leaf_count must be >= 1")
    internal = leaf_count - 1
    slots = np.arange(leaf_count) if seed is None else np.random.default_rng(seed).permutation(leaf_count)
    codes, paths = [], []
    for leaf in range(leaf_count):
        pos = internal + int(slots[leaf])
        bits, path = [], []
        while pos > 0:
            parent = (pos - 1) // 2
            bits.append(0 if pos == 2 * parent + 1 else 1)
            path.append(parent)
            pos = parent
        codes.append(np.asarray(bits[::-1], dtype=np.int8))
        paths.append(np.asarray(path[::-1], dtype=np.int64))
    return CodingTree(leaf_count, codes, paths)


@dataclass
class Corpus:
    """Encoded timelines plus the coding trees used by every prediction head."""

    vocab: Vocabulary
    tweets: list[Tweet]
    tweet_ids: list[str]
    user_ids: list[str]
    # per user: tweet indices in timeline order
    timelines: list[np.ndarray]
    word_tree: CodingTree = field(init=False)
    tweet_tree: CodingTree = field(init=False)
    user_tree: CodingTree = field(init=False)

    def __post_init__(self):
        empty = CodingTree(0, [], [])
        self.word_tree = build_huffman(self.vocab.counts) if len(self.vocab) else empty
        # consecutive tweets of a timeline must not be tree neighbours, otherwise the
        # temporal head can predict a tweet from its position instead of its content
        self.tweet_tree = build_balanced(len(self.tweets), LEAF_ORDER_SEED) if self.tweets else empty
        self.user_tree = build_balanced(len(self.user_ids), LEAF_ORDER_SEED) if self.user_ids else empty
        self.tweet_index = {t: i for i, t in enumerate(self.tweet_ids)}
        # position of each tweet inside its user's timeline
        self.position = np.zeros(len(self.tweets), dtype=np.int64)
        for line in self.timelines:
            self.position[line] = np.arange(len(line))

    @property
    def n_words(self) -> int:
        return len(self.vocab)

    @property
    def n_tweets(self) -> int:
        return len(self.tweets)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)


def parse_line(line: str, lineno: int, fmt: str = "tsv") -> TimelineRecord:
    if fmt == "jsonl":
        try:
            obj = json.loads(line)
            return TimelineRecord(str(obj["user"]), str(obj["id"]), int(obj["seq"]), str(obj["text"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise CorpusError(f"line {lineno}: malformed JSON record ({exc})") from None
    parts = line.split("\t", 3)
    if len(parts) != 4:
        raise CorpusError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
    user, tid, seq, text = parts
    try:
        seq_no = int(seq)
    except ValueError:
        raise CorpusError(f"line {lineno}: seq_no {seq!r} is not an integer") from None
    return TimelineRecord(user, tid, seq_no, text)


def read_records(path: str | Path, fmt: str | None = None) -> list[TimelineRecord]:
    path = Path(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix in (".jsonl", ".json") else "tsv"
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            records.append(parse_line(line, lineno, fmt))
    return records


def write_records(records: Iterable[TimelineRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            text = r.text.replace("\t", " ").replace("\n", " ")
            fh.write(f"{r.user_id}\t{r.tweet_id}\t{r.seq_no}\t{text}\n")


def build_corpus(
    records: Iterable[TimelineRecord],
    tokenizer: TokenizerConfig | None = None,
    min_count: int = 1,
) -> Corpus:
    """Encode records into a :class:`Corpus`.

    Users keep first-appearance order; each timeline is sorted by ``seq_no``,
    which must then run 0..N-1.  Users with a single tweet are kept.
    """
    records = list(records)
    seen: set[str] = set()
    by_user: dict[str, list[TimelineRecord]] = {}
    for r in records:
        if r.tweet_id in seen:
            raise CorpusError(f"duplicate tweet_id {r.tweet_id!r}")
        seen.add(r.tweet_id)
        by_user.setdefault(r.user_id, []).append(r)

    tokenized: dict[str, list[str]] = {}
    counts: Counter = Counter()
    for r in records:
        toks = tokenize(r.text, tokenizer)
        tokenized[r.tweet_id] = toks
        counts.update(toks)
    vocab = Vocabulary(counts, min_count=min_count)

    tweets, tweet_ids, user_ids, timelines = [], [], [], []
    for u, (user, recs) in enumerate(by_user.items()):
        recs.sort(key=lambda r: r.seq_no)
        seqs = [r.seq_no for r in recs]
        if seqs != list(range(len(recs))):
            raise CorpusError(f"user {user!r}: seq_no values must be contiguous from 0, got {seqs[:10]}")
        user_ids.append(user)
        line = []
        for r in recs:
            idx = len(tweets)
            tweets.append(Tweet(idx, u, vocab.encode(tokenized[r.tweet_id])))
            tweet_ids.append(r.tweet_id)
            line.append(idx)
        timelines.append(np.asarray(line, dtype=np.int64))
    return Corpus(vocab, tweets, tweet_ids, user_ids, timelines)


def ingest(
    path: str | Path,
    tokenizer: TokenizerConfig | None = None,
    min_count: int = 1,
    fmt: str | None = None,
) -> Corpus:
    return build_corpus(read_records(path, fmt), tokenizer, min_count)


def read_labels(path: str | Path) -> list[tuple[str, int, list[str]]]:
    """Parse ``entity_id<TAB>label<TAB>tweet_id,tweet_id,...`` lines."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[1] not in ("0", "1"):
                raise CorpusError(f"line {lineno}: expected entity_id, 0|1 label, tweet id list")
            ids = [t for t in parts[2].split(",") if t]
            if not ids:
                raise CorpusError(f"line {lineno}: entity {parts[0]!r} lists no tweets")
            out.append((parts[0], int(parts[1]), ids))
    return out


def write_labels(rows: Iterable[tuple[str, int, Sequence[str]]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for entity, label, ids in rows:
            fh.write(f"{entity}\t{int(label)}\t{','.join(ids)}\n")
