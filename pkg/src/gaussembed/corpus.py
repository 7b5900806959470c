"""Streaming corpus pipeline: vocabulary, sampling tables, training pairs.

A corpus is UTF-8 plain text, whitespace-tokenized, one sentence per line;
context windows never cross lines.  No normalization happens here
(lowercasing etc. is upstream preprocessing).  Sources can be a file path,
a list of line strings, or a list of token lists; list sources make tests
and in-memory corpora cheap.

The pair generator applies frequent-word sub-sampling *before* windowing
(the window slides over the compacted sequence), then block-shuffles pairs
through a bounded buffer.  All randomness is split into independent streams
(sub-sampling / dynamic windows / shuffling) so that :func:`count_pairs`
can replay the sub-sampling decisions and return the exact number of pairs
an epoch will produce without materializing them.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

VOCAB_MAGIC = "#gauss-embed-vocab v1"
DEFAULT_NEGATIVE_TABLE_SIZE = 1_000_000
DEFAULT_SHUFFLE_BUFFER = 1 << 20
NEGATIVE_MAX_REDRAWS = 8

# Characters per slice when tokenizing very long lines, so that a
# single-line corpus never holds all its token strings at once.
_CHUNK_CHARS = 8_000_000

CorpusSource = "str | Path | Sequence[str] | Sequence[Sequence[str]]"


class TrainingPair(NamedTuple):
    center: int
    context: int


@dataclass(frozen=True, eq=False)
class WordIndex:
    """Dense word <-> id mapping; ids run 0..V-1 in list order."""

    words: tuple[str, ...]
    id_of: dict[str, int]

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "WordIndex":
        words = tuple(words)
        id_of = {w: i for i, w in enumerate(words)}
        if len(id_of) != len(words):
            raise ValueError("duplicate words in index")
        return cls(words=words, id_of=id_of)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.id_of


@dataclass(frozen=True, eq=False)
class Vocabulary(WordIndex):
    """Word index plus occurrence counts; ids are assigned in descending
    count order (ties broken by first appearance in the corpus)."""

    counts: np.ndarray
    total_tokens: int

    def frequency(self, word_id: int) -> float:
        return float(self.counts[word_id]) / self.total_tokens

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / float(self.total_tokens)


def _iter_token_chunks(source) -> Iterator[list[str]]:
    """Yield lists of tokens, ignoring line structure (for counting)."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            carry = ""
            while True:
                block = fh.read(_CHUNK_CHARS)
                if not block:
                    if carry:
                        yield [carry]
                    return
                block = carry + block
                # Keep a trailing partial token for the next block.
                if not block[-1].isspace():
                    toks = block.split()
                    carry = toks.pop() if toks else ""
                else:
                    toks = block.split()
                    carry = ""
                if toks:
                    yield toks
    else:
        for item in source:
            if isinstance(item, str):
                toks = item.split()
            else:
                toks = list(item)
            if toks:
                yield toks


def _iter_lines(source) -> Iterator[str | list[str]]:
    """Yield one item per corpus line: a string (files) or a token list."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            for line in fh:
                yield line
    else:
        for item in source:
            yield item


def _encode_line(line: str | list[str], id_of: dict[str, int]) -> np.ndarray:
    """Map a line to in-vocabulary token ids; out-of-vocabulary tokens vanish."""
    if not isinstance(line, str):
        ids = [id_of[t] for t in line if t in id_of]
        return np.asarray(ids, dtype=np.int32)
    parts = []
    n = len(line)
    start = 0
    while start < n:
        end = min(n, start + _CHUNK_CHARS)
        while end < n and not line[end].isspace():
            end += 1
        toks = line[start:end].split()
        parts.append(
            np.fromiter(
                (id_of[t] for t in toks if t in id_of),
                dtype=np.int32,
            )
        )
        start = end
    if not parts:
        return np.empty(0, dtype=np.int32)
    return np.concatenate(parts) if len(parts) > 1 else parts[0]


@dataclass(frozen=True, eq=False)
class EncodedCorpus:
    """Corpus flattened to in-vocabulary token ids with line boundaries."""

    ids: np.ndarray       # int32, concatenated lines
    offsets: np.ndarray   # int64, line i occupies ids[offsets[i]:offsets[i+1]]

    @property
    def n_lines(self) -> int:
        return len(self.offsets) - 1

    def line(self, i: int) -> np.ndarray:
        return self.ids[self.offsets[i]:self.offsets[i + 1]]


def encode_corpus(source, vocab: WordIndex) -> EncodedCorpus:
    """Encode a corpus once so repeated epoch passes skip re-tokenization."""
    parts: list[np.ndarray] = []
    offsets = [0]
    total = 0
    for line in _iter_lines(source):
        ids = _encode_line(line, vocab.id_of)
        parts.append(ids)
        total += len(ids)
        offsets.append(total)
    ids = np.concatenate(parts) if parts else np.empty(0, dtype=np.int32)
    return EncodedCorpus(ids=ids, offsets=np.asarray(offsets, dtype=np.int64))


def build_vocabulary(source, min_count: int = 5) -> Vocabulary:
    """Count whitespace tokens and keep every word seen at least ``min_count`` times.

    Ids are dense 0..V-1 in descending count order; ties keep first-seen
    order.  ``total_tokens`` is the retained-token total (the sum of the
    surviving counts).  Raises ``ValueError`` if nothing survives the
    threshold; unreadable files raise the underlying ``OSError``.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counter: Counter[str] = Counter()
    for toks in _iter_token_chunks(source):
        counter.update(toks)
    # Counter preserves first-seen order; a stable sort on -count keeps it for ties.
    kept = [(w, c) for w, c in counter.items() if c >= min_count]
    if not kept:
        raise ValueError("empty vocabulary: no word reaches min_count")
    kept.sort(key=lambda wc: -wc[1])
    words = tuple(w for w, _ in kept)
    counts = np.asarray([c for _, c in kept], dtype=np.int64)
    return Vocabulary(
        words=words,
        id_of={w: i for i, w in enumerate(words)},
        counts=counts,
        total_tokens=int(counts.sum()),
    )


def save_vocabulary(vocab: Vocabulary, path) -> None:
    """Write ``word<TAB>count`` lines in id order behind a one-line header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{VOCAB_MAGIC} {len(vocab)} {vocab.total_tokens}\n")
        for word, count in zip(vocab.words, vocab.counts):
            fh.write(f"{word}\t{int(count)}\n")


def load_vocabulary(path) -> Vocabulary:
    """Inverse of :func:`save_vocabulary`; validates header and totals."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        fields = header.split(" ")
        if len(fields) != 4 or " ".join(fields[:2]) != VOCAB_MAGIC:
            raise ValueError(f"not a vocabulary file (bad header: {header!r})")
        try:
            n_words, total = int(fields[2]), int(fields[3])
        except ValueError:
            raise ValueError(f"bad vocabulary header counts: {header!r}") from None
        words = []
        counts = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise ValueError(f"malformed vocabulary line {lineno}: {line!r}")
            try:
                count = int(parts[1])
            except ValueError:
                raise ValueError(f"bad count on vocabulary line {lineno}") from None
            if count < 0:
                raise ValueError(f"negative count on vocabulary line {lineno}")
            words.append(parts[0])
            counts.append(count)
    if len(words) != n_words:
        raise ValueError(f"vocabulary header claims {n_words} words, found {len(words)}")
    counts_arr = np.asarray(counts, dtype=np.int64)
    if int(counts_arr.sum()) != total:
        raise ValueError("vocabulary counts do not add up to the header total")
    id_of = {w: i for i, w in enumerate(words)}
    if len(id_of) != len(words):
        raise ValueError("duplicate word in vocabulary file")
    return Vocabulary(words=tuple(words), id_of=id_of, counts=counts_arr, total_tokens=total)


def discard_probability(frequency: float, t: float) -> float:
    """Probability of discarding a token of a word with relative frequency ``frequency``.

    ``max(0, 1 - sqrt(t / frequency))``: words rarer than the threshold ``t``
    are never discarded (the raw formula would go negative there, so it is
    clamped to a probability).
    """
    if frequency <= 0 or t <= 0:
        raise ValueError("frequency and t must be strictly positive")
    return max(0.0, 1.0 - math.sqrt(t / frequency))


@dataclass(frozen=True, eq=False)
class SamplingTables:
    """Per-word discard probabilities and the smoothed negative-sampling table.

    ``negative_table`` holds word ids with multiplicity proportional to
    ``count**0.75``; drawing a uniform index gives the smoothed unigram
    distribution.  Immutable after construction and safe to share.
    """

    discard_prob: np.ndarray   # float64, per word id
    negative_table: np.ndarray  # int32 word ids

    @property
    def table_size(self) -> int:
        return len(self.negative_table)


def _apportion(probs: np.ndarray, size: int) -> np.ndarray:
    """Largest-remainder apportionment of ``size`` slots over ``probs``.

    Every word is then guaranteed at least one slot (slots taken from the
    current largest allocation); needs ``size >= len(probs)``.
    """
    quotas = probs * size
    alloc = np.floor(quotas).astype(np.int64)
    leftover = size - int(alloc.sum())
    if leftover > 0:
        order = np.argsort(-(quotas - alloc), kind="stable")
        alloc[order[:leftover]] += 1
    for i in np.flatnonzero(alloc == 0):
        donor = int(np.argmax(alloc))
        alloc[donor] -= 1
        alloc[i] = 1
    return alloc


def build_sampling_tables(
    vocab: Vocabulary,
    subsample: float = 1e-5,
    table_size: int = DEFAULT_NEGATIVE_TABLE_SIZE,
) -> SamplingTables:
    """Build discard probabilities (threshold ``subsample``) and the negative table.

    Slots go to words by largest-remainder apportionment of
    ``table_size * count^0.75 / Z``, with every word getting at least one.
    ``subsample=1.0`` effectively disables sub-sampling (all probabilities
    clamp to zero).  Raises ``ValueError`` when ``table_size`` is smaller
    than the vocabulary.
    """
    v = len(vocab)
    if table_size < v:
        raise ValueError(f"table_size {table_size} smaller than vocabulary size {v}")
    if subsample <= 0:
        raise ValueError("subsample threshold must be strictly positive")
    freqs = vocab.frequencies
    discard = np.clip(1.0 - np.sqrt(subsample / freqs), 0.0, 1.0)
    weights = np.asarray(vocab.counts, dtype=np.float64) ** 0.75
    alloc = _apportion(weights / weights.sum(), table_size)
    table = np.repeat(np.arange(v, dtype=np.int32), alloc)
    return SamplingTables(discard_prob=discard, negative_table=table)


def sample_negative_ids(
    rng: np.random.Generator,
    table: np.ndarray,
    banned_a: np.ndarray,
    banned_b: np.ndarray,
    k: int,
    max_redraws: int = NEGATIVE_MAX_REDRAWS,
) -> np.ndarray:
    """Draw a (n, k) block of negatives, redrawing collisions with the banned ids.

    A drawn id equal to its row's ``banned_a`` or ``banned_b`` entry is
    redrawn up to ``max_redraws`` times, then kept (which keeps the procedure
    total on degenerate vocabularies).
    """
    n = len(banned_a)
    negs = table[rng.integers(0, len(table), size=(n, k))]
    for _ in range(max_redraws):
        bad = (negs == banned_a[:, None]) | (negs == banned_b[:, None])
        n_bad = int(bad.sum())
        if n_bad == 0:
            break
        negs[bad] = table[rng.integers(0, len(table), size=n_bad)]
    return negs


class _ShuffleBuffer:
    """Accumulates pair arrays and emits permuted blocks of a fixed size."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("shuffle buffer capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng
        self._parts: list[np.ndarray] = []
        self._size = 0

    def push(self, pairs: np.ndarray) -> Iterator[np.ndarray]:
        if len(pairs) == 0:
            return
        self._parts.append(pairs)
        self._size += len(pairs)
        while self._size >= self.capacity:
            blob = np.concatenate(self._parts) if len(self._parts) > 1 else self._parts[0]
            block, rest = blob[: self.capacity], blob[self.capacity:]
            self._parts = [rest] if len(rest) else []
            self._size = len(rest)
            yield block[self.rng.permutation(len(block))]

    def flush(self) -> Iterator[np.ndarray]:
        if self._size:
            blob = np.concatenate(self._parts) if len(self._parts) > 1 else self._parts[0]
            self._parts, self._size = [], 0
            yield blob[self.rng.permutation(len(blob))]


def _epoch_streams(seed):
    """Independent RNG streams for one epoch: sub-sampling, windows, shuffling."""
    sub, win, shuf = np.random.SeedSequence(seed).spawn(3)
    return (
        np.random.default_rng(sub),
        np.random.default_rng(win),
        np.random.default_rng(shuf),
    )


def _iter_kept_lines(encoded: EncodedCorpus, discard_prob, window, dynamic_window, rng_sub, rng_win):
    """Yield (kept_ids, per-token window sizes or None) per line.

    Consumes the sub-sampling and window RNG streams in a fixed pattern:
    one uniform per in-vocabulary token, then (dynamic mode only) one window
    draw per surviving token.  :func:`count_pairs` relies on replaying this
    exact pattern.
    """
    for i in range(encoded.n_lines):
        seg = encoded.line(i)
        u = rng_sub.random(seg.shape[0])
        kept = seg[u >= discard_prob[seg]]
        if dynamic_window and kept.shape[0]:
            win = rng_win.integers(1, window + 1, size=kept.shape[0])
        else:
            win = None
        yield kept, win


def _line_pairs(kept: np.ndarray, window: int, win_sizes) -> list[np.ndarray]:
    """All (center, context) pairs within the window over one compacted line."""
    m = kept.shape[0]
    out = []
    for d in range(1, min(window, m - 1) + 1):
        left, right = kept[:-d], kept[d:]
        if win_sizes is None:
            out.append(np.column_stack((left, right)))
            out.append(np.column_stack((right, left)))
        else:
            wl, wr = win_sizes[:-d], win_sizes[d:]
            mask_l = wl >= d
            mask_r = wr >= d
            out.append(np.column_stack((left[mask_l], right[mask_l])))
            out.append(np.column_stack((right[mask_r], left[mask_r])))
    return out


def iter_pair_blocks(
    source,
    vocab: WordIndex,
    tables: SamplingTables,
    window: int,
    seed: int,
    *,
    shuffle_buffer: int = DEFAULT_SHUFFLE_BUFFER,
    dynamic_window: bool = False,
    encoded: EncodedCorpus | None = None,
) -> Iterator[np.ndarray]:
    """Stream blocks of shuffled (center, context) id pairs as (n, 2) int32 arrays.

    Deterministic for a fixed seed.  Sub-sampling removes tokens first and
    the window slides over what is left, so "nearby" means nearby after
    compaction.  Pass a pre-built ``encoded`` corpus to skip re-tokenizing.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if encoded is None:
        encoded = encode_corpus(source, vocab)
    rng_sub, rng_win, rng_shuf = _epoch_streams(seed)
    buf = _ShuffleBuffer(shuffle_buffer, rng_shuf)
    for kept, win in _iter_kept_lines(
        encoded, tables.discard_prob, window, dynamic_window, rng_sub, rng_win
    ):
        if kept.shape[0] >= 2:
            for part in _line_pairs(kept, window, win):
                yield from buf.push(part)
    yield from buf.flush()


def generate_pairs(
    source,
    vocab: WordIndex,
    tables: SamplingTables,
    window: int,
    seed: int,
    **kwargs,
) -> Iterator[TrainingPair]:
    """Like :func:`iter_pair_blocks` but yielding individual pairs."""
    for block in iter_pair_blocks(source, vocab, tables, window, seed, **kwargs):
        for center, context in block:
            yield TrainingPair(int(center), int(context))


def count_pairs(
    source,
    vocab: WordIndex,
    tables: SamplingTables,
    window: int,
    seed: int,
    *,
    dynamic_window: bool = False,
    encoded: EncodedCorpus | None = None,
) -> int:
    """Exact number of pairs :func:`iter_pair_blocks` will emit for this seed.

    Replays the sub-sampling (and dynamic-window) random draws without
    materializing pairs; the trainer uses this to fix its learning-rate
    schedule ahead of the epoch.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if encoded is None:
        encoded = encode_corpus(source, vocab)
    rng_sub, rng_win, _ = _epoch_streams(seed)
    total = 0
    for kept, win in _iter_kept_lines(
        encoded, tables.discard_prob, window, dynamic_window, rng_sub, rng_win
    ):
        m = kept.shape[0]
        if m < 2:
            continue
        if win is None:
            w = min(window, m - 1)
            # 2 * sum_i min(i, w) in closed form.
            if m - 1 > w:
                total += w * (w + 1) + 2 * (m - 1 - w) * w
            else:
                total += m * (m - 1)
        else:
            idx = np.arange(m)
            total += int(np.minimum(idx, win).sum() + np.minimum(m - 1 - idx, win).sum())
    return total
