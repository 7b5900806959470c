"""Knowledge-graph relation triples used to semi-supervise training.

Triples come from a pre-extracted TSV (``relation<TAB>word1<TAB>word2``).
Only whitelisted relations with both endpoints in the vocabulary are kept;
everything else is counted and skipped, never fatal.  ``IsA`` triples are
stored directionally (narrower word -> broader word); every other relation
is treated as symmetric and mirrored at load time.

Words without any usable relation draw a reserved sentinel target that owns
a trained embedding row of its own, appended right after the real words.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .corpus import NEGATIVE_MAX_REDRAWS, SamplingTables, Vocabulary, sample_negative_ids

DEFAULT_RELATION_WHITELIST = frozenset(
    {"DefinedAs", "InstanceOf", "SimilarTo", "Synonym", "FormOf", "IsA"}
)
ISA_RELATION = "IsA"
NO_RELATION = "<none>"      # tag reported when a word has no usable relation
SENTINEL_WORD = "<NO_REL>"  # reserved embedding row drawn in that case

TARGET_MODES = ("all", "isa")


class RelationTriple(NamedTuple):
    relation: str
    source: str
    target: str


@dataclass(frozen=True, eq=False)
class RelationIngestReport:
    kept: int
    drop_oov: int
    drop_rel: int
    drop_malformed: int

    def as_line(self) -> str:
        return (
            f"kept={self.kept} drop_oov={self.drop_oov} "
            f"drop_rel={self.drop_rel} drop_malformed={self.drop_malformed}"
        )


class RelationStore:
    """Per-word relation targets in CSR form, one layout per sampling mode.

    ``sentinel_id`` is one past the last real word id and never collides
    with a vocabulary id.  Immutable after construction.
    """

    def __init__(self, n_words: int, edges: Iterable[tuple[int, str, int]]):
        self.n_words = n_words
        self.sentinel_id = n_words
        edges = sorted(set(edges))
        tags = sorted({tag for _, tag, _ in edges})
        self.tag_names = tuple(tags)
        tag_id = {t: i for i, t in enumerate(tags)}
        src = np.asarray([s for s, _, _ in edges], dtype=np.int64)
        self._neighbors = np.asarray([d for _, _, d in edges], dtype=np.int32)
        self._tags = np.asarray([tag_id[t] for _, t, _ in edges], dtype=np.int16)
        self._offsets = np.zeros(n_words + 1, dtype=np.int64)
        if len(src):
            np.add.at(self._offsets, src + 1, 1)
        np.cumsum(self._offsets, out=self._offsets)
        self._isa_offsets, self._isa_neighbors = self._filtered_layout(
            lambda t: t == ISA_RELATION
        )

    def _filtered_layout(self, keep_tag):
        keep = np.asarray(
            [keep_tag(self.tag_names[t]) for t in self._tags], dtype=bool
        ) if len(self._tags) else np.empty(0, dtype=bool)
        offsets = np.zeros(self.n_words + 1, dtype=np.int64)
        for w in range(self.n_words):
            offsets[w + 1] = offsets[w] + int(keep[self._offsets[w]:self._offsets[w + 1]].sum())
        return offsets, self._neighbors[keep] if len(keep) else self._neighbors[:0]

    @property
    def n_edges(self) -> int:
        return len(self._neighbors)

    def entries(self, word_id: int, mode: str = "all") -> list[tuple[str, int]]:
        """The (tag, neighbor id) list a draw for ``word_id`` chooses from."""
        if mode not in TARGET_MODES:
            raise ValueError(f"unknown relation mode {mode!r}")
        lo, hi = self._offsets[word_id], self._offsets[word_id + 1]
        out = [
            (self.tag_names[self._tags[i]], int(self._neighbors[i]))
            for i in range(lo, hi)
        ]
        if mode == "isa":
            out = [e for e in out if e[0] == ISA_RELATION]
        return out

    def mode_arrays(self, mode: str) -> tuple[np.ndarray, np.ndarray]:
        """(offsets, neighbors) CSR pair for vectorized target drawing."""
        if mode == "all":
            return self._offsets, self._neighbors
        if mode == "isa":
            return self._isa_offsets, self._isa_neighbors
        raise ValueError(f"unknown relation mode {mode!r}")


def load_relations(
    path,
    vocab: Vocabulary,
    whitelist: frozenset[str] | set[str] = DEFAULT_RELATION_WHITELIST,
) -> tuple[RelationStore, RelationIngestReport]:
    """Ingest a relation TSV against a vocabulary.

    A line is kept when it has exactly three tab-separated non-empty fields,
    its relation is whitelisted, and both words are in the vocabulary.
    Rejected lines are counted by reason (malformed / off-whitelist / out of
    vocabulary) and skipped.  Loading the same file twice yields identical
    stores; duplicate (relation, source, target) triples collapse to one edge.
    """
    kept = drop_oov = drop_rel = drop_malformed = 0
    edges: list[tuple[int, str, int]] = []
    id_of = vocab.id_of
    with open(path, "rb") as fh:
        for raw in fh:
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError:
                drop_malformed += 1
                continue
            line = line.rstrip("\r\n")
            if not line:
                drop_malformed += 1
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                drop_malformed += 1
                continue
            rel, w1, w2 = parts
            if rel not in whitelist:
                drop_rel += 1
                continue
            if w1 not in id_of or w2 not in id_of:
                drop_oov += 1
                continue
            kept += 1
            s, t = id_of[w1], id_of[w2]
            edges.append((s, rel, t))
            if rel != ISA_RELATION:
                edges.append((t, rel, s))
    store = RelationStore(len(vocab), edges)
    report = RelationIngestReport(
        kept=kept, drop_oov=drop_oov, drop_rel=drop_rel, drop_malformed=drop_malformed
    )
    return store, report


def sample_target(
    store: RelationStore,
    word_id: int,
    mode: str,
    rng: np.random.Generator,
) -> tuple[str, int]:
    """Uniform draw over a word's stored relation targets (mode-filtered).

    Returns ``(NO_RELATION, sentinel_id)`` when the filtered list is empty,
    so every word always has a target to train against.
    """
    entries = store.entries(word_id, mode)
    if not entries:
        return NO_RELATION, store.sentinel_id
    tag, neighbor = entries[int(rng.integers(0, len(entries)))]
    return tag, neighbor


def sample_targets_block(
    store: RelationStore,
    word_ids: np.ndarray,
    mode: str,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized :func:`sample_target` over a block of words (ids only)."""
    offsets, neighbors = store.mode_arrays(mode)
    lo = offsets[word_ids]
    deg = offsets[word_ids + 1] - lo
    pick = lo + np.floor(rng.random(len(word_ids)) * deg).astype(np.int64)
    out = np.full(len(word_ids), store.sentinel_id, dtype=np.int32)
    has = deg > 0
    out[has] = neighbors[pick[has]]
    return out


def resample_negatives(
    tables: SamplingTables,
    k: int,
    exclude: tuple[int, int],
    rng: np.random.Generator,
    max_redraws: int = NEGATIVE_MAX_REDRAWS,
) -> np.ndarray:
    """Draw ``k`` fresh negatives for the relation term of the loss.

    Independent of the context-term negatives; applies the same bounded
    collision-redraw rule against the two excluded ids.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    a, b = exclude
    block = sample_negative_ids(
        rng,
        tables.negative_table,
        np.asarray([a], dtype=np.int64),
        np.asarray([b], dtype=np.int64),
        k,
        max_redraws=max_redraws,
    )
    return block[0]
