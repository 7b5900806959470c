"""Intrinsic evaluations: word-similarity correlation, entailment detection,
nearest-neighbor queries.

Similarity follows the usual protocol: cosine between mean vectors, scored
against human judgments with Spearman's rank correlation.  Entailment uses
the directional score ``-KL(word1 || word2)`` (higher = more entailing) and
sweeps every achievable threshold for the best F1, plus the average
precision of the ranking.  Dataset words are lowercased; pairs with an
out-of-vocabulary word are skipped and counted, never fatal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .corpus import WordIndex
from .geometry import GaussianWord, kl_spherical, w2_spherical
from .training import EmbeddingMatrix


class DatasetFormatError(ValueError):
    """A dataset file line that cannot be parsed; carries the line number."""

    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class SimilarityDataset:
    """Word pairs with human similarity scores; unordered pairs are unique."""

    name: str
    pairs: tuple[tuple[str, str, float], ...]

    def __post_init__(self):
        seen = set()
        for w1, w2, score in self.pairs:
            if not math.isfinite(score):
                raise ValueError(f"non-finite score for pair ({w1}, {w2})")
            key = (w1, w2) if w1 <= w2 else (w2, w1)
            if key in seen:
                raise ValueError(f"duplicate pair ({w1}, {w2})")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True, eq=False)
class EntailmentDataset:
    """Ordered word pairs labeled entails / not-entails."""

    name: str
    pairs: tuple[tuple[str, str, bool], ...]

    def __len__(self) -> int:
        return len(self.pairs)


def _read_dataset_rows(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise DatasetFormatError(
                    path, lineno, f"expected word1<TAB>word2<TAB>value, got {line!r}"
                )
            rows.append((lineno, parts[0].lower(), parts[1].lower(), parts[2]))
    return rows


def load_similarity_dataset(path, name: str | None = None) -> SimilarityDataset:
    """Read ``word1<TAB>word2<TAB>score`` lines; ``#`` lines are comments."""
    pairs = []
    for lineno, w1, w2, value in _read_dataset_rows(path):
        try:
            score = float(value)
        except ValueError:
            raise DatasetFormatError(path, lineno, f"bad score {value!r}") from None
        if not math.isfinite(score):
            raise DatasetFormatError(path, lineno, f"non-finite score {value!r}")
        pairs.append((w1, w2, score))
    return SimilarityDataset(name=name or Path(path).stem, pairs=tuple(pairs))


def load_entailment_dataset(path, name: str | None = None) -> EntailmentDataset:
    """Read ``word1<TAB>word2<TAB>{1|0}`` lines (1 = word1 entails word2)."""
    pairs = []
    for lineno, w1, w2, value in _read_dataset_rows(path):
        if value not in ("0", "1"):
            raise DatasetFormatError(path, lineno, f"label must be 1 or 0, got {value!r}")
        pairs.append((w1, w2, value == "1"))
    return EntailmentDataset(name=name or Path(path).stem, pairs=tuple(pairs))


def spearman(xs, ys) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks.

    Ties share the mean of the ranks they occupy.  Raises ``ValueError`` for
    lists shorter than two or when either side has zero rank variance (the
    correlation is undefined there).
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("inputs must be 1-D and the same length")
    if len(xs) < 2:
        raise ValueError("need at least two observations")
    rx = rankdata(xs)
    ry = rankdata(ys)
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        raise ValueError("undefined correlation: zero rank variance")
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx @ ry) / math.sqrt((rx @ rx) * (ry @ ry)))


@dataclass(frozen=True)
class SimilarityResult:
    name: str
    rho: float       # in [-1, 1]
    covered: int
    skipped: int

    def as_line(self) -> str:
        return (
            f"dataset={self.name} rho={100.0 * self.rho:.2f} "
            f"covered={self.covered} skipped={self.skipped}"
        )


@dataclass(frozen=True)
class EntailmentResult:
    name: str
    best_f1: float   # percent
    best_ap: float   # percent
    threshold: float
    covered: int
    skipped: int

    def as_line(self) -> str:
        return (
            f"entail best_f1={self.best_f1:.2f} best_ap={self.best_ap:.2f} "
            f"thr={self.threshold:.6f}"
        )


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v) / (nu * nv)


def eval_similarity(
    params: EmbeddingMatrix,
    index: WordIndex,
    dataset: SimilarityDataset,
) -> SimilarityResult:
    """Spearman correlation between cosine-of-means and the human scores.

    Pairs with an out-of-vocabulary word are skipped and counted.  Fewer
    than two covered pairs make the correlation meaningless, so that raises.
    """
    model_scores = []
    human_scores = []
    skipped = 0
    for w1, w2, human in dataset.pairs:
        i = index.id_of.get(w1)
        j = index.id_of.get(w2)
        if i is None or j is None:
            skipped += 1
            continue
        model_scores.append(_cosine(params.means[i], params.means[j]))
        human_scores.append(human)
    if len(model_scores) < 2:
        raise ValueError(
            f"insufficient coverage: only {len(model_scores)} of "
            f"{len(dataset)} pairs in vocabulary"
        )
    rho = spearman(model_scores, human_scores)
    return SimilarityResult(
        name=dataset.name, rho=rho, covered=len(model_scores), skipped=skipped
    )


def _best_f1_sweep(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Max F1 over all thresholds; candidates sit between distinct sorted
    scores plus +/-inf sentinels, which enumerates every confusion matrix.

    Predicting "entails" means score >= threshold.  Returns (best_f1,
    threshold); with several maxima the highest (most conservative)
    threshold wins.
    """
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    n = len(s)
    n_pos = int(y.sum())
    tp = np.cumsum(y)
    # Candidate prefix sizes: 0 (threshold +inf), each distinct-score
    # boundary, and n (threshold -inf).
    boundaries = [j for j in range(1, n) if s[j - 1] > s[j]]
    candidates = [0, *boundaries, n]
    best_f1 = -1.0
    best_thr = math.inf
    for j in candidates:
        if j == 0:
            f1 = 0.0
            thr = math.inf
        else:
            precision = tp[j - 1] / j
            recall = tp[j - 1] / n_pos
            f1 = (
                0.0
                if precision + recall == 0
                else 2 * precision * recall / (precision + recall)
            )
            thr = -math.inf if j == n else (s[j - 1] + s[j]) / 2.0
        if f1 > best_f1:
            best_f1 = f1
            best_thr = thr
    return best_f1, best_thr


def _average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Average precision of the descending-score ranking.

    Tied scores form one block evaluated at the block boundary (equivalently:
    AP is integrated over distinct thresholds), so a constant scorer gets
    exactly the positive prevalence.  The sort is stable, so dataset order
    breaks ties deterministically.
    """
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    n = len(s)
    n_pos = int(y.sum())
    ap = 0.0
    prev_tp = 0
    j = 0
    while j < n:
        end = j + 1
        while end < n and s[end] == s[j]:
            end += 1
        tp = prev_tp + int(y[j:end].sum())
        ap += (tp - prev_tp) / n_pos * (tp / end)
        prev_tp = tp
        j = end
    return ap


def eval_entailment(
    params: EmbeddingMatrix,
    index: WordIndex,
    dataset: EntailmentDataset,
) -> EntailmentResult:
    """Best F1 and average precision of the ``-KL(w1 || w2)`` entailment score.

    Scores are percentages.  Out-of-vocabulary pairs are skipped and
    counted; the covered pairs must include at least one positive and one
    negative or the metrics are undefined and this raises.
    """
    scores = []
    labels = []
    skipped = 0
    for w1, w2, label in dataset.pairs:
        i = index.id_of.get(w1)
        j = index.id_of.get(w2)
        if i is None or j is None:
            skipped += 1
            continue
        scores.append(-kl_spherical(params.gaussian(i), params.gaussian(j)))
        labels.append(label)
    labels_arr = np.asarray(labels, dtype=np.int64)
    if len(labels_arr) == 0 or labels_arr.sum() == 0 or labels_arr.sum() == len(labels_arr):
        raise ValueError(
            "degenerate dataset: need at least one covered positive and one "
            "covered negative pair"
        )
    scores_arr = np.asarray(scores, dtype=np.float64)
    best_f1, threshold = _best_f1_sweep(scores_arr, labels_arr)
    ap = _average_precision(scores_arr, labels_arr)
    return EntailmentResult(
        name=dataset.name,
        best_f1=100.0 * best_f1,
        best_ap=100.0 * ap,
        threshold=threshold,
        covered=len(labels),
        skipped=skipped,
    )


NEAREST_METRICS = ("cosine", "w2", "kl")


def nearest(
    params: EmbeddingMatrix,
    index: WordIndex,
    query: str,
    n: int = 10,
    metric: str = "cosine",
) -> list[tuple[str, float]]:
    """Top-n words by the chosen metric, excluding the query itself.

    Cosine ranks descending; ``w2`` and ``kl`` ascending (``kl`` is the
    divergence of the query from the candidate, i.e. ``KL(query || cand)``).
    Ties break by word id.  Unknown queries raise ``KeyError``.
    """
    if metric not in NEAREST_METRICS:
        raise ValueError(f"metric must be one of {NEAREST_METRICS}")
    if n < 1:
        raise ValueError("n must be >= 1")
    if query not in index.id_of:
        raise KeyError(query)
    q = index.id_of[query]
    means = params.means[: len(index)]
    sigmas = params.sigmas[: len(index)]
    dim = params.dim
    mu_q = means[q]
    sg_q = float(sigmas[q])
    if metric == "cosine":
        norms = np.linalg.norm(means, axis=1)
        qnorm = float(np.linalg.norm(mu_q))
        denom = np.where(norms * qnorm == 0.0, 1.0, norms * qnorm)
        keys = -(means @ mu_q) / denom
    elif metric == "w2":
        diff = means - mu_q
        keys = np.sqrt((diff * diff).sum(axis=1) + dim * (sigmas - sg_q) ** 2)
    else:
        diff = means - mu_q
        keys = (
            dim * np.log(sigmas / sg_q)
            - 0.5 * dim
            + 0.5 * dim * (sg_q / sigmas) ** 2
            + 0.5 * (diff * diff).sum(axis=1) / sigmas**2
        )
    keys[q] = math.inf
    order = np.argsort(keys, kind="stable")[: min(n, len(index) - 1)]
    if metric == "cosine":
        return [(index.words[i], -float(keys[i])) for i in order]
    return [(index.words[i], float(keys[i])) for i in order]


@dataclass
class EvalReport:
    """Aggregated evaluation results, printable as a table or machine lines."""

    similarity: list[SimilarityResult] = field(default_factory=list)
    entailment: EntailmentResult | None = None

    def lines(self) -> list[str]:
        out = [r.as_line() for r in self.similarity]
        if self.entailment is not None:
            out.append(self.entailment.as_line())
        return out

    def table(self) -> str:
        rows = [f"{'dataset':<24} {'rho*100':>8} {'covered':>8} {'skipped':>8}"]
        for r in self.similarity:
            rows.append(
                f"{r.name:<24} {100.0 * r.rho:>8.2f} {r.covered:>8} {r.skipped:>8}"
            )
        if self.entailment is not None:
            e = self.entailment
            rows.append(
                f"{e.name:<24} best_f1={e.best_f1:.2f} best_ap={e.best_ap:.2f} "
                f"thr={e.threshold:.6f} covered={e.covered} skipped={e.skipped}"
            )
        return "\n".join(rows)
