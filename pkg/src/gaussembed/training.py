"""Stochastic gradient ascent on the sigmoid-energy embedding objective.

The base objective scores an observed (center, context) pair against ``k``
sampled negatives::

    L = log sigmoid(E(w, c)) + sum_i log sigmoid(-E(w, n_i))

with ``E`` the 2-Wasserstein energy from :mod:`gaussembed.geometry`.  The
relation-supervised variant adds a second, alpha-weighted copy of the same
form over a knowledge-graph target ``e`` and freshly drawn negatives; its
energy is the W2 energy in ``all`` mode and the directional KL energy in
``isa`` mode.

Ascent is plain SGD with a learning rate decaying linearly over the exact
number of scheduled pairs (counted ahead of time per epoch), sigma clamped
into a fixed interval after every update, and non-finite gradients skipped
and counted rather than applied.  Single-worker runs are bit-reproducible
for a fixed seed; the optional multi-worker mode trades that for lock-free
parallel updates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, log_expit

from . import _kernels
from .corpus import (
    DEFAULT_NEGATIVE_TABLE_SIZE,
    DEFAULT_SHUFFLE_BUFFER,
    EncodedCorpus,
    SamplingTables,
    Vocabulary,
    count_pairs,
    encode_corpus,
    iter_pair_blocks,
    sample_negative_ids,
)
from .geometry import (
    GRAD_FLOOR,
    GaussianWord,
    energy_kl,
    energy_w2,
    grad_energy_kl,
    grad_energy_w2,
)
from .relations import (
    ISA_RELATION,
    NO_RELATION,
    RelationStore,
    sample_targets_block,
)

logger = logging.getLogger(__name__)

BIAS_MODES = ("learned", "fixed")
EI_MODES = ("all", "isa")


@dataclass
class TrainConfig:
    """Every knob of the trainer; field names double as CLI flag names."""

    dim: int = 50
    epochs: int = 5
    window: int = 5
    negatives: int = 5
    learning_rate: float = 0.025
    lr_min: float = 1e-4
    subsample: float = 1e-5
    alpha: float = 1.0
    min_count: int = 5
    sigma_init: float = 1.0
    sigma_min: float = 1e-3
    sigma_max: float = 10.0
    max_norm: float | None = None
    seed: int = 1
    bias_mode: str = "learned"
    fixed_bias_value: float = 1.0
    squared_w2_energy: bool = False
    dynamic_window: bool = False
    threads: int = 1
    ei_mode: str = "all"
    shuffle_buffer: int = DEFAULT_SHUFFLE_BUFFER
    negative_table_size: int = DEFAULT_NEGATIVE_TABLE_SIZE

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if not (0 < self.lr_min < self.learning_rate):
            raise ValueError("need 0 < lr_min < learning_rate")
        if self.subsample <= 0:
            raise ValueError("subsample must be > 0")
        if self.min_count < 1:
            raise ValueError("min_count must be >= 1")
        if not (0 < self.sigma_min <= self.sigma_init <= self.sigma_max):
            raise ValueError("need 0 < sigma_min <= sigma_init <= sigma_max")
        if self.max_norm is not None and self.max_norm <= 0:
            raise ValueError("max_norm must be positive when set")
        if self.bias_mode not in BIAS_MODES:
            raise ValueError(f"bias_mode must be one of {BIAS_MODES}")
        if self.ei_mode not in EI_MODES:
            raise ValueError(f"ei_mode must be one of {EI_MODES}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.shuffle_buffer < 1:
            raise ValueError("shuffle_buffer must be >= 1")

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


@dataclass
class EmbeddingMatrix:
    """The learnable state: one mean row and one sigma per word, two biases."""

    means: np.ndarray   # (rows, dim) float64
    sigmas: np.ndarray  # (rows,) float64
    bias1: float
    bias2: float

    @property
    def n_rows(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def gaussian(self, word_id: int) -> GaussianWord:
        return GaussianWord(self.means[word_id], float(self.sigmas[word_id]))

    def copy(self) -> "EmbeddingMatrix":
        return EmbeddingMatrix(
            means=self.means.copy(),
            sigmas=self.sigmas.copy(),
            bias1=self.bias1,
            bias2=self.bias2,
        )


@dataclass(frozen=True)
class LossSample:
    """One training sample: a pair, its negatives, and an optional relation part."""

    center: int
    context: int
    negatives: tuple[int, ...]
    relation: str | None = None
    target: int | None = None
    relation_negatives: tuple[int, ...] = ()


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    pairs: int
    mean_loss: float
    lr: float
    skipped: int
    sigma_mean: float
    sigma_std: float

    def as_line(self) -> str:
        return (
            f"epoch={self.epoch} pairs={self.pairs} "
            f"mean_loss={self.mean_loss:.6f} lr={self.lr:.6f} skipped={self.skipped}"
        )


@dataclass
class TrainReport:
    scheduled_pairs: int
    epochs: list[EpochStats] = field(default_factory=list)

    @property
    def skipped_total(self) -> int:
        return sum(e.skipped for e in self.epochs)

    def lines(self) -> list[str]:
        return [e.as_line() for e in self.epochs]


def init_params(
    vocab,
    config: TrainConfig,
    seed: int | None = None,
    n_extra_rows: int = 0,
) -> EmbeddingMatrix:
    """Fresh parameters: small uniform means, constant sigmas, biases per mode.

    Mean components are uniform on (-0.5/dim, +0.5/dim).  ``n_extra_rows``
    appends reserved rows (the relation sentinel) after the real words.
    """
    rows = (vocab if isinstance(vocab, int) else len(vocab)) + n_extra_rows
    if rows < 1:
        raise ValueError("need at least one row")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    half = 0.5 / config.dim
    bias = 1.0 if config.bias_mode == "learned" else config.fixed_bias_value
    return EmbeddingMatrix(
        means=rng.uniform(-half, half, size=(rows, config.dim)),
        sigmas=np.full(rows, float(config.sigma_init)),
        bias1=bias,
        bias2=bias,
    )


def _pair_energy_terms(sample: LossSample, k_check: bool = False):
    """Term list: (row, part, is_positive); part 1 = context, part 2 = relation."""
    terms = [(sample.context, 1, True)]
    terms += [(n, 1, False) for n in sample.negatives]
    if sample.relation is not None:
        if sample.target is None:
            raise ValueError("sample has a relation tag but no target id")
        terms.append((sample.target, 2, True))
        terms += [(m, 2, False) for m in sample.relation_negatives]
    return terms


def _relation_energy_is_kl(ei_mode: str, relation: str) -> bool:
    if ei_mode not in EI_MODES:
        raise ValueError(f"ei_mode must be one of {EI_MODES}")
    if not relation:
        raise ValueError("empty relation tag")
    if ei_mode == "isa":
        if relation not in (ISA_RELATION, NO_RELATION):
            raise ValueError(
                f"relation tag {relation!r} cannot be trained in isa mode"
            )
        return True
    return False


def wdg_loss(
    sample: LossSample,
    params: EmbeddingMatrix,
    *,
    squared_w2_energy: bool = False,
) -> float:
    """Log-sigmoid objective of one pair against its negatives (always <= 0)."""
    w = params.gaussian(sample.center)
    loss = float(
        log_expit(energy_w2(w, params.gaussian(sample.context), params.bias1,
                            squared=squared_w2_energy))
    )
    for n in sample.negatives:
        loss += float(
            log_expit(-energy_w2(w, params.gaussian(n), params.bias1,
                                 squared=squared_w2_energy))
        )
    return loss


def wdg_ei_loss(
    sample: LossSample,
    params: EmbeddingMatrix,
    alpha: float,
    *,
    ei_mode: str = "all",
    squared_w2_energy: bool = False,
) -> float:
    """Two-part objective: the pair term plus ``alpha`` times the relation term.

    The relation term scores the sampled knowledge-graph target (or the
    sentinel) with the W2 energy in ``all`` mode and the directional KL
    energy in ``isa`` mode, each against its own resampled negatives and
    the second bias.
    """
    if sample.relation is None or sample.target is None:
        raise ValueError("sample carries no relation target")
    use_kl = _relation_energy_is_kl(ei_mode, sample.relation)
    base = wdg_loss(sample, params, squared_w2_energy=squared_w2_energy)
    w = params.gaussian(sample.center)

    def e2(other_id: int) -> float:
        other = params.gaussian(other_id)
        if use_kl:
            return energy_kl(w, other, params.bias2)
        return energy_w2(w, other, params.bias2, squared=squared_w2_energy)

    part2 = float(log_expit(e2(sample.target)))
    for m in sample.relation_negatives:
        part2 += float(log_expit(-e2(m)))
    return base + alpha * part2


def _loss_and_grads(sample: LossSample, params: EmbeddingMatrix, config: TrainConfig):
    """Loss plus the full-gradient dict {row: (d_mean, d_sigma)} and bias grads."""
    rows = [sample.center, sample.context, *sample.negatives]
    if sample.relation is not None:
        rows += [sample.target, *sample.relation_negatives]
    for r in rows:
        if not (np.all(np.isfinite(params.means[r])) and math.isfinite(params.sigmas[r])):
            return math.nan, None, 0.0, 0.0

    use_kl = (
        _relation_energy_is_kl(config.ei_mode, sample.relation)
        if sample.relation is not None
        else False
    )
    w = params.gaussian(sample.center)
    grads: dict[int, list] = {}
    d_b = [0.0, 0.0]
    loss = 0.0

    def add(row: int, coef: float, d_mean, d_sigma: float):
        g = grads.setdefault(row, [np.zeros(params.dim), 0.0])
        g[0] += coef * d_mean
        g[1] += coef * d_sigma

    for row, part, positive in _pair_energy_terms(sample):
        other = params.gaussian(row)
        bias = params.bias1 if part == 1 else params.bias2
        if part == 2 and use_kl:
            e = energy_kl(w, other, bias)
            grad = grad_energy_kl(w, other)
        else:
            e = energy_w2(w, other, bias, squared=config.squared_w2_energy)
            grad = grad_energy_w2(w, other, squared=config.squared_w2_energy)
        scale = config.alpha if part == 2 else 1.0
        if positive:
            loss += scale * float(log_expit(e))
            coef = scale * float(expit(-e))
        else:
            loss += scale * float(log_expit(-e))
            coef = -scale * float(expit(e))
        add(sample.center, coef, grad.d_mean_a, grad.d_sigma_a)
        add(row, coef, grad.d_mean_b, grad.d_sigma_b)
        d_b[part - 1] += coef * grad.d_bias

    finite = all(
        np.all(np.isfinite(g[0])) and math.isfinite(g[1]) for g in grads.values()
    ) and all(math.isfinite(b) for b in d_b)
    if not finite:
        return loss, None, 0.0, 0.0
    return loss, grads, d_b[0], d_b[1]


def sgd_step(
    sample: LossSample,
    params: EmbeddingMatrix,
    lr: float,
    config: TrainConfig,
) -> tuple[float, bool]:
    """One ascent step on a single sample, in place.

    Returns ``(loss, applied)``; a non-finite gradient leaves the parameters
    untouched and reports ``applied=False`` so the caller can count it.
    ``lr == 0`` is a bitwise no-op.
    """
    if lr < 0:
        raise ValueError("lr must be >= 0")
    loss, grads, d_b1, d_b2 = _loss_and_grads(sample, params, config)
    if grads is None:
        return loss, False
    if lr == 0.0:
        return loss, True
    for row, (d_mean, d_sigma) in grads.items():
        params.means[row] += lr * d_mean
        params.sigmas[row] = min(
            max(params.sigmas[row] + lr * d_sigma, config.sigma_min), config.sigma_max
        )
        if config.max_norm is not None:
            norm = float(np.linalg.norm(params.means[row]))
            if norm > config.max_norm:
                params.means[row] *= config.max_norm / norm
    if config.bias_mode == "learned":
        params.bias1 += lr * d_b1
        params.bias2 += lr * d_b2
    return loss, True


class _BlockWorkspace:
    """Scratch arrays reused across sequential kernel calls."""

    def __init__(self, n_terms: int, dim: int):
        self.dbuf = np.empty((n_terms, dim))
        self.coefs = np.empty(n_terms)
        self.cfac = np.empty(n_terms)
        self.gsw = np.empty(n_terms)
        self.gsx = np.empty(n_terms)
        self.accw = np.empty(dim)


def apply_block(
    params: EmbeddingMatrix,
    biases: np.ndarray,
    centers: np.ndarray,
    contexts: np.ndarray,
    negs: np.ndarray,
    targets: np.ndarray | None,
    tnegs: np.ndarray | None,
    lr_start: float,
    lr_step: float,
    config: TrainConfig,
    workspace: _BlockWorkspace | None = None,
) -> tuple[float, int, int]:
    """Run the compiled kernel over one block of samples.

    ``biases`` is the live two-element [bias1, bias2] array the kernel
    mutates.  Returns (loss_sum, applied, skipped).
    """
    k = negs.shape[1]
    if targets is None:
        ei_kind = _kernels.EI_NONE
        n_terms = k + 1
        targets = np.zeros(1, dtype=np.int32)
        tnegs = np.zeros((1, k), dtype=np.int32)
    else:
        ei_kind = _kernels.EI_KL if config.ei_mode == "isa" else _kernels.EI_W2
        n_terms = 2 * k + 2
    max_norm = -1.0 if config.max_norm is None else float(config.max_norm)
    update_bias = config.bias_mode == "learned"
    args = (
        params.means, params.sigmas, biases,
        centers, contexts, negs, targets, tnegs,
        ei_kind, config.alpha,
        config.squared_w2_energy, GRAD_FLOOR,
        config.sigma_min, config.sigma_max, max_norm, update_bias,
        lr_start, lr_step, config.lr_min,
    )
    if config.threads > 1:
        import numba

        numba.set_num_threads(min(config.threads, numba.config.NUMBA_NUM_THREADS))
        return _kernels.train_block_par(*args, n_terms)
    if workspace is None:
        workspace = _BlockWorkspace(n_terms, params.dim)
    return _kernels.train_block_seq(
        *args,
        workspace.dbuf, workspace.coefs, workspace.cfac,
        workspace.gsw, workspace.gsx, workspace.accw,
    )


def _train_streams(config: TrainConfig):
    root = np.random.SeedSequence(config.seed)
    neg_ss, rel_ss, epoch_root = root.spawn(3)
    epoch_seeds = epoch_root.spawn(max(config.epochs, 1))
    return (
        np.random.default_rng(neg_ss),
        np.random.default_rng(rel_ss),
        epoch_seeds,
    )


def train(
    source,
    vocab: Vocabulary,
    tables: SamplingTables,
    config: TrainConfig,
    relations: RelationStore | None = None,
    encoded: EncodedCorpus | None = None,
) -> tuple[EmbeddingMatrix, TrainReport]:
    """Run the full training loop and return the table plus a per-epoch report.

    The learning rate decays linearly from ``learning_rate`` to ``lr_min``
    over the exact total number of pairs all epochs will emit (counted ahead
    of time).  With ``threads=1`` and a fixed seed the run is bit-reproducible.
    """
    if len(tables.discard_prob) != len(vocab):
        raise ValueError("sampling tables do not match the vocabulary")
    if relations is not None and relations.sentinel_id != len(vocab):
        raise ValueError("relation store does not match the vocabulary")

    if encoded is None:
        encoded = encode_corpus(source, vocab)
    if len(encoded.ids) and int(encoded.ids.max()) >= len(vocab):
        raise ValueError("encoded corpus references ids outside the vocabulary")

    params = init_params(vocab, config, config.seed,
                         n_extra_rows=1 if relations is not None else 0)
    report = TrainReport(scheduled_pairs=0)
    if config.epochs == 0:
        return params, report

    rng_neg, rng_rel, epoch_seeds = _train_streams(config)
    epoch_ints = [int(s.generate_state(1)[0]) for s in epoch_seeds]
    per_epoch = [
        count_pairs(
            source, vocab, tables, config.window, epoch_ints[e],
            dynamic_window=config.dynamic_window, encoded=encoded,
        )
        for e in range(config.epochs)
    ]
    total = sum(per_epoch)
    report.scheduled_pairs = total
    lr0 = config.learning_rate
    lr_step = (lr0 - config.lr_min) / total if total else 0.0

    biases = np.array([params.bias1, params.bias2])
    workspace = _BlockWorkspace(
        2 * config.negatives + 2 if relations is not None else config.negatives + 1,
        config.dim,
    )
    table = tables.negative_table
    done = 0
    for epoch in range(config.epochs):
        loss_sum = 0.0
        applied = 0
        skipped = 0
        blocks = iter_pair_blocks(
            source, vocab, tables, config.window, epoch_ints[epoch],
            shuffle_buffer=config.shuffle_buffer,
            dynamic_window=config.dynamic_window,
            encoded=encoded,
        )
        for block in blocks:
            centers = np.ascontiguousarray(block[:, 0])
            contexts = np.ascontiguousarray(block[:, 1])
            negs = sample_negative_ids(rng_neg, table, centers, contexts,
                                       config.negatives)
            if relations is not None:
                targets = sample_targets_block(relations, centers, config.ei_mode,
                                               rng_rel)
                tnegs = sample_negative_ids(rng_rel, table, centers, targets,
                                            config.negatives)
            else:
                targets = tnegs = None
            lr_start = max(config.lr_min, lr0 - lr_step * done)
            ls, ap, sk = apply_block(
                params, biases, centers, contexts, negs, targets, tnegs,
                lr_start, lr_step, config, workspace,
            )
            loss_sum += ls
            applied += ap
            skipped += sk
            done += len(block)
        params.bias1, params.bias2 = float(biases[0]), float(biases[1])
        stats = EpochStats(
            epoch=epoch,
            pairs=applied + skipped,
            mean_loss=loss_sum / applied if applied else 0.0,
            lr=max(config.lr_min, lr0 - lr_step * done),
            skipped=skipped,
            sigma_mean=float(params.sigmas.mean()),
            sigma_std=float(params.sigmas.std()),
        )
        report.epochs.append(stats)
        logger.info(stats.as_line())
        logger.debug(
            "epoch=%d sigma_mean=%.6f sigma_std=%.6f", epoch, stats.sigma_mean,
            stats.sigma_std,
        )
    return params, report
