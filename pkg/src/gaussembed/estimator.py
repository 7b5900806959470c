"""Scikit-learn style front door for the whole pipeline.

``GaussianWordEmbedding`` wraps corpus ingestion, optional relation
supervision, and training behind the familiar ``fit`` / ``transform`` /
``get_params`` surface so it composes with sklearn tooling (cloning, grid
search over hyperparameters, pipelines that consume the mean vectors).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import evaluation, model_io
from .corpus import (
    DEFAULT_NEGATIVE_TABLE_SIZE,
    DEFAULT_SHUFFLE_BUFFER,
    build_sampling_tables,
    build_vocabulary,
    encode_corpus,
)
from .geometry import kl_spherical, w2_spherical
from .relations import SENTINEL_WORD, load_relations
from .training import TrainConfig, train


class GaussianWordEmbedding(BaseEstimator):
    """Trainable Gaussian word embeddings with an sklearn-style interface.

    Each word becomes a spherical Gaussian (a mean vector plus one positive
    standard deviation).  ``fit`` consumes a whitespace-tokenized corpus —
    a file path, a list of line strings, or a list of token lists — and
    optionally a relation TSV for semi-supervised training.

    Parameters mirror :class:`gaussembed.training.TrainConfig` field for
    field; see there for semantics.

    Attributes (after ``fit``)
    --------------------------
    vocab_ : Vocabulary
        Word ids, counts, and totals.
    model_ : EmbeddingMatrix
        The learned means, sigmas, and biases (may hold one extra sentinel
        row when relations were used).
    export_words_ : tuple[str, ...]
        One word per parameter row, ready for :meth:`save`.
    report_ : TrainReport
        Per-epoch pair counts, mean loss, learning rate, skipped steps.
    """

    def __init__(
        self,
        dim=50,
        epochs=5,
        window=5,
        negatives=5,
        learning_rate=0.025,
        lr_min=1e-4,
        subsample=1e-5,
        alpha=1.0,
        min_count=5,
        sigma_init=1.0,
        sigma_min=1e-3,
        sigma_max=10.0,
        max_norm=None,
        seed=1,
        bias_mode="learned",
        fixed_bias_value=1.0,
        squared_w2_energy=False,
        dynamic_window=False,
        threads=1,
        ei_mode="all",
        shuffle_buffer=DEFAULT_SHUFFLE_BUFFER,
        negative_table_size=DEFAULT_NEGATIVE_TABLE_SIZE,
        relations=None,
    ):
        self.dim = dim
        self.epochs = epochs
        self.window = window
        self.negatives = negatives
        self.learning_rate = learning_rate
        self.lr_min = lr_min
        self.subsample = subsample
        self.alpha = alpha
        self.min_count = min_count
        self.sigma_init = sigma_init
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        self.max_norm = max_norm
        self.seed = seed
        self.bias_mode = bias_mode
        self.fixed_bias_value = fixed_bias_value
        self.squared_w2_energy = squared_w2_energy
        self.dynamic_window = dynamic_window
        self.threads = threads
        self.ei_mode = ei_mode
        self.shuffle_buffer = shuffle_buffer
        self.negative_table_size = negative_table_size
        self.relations = relations

    def _config(self) -> TrainConfig:
        return TrainConfig(
            dim=self.dim,
            epochs=self.epochs,
            window=self.window,
            negatives=self.negatives,
            learning_rate=self.learning_rate,
            lr_min=self.lr_min,
            subsample=self.subsample,
            alpha=self.alpha,
            min_count=self.min_count,
            sigma_init=self.sigma_init,
            sigma_min=self.sigma_min,
            sigma_max=self.sigma_max,
            max_norm=self.max_norm,
            seed=self.seed,
            bias_mode=self.bias_mode,
            fixed_bias_value=self.fixed_bias_value,
            squared_w2_energy=self.squared_w2_energy,
            dynamic_window=self.dynamic_window,
            threads=self.threads,
            ei_mode=self.ei_mode,
            shuffle_buffer=self.shuffle_buffer,
            negative_table_size=self.negative_table_size,
        )

    def fit(self, X, y=None):
        """Train on a corpus; ``X`` is a path or an in-memory line/token list."""
        config = self._config()
        vocab = build_vocabulary(X, min_count=config.min_count)
        tables = build_sampling_tables(
            vocab,
            subsample=config.subsample,
            table_size=max(config.negative_table_size, len(vocab)),
        )
        store = None
        export_words = vocab.words
        if self.relations is not None:
            store, self.relation_report_ = load_relations(self.relations, vocab)
            export_words = vocab.words + (SENTINEL_WORD,)
        encoded = encode_corpus(X, vocab)
        params, report = train(
            X, vocab, tables, config, relations=store, encoded=encoded
        )
        self.vocab_ = vocab
        self.tables_ = tables
        self.model_ = params
        self.export_words_ = export_words
        self.word_index_ = vocab
        self.report_ = report
        return self

    def transform(self, words) -> np.ndarray:
        """Mean vectors for the given words, shape (n_words, dim)."""
        check_is_fitted(self, "model_")
        if isinstance(words, str):
            words = [words]
        missing = [w for w in words if w not in self.word_index_.id_of]
        if missing:
            raise ValueError(f"words not in vocabulary: {missing}")
        ids = [self.word_index_.id_of[w] for w in words]
        return self.model_.means[ids].copy()

    def sigma(self, word: str) -> float:
        """The learned standard deviation of one word."""
        check_is_fitted(self, "model_")
        return float(self.model_.sigmas[self.word_index_.id_of[word]])

    def similarity(self, word1: str, word2: str) -> float:
        """Cosine similarity of the two mean vectors."""
        u, v = self.transform([word1, word2])
        return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))

    def w2_distance(self, word1: str, word2: str) -> float:
        """Closed-form 2-Wasserstein distance between the two words."""
        check_is_fitted(self, "model_")
        i = self.word_index_.id_of[word1]
        j = self.word_index_.id_of[word2]
        return w2_spherical(self.model_.gaussian(i), self.model_.gaussian(j))

    def kl_divergence(self, word1: str, word2: str) -> float:
        """``KL(word1 || word2)``; small when word1 fits inside word2."""
        check_is_fitted(self, "model_")
        i = self.word_index_.id_of[word1]
        j = self.word_index_.id_of[word2]
        return kl_spherical(self.model_.gaussian(i), self.model_.gaussian(j))

    def entailment_score(self, word1: str, word2: str) -> float:
        """``-KL(word1 || word2)``: higher means word1 more plausibly IS-A word2."""
        return -self.kl_divergence(word1, word2)

    def most_similar(self, word: str, n: int = 10, metric: str = "cosine"):
        """Top-n neighbors of ``word`` under cosine, w2, or kl."""
        check_is_fitted(self, "model_")
        return evaluation.nearest(self.model_, self.word_index_, word, n, metric)

    def evaluate_similarity(self, dataset) -> evaluation.SimilarityResult:
        check_is_fitted(self, "model_")
        if isinstance(dataset, (str, Path)):
            dataset = evaluation.load_similarity_dataset(dataset)
        return evaluation.eval_similarity(self.model_, self.word_index_, dataset)

    def evaluate_entailment(self, dataset) -> evaluation.EntailmentResult:
        check_is_fitted(self, "model_")
        if isinstance(dataset, (str, Path)):
            dataset = evaluation.load_entailment_dataset(dataset)
        return evaluation.eval_entailment(self.model_, self.word_index_, dataset)

    def save(self, path, fmt: str = "text") -> None:
        """Serialize the fitted model (text or binary)."""
        check_is_fitted(self, "model_")
        model_io.save_model(self.model_, self.export_words_, path, fmt=fmt)

    @classmethod
    def load(cls, path) -> "GaussianWordEmbedding":
        """Rebuild a queryable (but corpus-less) estimator from a model file."""
        params, index = model_io.load_model(path)
        est = cls(dim=params.dim)
        est.model_ = params
        est.word_index_ = index
        est.export_words_ = index.words
        return est
