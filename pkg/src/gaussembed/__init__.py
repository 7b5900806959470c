"""Gaussian word embeddings with a closed-form 2-Wasserstein training energy.

Words are spherical Gaussians (a mean vector plus one standard deviation).
The trainer runs skip-gram-style negative sampling where the energy of a
pair is ``-W2 + bias``; knowledge-graph relations can semi-supervise the
run, with the asymmetric IsA relation trained through a directional KL
energy.  The package also ships the evaluation harness (word-similarity
Spearman, entailment best-F1/AP, nearest neighbors), serialization in text
and binary formats, an SVG circle visualization, and a CLI.
"""

from .corpus import (
    SamplingTables,
    TrainingPair,
    Vocabulary,
    WordIndex,
    build_sampling_tables,
    build_vocabulary,
    count_pairs,
    discard_probability,
    generate_pairs,
    iter_pair_blocks,
    load_vocabulary,
    save_vocabulary,
)
from .estimator import GaussianWordEmbedding
from .evaluation import (
    EntailmentDataset,
    EntailmentResult,
    EvalReport,
    SimilarityDataset,
    SimilarityResult,
    eval_entailment,
    eval_similarity,
    load_entailment_dataset,
    load_similarity_dataset,
    nearest,
    spearman,
)
from .geometry import (
    DiagonalGaussian,
    EnergyGradient,
    GaussianWord,
    energy_kl,
    energy_w2,
    grad_energy_kl,
    grad_energy_w2,
    kl_spherical,
    w2_diagonal,
    w2_spherical,
)
from .model_io import ModelFormatError, load_model, save_model
from .relations import (
    RelationStore,
    RelationTriple,
    load_relations,
    resample_negatives,
    sample_target,
)
from .training import (
    EmbeddingMatrix,
    LossSample,
    TrainConfig,
    TrainReport,
    init_params,
    sgd_step,
    train,
    wdg_ei_loss,
    wdg_loss,
)
from .viz import VizSpec, build_viz_spec, emit_viz, pca_project

__version__ = "0.1.0"

__all__ = [
    "DiagonalGaussian",
    "EmbeddingMatrix",
    "EnergyGradient",
    "EntailmentDataset",
    "EntailmentResult",
    "EvalReport",
    "GaussianWord",
    "GaussianWordEmbedding",
    "LossSample",
    "ModelFormatError",
    "RelationStore",
    "RelationTriple",
    "SamplingTables",
    "SimilarityDataset",
    "SimilarityResult",
    "TrainConfig",
    "TrainReport",
    "TrainingPair",
    "VizSpec",
    "Vocabulary",
    "WordIndex",
    "build_sampling_tables",
    "build_viz_spec",
    "build_vocabulary",
    "count_pairs",
    "discard_probability",
    "emit_viz",
    "energy_kl",
    "energy_w2",
    "eval_entailment",
    "eval_similarity",
    "generate_pairs",
    "grad_energy_kl",
    "grad_energy_w2",
    "init_params",
    "iter_pair_blocks",
    "kl_spherical",
    "load_entailment_dataset",
    "load_model",
    "load_relations",
    "load_similarity_dataset",
    "load_vocabulary",
    "nearest",
    "pca_project",
    "resample_negatives",
    "sample_target",
    "save_model",
    "save_vocabulary",
    "sgd_step",
    "spearman",
    "train",
    "w2_diagonal",
    "w2_spherical",
    "wdg_ei_loss",
    "wdg_loss",
]
