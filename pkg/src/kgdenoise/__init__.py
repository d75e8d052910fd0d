"""kgdenoise: self-supervised knowledge-graph denoising.

Learns a compact, type-consistent core of a typed knowledge graph with a
masked relational graph auto-encoder, then flags triples whose reconstruction
disagrees with the type-dependent majority.
"""

from .graph import (
    AdjacencyIndex,
    GraphFormatError,
    KnowledgeGraph,
    LoadReport,
    NoiseLabelSet,
    Triple,
    Vocabulary,
    augment_reverse,
    compute_ltt,
    corrupt_type_labels,
    load_graph,
    relation_type_distribution,
    save_tsv,
    strip_reverse,
)
from .synthetic import generate_synthetic_kg, inject_type_noise
from .rgcn import RGCNConfig
from .masker import GumbelConfig, gumbel_discretize, sample_gumbel, score_mask
from .reconstructor import decode_embeddings, recon_score, score_candidates
from .training import (
    Adam,
    LossBreakdown,
    RAEModel,
    TrainConfig,
    mcp_penalty,
    negative_sample,
    reconstruction_loss,
    sparsity_term,
    train,
)
from .detection import (
    CompletionReport,
    CompressionSet,
    EvalMetrics,
    FitReport,
    NoiseReport,
    complete,
    compress,
    detect_noise,
    evaluate,
    fit_frequency,
)

__version__ = "0.1.0"

__all__ = [
    "AdjacencyIndex",
    "Adam",
    "CompletionReport",
    "CompressionSet",
    "EvalMetrics",
    "FitReport",
    "GraphFormatError",
    "GumbelConfig",
    "KnowledgeGraph",
    "LoadReport",
    "LossBreakdown",
    "NoiseLabelSet",
    "NoiseReport",
    "RAEModel",
    "RGCNConfig",
    "TrainConfig",
    "Triple",
    "Vocabulary",
    "augment_reverse",
    "complete",
    "compress",
    "compute_ltt",
    "corrupt_type_labels",
    "decode_embeddings",
    "detect_noise",
    "evaluate",
    "fit_frequency",
    "generate_synthetic_kg",
    "gumbel_discretize",
    "inject_type_noise",
    "load_graph",
    "mcp_penalty",
    "negative_sample",
    "recon_score",
    "reconstruction_loss",
    "relation_type_distribution",
    "sample_gumbel",
    "save_tsv",
    "score_candidates",
    "score_mask",
    "sparsity_term",
    "strip_reverse",
    "train",
]
