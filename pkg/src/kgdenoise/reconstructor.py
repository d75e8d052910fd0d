"""Graph decoder: re-embeds entities over the mask-weighted graph and scores
triples for existence with a sigmoid-squashed trilinear (DistMult) product.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rgcn
from .autodiff import Parameter, Tensor
from .graph import AdjacencyIndex, KnowledgeGraph, Triple


@dataclass
class ReconParams:
    """Decoder parameters: R-GCN stack plus learnable relation embeddings."""

    stack: rgcn.RGCNStack
    relation_embeddings: Parameter

    def parameters(self) -> list[Parameter]:
        return self.stack.parameters() + [self.relation_embeddings]


def init_reconstructor(
    config: rgcn.RGCNConfig,
    num_types: int,
    num_relations: int,
    rng: np.random.Generator,
    prefix: str = "recon",
) -> ReconParams:
    return ReconParams(
        stack=rgcn.init_stack(config, num_types, num_relations, rng, prefix),
        relation_embeddings=Parameter(
            0.1 * rng.standard_normal((num_relations, config.hidden_dim)),
            f"{prefix}.rel_emb",
        ),
    )


def decode_embeddings(
    kg: KnowledgeGraph,
    adjacency: AdjacencyIndex,
    mask_values: Tensor,
    params: ReconParams,
    dropout_masks: list[np.ndarray] | None = None,
) -> Tensor:
    """Entity embeddings from message passing scaled by per-triple mask values."""
    if mask_values.shape != (kg.num_triples,):
        raise ValueError(
            f"mask covers {mask_values.shape} values, graph has {kg.num_triples} triples"
        )
    return rgcn.encode(
        adjacency,
        params.stack,
        edge_weights=mask_values,
        dropout_masks=dropout_masks,
    )


def recon_score(
    embeddings: Tensor,
    params: ReconParams,
    heads: np.ndarray,
    rels: np.ndarray,
    tails: np.ndarray,
) -> Tensor:
    """sigmoid(sum_k Z[h]_k * Z[r]_k * Z[t]_k) per queried triple; always in (0, 1)."""
    zh = ad.gather_rows(embeddings, heads)
    zr = ad.gather_rows(params.relation_embeddings, rels)
    zt = ad.gather_rows(embeddings, tails)
    return ad.sigmoid(ad.reduce_sum(ad.mul(ad.mul(zh, zr), zt), axis=1))


def score_triples(embeddings: Tensor, params: ReconParams, triples: list[Triple]) -> Tensor:
    if not triples:
        return ad.constant(np.zeros(0))
    arr = np.asarray(triples, dtype=np.int64)
    return recon_score(embeddings, params, arr[:, 0], arr[:, 1], arr[:, 2])


def score_candidates(
    kg: KnowledgeGraph,
    embeddings: Tensor,
    params: ReconParams,
    candidates: list[Triple],
) -> np.ndarray:
    """Existence scores for an explicit candidate list (never the full cube)."""
    for t in candidates:
        if not (0 <= t.head < kg.num_entities and 0 <= t.tail < kg.num_entities):
            raise ValueError(f"candidate {t} references an unknown entity")
        if not 0 <= t.relation < kg.num_relations:
            raise ValueError(f"candidate {t} references an unknown relation")
    return score_triples(embeddings, params, candidates).values


def dump_scores_csv(path, kg: KnowledgeGraph, triples: list[Triple], scores: np.ndarray) -> None:
    """CSV dump `head, relation, tail, score`."""
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["head", "relation", "tail", "score"])
        for t, s in zip(triples, scores):
            h, r, tl = kg.triple_name(t)
            writer.writerow([h, r, tl, repr(float(s))])
