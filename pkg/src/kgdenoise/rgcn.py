"""Relational graph convolution over a typed graph.

Layer rule, per entity h:

    z_h' = act( sum_r sum_{j in N_h^r} (w_hrj / c_hr) W_r z_j  +  W_0 z_h )

with w_hrj an optional per-triple weight so a decoder can propagate over a
soft-masked graph, and c_hr the out-degree of h under r counting edges with
nonzero weight (all of them when weights are absent or soft, so the
normalizer is constant in the parameters; exact zeros leave the count, so a
binary-masked pass equals decoding the kept subgraph). Hidden layers use the
configured activation; the final layer emits pre-activation embeddings.
Hidden W_r are block-diagonal; the first layer is a dense types->hidden map
per relation because one-hot inputs make block structure meaningless there.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .graph import AdjacencyIndex, KnowledgeGraph

_ACTIVATIONS = {"relu": ad.relu, "sigmoid": ad.sigmoid, "identity": lambda t: t}


@dataclass(frozen=True)
class RGCNConfig:
    layers: int = 2
    hidden_dim: int = 32
    num_blocks: int = 4
    dropout: float = 0.1
    activation: str = "relu"

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.hidden_dim % self.num_blocks != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by num_blocks {self.num_blocks}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class RGCNLayerParams:
    """One layer's weights: a per-relation transform plus the self-loop W_0.

    Hidden layers store each W_r as `num_blocks` square blocks, so the
    block-diagonal structure survives any optimizer step by construction.
    First-layer transforms are dense (one |C| x d matrix per relation).
    """

    relation_weights: list[list[Parameter]]  # [relation][block]; dense = single block
    self_weight: Parameter
    block_diagonal: bool

    def relation_matrix(self, r: int) -> Tensor:
        blocks = self.relation_weights[r]
        if not self.block_diagonal:
            return blocks[0]
        return ad.block_diag(blocks)


@dataclass
class RGCNStack:
    config: RGCNConfig
    layers: list[RGCNLayerParams] = field(default_factory=list)

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for layer in self.layers:
            for blocks in layer.relation_weights:
                out.extend(blocks)
            out.append(layer.self_weight)
        return out


def xavier_uniform(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


def init_stack(
    config: RGCNConfig,
    num_types: int,
    num_relations: int,
    rng: np.random.Generator,
    prefix: str,
) -> RGCNStack:
    """Fresh Xavier-initialized parameters sized for `config` on this graph."""
    layers: list[RGCNLayerParams] = []
    d = config.hidden_dim
    blk = d // config.num_blocks
    for l in range(config.layers):
        if l == 0:
            rel = [
                [Parameter(xavier_uniform((num_types, d), rng), f"{prefix}.l0.rel{r}")]
                for r in range(num_relations)
            ]
            self_w = Parameter(xavier_uniform((num_types, d), rng), f"{prefix}.l0.self")
            layers.append(RGCNLayerParams(rel, self_w, block_diagonal=False))
        else:
            rel = [
                [
                    Parameter(xavier_uniform((blk, blk), rng), f"{prefix}.l{l}.rel{r}.b{b}")
                    for b in range(config.num_blocks)
                ]
                for r in range(num_relations)
            ]
            self_w = Parameter(xavier_uniform((d, d), rng), f"{prefix}.l{l}.self")
            layers.append(RGCNLayerParams(rel, self_w, block_diagonal=True))
    return RGCNStack(config, layers)


def init_type_features(kg: KnowledgeGraph) -> np.ndarray:
    """|V| x |C| one-hot matrix; row h is the one-hot of type_of(h)."""
    feats = np.zeros((kg.num_entities, kg.num_types), dtype=ad.DTYPE)
    feats[np.arange(kg.num_entities), kg.type_of] = 1.0
    return feats


def layer_forward(
    features: Tensor,
    adjacency: AdjacencyIndex,
    layer: RGCNLayerParams,
    edge_weights: Tensor | None = None,
    activation: str = "relu",
    dropout_mask: np.ndarray | None = None,
    onehot_rows: np.ndarray | None = None,
) -> Tensor:
    """One relational convolution step over the whole graph.

    When `onehot_rows` is given, `features` is taken to be the one-hot matrix
    of those rows (and may be None), so every `features @ W` collapses to row
    selection `W[onehot_rows]` (bit-identical, far cheaper).
    """
    if onehot_rows is None and features.shape[1] != layer.self_weight.shape[0]:
        raise ValueError(
            f"layer_forward: feature width {features.shape[1]} != "
            f"layer input width {layer.self_weight.shape[0]}"
        )
    if edge_weights is not None and edge_weights.shape != (adjacency.num_triples,):
        raise ValueError(
            f"edge_weights shape {edge_weights.shape} != ({adjacency.num_triples},)"
        )
    heads, rels, tails, tail_types, inv_degree, scatter_plan, hidden_plan, type_plan = (
        adjacency.fused_edges()
    )
    num_relations = adjacency.num_relations
    if onehot_rows is None:
        out = features @ layer.self_weight
        # transform the compact entity matrix by every relation at once, then
        # pick per-edge rows out of the (entity, relation)-indexed reshape
        stacked = ad.concat(
            [layer.relation_matrix(r) for r in range(num_relations)], axis=1
        )
        transformed = ad.reshape(
            features @ stacked,
            (adjacency.num_entities * num_relations, layer.self_weight.shape[1]),
        )
        msgs = ad.gather_rows(transformed, tails * num_relations + rels, plan=hidden_plan)
    else:
        onehot_rows = np.asarray(onehot_rows, dtype=np.int64)
        out = ad.gather_rows(layer.self_weight, onehot_rows)
        # one-hot inputs make the transform a row lookup in the stacked weights
        stacked = ad.concat(
            [layer.relation_matrix(r) for r in range(num_relations)], axis=0
        )
        msgs = ad.gather_rows(
            stacked, rels * adjacency.num_types + tail_types, plan=type_plan
        )
    if edge_weights is None:
        coef = ad.constant(inv_degree)
    else:
        coef = ad.mul(
            edge_weights, ad.constant(adjacency.support_inv_degree(edge_weights.values))
        )
    msgs = ad.scale_rows(msgs, coef)
    out = out + ad.scatter_add_rows(msgs, heads, adjacency.num_entities, plan=scatter_plan)
    if dropout_mask is not None:
        out = ad.dropout(out, dropout_mask)
    return _ACTIVATIONS[activation](out)


def encode(
    adjacency: AdjacencyIndex,
    stack: RGCNStack,
    edge_weights: Tensor | None = None,
    dropout_masks: list[np.ndarray] | None = None,
) -> Tensor:
    """Stack the configured layers from one-hot type features to embeddings.

    Layer 0 consumes the one-hot type matrix implicitly (row selection);
    hidden layers apply the configured activation; the last layer is linear.
    """
    if dropout_masks is not None and len(dropout_masks) != len(stack.layers):
        raise ValueError("need one dropout mask per layer")
    h: Tensor | None = None
    last = len(stack.layers) - 1
    for l, layer in enumerate(stack.layers):
        h = layer_forward(
            h,
            adjacency,
            layer,
            edge_weights=edge_weights,
            activation=stack.config.activation if l < last else "identity",
            dropout_mask=dropout_masks[l] if dropout_masks is not None else None,
            onehot_rows=adjacency.type_of if l == 0 else None,
        )
    return h


def sample_dropout_masks(
    stack: RGCNStack, num_entities: int, rng: np.random.Generator
) -> list[np.ndarray] | None:
    """Per-layer pre-activation dropout masks, or None when dropout is off."""
    rate = stack.config.dropout
    if rate == 0.0:
        return None
    return [
        ad.sample_dropout_mask((num_entities, stack.config.hidden_dim), rate, rng)
        for _ in stack.layers
    ]
