"""Compact-set encoder: scores observed triples and discretizes the scores.

Scoring embeds the full observed graph (unweighted), then runs an MLP over
the concatenated head/relation/tail embeddings. Discretization follows the
two-branch Gumbel ratio

    exp(log(sig(q) + p) / tau) /
        (exp(log(sig(q) + p) / tau) + exp(log(sig(1 - q) + p') / tau))

with Gumbel(0, 1) noise p, p' inside the logarithms and an epsilon clamp
guarding non-positive log arguments. The complementary branch really is
sig(1 - q), a logit-space complement; `variant="standard"` switches to the
textbook relaxation softmax((log sig(q) + p) / tau, (log(1 - sig(q)) + p') / tau).
Mask values exist only for observed triples; nothing outside the graph is
ever scored.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rgcn
from .autodiff import Parameter, Tensor
from .graph import AdjacencyIndex, KnowledgeGraph

GUMBEL_VARIANTS = ("ratio", "standard")


@dataclass(frozen=True)
class GumbelConfig:
    temperature: float = 1.0
    seed: int = 0
    epsilon: float = 1e-10
    deterministic: bool = False  # freeze noise at 0 (inference, gradient checks)
    variant: str = "ratio"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 < self.epsilon <= 1e-6:
            raise ValueError(f"epsilon must be in (0, 1e-6], got {self.epsilon}")
        if self.variant not in GUMBEL_VARIANTS:
            raise ValueError(f"variant must be one of {GUMBEL_VARIANTS}")


@dataclass
class MaskerParams:
    """Encoder parameters: R-GCN stack, relation embeddings, MLP scorer."""

    stack: rgcn.RGCNStack
    relation_embeddings: Parameter
    mlp_w1: Parameter
    mlp_b1: Parameter
    mlp_w2: Parameter
    mlp_b2: Parameter

    def parameters(self) -> list[Parameter]:
        return self.stack.parameters() + [
            self.relation_embeddings,
            self.mlp_w1,
            self.mlp_b1,
            self.mlp_w2,
            self.mlp_b2,
        ]


@dataclass
class MaskScores:
    """Per observed triple, in triple order: raw logit, sigmoid, discretized."""

    logits: Tensor
    sigmoids: Tensor
    discretized: Tensor = field(default=None)  # type: ignore[assignment]


def init_masker(
    config: rgcn.RGCNConfig,
    num_types: int,
    num_relations: int,
    rng: np.random.Generator,
    prefix: str = "masker",
) -> MaskerParams:
    d = config.hidden_dim
    return MaskerParams(
        stack=rgcn.init_stack(config, num_types, num_relations, rng, prefix),
        relation_embeddings=Parameter(
            0.1 * rng.standard_normal((num_relations, d)), f"{prefix}.rel_emb"
        ),
        mlp_w1=Parameter(rgcn.xavier_uniform((3 * d, d), rng), f"{prefix}.mlp.w1"),
        mlp_b1=Parameter(np.zeros(d), f"{prefix}.mlp.b1"),
        mlp_w2=Parameter(rgcn.xavier_uniform((d, 1), rng), f"{prefix}.mlp.w2"),
        mlp_b2=Parameter(np.zeros(1), f"{prefix}.mlp.b2"),
    )


def score_mask(
    kg: KnowledgeGraph,
    adjacency: AdjacencyIndex,
    params: MaskerParams,
    dropout_masks: list[np.ndarray] | None = None,
) -> MaskScores:
    """Raw and sigmoid retention scores for every observed triple."""
    heads, rels, tails = kg.triple_arrays()
    plan_h, plan_r, plan_t = adjacency.triple_plans()
    embeddings = rgcn.encode(adjacency, params.stack, dropout_masks=dropout_masks)
    x = ad.concat(
        [
            ad.gather_rows(embeddings, heads, plan=plan_h),
            ad.gather_rows(params.relation_embeddings, rels, plan=plan_r),
            ad.gather_rows(embeddings, tails, plan=plan_t),
        ],
        axis=1,
    )
    hidden = ad.relu(ad.add(x @ params.mlp_w1, params.mlp_b1))
    logits = ad.reshape(ad.add(hidden @ params.mlp_w2, params.mlp_b2), (kg.num_triples,))
    return MaskScores(logits=logits, sigmoids=ad.sigmoid(logits))


def sample_gumbel(
    shape: tuple[int, ...], seed: int | np.random.Generator, epsilon: float = 1e-10
) -> np.ndarray:
    """i.i.d. Gumbel(0, 1) noise via -log(-log(u)), u uniform in (eps, 1-eps)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.uniform(epsilon, 1.0 - epsilon, size=shape)
    return -np.log(-np.log(u))


def gumbel_discretize(
    logits: Tensor,
    config: GumbelConfig,
    noise: tuple[np.ndarray, np.ndarray] | None = None,
) -> Tensor:
    """Push retention logits toward {0, 1}; output is always strictly inside (0, 1).

    `noise` supplies the pair (p, p'); omitted, it is drawn from config.seed,
    or frozen at zero when config.deterministic.
    """
    shape = logits.values.shape
    if config.deterministic:
        p = np.zeros(shape)
        p_prime = np.zeros(shape)
    elif noise is None:
        rng = np.random.default_rng(config.seed)
        p = sample_gumbel(shape, rng, config.epsilon)
        p_prime = sample_gumbel(shape, rng, config.epsilon)
    else:
        p, p_prime = noise

    eps = config.epsilon
    if config.variant == "ratio":
        log_num = ad.log(ad.clamp_min(ad.sigmoid(logits) + ad.constant(p), eps))
        log_sec = ad.log(ad.clamp_min(ad.sigmoid(1.0 - logits) + ad.constant(p_prime), eps))
    else:
        s = ad.sigmoid(logits)
        log_num = ad.log(ad.clamp_min(s, eps)) + ad.constant(p)
        log_sec = ad.log(ad.clamp_min(1.0 - s, eps)) + ad.constant(p_prime)
    # ratio exp(a/tau) / (exp(a/tau) + exp(b/tau)), computed as a stable sigmoid;
    # the final clamp keeps float64 saturation strictly inside (0, 1)
    ratio = ad.sigmoid((log_num - log_sec) * (1.0 / config.temperature))
    return ad.clamp_max(ad.clamp_min(ratio, 1e-15), 1.0 - 1e-15)


def mask_graph(
    kg: KnowledgeGraph,
    adjacency: AdjacencyIndex,
    params: MaskerParams,
    config: GumbelConfig,
    noise: tuple[np.ndarray, np.ndarray] | None = None,
    dropout_masks: list[np.ndarray] | None = None,
) -> MaskScores:
    """score_mask followed by gumbel_discretize; the full encoder pass."""
    scores = score_mask(kg, adjacency, params, dropout_masks=dropout_masks)
    scores.discretized = gumbel_discretize(scores.logits, config, noise=noise)
    return scores


def dump_mask_csv(path, kg: KnowledgeGraph, scores: MaskScores) -> None:
    """CSV dump `head, relation, tail, logit, sigmoid, discretized`."""
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["head", "relation", "tail", "logit", "sigmoid", "discretized"])
        q = scores.logits.values
        s = scores.sigmoids.values
        b = scores.discretized.values
        for i, t in enumerate(kg.triples):
            h, r, tl = kg.triple_name(t)
            writer.writerow([h, r, tl, repr(float(q[i])), repr(float(s[i])), repr(float(b[i]))])
