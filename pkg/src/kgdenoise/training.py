"""Joint training of the masker and reconstructor.

The objective is binary cross-entropy reconstruction with k tail-corrupted
negatives per positive, plus gamma times a minimax-concave sparsity penalty
on the discretized mask values. Mask scoring and decoding run over the full
graph every step (desk-scale graphs fit comfortably); the reconstruction
loss is evaluated on the shuffled batch.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import masker as mk
from . import reconstructor as rc
from . import rgcn
from .autodiff import Parameter, Tensor
from .graph import AdjacencyIndex, KnowledgeGraph, Triple

SCORE_EPS = 1e-7


class TrainingDiverged(RuntimeError):
    """Raised when the objective stops being finite; names the first bad tensor."""


@dataclass(frozen=True)
class TrainConfig:
    rgcn: rgcn.RGCNConfig = field(default_factory=rgcn.RGCNConfig)
    gamma: float = 0.5
    temperature: float = 1.0
    mcp_alpha: float = 10.0
    mcp_lambda: float = 1.0
    learning_rate: float = 1e-3
    weight_decay: float = 5e-5
    epochs: int = 40
    batch_size: int = 4096
    negatives: int = 10
    seed: int = 41504
    # the verbatim two-branch ratio places Gumbel noise inside the logarithm,
    # which swamps the bounded sigmoid signal and stalls joint training; the
    # textbook relaxation is the default, the printed form stays selectable
    gumbel_variant: str = "standard"
    gumbel_epsilon: float = 1e-10
    checkpoint_every: int = 0  # epochs between checkpoints; 0 = final only

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.mcp_alpha <= 0 or self.mcp_lambda <= 0:
            raise ValueError("mcp_alpha and mcp_lambda must be positive")
        if self.negatives < 1:
            raise ValueError(f"negatives must be >= 1, got {self.negatives}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.gumbel_variant not in mk.GUMBEL_VARIANTS:
            raise ValueError(f"gumbel_variant must be one of {mk.GUMBEL_VARIANTS}")

    def gumbel(self, deterministic: bool) -> mk.GumbelConfig:
        return mk.GumbelConfig(
            temperature=self.temperature,
            seed=self.seed,
            epsilon=self.gumbel_epsilon,
            deterministic=deterministic,
            variant=self.gumbel_variant,
        )


# -- pieces of the objective --------------------------------------------------------


def mcp_penalty(x: float, alpha: float, lam: float) -> float:
    """Minimax concave penalty: lam|x| - x^2/(2 alpha) inside |x| <= alpha*lam,
    flat at alpha*lam^2/2 beyond. Continuous, non-decreasing in |x|, bounded."""
    if alpha <= 0 or lam <= 0:
        raise ValueError("alpha and lam must be positive")
    ax = abs(x)
    if ax <= alpha * lam:
        return lam * ax - x * x / (2.0 * alpha)
    return alpha * lam * lam / 2.0


def sparsity_term(mask_values: Tensor, alpha: float, lam: float) -> Tensor:
    """Mean concave penalty over the discretized mask of all observed triples."""
    return ad.reduce_mean(ad.concave_penalty(mask_values, alpha, lam))


def _triple_codes(kg: KnowledgeGraph) -> np.ndarray:
    heads, rels, tails = kg.triple_arrays()
    return np.sort((heads * kg.num_relations + rels) * kg.num_entities + tails)


def _codes_of(kg: KnowledgeGraph, heads, rels, tails) -> np.ndarray:
    return (heads * kg.num_relations + rels) * kg.num_entities + tails


def sample_negative_tails(
    kg: KnowledgeGraph,
    heads: np.ndarray,
    rels: np.ndarray,
    k: int,
    rng: np.random.Generator,
    observed_codes: np.ndarray | None = None,
    max_rounds: int = 100,
) -> np.ndarray:
    """(m, k) corrupted tails, none of which recreates an observed triple."""
    if kg.num_entities < 2:
        raise ValueError("need at least two entities to corrupt tails")
    if observed_codes is None:
        observed_codes = _triple_codes(kg)
    m = len(heads)
    tails = rng.integers(0, kg.num_entities, size=(m, k))
    h_rep = np.repeat(heads, k).reshape(m, k)
    r_rep = np.repeat(rels, k).reshape(m, k)
    for _ in range(max_rounds):
        codes = _codes_of(kg, h_rep, r_rep, tails)
        pos = np.searchsorted(observed_codes, codes.ravel())
        pos = np.minimum(pos, len(observed_codes) - 1)
        bad = (observed_codes[pos] == codes.ravel()).reshape(m, k)
        n_bad = int(bad.sum())
        if n_bad == 0:
            return tails
        tails[bad] = rng.integers(0, kg.num_entities, size=n_bad)
    raise ValueError(
        f"negative sampling failed to avoid observed triples after {max_rounds} rounds"
    )


def negative_sample(kg: KnowledgeGraph, positive: Triple, k: int, seed: int) -> list[Triple]:
    """k tail-corrupted copies of `positive`, rejecting observed triples."""
    if k == 0:
        return []
    rng = np.random.default_rng(seed)
    tails = sample_negative_tails(
        kg,
        np.array([positive.head]),
        np.array([positive.relation]),
        k,
        rng,
        max_rounds=100,
    )
    return [Triple(positive.head, positive.relation, int(t)) for t in tails[0]]


def reconstruction_loss(pos_scores: Tensor, neg_scores: Tensor) -> Tensor:
    """BCE with scores clamped to [1e-7, 1 - 1e-7]:
    -mean_i[ log s(pos_i) + mean_j log(1 - s(neg_ij)) ]."""
    pos = ad.clamp_max(ad.clamp_min(pos_scores, SCORE_EPS), 1.0 - SCORE_EPS)
    neg = ad.clamp_max(ad.clamp_min(neg_scores, SCORE_EPS), 1.0 - SCORE_EPS)
    return -(ad.reduce_mean(ad.log(pos)) + ad.reduce_mean(ad.log(1.0 - neg)))


# -- optimizer -------------------------------------------------------------------


class Adam:
    """Adam with decoupled weight decay; moments live per parameter."""

    def __init__(
        self,
        params: list[Parameter],
        learning_rate: float = 1e-3,
        weight_decay: float = 5e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.values) for p in params]
        self.v = [np.zeros_like(p.values) for p in params]

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            update = (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + self.eps)
            if self.weight_decay:
                p.values -= self.learning_rate * self.weight_decay * p.values
            p.values -= self.learning_rate * update

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# -- model container --------------------------------------------------------------


def _vocab_digest(kg: KnowledgeGraph) -> str:
    blob = "\n".join(
        ["\x1e".join(kg.entities), "\x1e".join(kg.relations), "\x1e".join(kg.types)]
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class RAEModel:
    """Trained masker + reconstructor plus everything needed to rerun them."""

    masker: mk.MaskerParams
    recon: rc.ReconParams
    config: TrainConfig
    num_entities: int
    num_relations: int
    num_types: int
    vocab_digest: str

    def parameters(self) -> list[Parameter]:
        return self.masker.parameters() + self.recon.parameters()

    def check_compatible(self, kg: KnowledgeGraph) -> None:
        if (
            kg.num_entities != self.num_entities
            or kg.num_relations != self.num_relations
            or kg.num_types != self.num_types
            or _vocab_digest(kg) != self.vocab_digest
        ):
            raise ValueError(
                "graph vocabularies do not match the ones this model was trained on"
            )

    def save(self, checkpoint_path: str | Path, manifest_path: str | Path) -> None:
        ad.save_checkpoint(checkpoint_path, self.parameters())
        manifest = {
            "format": 1,
            "config": config_to_dict(self.config),
            "num_entities": self.num_entities,
            "num_relations": self.num_relations,
            "num_types": self.num_types,
            "vocab_digest": self.vocab_digest,
        }
        Path(manifest_path).write_text(json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, checkpoint_path: str | Path, manifest_path: str | Path) -> "RAEModel":
        manifest = json.loads(Path(manifest_path).read_text())
        config = config_from_dict(manifest["config"])
        model = init_model_sized(
            config,
            num_entities=manifest["num_entities"],
            num_relations=manifest["num_relations"],
            num_types=manifest["num_types"],
            vocab_digest=manifest["vocab_digest"],
        )
        ad.load_checkpoint_into(checkpoint_path, model.parameters())
        return model


def config_to_dict(config: TrainConfig) -> dict:
    out = asdict(config)
    out["rgcn"] = asdict(config.rgcn)
    return out


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["rgcn"] = rgcn.RGCNConfig(**d["rgcn"])
    return TrainConfig(**d)


def init_model_sized(
    config: TrainConfig,
    num_entities: int,
    num_relations: int,
    num_types: int,
    vocab_digest: str,
) -> RAEModel:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    return RAEModel(
        masker=mk.init_masker(config.rgcn, num_types, num_relations, rng),
        recon=rc.init_reconstructor(config.rgcn, num_types, num_relations, rng),
        config=config,
        num_entities=num_entities,
        num_relations=num_relations,
        num_types=num_types,
        vocab_digest=vocab_digest,
    )


def init_model(kg: KnowledgeGraph, config: TrainConfig) -> RAEModel:
    return init_model_sized(
        config, kg.num_entities, kg.num_relations, kg.num_types, _vocab_digest(kg)
    )


# -- loss history -------------------------------------------------------------------


@dataclass
class StepLoss:
    epoch: int
    step: int
    reconstruction: float
    sparsity: float
    total: float
    mean_mask: float


@dataclass
class EpochLoss:
    epoch: int
    reconstruction: float
    sparsity: float
    total: float
    mean_mask: float


@dataclass
class LossBreakdown:
    gamma: float
    steps: list[StepLoss] = field(default_factory=list)
    epochs: list[EpochLoss] = field(default_factory=list)

    def log_step(self, epoch: int, step: int, recon: float, spars: float, mean_mask: float) -> None:
        self.steps.append(
            StepLoss(epoch, step, recon, spars, recon + self.gamma * spars, mean_mask)
        )

    def close_epoch(self, epoch: int) -> None:
        rows = [s for s in self.steps if s.epoch == epoch]
        recon = float(np.mean([s.reconstruction for s in rows]))
        spars = float(np.mean([s.sparsity for s in rows]))
        mask = float(np.mean([s.mean_mask for s in rows]))
        self.epochs.append(EpochLoss(epoch, recon, spars, recon + self.gamma * spars, mask))

    def save_csv(self, path: str | Path) -> None:
        import csv

        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "recon_loss", "sparsity_loss", "total", "mean_mask"])
            for e in self.epochs:
                writer.writerow(
                    [e.epoch, repr(e.reconstruction), repr(e.sparsity), repr(e.total), repr(e.mean_mask)]
                )


# -- the loop --------------------------------------------------------------------


def _first_non_finite(named: list[tuple[str, np.ndarray]]) -> str | None:
    for name, arr in named:
        if not np.all(np.isfinite(arr)):
            return name
    return None


def train(
    kg: KnowledgeGraph,
    config: TrainConfig,
    checkpoint_dir: str | Path | None = None,
) -> tuple[RAEModel, LossBreakdown]:
    """Optimize the joint objective; deterministic given (kg, config).

    The graph must already be reverse-augmented. Returns the trained model and
    the per-step/per-epoch loss history.
    """
    if not kg.augmented:
        raise ValueError("train expects a reverse-augmented graph; call augment_reverse first")

    model = init_model(kg, config)
    adjacency = AdjacencyIndex(kg)
    heads, rels, tails = kg.triple_arrays()
    observed_codes = _triple_codes(kg)
    n = kg.num_triples

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    gumbel_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    negative_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 4]))

    optimizer = Adam(
        model.parameters(),
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    gumbel_config = config.gumbel(deterministic=False)
    history = LossBreakdown(gamma=config.gamma)

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        for step, start in enumerate(range(0, n, config.batch_size)):
            batch = order[start : start + config.batch_size]
            step_loss = _train_step(
                kg,
                adjacency,
                model,
                optimizer,
                gumbel_config,
                heads,
                rels,
                tails,
                batch,
                observed_codes,
                gumbel_rng,
                negative_rng,
                dropout_rng,
            )
            history.log_step(epoch, step, *step_loss)
        history.close_epoch(epoch)
        if (
            checkpoint_dir is not None
            and config.checkpoint_every
            and (epoch + 1) % config.checkpoint_every == 0
        ):
            ad.save_checkpoint(
                Path(checkpoint_dir) / f"epoch{epoch + 1:04d}.ckpt", model.parameters()
            )
    return model, history


def _train_step(
    kg,
    adjacency,
    model: RAEModel,
    optimizer: Adam,
    gumbel_config: mk.GumbelConfig,
    heads,
    rels,
    tails,
    batch,
    observed_codes,
    gumbel_rng,
    negative_rng,
    dropout_rng,
) -> tuple[float, float, float]:
    config = model.config
    n = kg.num_triples

    masker_dropout = rgcn.sample_dropout_masks(model.masker.stack, kg.num_entities, dropout_rng)
    recon_dropout = rgcn.sample_dropout_masks(model.recon.stack, kg.num_entities, dropout_rng)
    noise = (
        mk.sample_gumbel((n,), gumbel_rng, gumbel_config.epsilon),
        mk.sample_gumbel((n,), gumbel_rng, gumbel_config.epsilon),
    )

    scores = mk.mask_graph(
        kg,
        adjacency,
        model.masker,
        gumbel_config,
        noise=noise,
        dropout_masks=masker_dropout,
    )
    embeddings = rc.decode_embeddings(
        kg, adjacency, scores.discretized, model.recon, dropout_masks=recon_dropout
    )

    bh, br, bt = heads[batch], rels[batch], tails[batch]
    neg_tails = sample_negative_tails(
        kg, bh, br, config.negatives, negative_rng, observed_codes
    )
    pos_scores = rc.recon_score(embeddings, model.recon, bh, br, bt)
    neg_scores = ad.reshape(
        rc.recon_score(
            embeddings,
            model.recon,
            np.repeat(bh, config.negatives),
            np.repeat(br, config.negatives),
            neg_tails.ravel(),
        ),
        (len(batch), config.negatives),
    )

    recon_loss = reconstruction_loss(pos_scores, neg_scores)
    spars = sparsity_term(scores.discretized, config.mcp_alpha, config.mcp_lambda)
    total = recon_loss + config.gamma * spars

    if not np.isfinite(total.values):
        culprit = _first_non_finite(
            [
                ("mask logits", scores.logits.values),
                ("mask sigmoid", scores.sigmoids.values),
                ("discretized mask", scores.discretized.values),
                ("entity embeddings", embeddings.values),
                ("positive scores", pos_scores.values),
                ("negative scores", neg_scores.values),
                ("reconstruction loss", np.atleast_1d(recon_loss.values)),
                ("sparsity term", np.atleast_1d(spars.values)),
            ]
        )
        raise TrainingDiverged(
            f"objective became non-finite; first non-finite tensor: {culprit or 'total loss'}"
        )

    ad.backward(total)
    optimizer.step()
    optimizer.zero_grad()
    return (
        float(recon_loss.values),
        float(spars.values),
        float(np.mean(scores.discretized.values)),
    )


def inference_mask(
    kg: KnowledgeGraph,
    adjacency: AdjacencyIndex,
    model: RAEModel,
) -> mk.MaskScores:
    """Deterministic mask (noise frozen at zero, no dropout)."""
    return mk.mask_graph(
        kg, adjacency, model.masker, model.config.gumbel(deterministic=True)
    )


def inference_embeddings(
    kg: KnowledgeGraph,
    adjacency: AdjacencyIndex,
    model: RAEModel,
    mask_values: Tensor,
) -> Tensor:
    return rc.decode_embeddings(kg, adjacency, mask_values, model.recon)
