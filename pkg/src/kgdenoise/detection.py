"""Post-training inference: noise verdicts, fit frequencies, completion,
compression, and confusion-matrix evaluation against planted labels.

All inference is deterministic: Gumbel noise is frozen at zero and dropout is
off. On an augmented graph, verdicts are reported at forward-triple
granularity; a triple counts as noisy when either its own score or its
reverse counterpart's score trips the threshold, since reverse counterparts
catch much of the noise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import reconstructor as rc
from . import training as tr
from .graph import AdjacencyIndex, KnowledgeGraph, NoiseLabelSet, Triple, strip_reverse

CONVENTIONS = ("low-score-is-noise", "high-score-is-noise")


@dataclass
class NoiseRow:
    triple: Triple
    score: float
    reverse_score: float | None
    mask_value: float
    is_noise: bool


@dataclass
class NoiseReport:
    rows: list[NoiseRow]
    threshold: float
    convention: str

    @property
    def num_flagged(self) -> int:
        return int(sum(row.is_noise for row in self.rows))

    def flagged(self) -> list[Triple]:
        return [row.triple for row in self.rows if row.is_noise]

    def to_json(self, kg: KnowledgeGraph) -> str:
        payload = {
            "format": 1,
            "threshold": self.threshold,
            "convention": self.convention,
            "num_flagged": self.num_flagged,
            "triples": [
                {
                    "head": kg.entities.name_of(row.triple.head),
                    "relation": kg.relations.name_of(row.triple.relation),
                    "tail": kg.entities.name_of(row.triple.tail),
                    "score": row.score,
                    "reverse_score": row.reverse_score,
                    "mask": row.mask_value,
                    "is_noise": row.is_noise,
                }
                for row in self.rows
            ],
        }
        return json.dumps(payload, sort_keys=True)

    def save_json(self, path: str | Path, kg: KnowledgeGraph) -> None:
        Path(path).write_text(self.to_json(kg), encoding="utf-8")

    def save_flagged_tsv(self, path: str | Path, kg: KnowledgeGraph) -> None:
        """Human-readable list of flagged triples with their scores."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("head\trelation\ttail\tscore\treverse_score\n")
            for row in self.rows:
                if not row.is_noise:
                    continue
                h, r, t = kg.triple_name(row.triple)
                rev = "" if row.reverse_score is None else repr(row.reverse_score)
                fh.write(f"{h}\t{r}\t{t}\t{row.score!r}\t{rev}\n")


def load_noise_report(path: str | Path, kg: KnowledgeGraph) -> NoiseReport:
    """Rebuild a NoiseReport from its JSON dump, resolving names to ids."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != 1:
        raise ValueError(f"unsupported noise report format {payload.get('format')!r}")
    rows = [
        NoiseRow(
            triple=Triple(
                kg.entities.id_of(row["head"]),
                kg.relations.id_of(row["relation"]),
                kg.entities.id_of(row["tail"]),
            ),
            score=row["score"],
            reverse_score=row["reverse_score"],
            mask_value=row["mask"],
            is_noise=row["is_noise"],
        )
        for row in payload["triples"]
    ]
    return NoiseReport(rows=rows, threshold=payload["threshold"], convention=payload["convention"])


@dataclass
class FitRow:
    head_type: int
    relation: int
    tail_type: int
    frequency: int
    fit: float


@dataclass
class FitReport:
    rows: list[FitRow]

    def save_csv(self, path: str | Path, kg: KnowledgeGraph) -> None:
        import csv

        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["head_type", "relation", "tail_type", "frequency", "fit_score"])
            for row in self.rows:
                writer.writerow(
                    [
                        kg.types.name_of(row.head_type),
                        kg.relations.name_of(row.relation),
                        kg.types.name_of(row.tail_type),
                        row.frequency,
                        repr(row.fit),
                    ]
                )


@dataclass
class CompressionSet:
    triples: list[Triple]
    threshold: float


@dataclass
class CompletionReport:
    triples: list[Triple]
    scores: list[float]
    threshold: float


@dataclass
class EvalMetrics:
    precision: float
    recall: float
    true_negative_rate: float


def _flag(score: float, threshold: float, convention: str) -> bool:
    if convention == "low-score-is-noise":
        return score < threshold
    return score >= threshold


def inference_scores(kg: KnowledgeGraph, model: tr.RAEModel):
    """Deterministic full-graph pass: (mask scores, embeddings, recon scores)."""
    adjacency = AdjacencyIndex(kg)
    mask = tr.inference_mask(kg, adjacency, model)
    embeddings = tr.inference_embeddings(kg, adjacency, model, mask.discretized)
    heads, rels, tails = kg.triple_arrays()
    scores = rc.recon_score(embeddings, model.recon, heads, rels, tails)
    return mask, embeddings, scores.values


def detect_noise(
    kg: KnowledgeGraph,
    model: tr.RAEModel,
    threshold: float = 0.5,
    convention: str = "low-score-is-noise",
) -> NoiseReport:
    """Score every observed triple and flag noise against the threshold.

    The default convention flags scores *below* the threshold (noise should
    not be reconstructable); `high-score-is-noise` flags scores at or above it.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    model.check_compatible(kg)
    mask, _embeddings, scores = inference_scores(kg, model)
    mask_values = mask.discretized.values

    rows: list[NoiseRow] = []
    if kg.augmented:
        n_fwd = len(strip_reverse(kg).triples)
        index_of = {t: i for i, t in enumerate(kg.triples)}
        for i in range(n_fwd):
            t = kg.triples[i]
            rev = Triple(t.tail, t.relation + kg.num_relations // 2, t.head)
            j = index_of[rev]
            flagged = bool(
                _flag(scores[i], threshold, convention)
                or _flag(scores[j], threshold, convention)
            )
            rows.append(
                NoiseRow(t, float(scores[i]), float(scores[j]), float(mask_values[i]), flagged)
            )
    else:
        for i, t in enumerate(kg.triples):
            rows.append(
                NoiseRow(
                    t,
                    float(scores[i]),
                    None,
                    float(mask_values[i]),
                    bool(_flag(scores[i], threshold, convention)),
                )
            )
    return NoiseReport(rows=rows, threshold=threshold, convention=convention)


def fit_frequency(kg: KnowledgeGraph, model: tr.RAEModel, seed: int = 0) -> FitReport:
    """Per type signature: support frequency and the fit score, i.e. the mean
    over supporting triples of (score minus the mean score of 10 tail-corrupted
    negatives)."""
    model.check_compatible(kg)
    _mask, embeddings, scores = inference_scores(kg, model)
    heads, rels, tails = kg.triple_arrays()

    k = 10  # fixed by the fit-score definition
    rng = np.random.default_rng(seed)
    neg_tails = tr.sample_negative_tails(kg, heads, rels, k, rng)
    neg_scores = rc.recon_score(
        embeddings,
        model.recon,
        np.repeat(heads, k),
        np.repeat(rels, k),
        neg_tails.ravel(),
    ).values.reshape(len(heads), k)
    margins = scores - neg_scores.mean(axis=1)

    groups: dict[tuple[int, int, int], list[float]] = {}
    for i, t in enumerate(kg.triples):
        groups.setdefault(kg.signature(t), []).append(float(margins[i]))
    rows = [
        FitRow(sig[0], sig[1], sig[2], len(vals), float(np.mean(vals)))
        for sig, vals in groups.items()
    ]
    rows.sort(key=lambda r: (-r.frequency, r.head_type, r.relation, r.tail_type))
    return FitReport(rows=rows)


def compress(kg: KnowledgeGraph, model: tr.RAEModel, threshold: float = 0.5) -> CompressionSet:
    """Observed triples whose mask value clears the threshold."""
    model.check_compatible(kg)
    adjacency = AdjacencyIndex(kg)
    mask = tr.inference_mask(kg, adjacency, model)
    keep = [t for t, b in zip(kg.triples, mask.discretized.values) if b >= threshold]
    return CompressionSet(triples=keep, threshold=threshold)


def complete(
    kg: KnowledgeGraph,
    model: tr.RAEModel,
    candidates: list[Triple],
    threshold: float = 0.5,
) -> CompletionReport:
    """Candidates scoring at or above the threshold that are not yet in the graph."""
    model.check_compatible(kg)
    if not candidates:
        return CompletionReport(triples=[], scores=[], threshold=threshold)
    adjacency = AdjacencyIndex(kg)
    mask = tr.inference_mask(kg, adjacency, model)
    embeddings = tr.inference_embeddings(kg, adjacency, model, mask.discretized)
    scores = rc.score_candidates(kg, embeddings, model.recon, candidates)
    keep: list[Triple] = []
    keep_scores: list[float] = []
    for t, s in zip(candidates, scores):
        if s >= threshold and t not in kg.triple_set:
            keep.append(t)
            keep_scores.append(float(s))
    return CompletionReport(triples=keep, scores=keep_scores, threshold=threshold)


def evaluate(report: NoiseReport, labels: NoiseLabelSet) -> EvalMetrics:
    """Confusion-matrix rates with is_noise as the positive class."""
    tp = fp = fn = tn = 0
    for row in report.rows:
        actual = labels.is_noise(row.triple)
        if row.is_noise and actual:
            tp += 1
        elif row.is_noise:
            fp += 1
        elif actual:
            fn += 1
        else:
            tn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    tnr = tn / (tn + fp) if tn + fp else 0.0
    return EvalMetrics(precision=precision, recall=recall, true_negative_rate=tnr)
