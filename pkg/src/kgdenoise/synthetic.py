"""Synthetic typed graphs with planted type-inconsistent noise.

Generation is pattern-restricted uniform sampling: triples are drawn without
replacement from the set of all (h, r, t) whose type signature is in the
allowed pattern set. Injection adds triples whose signature is *not* in the
clean graph's signature set, which is exactly the noise the detector targets.
"""
from __future__ import annotations

import numpy as np

from .graph import KnowledgeGraph, NoiseLabelSet, Triple, Vocabulary, _round_half_up

Pattern = tuple[int, int, int]  # (head type, relation, tail type)


def generate_synthetic_kg(
    n_types: int,
    n_relations: int,
    n_entities: int,
    legal_patterns: set[Pattern],
    n_triples: int,
    seed: int,
) -> KnowledgeGraph:
    """Entities typed round-robin; triples drawn uniformly from legal patterns."""
    if n_types < 1 or n_relations < 1 or n_entities < 1:
        raise ValueError("n_types, n_relations, n_entities must be positive")
    for ch, r, ct in legal_patterns:
        if not (0 <= ch < n_types and 0 <= ct < n_types and 0 <= r < n_relations):
            raise ValueError(f"pattern {(ch, r, ct)} references invalid ids")

    entities = Vocabulary(f"e{i}" for i in range(n_entities))
    relations = Vocabulary(f"r{i}" for i in range(n_relations))
    types = Vocabulary(f"t{i}" for i in range(n_types))
    type_of = np.arange(n_entities, dtype=np.int64) % n_types

    members = [np.flatnonzero(type_of == c) for c in range(n_types)]
    patterns = sorted(legal_patterns)
    capacities = [len(members[ch]) * len(members[ct]) for ch, _r, ct in patterns]
    total = int(sum(capacities))
    if n_triples > total:
        tightest = patterns[int(np.argmin(capacities))] if patterns else None
        raise ValueError(
            f"cannot place {n_triples} triples: only {total} (head, relation, tail) "
            f"combinations are compatible with the legal patterns; "
            f"smallest pattern is {tightest} with {min(capacities, default=0)}"
        )

    candidates = np.zeros((total, 3), dtype=np.int64)
    offset = 0
    for (ch, r, ct), cap in zip(patterns, capacities):
        if cap == 0:
            continue
        hh, tt = np.meshgrid(members[ch], members[ct], indexing="ij")
        block = candidates[offset : offset + cap]
        block[:, 0] = hh.ravel()
        block[:, 1] = r
        block[:, 2] = tt.ravel()
        offset += cap

    rng = np.random.default_rng(seed)
    picked = rng.choice(total, size=n_triples, replace=False) if n_triples else []
    triples = [Triple(*candidates[i]) for i in picked]
    return KnowledgeGraph(entities, relations, types, triples, type_of)


def inject_type_noise(
    kg: KnowledgeGraph, rate: float, seed: int
) -> tuple[KnowledgeGraph, NoiseLabelSet]:
    """Add round(rate * n) triples with signatures outside the clean graph's set.

    Each injected triple is an observed triple with its head or tail replaced
    by a random entity, rejection-sampled until the type signature is
    illegitimate and the triple is new. Labels mark exactly the injected set.
    """
    if rate < 0:
        raise ValueError(f"rate must be non-negative, got {rate}")
    if kg.augmented:
        raise ValueError("inject noise before reverse augmentation, not after")
    count = _round_half_up(rate * kg.num_triples)
    if count == 0:
        return kg, NoiseLabelSet()

    legit = kg.signature_set()
    if len(legit) >= kg.num_types * kg.num_relations * kg.num_types:
        raise ValueError("every type signature is legitimate; no noise constructible")

    rng = np.random.default_rng(seed)
    existing = set(kg.triple_set)
    injected: list[Triple] = []
    attempts = 0
    max_attempts = max(1000, 1000 * count)
    while len(injected) < count:
        attempts += 1
        if attempts > max_attempts:
            raise ValueError(
                f"gave up injecting noise after {max_attempts} attempts "
                f"({len(injected)}/{count} placed); graph may be too saturated"
            )
        base = kg.triples[int(rng.integers(kg.num_triples))]
        replacement = int(rng.integers(kg.num_entities))
        if rng.integers(2) == 0:
            cand = Triple(replacement, base.relation, base.tail)
        else:
            cand = Triple(base.head, base.relation, replacement)
        if cand in existing:
            continue
        if kg.signature(cand) in legit:
            continue
        existing.add(cand)
        injected.append(cand)

    noisy = KnowledgeGraph(
        entities=kg.entities,
        relations=kg.relations,
        types=kg.types,
        triples=list(kg.triples) + injected,
        type_of=kg.type_of,
        augmented=False,
    )
    return noisy, NoiseLabelSet(injected)
