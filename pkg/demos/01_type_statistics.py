"""How concentrated are triple types in a typed knowledge graph?

Builds a synthetic graph whose triples follow a handful of legal
(head-type, relation, tail-type) patterns, then profiles it: the fraction of
realized type signatures (%LTT) and the per-relation type-distribution
matrices whose dark diagonal structure motivates type-aware denoising.
"""
import numpy as np

from kgdenoise import (
    augment_reverse,
    compute_ltt,
    generate_synthetic_kg,
    relation_type_distribution,
)

# six relations, each allowed to connect exactly two type pairs
rng = np.random.default_rng(0)
patterns = set()
for r in range(6):
    while sum(p[1] == r for p in patterns) < 2:
        patterns.add((int(rng.integers(8)), r, int(rng.integers(8))))

kg = generate_synthetic_kg(
    n_types=8, n_relations=6, n_entities=500,
    legal_patterns=patterns, n_triples=10_000, seed=1,
)
print(f"graph: |V|={kg.num_entities} |R|={kg.num_relations} |C|={kg.num_types} "
      f"n={kg.num_triples}")

ltt = compute_ltt(kg)
print(f"%LTT = {100 * ltt:.2f}%  "
      f"({len(kg.signature_set())} of {kg.num_types**2 * kg.num_relations} signatures realized)")

print("\ntype-distribution matrix for relation r0 (rows: head type, cols: tail type):")
print(relation_type_distribution(kg, 0))

# reverse augmentation doubles the graph and exposes asymmetric dependencies
aug = augment_reverse(kg)
print(f"\nafter reverse augmentation: n={aug.num_triples}, |R|={aug.num_relations}")
print("relation names now include:", aug.relations.names()[5:8])
print(f"%LTT of the augmented graph = {100 * compute_ltt(aug):.2f}%")
