"""Beyond detection: fit frequencies, compression, and completion.

Fit frequency (#F) measures how much better the model scores a triple type's
observed members than tail-corrupted negatives; frequent clean types should
sit high, planted-noise types near zero. Compression keeps the triples whose
mask value clears a threshold; completion scores unobserved candidates.

Runtime: under a minute on one core.
"""
import numpy as np

from kgdenoise import (
    TrainConfig,
    Triple,
    augment_reverse,
    complete,
    compress,
    fit_frequency,
    generate_synthetic_kg,
    inject_type_noise,
    train,
)

patterns = {(0, 0, 1), (1, 1, 2), (2, 2, 3), (3, 0, 0), (1, 2, 0), (0, 1, 3)}
clean = generate_synthetic_kg(4, 3, 200, patterns, 4_000, seed=4)
noisy, labels = inject_type_noise(clean, rate=0.05, seed=5)
kg = augment_reverse(noisy)

# gentler sparsity keeps the mask informative for the compression study;
# at the default 0.5 this type-determined benchmark compresses to near-empty
model, _ = train(kg, TrainConfig(seed=42, epochs=30, batch_size=2048, gamma=0.05))

# -- fit frequencies ---------------------------------------------------------------
fit = fit_frequency(kg, model, seed=0)
noise_sigs = {kg.signature(t) for t in labels.noisy}
print("top-5 most frequent triple types:")
for row in fit.rows[:5]:
    sig = (row.head_type, row.relation, row.tail_type)
    tag = "NOISE" if sig in noise_sigs else "clean"
    print(f"  {kg.types.name_of(row.head_type)} -{kg.relations.name_of(row.relation)}-> "
          f"{kg.types.name_of(row.tail_type)}  freq {row.frequency:5d}  "
          f"fit {row.fit:+.3f}  [{tag}]")
noise_fits = [r.fit for r in fit.rows if (r.head_type, r.relation, r.tail_type) in noise_sigs]
print(f"mean fit over planted-noise types: {np.mean(noise_fits):+.3f}")

# -- compression --------------------------------------------------------------------
for threshold in (0.3, 0.5, 0.7):
    kept = compress(kg, model, threshold=threshold)
    planted_kept = sum(t in labels.noisy for t in kept.triples)
    print(f"compression at threshold {threshold}: kept {len(kept.triples)} of "
          f"{kg.num_triples} ({planted_kept} planted noise)")

# -- completion ---------------------------------------------------------------------
# candidates: unobserved pattern-legal triples versus type-illegal ones
legit = kg.signature_set()
rng = np.random.default_rng(7)
candidates = []
while len(candidates) < 200:
    cand = Triple(
        int(rng.integers(kg.num_entities)), 0, int(rng.integers(kg.num_entities))
    )
    if cand not in kg.triple_set:
        candidates.append(cand)
report = complete(kg, model, candidates, threshold=0.5)
legal_hits = sum(kg.signature(t) in legit for t in report.triples)
print(f"completion accepted {len(report.triples)} of {len(candidates)} candidates; "
      f"{legal_hits} are type-legal")
