"""Acceptance suite: one test per release criterion, each printing a verdict
line (run with `pytest tests/test_acceptance.py -v -s`). Dataset-dependent
statistics checks live in test_dataset_stats.py behind --with-data.
"""
import time

import numpy as np
import pytest

from kgdenoise import (
    augment_reverse,
    compute_ltt,
    corrupt_type_labels,
    detect_noise,
    evaluate,
    fit_frequency,
    generate_synthetic_kg,
    inject_type_noise,
    relation_type_distribution,
    strip_reverse,
)
from kgdenoise import autodiff as ad
from kgdenoise import masker as mk
from kgdenoise import reconstructor as rc
from kgdenoise import training as tr
from kgdenoise.cli import default_benchmark_patterns, main
from kgdenoise.graph import AdjacencyIndex, KnowledgeGraph, Triple, Vocabulary
from kgdenoise.masker import GumbelConfig, gumbel_discretize, sample_gumbel
from kgdenoise.rgcn import RGCNConfig, encode, init_stack
from kgdenoise.training import TrainConfig, mcp_penalty

SEEDS = (41504, 42, 0, 1, 2)


def verdict(criterion: int, name: str, ok: bool, detail: str = "") -> None:
    print(f"[criterion {criterion:02d}] {'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())
    assert ok, f"criterion {criterion} ({name}) failed: {detail}"


# -- criterion 1: %LTT oracle equivalence ----------------------------------------


def test_criterion_01_ltt_matches_bruteforce_enumeration():
    rng = np.random.default_rng(101)
    t0 = time.time()
    checked = 0
    for _ in range(50):
        n_types = int(rng.integers(2, 12))
        n_relations = int(rng.integers(1, 8))
        while n_types * n_types * n_relations > 100_000:
            n_types = int(rng.integers(2, 12))
            n_relations = int(rng.integers(1, 8))
        n_entities = int(rng.integers(n_types, 60))
        patterns = set()
        for _ in range(int(rng.integers(1, 9))):
            patterns.add(
                (
                    int(rng.integers(n_types)),
                    int(rng.integers(n_relations)),
                    int(rng.integers(n_types)),
                )
            )
        capacity = sum(
            int(np.sum(np.arange(n_entities) % n_types == ch))
            * int(np.sum(np.arange(n_entities) % n_types == ct))
            for ch, _r, ct in patterns
        )
        n_triples = int(rng.integers(1, max(2, min(400, capacity))))
        kg = generate_synthetic_kg(
            n_types, n_relations, n_entities, patterns, n_triples, seed=int(rng.integers(2**31))
        )
        # oracle: walk the full C x R x C grid, testing each cell against the
        # per-relation count matrices
        realized = 0
        for r in range(n_relations):
            mat = relation_type_distribution(kg, r)
            for ch in range(n_types):
                for ct in range(n_types):
                    realized += int(mat[ch, ct] > 0)
        grid = n_types * n_relations * n_types
        assert compute_ltt(kg) == realized / grid
        checked += 1
    elapsed = time.time() - t0
    verdict(1, "%LTT equals brute-force enumeration", checked == 50 and elapsed < 10.0,
            f"(50 graphs, {elapsed:.2f}s)")


# -- criterion 3: gradient fidelity on the full objective --------------------------


def test_criterion_03_full_objective_gradient_fidelity():
    t0 = time.time()
    kg = generate_synthetic_kg(
        n_types=4,
        n_relations=3,
        n_entities=12,
        legal_patterns={(0, 0, 1), (1, 1, 2), (2, 2, 3), (3, 0, 0)},
        n_triples=24,
        seed=31,
    )
    kg = augment_reverse(kg)
    config = TrainConfig(
        rgcn=RGCNConfig(layers=2, hidden_dim=8, num_blocks=2, dropout=0.1),
        seed=5,
        epochs=0,
    )
    model = tr.init_model(kg, config)
    adjacency = AdjacencyIndex(kg)
    heads, rels, tails = kg.triple_arrays()

    # freeze every stochastic ingredient once
    rng = np.random.default_rng(77)
    masker_masks = [
        ad.sample_dropout_mask((kg.num_entities, 8), 0.1, rng) for _ in range(2)
    ]
    recon_masks = [
        ad.sample_dropout_mask((kg.num_entities, 8), 0.1, rng) for _ in range(2)
    ]
    neg_tails = tr.sample_negative_tails(kg, heads, rels, 5, rng)
    gumbel = config.gumbel(deterministic=True)

    def objective():
        scores = mk.mask_graph(
            kg, adjacency, model.masker, gumbel, dropout_masks=masker_masks
        )
        z = rc.decode_embeddings(
            kg, adjacency, scores.discretized, model.recon, dropout_masks=recon_masks
        )
        pos = rc.recon_score(z, model.recon, heads, rels, tails)
        neg = ad.reshape(
            rc.recon_score(
                z,
                model.recon,
                np.repeat(heads, 5),
                np.repeat(rels, 5),
                neg_tails.ravel(),
            ),
            (len(heads), 5),
        )
        return tr.reconstruction_loss(pos, neg) + config.gamma * tr.sparsity_term(
            scores.discretized, config.mcp_alpha, config.mcp_lambda
        )

    report = ad.grad_check(objective, model.parameters())
    worst = max(report.values())
    elapsed = time.time() - t0
    verdict(3, "full-objective gradient vs central differences", worst < 1e-4 and elapsed < 30.0,
            f"(max rel err {worst:.2e}, {len(report)} parameters, {elapsed:.1f}s)")


# -- criterion 4: MCP correctness --------------------------------------------------


def test_criterion_04_mcp_penalty():
    alpha, lam = 10.0, 1.0
    breakpoint_ = alpha * lam
    below = np.nextafter(breakpoint_, 0.0)
    above = np.nextafter(breakpoint_, np.inf)
    continuity = abs(mcp_penalty(below, alpha, lam) - mcp_penalty(above, alpha, lam))
    value = mcp_penalty(0.5, alpha, lam)
    plateau = [mcp_penalty(x, alpha, lam) for x in (10.5, 20.0, 1e6)]
    grid = np.linspace(0.0, 3 * breakpoint_, 10_000)
    vals = np.array([mcp_penalty(x, alpha, lam) for x in grid])
    ok = (
        continuity < 1e-12
        and abs(value - 0.4875) < 1e-12
        and all(abs(p - 5.0) < 1e-12 for p in plateau)
        and bool(np.all(np.diff(vals) >= -1e-15))
    )
    verdict(4, "concave penalty continuity/value/plateau/monotonicity", ok,
            f"(continuity gap {continuity:.1e}, value {value})")


# -- criterion 5: Gumbel discretization ---------------------------------------------


def test_criterion_05_gumbel_discretization():
    hand = gumbel_discretize(
        ad.constant(np.array([0.0])), GumbelConfig(temperature=1.0, deterministic=True)
    ).values[0]
    hand_ok = abs(hand - 0.40616) < 1e-5

    rng = np.random.default_rng(55)
    q = ad.constant(rng.uniform(-10, 10, size=100_000))
    noise = (sample_gumbel((100_000,), rng), sample_gumbel((100_000,), rng))
    out = gumbel_discretize(q, GumbelConfig(temperature=1.0), noise=noise).values
    interval_ok = bool(np.all((out > 0.0) & (out < 1.0)))

    logits = ad.constant(rng.uniform(-3, 3, size=100))
    draws = 100  # 100 draws x 100 logits = 10^4 samples per temperature
    noise_bank = [
        (sample_gumbel((100,), rng), sample_gumbel((100,), rng)) for _ in range(draws)
    ]

    def mean_entropy(tau: float) -> float:
        config = GumbelConfig(temperature=tau)
        acc = []
        for pair in noise_bank:
            b = gumbel_discretize(logits, config, noise=pair).values
            b = np.clip(b, 1e-15, 1 - 1e-15)
            acc.append(-(b * np.log(b) + (1 - b) * np.log1p(-b)).mean())
        return float(np.mean(acc))

    entropies = [mean_entropy(tau) for tau in (5.0, 1.0, 0.5, 0.1)]
    entropy_ok = all(a > b for a, b in zip(entropies, entropies[1:]))
    verdict(5, "two-branch discretization: hand value, interval, entropy",
            hand_ok and interval_ok and entropy_ok,
            f"(hand {hand:.5f}, entropies {[round(e, 4) for e in entropies]})")


# -- criteria 6-8: the planted-noise benchmark -------------------------------------


@pytest.fixture(scope="module")
def benchmark():
    patterns = default_benchmark_patterns(n_types=8, n_relations=6, per_relation=2, seed=0)
    clean = generate_synthetic_kg(8, 6, 500, patterns, 10_000, seed=1)
    noisy, labels = inject_type_noise(clean, 0.05, seed=2)
    return noisy, labels


@pytest.fixture(scope="module")
def benchmark_runs(benchmark):
    noisy, labels = benchmark
    aug = augment_reverse(noisy)
    t0 = time.time()
    runs = []
    for seed in SEEDS:
        model, _ = tr.train(aug, TrainConfig(seed=seed))
        report = detect_noise(aug, model, threshold=0.5)
        runs.append((model, report))
    return aug, labels, runs, time.time() - t0


def test_criterion_06_planted_noise_detection(benchmark_runs):
    aug, labels, runs, elapsed = benchmark_runs
    precisions, recalls = [], []
    for _model, report in runs:
        metrics = evaluate(report, labels)
        precisions.append(metrics.precision)
        recalls.append(metrics.recall)
    med_p = float(np.median(precisions))
    med_r = float(np.median(recalls))
    ok = med_p >= 0.8 and med_r >= 0.8 and elapsed < 300.0
    verdict(6, "planted-noise detection on the 500-entity benchmark", ok,
            f"(median P {med_p:.3f}, median R {med_r:.3f}, 5 seeds in {elapsed:.0f}s)")


def test_criterion_07_fit_separation(benchmark_runs):
    aug, labels, runs, _ = benchmark_runs
    n_rel_fwd = aug.num_relations // 2
    noise_sigs = set()
    for t in labels.noisy:
        noise_sigs.add(aug.signature(t))
        noise_sigs.add(aug.signature(Triple(t.tail, t.relation + n_rel_fwd, t.head)))
    gaps = []
    for seed, (model, _report) in zip(SEEDS, runs):
        fit = fit_frequency(aug, model, seed=seed)
        clean_rows = [r for r in fit.rows if (r.head_type, r.relation, r.tail_type) not in noise_sigs]
        noise_rows = [r for r in fit.rows if (r.head_type, r.relation, r.tail_type) in noise_sigs]
        top_clean = sorted(clean_rows, key=lambda r: -r.frequency)[:10]
        gaps.append(
            float(np.mean([r.fit for r in top_clean]) - np.mean([r.fit for r in noise_rows]))
        )
    med_gap = float(np.median(gaps))
    verdict(7, "fit-frequency separation of frequent clean types vs noise", med_gap >= 0.1,
            f"(median gap {med_gap:.3f}, per-seed {[round(g, 3) for g in gaps]})")


def test_criterion_08_type_corruption_stability(benchmark, benchmark_runs):
    noisy, labels = benchmark
    _aug, _labels, runs, _ = benchmark_runs
    baseline = int(np.median([report.num_flagged for _m, report in runs]))
    corrupted_counts = []
    for seed in SEEDS:
        corrupted = corrupt_type_labels(noisy, 0.001, seed=seed)
        aug = augment_reverse(corrupted)
        model, _ = tr.train(aug, TrainConfig(seed=seed))
        corrupted_counts.append(detect_noise(aug, model, threshold=0.5).num_flagged)
    corrupted_median = int(np.median(corrupted_counts))
    rel_change = abs(corrupted_median - baseline) / baseline
    verdict(8, "#E stability under 0.1% type-label corruption", rel_change < 0.25,
            f"(median #E {baseline} -> {corrupted_median}, change {100 * rel_change:.1f}%)")


# -- criterion 9: sparsity response --------------------------------------------------


def test_criterion_09_sparsity_response():
    patterns = {(0, 0, 1), (1, 1, 2), (2, 2, 3), (3, 3, 0), (1, 0, 3), (2, 1, 0)}
    clean = generate_synthetic_kg(4, 4, 120, patterns, 2_500, seed=9)
    aug = augment_reverse(clean)
    medians = []
    for gamma in (0.1, 0.5, 1.0):
        finals = []
        for seed in SEEDS:
            config = TrainConfig(gamma=gamma, epochs=15, batch_size=2048, seed=seed)
            model, _ = tr.train(aug, config)
            mask = tr.inference_mask(aug, AdjacencyIndex(aug), model)
            finals.append(float(np.mean(mask.discretized.values)))
        medians.append(float(np.median(finals)))
    ok = medians[0] >= medians[1] >= medians[2]
    verdict(9, "converged mean mask non-increasing in the sparsity weight", ok,
            f"(medians {[round(m, 4) for m in medians]} for gamma 0.1/0.5/1.0)")


# -- criterion 10: end-to-end determinism --------------------------------------------


def test_criterion_10_end_to_end_determinism(tmp_path):
    reports = []
    for run in ("a", "b"):
        base = tmp_path / run
        data = base / "data"
        assert main([
            "synth", "--out-dir", str(data), "--entities", "80", "--types", "4",
            "--relations", "3", "--triples", "600", "--inject-rate", "0.05", "--seed", "3",
        ]) == 0
        assert main([
            "train", "--triples", str(data / "triples.tsv"), "--types", str(data / "types.tsv"),
            "--out-dir", str(base / "run"), "--seeds", "42",
            "--epochs", "5", "--batch-size", "512", "--hidden-dim", "16", "--num-blocks", "2",
        ]) == 0
        assert main([
            "detect", "--triples", str(data / "triples.tsv"), "--types", str(data / "types.tsv"),
            "--model-dir", str(base / "run"), "--seed", "42", "--out-dir", str(base / "det"),
        ]) == 0
        reports.append((base / "det" / "noise_report.json").read_bytes())
    ok = reports[0] == reports[1]
    verdict(10, "synth -> train -> detect reproduces byte-identical reports", ok,
            f"({len(reports[0])} bytes)")


# -- criterion 11: structural invariants ----------------------------------------------


def _random_small_kg(rng):
    n_types = int(rng.integers(2, 5))
    n_relations = int(rng.integers(1, 4))
    n_entities = int(rng.integers(8, 20))
    patterns = set()
    for _ in range(n_types):
        patterns.add(
            (int(rng.integers(n_types)), int(rng.integers(n_relations)), int(rng.integers(n_types)))
        )
    type_counts = np.bincount(np.arange(n_entities) % n_types, minlength=n_types)
    capacity = int(sum(type_counts[ch] * type_counts[ct] for ch, _r, ct in patterns))
    hi = min(40, capacity)
    n_triples = int(rng.integers(min(5, hi), hi + 1))
    return generate_synthetic_kg(
        n_types, n_relations, n_entities, patterns, n_triples,
        seed=int(rng.integers(2**31)),
    )


def _relabel(kg, perm):
    inv_names = [None] * kg.num_entities
    for old, new in enumerate(perm):
        inv_names[new] = kg.entities.name_of(old)
    type_of = np.zeros(kg.num_entities, dtype=np.int64)
    type_of[perm] = kg.type_of
    triples = [Triple(int(perm[t.head]), t.relation, int(perm[t.tail])) for t in kg.triples]
    return KnowledgeGraph(
        Vocabulary(inv_names), kg.relations, kg.types, triples, type_of, kg.augmented
    )


def test_criterion_11_structural_invariants():
    rng = np.random.default_rng(1111)

    for _ in range(100):  # reverse augmentation doubles and inverts
        kg = _random_small_kg(rng)
        aug = augment_reverse(kg)
        assert aug.num_triples == 2 * kg.num_triples
        assert aug.num_relations == 2 * kg.num_relations
        assert strip_reverse(aug) == kg

    for _ in range(100):  # binary-masked decode equals explicit subgraph decode
        kg = _random_small_kg(rng)
        config = RGCNConfig(layers=2, hidden_dim=8, num_blocks=2, dropout=0.0)
        stack = init_stack(config, kg.num_types, kg.num_relations, rng, "enc")
        keep = rng.integers(0, 2, size=kg.num_triples).astype(float)
        masked = encode(
            AdjacencyIndex(kg), stack, edge_weights=ad.constant(keep)
        ).values
        sub = KnowledgeGraph(
            kg.entities,
            kg.relations,
            kg.types,
            [t for t, k in zip(kg.triples, keep) if k == 1.0],
            kg.type_of,
        )
        explicit = encode(AdjacencyIndex(sub), stack).values
        assert np.array_equal(masked, explicit)

    score_bounds_ok = True
    for _ in range(100):  # token-identity blindness + score range, full pipeline
        kg = augment_reverse(_random_small_kg(rng))
        config = TrainConfig(
            rgcn=RGCNConfig(layers=2, hidden_dim=8, num_blocks=2, dropout=0.0),
            seed=int(rng.integers(2**31)),
            epochs=0,
        )
        model = tr.init_model(kg, config)
        perm = rng.permutation(kg.num_entities)
        relabeled = _relabel(kg, perm)

        def pipeline(graph):
            adjacency = AdjacencyIndex(graph)
            mask = tr.inference_mask(graph, adjacency, model)
            z = tr.inference_embeddings(graph, adjacency, model, mask.discretized)
            heads, rels, tails = graph.triple_arrays()
            scores = rc.recon_score(z, model.recon, heads, rels, tails).values
            return mask.sigmoids.values, scores

        sig_a, scores_a = pipeline(kg)
        sig_b, scores_b = pipeline(relabeled)
        # triples are listed in the same order in both graphs
        assert np.allclose(sig_a, sig_b, atol=1e-9)
        assert np.allclose(scores_a, scores_b, atol=1e-9)
        score_bounds_ok &= bool(np.all((scores_a > 0) & (scores_a < 1)))
        score_bounds_ok &= bool(np.all((sig_a > 0) & (sig_a < 1)))

    verdict(11, "augmentation/subgraph/blindness/score-range invariants", score_bounds_ok,
            "(100 randomized trials per invariant)")
