"""Command-line harness wiring the library into reproducible experiments.

Every command is deterministic given (inputs, config, seeds): rerunning a
command with the same arguments reproduces its output files byte for byte.
A JSON config file supplies training defaults; explicit flags win over it.
The KGD_THREADS environment variable caps how many per-seed jobs may run
concurrently (default 1, fully sequential).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import detection as dt
from . import training as tr
from .graph import (
    KnowledgeGraph,
    NoiseLabelSet,
    Triple,
    augment_reverse,
    compute_ltt,
    corrupt_type_labels,
    load_graph,
    relation_type_distribution,
    save_tsv,
)
from .rgcn import RGCNConfig
from .synthetic import generate_synthetic_kg, inject_type_noise

DEFAULT_SEEDS = (41504, 42, 0, 1, 2)


def _threads() -> int:
    raw = os.environ.get("KGD_THREADS", "1")
    try:
        value = int(raw)
    except ValueError as exc:
        raise SystemExit(f"KGD_THREADS must be an integer, got {raw!r}") from exc
    return max(1, value)


def _git_blob_sha1(path: str | Path) -> str:
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _input_hashes(paths: dict[str, str | Path | None]) -> dict[str, str]:
    return {name: _git_blob_sha1(p) for name, p in paths.items() if p is not None}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_pair(args) -> tuple[KnowledgeGraph, object]:
    return load_graph(args.triples, args.types)


# -- config handling -------------------------------------------------------------

_TRAIN_FLAGS = {
    "gamma": float,
    "temperature": float,
    "mcp_alpha": float,
    "mcp_lambda": float,
    "learning_rate": float,
    "weight_decay": float,
    "epochs": int,
    "batch_size": int,
    "negatives": int,
    "gumbel_variant": str,
    "checkpoint_every": int,
}
_RGCN_FLAGS = {
    "layers": int,
    "hidden_dim": int,
    "num_blocks": int,
    "dropout": float,
}


def add_train_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with training configuration defaults")
    for name, typ in _TRAIN_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)
    for name, typ in _RGCN_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)


def resolve_train_config(args, seed: int) -> tr.TrainConfig:
    """Config file first, then explicit flags, then the seed; flags win."""
    base: dict = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
    rgcn_dict = dict(base.get("rgcn", {}))
    for name in _RGCN_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            rgcn_dict[name] = value
    train_dict = {k: v for k, v in base.items() if k not in ("rgcn", "seed")}
    for name in _TRAIN_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            train_dict[name] = value
    return tr.TrainConfig(rgcn=RGCNConfig(**rgcn_dict), seed=seed, **train_dict)


def parse_seeds(raw: str | None) -> list[int]:
    if not raw:
        return list(DEFAULT_SEEDS)
    seeds = [int(s) for s in raw.split(",") if s.strip() != ""]
    if not seeds:
        raise SystemExit("--seeds must name at least one seed")
    return seeds


# -- commands -----------------------------------------------------------------


def cmd_stats(args) -> None:
    kg, report = _load_pair(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ltt = compute_ltt(kg)
    payload = {
        "num_entities": kg.num_entities,
        "num_relations": kg.num_relations,
        "num_types": kg.num_types,
        "num_triples": kg.num_triples,
        "percent_ltt": 100.0 * ltt,
        "ltt_fraction": ltt,
        "duplicate_triples_dropped": report.duplicate_triples,
        "untyped_entities": report.untyped_entities,
        "inputs": _input_hashes({"triples": args.triples, "types": args.types}),
    }
    _write_json(out / "stats.json", payload)
    dist_dir = out / "type_dist"
    dist_dir.mkdir(exist_ok=True)
    type_names = kg.types.names()
    for r in range(kg.num_relations):
        mat = relation_type_distribution(kg, r)
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in kg.relations.name_of(r))
        with open(dist_dir / f"r{r:04d}_{safe}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["head_type\\tail_type"] + type_names)
            for i, row in enumerate(mat):
                writer.writerow([type_names[i]] + row.tolist())
    print(
        f"|V|={kg.num_entities} |R|={kg.num_relations} |C|={kg.num_types} "
        f"n={kg.num_triples} %LTT={100.0 * ltt:.4f}"
    )


def _parse_patterns(raw: str) -> set[tuple[int, int, int]]:
    patterns = set()
    for item in raw.split(","):
        ch, r, ct = item.split(":")
        patterns.add((int(ch), int(r), int(ct)))
    return patterns


def default_benchmark_patterns(
    n_types: int, n_relations: int, per_relation: int, seed: int
) -> set[tuple[int, int, int]]:
    """A reproducible legal-pattern set: `per_relation` type pairs per relation."""
    rng = np.random.default_rng(seed)
    patterns: set[tuple[int, int, int]] = set()
    for r in range(n_relations):
        placed = 0
        while placed < per_relation:
            cand = (int(rng.integers(n_types)), r, int(rng.integers(n_types)))
            if cand not in patterns:
                patterns.add(cand)
                placed += 1
    return patterns


def cmd_synth(args) -> None:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.patterns:
        patterns = _parse_patterns(args.patterns)
    else:
        patterns = default_benchmark_patterns(
            args.types, args.relations, args.patterns_per_relation, args.seed
        )
    kg = generate_synthetic_kg(
        args.types, args.relations, args.entities, patterns, args.triples, args.seed
    )
    labels = NoiseLabelSet()
    if args.inject_rate > 0:
        kg, labels = inject_type_noise(kg, args.inject_rate, seed=args.seed + 1)
    save_tsv(kg, out / "triples.tsv", out / "types.tsv")
    labels.save(out / "labels.json", kg)
    _write_json(
        out / "synth_manifest.json",
        {
            "entities": args.entities,
            "types": args.types,
            "relations": args.relations,
            "triples_requested": args.triples,
            "patterns": sorted(patterns),
            "inject_rate": args.inject_rate,
            "seed": args.seed,
            "num_triples": kg.num_triples,
            "num_noisy": len(labels),
            "percent_ltt": 100.0 * compute_ltt(kg) if kg.num_triples else 0.0,
        },
    )
    print(f"wrote {kg.num_triples} triples ({len(labels)} injected) to {out}")


def cmd_inject(args) -> None:
    kg, _ = _load_pair(args)
    noisy, labels = inject_type_noise(kg, args.rate, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_tsv(noisy, out / "triples.tsv", out / "types.tsv")
    labels.save(out / "labels.json", noisy)
    print(f"injected {len(labels)} noisy triples; dataset written to {out}")


def cmd_corrupt_types(args) -> None:
    kg, _ = _load_pair(args)
    corrupted = corrupt_type_labels(kg, args.fraction, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_tsv(corrupted, out / "triples.tsv", out / "types.tsv")
    changed = int(np.sum(corrupted.type_of != kg.type_of))
    print(f"corrupted {changed} entity type labels; dataset written to {out}")


def _train_one_seed(kg_aug, config: tr.TrainConfig, seed_dir: Path) -> tr.RAEModel:
    seed_dir.mkdir(parents=True, exist_ok=True)
    model, history = tr.train(kg_aug, config, checkpoint_dir=seed_dir)
    model.save(seed_dir / "model.ckpt", seed_dir / "model.json")
    history.save_csv(seed_dir / "loss.csv")
    _write_json(
        seed_dir / "train_manifest.json",
        {
            "config": tr.config_to_dict(config),
            "seed": config.seed,
            "epochs_completed": len(history.epochs),
            "loss_history": [
                {
                    "epoch": e.epoch,
                    "reconstruction": e.reconstruction,
                    "sparsity": e.sparsity,
                    "total": e.total,
                    "mean_mask": e.mean_mask,
                }
                for e in history.epochs
            ],
        },
    )
    return model


def cmd_train(args) -> None:
    kg, _ = _load_pair(args)
    labels = NoiseLabelSet.load(args.labels, kg) if args.labels else None
    aug = augment_reverse(kg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = parse_seeds(args.seeds)
    t0 = time.time()

    def job(seed: int):
        config = resolve_train_config(args, seed)
        model = _train_one_seed(aug, config, out / f"seed{seed}")
        result = {"seed": seed}
        if labels is not None:
            report = dt.detect_noise(aug, model, args.threshold, args.convention)
            metrics = dt.evaluate(report, labels)
            result.update(
                num_flagged=report.num_flagged,
                precision=metrics.precision,
                recall=metrics.recall,
                true_negative_rate=metrics.true_negative_rate,
            )
        return result

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(job, seeds))

    manifest = {
        "command": "train",
        "config": tr.config_to_dict(resolve_train_config(args, seeds[0])),
        "seeds": seeds,
        "inputs": _input_hashes(
            {"triples": args.triples, "types": args.types, "labels": args.labels}
        ),
        "per_seed": results,
        "wall_clock_seconds": time.time() - t0,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"trained {len(seeds)} seeds in {manifest['wall_clock_seconds']:.1f}s -> {out}")


def _load_model_for(args, kg_aug) -> tr.RAEModel:
    model_dir = Path(args.model_dir)
    if (model_dir / "model.ckpt").exists():
        seed_dir = model_dir
    else:
        seed_dir = model_dir / f"seed{args.seed}"
        if not (seed_dir / "model.ckpt").exists():
            raise SystemExit(f"no model.ckpt under {model_dir} (tried {seed_dir})")
    model = tr.RAEModel.load(seed_dir / "model.ckpt", seed_dir / "model.json")
    model.check_compatible(kg_aug)
    return model


def cmd_detect(args) -> None:
    from .masker import dump_mask_csv
    from .reconstructor import dump_scores_csv

    kg, _ = _load_pair(args)
    aug = augment_reverse(kg)
    model = _load_model_for(args, aug)
    report = dt.detect_noise(aug, model, threshold=args.threshold, convention=args.convention)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.save_json(out / "noise_report.json", aug)
    report.save_flagged_tsv(out / "flagged.tsv", aug)
    mask, _embeddings, scores = dt.inference_scores(aug, model)
    dump_mask_csv(out / "mask.csv", aug, mask)
    dump_scores_csv(out / "scores.csv", aug, aug.triples, scores)
    print(f"#E = {report.num_flagged} of {len(report.rows)} triples -> {out}")


def cmd_evaluate(args) -> None:
    kg, _ = _load_pair(args)
    aug = augment_reverse(kg)
    report = dt.load_noise_report(args.report, aug)
    labels = NoiseLabelSet.load(args.labels, kg)
    metrics = dt.evaluate(report, labels)
    payload = {
        "num_flagged": report.num_flagged,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "true_negative_rate": metrics.true_negative_rate,
    }
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "evaluation.json", payload)
    print(json.dumps(payload, sort_keys=True))


def cmd_compress(args) -> None:
    kg, _ = _load_pair(args)
    aug = augment_reverse(kg)
    model = _load_model_for(args, aug)
    kept = dt.compress(aug, model, threshold=args.threshold)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compressed.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for t in kept.triples:
            h, r, tl = aug.triple_name(t)
            fh.write(f"{h}\t{r}\t{tl}\n")
    print(f"kept {len(kept.triples)} of {aug.num_triples} triples -> {out / 'compressed.tsv'}")


def _read_candidates(path: str | Path, kg: KnowledgeGraph) -> list[Triple]:
    candidates = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise SystemExit(f"{path}:{lineno}: expected head<TAB>relation<TAB>tail")
            h, r, t = fields
            try:
                candidates.append(
                    Triple(kg.entities.id_of(h), kg.relations.id_of(r), kg.entities.id_of(t))
                )
            except KeyError as exc:
                raise SystemExit(f"{path}:{lineno}: unknown name {exc}") from exc
    return candidates


def cmd_complete(args) -> None:
    kg, _ = _load_pair(args)
    aug = augment_reverse(kg)
    model = _load_model_for(args, aug)
    candidates = _read_candidates(args.candidates, aug)
    report = dt.complete(aug, model, candidates, threshold=args.threshold)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "completions.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("head\trelation\ttail\tscore\n")
        for t, s in zip(report.triples, report.scores):
            h, r, tl = aug.triple_name(t)
            fh.write(f"{h}\t{r}\t{tl}\t{s!r}\n")
    print(f"accepted {len(report.triples)} of {len(candidates)} candidates -> {out}")


def cmd_fit_report(args) -> None:
    kg, _ = _load_pair(args)
    aug = augment_reverse(kg)
    model = _load_model_for(args, aug)
    report = dt.fit_frequency(aug, model, seed=args.neg_seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.save_csv(out / "fit_report.csv", aug)
    print(f"{len(report.rows)} triple types -> {out / 'fit_report.csv'}")


def cmd_sweep(args) -> None:
    kg, _ = _load_pair(args)
    labels = NoiseLabelSet.load(args.labels, kg) if args.labels else None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = parse_seeds(args.seeds)
    values = [float(v) for v in args.values.split(",")]
    t0 = time.time()

    if args.param == "threshold":
        # one model per seed serves every grid point
        aug = augment_reverse(kg)
        models = [(aug, tr.train(aug, resolve_train_config(args, s))[0]) for s in seeds]
        points = [
            [_detect_row(aug, model, labels, value, args.convention) for aug, model in models]
            for value in values
        ]
    else:
        points = [_sweep_point(args, kg, labels, seeds, value) for value in values]

    rows = []
    for value, per_seed in zip(values, points):
        row = {"param": args.param, "value": value}
        row.update(_aggregate(per_seed))
        rows.append(row)
        extra = f", mean recall = {row['mean_recall']:.3f}" if labels is not None else ""
        print(f"{args.param}={value:g}: #E = {row['mean_E']:.2f} +- {row['std_E']:.2f}{extra}")

    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    manifest = {
        "command": "sweep",
        "param": args.param,
        "values": values,
        "seeds": seeds,
        "config": tr.config_to_dict(resolve_train_config(args, seeds[0])),
        "inputs": _input_hashes(
            {"triples": args.triples, "types": args.types, "labels": args.labels}
        ),
        "rows": rows,
        "wall_clock_seconds": time.time() - t0,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"sweep written to {out / 'sweep.csv'}")


def _detect_row(aug, model, labels, threshold, convention) -> dict:
    report = dt.detect_noise(aug, model, threshold, convention)
    row = {"num_flagged": report.num_flagged}
    if labels is not None:
        metrics = dt.evaluate(report, labels)
        row.update(
            precision=metrics.precision,
            recall=metrics.recall,
            true_negative_rate=metrics.true_negative_rate,
        )
    return row


def _sweep_point(args, kg, labels, seeds, value) -> list[dict]:
    def build_config(seed: int) -> tr.TrainConfig:
        config = resolve_train_config(args, seed)
        if args.param == "gamma":
            return replace(config, gamma=value)
        if args.param == "depth":
            return replace(config, rgcn=replace(config.rgcn, layers=int(value)))
        return config

    results = []
    for seed in seeds:
        graph = kg
        if args.param == "corruption" and value > 0:
            graph = corrupt_type_labels(kg, value, seed=seed)
        aug = augment_reverse(graph)
        model, _ = tr.train(aug, build_config(seed))
        results.append(_detect_row(aug, model, labels, args.threshold, args.convention))
    return results


def _aggregate(per_seed: list[dict]) -> dict:
    flagged = [r["num_flagged"] for r in per_seed]
    out = {
        "mean_E": float(np.mean(flagged)),
        "std_E": float(np.std(flagged, ddof=1)) if len(flagged) > 1 else 0.0,
    }
    if "precision" in per_seed[0]:
        out["mean_precision"] = float(np.mean([r["precision"] for r in per_seed]))
        out["mean_recall"] = float(np.mean([r["recall"] for r in per_seed]))
        out["mean_tnr"] = float(np.mean([r["true_negative_rate"] for r in per_seed]))
    return out


# -- parser wiring ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgd",
        description="Type-aware knowledge-graph denoising experiments.",
    )
    parser.add_argument("--version", action="version", version=f"kgd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_dataset(p):
        p.add_argument("--triples", required=True, help="TSV head<TAB>relation<TAB>tail")
        p.add_argument("--types", required=True, help="TSV entity<TAB>type")
        return p

    p = with_dataset(sub.add_parser("stats", help="dataset statistics and %LTT"))
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--entities", type=int, default=500)
    p.add_argument("--types", type=int, default=8)
    p.add_argument("--relations", type=int, default=6)
    p.add_argument("--triples", type=int, default=10_000)
    p.add_argument("--patterns-per-relation", type=int, default=2)
    p.add_argument("--patterns", help="explicit patterns head_type:relation:tail_type,...")
    p.add_argument("--inject-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = with_dataset(sub.add_parser("inject", help="plant type-inconsistent noise"))
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_inject)

    p = with_dataset(sub.add_parser("corrupt-types", help="randomly corrupt entity type labels"))
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_corrupt_types)

    p = with_dataset(sub.add_parser("train", help="train models across seeds"))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", help="comma-separated; default 41504,42,0,1,2")
    p.add_argument("--labels", help="labels.json for in-manifest evaluation")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--convention", default="low-score-is-noise", choices=dt.CONVENTIONS)
    add_train_config_flags(p)
    p.set_defaults(func=cmd_train)

    def with_model(p):
        with_dataset(p)
        p.add_argument("--model-dir", required=True, help="train output dir or one seed dir")
        p.add_argument("--seed", type=int, default=DEFAULT_SEEDS[0])
        return p

    p = with_model(sub.add_parser("detect", help="flag noisy triples"))
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--convention", default="low-score-is-noise", choices=dt.CONVENTIONS)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_detect)

    p = with_dataset(sub.add_parser("evaluate", help="score a noise report against labels"))
    p.add_argument("--report", required=True, help="noise_report.json from detect")
    p.add_argument("--labels", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_evaluate)

    p = with_model(sub.add_parser("compress", help="emit the retained compact subgraph"))
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_compress)

    p = with_model(sub.add_parser("complete", help="score completion candidates"))
    p.add_argument("--candidates", required=True, help="TSV of candidate triples")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_complete)

    p = with_model(sub.add_parser("fit-report", help="per-type fit frequencies"))
    p.add_argument("--neg-seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_fit_report)

    p = with_dataset(sub.add_parser("sweep", help="grid sweep over a single parameter"))
    p.add_argument("--param", required=True, choices=["gamma", "threshold", "depth", "corruption"])
    p.add_argument("--values", required=True, help="comma-separated grid values")
    p.add_argument("--seeds", help="comma-separated; default 41504,42,0,1,2")
    p.add_argument("--labels")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--convention", default="low-score-is-noise", choices=dt.CONVENTIONS)
    p.add_argument("--out-dir", required=True)
    add_train_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
