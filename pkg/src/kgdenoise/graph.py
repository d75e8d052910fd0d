"""Typed knowledge graphs: loading, validation, augmentation, and profiling.

A graph is a set of (head, relation, tail) triples over dense integer
vocabularies, plus a total entity -> type map. Relations carry no separate
type map: the relation token is its own type.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

log = logging.getLogger(__name__)

UNTYPED = "__untyped__"
REVERSE_SUFFIX = "_reverse"
SNAPSHOT_FORMAT = 1


class GraphFormatError(ValueError):
    """Malformed graph input file (bad field count, empty triple file, ...)."""


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Vocabulary:
    """Bidirectional string <-> dense id map; ids follow first-appearance order."""

    __slots__ = ("_names", "_ids")

    def __init__(self, names: Iterable[str] = ()):
        self._names: list[str] = []
        self._ids: dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        """Return the id of `name`, assigning the next free id if unseen."""
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
        return idx

    def id_of(self, name: str) -> int:
        return self._ids[name]

    def name_of(self, idx: int) -> str:
        return self._names[idx]

    def names(self) -> list[str]:
        return list(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self) -> Iterator[str]:
        return iter(self._names)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._names == other._names


@dataclass
class LoadReport:
    """Bookkeeping from load_graph: what was read, dropped, or defaulted."""

    triple_lines: int = 0
    comment_lines: int = 0
    duplicate_triples: int = 0
    untyped_entities: int = 0
    duplicate_type_rows: int = 0


class KnowledgeGraph:
    """Immutable-by-convention typed triple store.

    `type_of` is total over entities; untyped entities received the reserved
    `__untyped__` type at load. `augmented` marks graphs that already carry a
    reverse copy of every triple.
    """

    def __init__(
        self,
        entities: Vocabulary,
        relations: Vocabulary,
        types: Vocabulary,
        triples: list[Triple],
        type_of: np.ndarray,
        augmented: bool = False,
    ):
        if len(type_of) != len(entities):
            raise ValueError(
                f"type map covers {len(type_of)} entities, graph has {len(entities)}"
            )
        self.entities = entities
        self.relations = relations
        self.types = types
        self.triples = triples
        self.type_of = np.asarray(type_of, dtype=np.int64)
        self.augmented = augmented
        self._triple_set: frozenset[Triple] | None = None
        self._arrays: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
        if len(types) >= len(entities) and len(entities) > 0:
            log.warning(
                "type domain (%d) is not smaller than entity domain (%d); "
                "type-dependent reasoning will be weak",
                len(types),
                len(entities),
            )

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @property
    def num_types(self) -> int:
        return len(self.types)

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    @property
    def triple_set(self) -> frozenset[Triple]:
        if self._triple_set is None:
            self._triple_set = frozenset(self.triples)
        return self._triple_set

    def triple_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(heads, relations, tails) as int64 arrays in triple order."""
        if self._arrays is None:
            if self.triples:
                arr = np.asarray(self.triples, dtype=np.int64)
            else:
                arr = np.zeros((0, 3), dtype=np.int64)
            self._arrays = (arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy())
        return self._arrays

    def signature(self, t: Triple) -> tuple[int, int, int]:
        """Type signature (c(head), relation, c(tail)) of a triple."""
        return (int(self.type_of[t.head]), t.relation, int(self.type_of[t.tail]))

    def signature_set(self) -> set[tuple[int, int, int]]:
        h, r, t = self.triple_arrays()
        codes = zip(self.type_of[h].tolist(), r.tolist(), self.type_of[t].tolist())
        return set(codes)

    def triple_name(self, t: Triple) -> tuple[str, str, str]:
        return (
            self.entities.name_of(t.head),
            self.relations.name_of(t.relation),
            self.entities.name_of(t.tail),
        )

    # -- snapshot serialization ------------------------------------------------

    def to_snapshot(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "entities": self.entities.names(),
            "relations": self.relations.names(),
            "types": self.types.names(),
            "type_of": self.type_of.tolist(),
            "augmented": self.augmented,
            "triples": [[t.head, t.relation, t.tail] for t in self.triples],
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "KnowledgeGraph":
        if snap.get("format") != SNAPSHOT_FORMAT:
            raise GraphFormatError(f"unsupported snapshot format {snap.get('format')!r}")
        return cls(
            entities=Vocabulary(snap["entities"]),
            relations=Vocabulary(snap["relations"]),
            types=Vocabulary(snap["types"]),
            triples=[Triple(*row) for row in snap["triples"]],
            type_of=np.asarray(snap["type_of"], dtype=np.int64),
            augmented=bool(snap["augmented"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_snapshot(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeGraph":
        return cls.from_snapshot(json.loads(Path(path).read_text(encoding="utf-8")))

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, KnowledgeGraph)
            and self.entities == other.entities
            and self.relations == other.relations
            and self.types == other.types
            and self.triples == other.triples
            and bool(np.array_equal(self.type_of, other.type_of))
            and self.augmented == other.augmented
        )


class NoiseLabelSet:
    """Planted-noise ground truth: the set of triples known to be injected."""

    def __init__(self, noisy: Iterable[Triple] = ()):
        self.noisy = frozenset(Triple(*t) for t in noisy)

    def is_noise(self, t: Triple) -> bool:
        return t in self.noisy

    def __len__(self) -> int:
        return len(self.noisy)

    def validate_against(self, kg: KnowledgeGraph) -> None:
        missing = self.noisy - kg.triple_set
        if missing:
            raise ValueError(f"{len(missing)} labeled triples are not in the graph")

    def save(self, path: str | Path, kg: KnowledgeGraph) -> None:
        payload = {
            "format": SNAPSHOT_FORMAT,
            "noisy": sorted(kg.triple_name(t) for t in self.noisy),
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, kg: KnowledgeGraph) -> "NoiseLabelSet":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != SNAPSHOT_FORMAT:
            raise GraphFormatError(f"unsupported label format {payload.get('format')!r}")
        noisy = [
            Triple(kg.entities.id_of(h), kg.relations.id_of(r), kg.entities.id_of(t))
            for h, r, t in payload["noisy"]
        ]
        labels = cls(noisy)
        labels.validate_against(kg)
        return labels


@dataclass
class RelationEdges:
    """All edges of one relation, in triple order."""

    heads: np.ndarray
    tails: np.ndarray
    triple_indices: np.ndarray
    inv_degree: np.ndarray  # 1 / |N_h^r| per edge, for the head's out-degree
    tail_types: np.ndarray  # type id of each edge's tail
    gather_plan: object = None  # lazily built autodiff.IndexPlan over tails
    scatter_plan: object = None  # lazily built autodiff.IndexPlan over heads
    type_plan: object = None  # lazily built autodiff.IndexPlan over tail_types


class AdjacencyIndex:
    """Per-relation edge arrays plus per-(entity, relation) neighbor lists.

    Each triple (h, r, t) is stored once, as the out-edge h --r--> t; the
    neighbor list of (h, r) therefore holds the tails reachable from h via r.
    """

    def __init__(self, kg: KnowledgeGraph):
        self.num_entities = kg.num_entities
        self.num_relations = kg.num_relations
        self.num_types = kg.num_types
        self.num_triples = kg.num_triples
        self.type_of = kg.type_of
        heads, rels, tails = kg.triple_arrays()
        self._per_relation: dict[int, RelationEdges] = {}
        self._neighbors: dict[tuple[int, int], list[int]] = {}
        for r in range(kg.num_relations):
            sel = np.flatnonzero(rels == r)
            if sel.size == 0:
                continue
            h_r = heads[sel]
            t_r = tails[sel]
            uniq, inverse, counts = np.unique(h_r, return_inverse=True, return_counts=True)
            inv_deg = 1.0 / counts[inverse]
            self._per_relation[r] = RelationEdges(h_r, t_r, sel, inv_deg, kg.type_of[t_r])
        for idx, (h, r, t) in enumerate(kg.triples):
            self._neighbors.setdefault((h, r), []).append(idx)
        self._heads = heads
        self._rels = rels
        self._tails = tails
        # out-degree of each triple's head under its own relation
        hr_codes = heads * kg.num_relations + rels
        if len(hr_codes):
            _, inverse, counts = np.unique(hr_codes, return_inverse=True, return_counts=True)
            self._hr_group = inverse
            self._hr_groups = len(counts)
            self._inv_degree_all = 1.0 / counts[inverse]
        else:
            self._hr_group = np.zeros(0, dtype=np.int64)
            self._hr_groups = 0
            self._inv_degree_all = np.zeros(0)
        self._triple_plans: tuple | None = None
        self._fused_plans: tuple | None = None

    def support_inv_degree(self, edge_weights: np.ndarray) -> np.ndarray:
        """Per-edge 1/c normalizer counting only edges with nonzero weight.

        Soft masks are strictly positive, so training sees the structural
        out-degree unchanged; exactly-zero weights drop out of the count,
        which makes a binary-masked decode agree exactly with decoding the
        kept subgraph.
        """
        nonzero = edge_weights != 0.0
        if nonzero.all():
            return self._inv_degree_all
        counts = np.bincount(self._hr_group[nonzero], minlength=self._hr_groups)
        return 1.0 / np.maximum(counts, 1)[self._hr_group]

    def fused_edges(self) -> tuple:
        """Whole-graph edge arrays in triple order, with gather/scatter plans.

        Returns (heads, rels, tails, tail_types, inv_degree, scatter_plan,
        hidden_plan, type_plan) where hidden_plan scatters by tails*R + rels
        (rows of a per-(entity, relation) transformed matrix) and type_plan
        by rels*C + tail_types (rows of stacked first-layer weights).
        """
        if self._fused_plans is None:
            from .autodiff import IndexPlan

            tail_types = self.type_of[self._tails]
            hidden_index = self._tails * self.num_relations + self._rels
            type_index = self._rels * self.num_types + tail_types
            self._fused_plans = (
                tail_types,
                IndexPlan(self._heads, self.num_entities),
                IndexPlan(hidden_index, self.num_entities * self.num_relations),
                IndexPlan(type_index, self.num_relations * self.num_types),
            )
        tail_types, scatter_plan, hidden_plan, type_plan = self._fused_plans
        return (
            self._heads,
            self._rels,
            self._tails,
            tail_types,
            self._inv_degree_all,
            scatter_plan,
            hidden_plan,
            type_plan,
        )

    @property
    def relations_present(self) -> list[int]:
        return sorted(self._per_relation)

    def relation_edges(self, r: int) -> RelationEdges:
        edges = self._per_relation.get(r)
        if edges is None:
            empty = np.zeros(0, dtype=np.int64)
            return RelationEdges(empty, empty, empty, np.zeros(0), empty)
        if edges.gather_plan is None:
            from .autodiff import IndexPlan

            edges.gather_plan = IndexPlan(edges.tails, self.num_entities)
            edges.scatter_plan = IndexPlan(edges.heads, self.num_entities)
            edges.type_plan = IndexPlan(edges.tail_types, self.num_types)
        return edges

    def triple_plans(self) -> tuple:
        """(head, relation, tail) gather plans over the full triple list."""
        if self._triple_plans is None:
            from .autodiff import IndexPlan

            self._triple_plans = (
                IndexPlan(self._heads, self.num_entities),
                IndexPlan(self._rels, self.num_relations),
                IndexPlan(self._tails, self.num_entities),
            )
        return self._triple_plans

    def neighbors(self, h: int, r: int) -> list[int]:
        """Tails reachable from h via r, in triple order."""
        return [int(self._tails[i]) for i in self._neighbors.get((h, r), [])]

    def neighbor_triples(self, h: int, r: int) -> list[int]:
        """Triple indices backing neighbors(h, r)."""
        return list(self._neighbors.get((h, r), []))


# -- loading -------------------------------------------------------------------


def _read_tsv(path: str | Path, n_fields: int) -> Iterator[tuple[int, list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                yield lineno, []
                continue
            fields = line.split("\t")
            if len(fields) != n_fields:
                raise GraphFormatError(
                    f"{path}:{lineno}: expected {n_fields} tab-separated fields, "
                    f"got {len(fields)}"
                )
            yield lineno, fields


def load_graph(
    triples_path: str | Path, types_path: str | Path
) -> tuple[KnowledgeGraph, LoadReport]:
    """Load a graph from `head<TAB>relation<TAB>tail` and `entity<TAB>type` files.

    Vocabularies follow first-appearance order; duplicate triples are dropped
    (counted in the report); entities missing from the type file get the
    reserved `__untyped__` type with a warning.
    """
    report = LoadReport()

    type_name_of: dict[str, str] = {}
    for _lineno, fields in _read_tsv(types_path, 2):
        if not fields:
            report.comment_lines += 1
            continue
        entity, type_name = fields
        if entity in type_name_of:
            report.duplicate_type_rows += 1
            continue
        type_name_of[entity] = type_name

    entities = Vocabulary()
    relations = Vocabulary()
    triples: list[Triple] = []
    seen: set[Triple] = set()
    for _lineno, fields in _read_tsv(triples_path, 3):
        if not fields:
            report.comment_lines += 1
            continue
        report.triple_lines += 1
        h, r, t = fields
        triple = Triple(entities.add(h), relations.add(r), entities.add(t))
        if triple in seen:
            report.duplicate_triples += 1
            continue
        seen.add(triple)
        triples.append(triple)
    if not triples:
        raise GraphFormatError(f"{triples_path}: no triples found")

    types = Vocabulary()
    type_of = np.zeros(len(entities), dtype=np.int64)
    for idx, name in enumerate(entities):
        type_name = type_name_of.get(name)
        if type_name is None:
            report.untyped_entities += 1
            type_name = UNTYPED
        type_of[idx] = types.add(type_name)
    if report.untyped_entities:
        log.warning(
            "%d entities missing from %s; assigned %s",
            report.untyped_entities,
            types_path,
            UNTYPED,
        )
    if report.duplicate_triples:
        log.info("dropped %d duplicate triples", report.duplicate_triples)

    kg = KnowledgeGraph(entities, relations, types, triples, type_of)
    return kg, report


def save_tsv(kg: KnowledgeGraph, triples_path: str | Path, types_path: str | Path) -> None:
    """Write the graph back to the TSV pair accepted by load_graph."""
    with open(triples_path, "w", encoding="utf-8", newline="\n") as fh:
        for t in kg.triples:
            h, r, tl = kg.triple_name(t)
            fh.write(f"{h}\t{r}\t{tl}\n")
    with open(types_path, "w", encoding="utf-8", newline="\n") as fh:
        for idx, name in enumerate(kg.entities):
            fh.write(f"{name}\t{kg.types.name_of(int(kg.type_of[idx]))}\n")


# -- augmentation ----------------------------------------------------------------


def augment_reverse(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Append (tail, relation_reverse, head) for every triple; doubles |R| and n."""
    if kg.augmented:
        raise ValueError("graph is already reverse-augmented")
    relations = Vocabulary(kg.relations.names())
    n_orig = len(relations)
    for name in kg.relations.names():
        relations.add(name + REVERSE_SUFFIX)
    triples = list(kg.triples)
    triples.extend(Triple(t.tail, t.relation + n_orig, t.head) for t in kg.triples)
    return KnowledgeGraph(
        entities=kg.entities,
        relations=relations,
        types=kg.types,
        triples=triples,
        type_of=kg.type_of,
        augmented=True,
    )


def strip_reverse(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Drop the reverse half added by augment_reverse, restoring the original."""
    if not kg.augmented:
        raise ValueError("graph is not reverse-augmented")
    keep = [name for name in kg.relations if not name.endswith(REVERSE_SUFFIX)]
    n_orig = len(keep)
    relations = Vocabulary(keep)
    triples = [t for t in kg.triples if t.relation < n_orig]
    return KnowledgeGraph(
        entities=kg.entities,
        relations=relations,
        types=kg.types,
        triples=triples,
        type_of=kg.type_of,
        augmented=False,
    )


# -- type statistics ----------------------------------------------------------


def compute_ltt(kg: KnowledgeGraph) -> float:
    """Fraction of realized (head-type, relation, tail-type) signatures.

    Observed distinct signatures divided by the |C| * |R| * |C| grid of all
    possible signatures. Returns a fraction in (0, 1].
    """
    if kg.num_triples == 0:
        raise ValueError("graph has no triples")
    grid = kg.num_types * kg.num_relations * kg.num_types
    return len(kg.signature_set()) / grid


def relation_type_distribution(kg: KnowledgeGraph, relation: int) -> np.ndarray:
    """|C| x |C| count matrix of (head type, tail type) pairs for one relation."""
    if not 0 <= relation < kg.num_relations:
        raise ValueError(f"relation id {relation} out of range")
    heads, rels, tails = kg.triple_arrays()
    sel = rels == relation
    mat = np.zeros((kg.num_types, kg.num_types), dtype=np.int64)
    np.add.at(mat, (kg.type_of[heads[sel]], kg.type_of[tails[sel]]), 1)
    return mat


def _round_half_up(x: float) -> int:
    # deliberate half-up: round(0.5 * n) must corrupt at least one entity
    # whenever the caller asked for a positive effect at tiny rates
    return int(np.floor(x + 0.5))


def corrupt_type_labels(kg: KnowledgeGraph, fraction: float, seed: int) -> KnowledgeGraph:
    """Reassign round(fraction * |V|) entities a uniformly random different type."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    if fraction > 0 and kg.num_types < 2:
        raise ValueError("cannot corrupt type labels: fewer than two types")
    count = _round_half_up(fraction * kg.num_entities)
    type_of = kg.type_of.copy()
    if count:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(kg.num_entities, size=count, replace=False)
        # uniform over the |C| - 1 types differing from the current one
        draws = rng.integers(0, kg.num_types - 1, size=count)
        draws = draws + (draws >= type_of[chosen])
        type_of[chosen] = draws
    return KnowledgeGraph(
        entities=kg.entities,
        relations=kg.relations,
        types=kg.types,
        triples=kg.triples,
        type_of=type_of,
        augmented=kg.augmented,
    )
