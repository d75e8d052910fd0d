import numpy as np
import pytest

from kgdenoise import KnowledgeGraph, Triple, Vocabulary


def pytest_addoption(parser):
    parser.addoption(
        "--with-data",
        action="store",
        default=None,
        metavar="DIR",
        help="directory with real datasets (<name>/train.tsv, <name>/types.tsv) "
        "to enable dataset-dependent statistics tests",
    )


@pytest.fixture
def data_dir(request):
    path = request.config.getoption("--with-data")
    if path is None:
        pytest.skip("requires --with-data DIR with real datasets")
    return path


def make_kg(triple_names, type_names, augmented=False):
    """Build a graph from name-level triples and an entity->type dict."""
    entities = Vocabulary()
    relations = Vocabulary()
    triples = []
    for h, r, t in triple_names:
        triples.append(Triple(entities.add(h), relations.add(r), entities.add(t)))
    types = Vocabulary()
    type_of = np.array([types.add(type_names[e]) for e in entities], dtype=np.int64)
    return KnowledgeGraph(entities, relations, types, triples, type_of, augmented=augmented)


@pytest.fixture
def toy_kg():
    """Five entities, two relations, three types; no duplicate signatures."""
    triples = [
        ("a", "likes", "b"),
        ("b", "likes", "c"),
        ("c", "made", "d"),
        ("a", "made", "e"),
        ("d", "likes", "e"),
    ]
    types = {"a": "person", "b": "person", "c": "person", "d": "thing", "e": "thing"}
    return make_kg(triples, types)


def random_kg(rng, n_types=3, n_relations=2, n_entities=12, n_triples=20):
    from kgdenoise import generate_synthetic_kg

    patterns = set()
    while len(patterns) < n_types:
        patterns.add(
            (
                int(rng.integers(n_types)),
                int(rng.integers(n_relations)),
                int(rng.integers(n_types)),
            )
        )
    return generate_synthetic_kg(
        n_types, n_relations, n_entities, patterns, n_triples, seed=int(rng.integers(2**31))
    )
