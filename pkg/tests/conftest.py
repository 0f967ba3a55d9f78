"""
Pytest configuration and shared fixtures for entity-probes tests.
"""
import pytest
import numpy as np

from entityprobes.embedstore import EmbeddingStore, SynthSpec, synthesize
from entityprobes.fixtures import write_toy_fixture
from entityprobes.kbstore import (
    KnowledgeStore,
    PopularityTable,
    TypeInfo,
    TypeOntology,
)


@pytest.fixture
def write_file(tmp_path):
    """Write text to a file under tmp_path and return its path."""
    def _write(name, text):
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")
        return path
    return _write


@pytest.fixture
def write_tsv(write_file):
    """Write rows of cells as a tab-separated file."""
    def _write(name, rows):
        return write_file(name, "".join("\t".join(str(c) for c in row) + "\n" for row in rows))
    return _write


@pytest.fixture
def athlete_ontology():
    """Two-level ontology: Person > Athlete, Place > City, Place > Country."""
    types = {
        "Person": TypeInfo("Person", None, 1),
        "Athlete": TypeInfo("Athlete", "Person", 2),
        "Place": TypeInfo("Place", None, 1),
        "City": TypeInfo("City", "Place", 2),
        "Country": TypeInfo("Country", "Place", 2),
    }
    assignments = {}
    for i in range(6):
        assignments[f"A{i}"] = ["Athlete"]
        assignments[f"C{i}"] = ["Place", "City"]
    return TypeOntology(types, assignments)


@pytest.fixture
def five_type_kb():
    """Knowledge store with 5 level-1 types and 60 entities per type."""
    types = {f"T{j}": TypeInfo(f"T{j}", None, 1) for j in range(5)}
    assignments = {f"E{i:03d}": [f"T{i % 5}"] for i in range(300)}
    popularity = PopularityTable(counts={e: 1 + i for i, e in enumerate(sorted(assignments))})
    popularity.m_star = sum(popularity.counts.values())
    return KnowledgeStore(ontology=TypeOntology(types, assignments), popularity=popularity)


@pytest.fixture
def exact_type_embeddings(five_type_kb):
    """Noise-free synthetic embeddings with the type one-hot planted."""
    return synthesize(SynthSpec(dim=8, sigma=0.0, seed=3), five_type_kb)


@pytest.fixture
def tiny_store():
    """Three 2-dimensional vectors."""
    return EmbeddingStore(["A", "B", "C"], np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    """Directory holding the bundled toy fixture, written once per session."""
    directory = tmp_path_factory.mktemp("toy")
    write_toy_fixture(directory, dim=16, seed=7)
    return directory


@pytest.fixture(scope="session")
def toy_kb(toy_dir):
    """Knowledge store ingested from the toy fixture."""
    return KnowledgeStore.from_paths(
        triples=toy_dir / "triples.tsv",
        ontology=toy_dir / "ontology.tsv",
        assignments=toy_dir / "assignments.tsv",
        literals=toy_dir / "literals.tsv",
        popularity=toy_dir / "popularity.tsv",
        descriptions=toy_dir / "descriptions.tsv",
        mentions=toy_dir / "mentions.tsv",
        entities=toy_dir / "entities.tsv",
    )
