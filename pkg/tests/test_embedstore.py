"""
Unit tests for embedding tables and synthetic embeddings.
"""
import pytest
import numpy as np

from entityprobes.embedstore import (
    EmbeddingStore,
    SynthSpec,
    load_embeddings,
    pair_features,
    random_embeddings,
    synthesize,
    write_embeddings,
)
from entityprobes.exceptions import EmbeddingError, ValidationError
from entityprobes.kbstore import KnowledgeStore, PopularityTable, RelationStats, Triple, TypeInfo, TypeOntology


class TestLoadEmbeddings:
    """Test cases for load_embeddings."""

    def test_basic(self, write_file):
        """Test a two-row file loads with its dimension."""
        store = load_embeddings(write_file("e.vec", "2 3\nA 1 2 3\nB 4 5 6\n"))
        assert store.dim == 3
        assert len(store) == 2
        assert store.get("B").tolist() == [4.0, 5.0, 6.0]

    def test_short_row(self, write_file):
        """Test a row with too few values names its line."""
        with pytest.raises(EmbeddingError, match=":3:"):
            load_embeddings(write_file("e.vec", "2 3\nA 1 2 3\nB 4 5\n"))

    def test_absent_lookup(self, write_file):
        """Test an unknown id returns None."""
        store = load_embeddings(write_file("e.vec", "1 3\nA 0 0 0\n"))
        assert store.get("A").tolist() == [0.0, 0.0, 0.0]
        assert store.get("B") is None
        assert "B" not in store

    def test_scientific_notation(self, write_file):
        """Test floats in scientific notation parse."""
        store = load_embeddings(write_file("e.vec", "1 2\nA 1e-3 -2.5E2\n"))
        assert store.get("A").tolist() == [0.001, -250.0]

    def test_duplicate_id(self, write_file):
        """Test a repeated id raises."""
        with pytest.raises(EmbeddingError, match="duplicate"):
            load_embeddings(write_file("e.vec", "2 1\nA 1\nA 2\n"))

    def test_row_count_mismatch(self, write_file):
        """Test fewer rows than announced raises."""
        with pytest.raises(EmbeddingError, match="announces 3"):
            load_embeddings(write_file("e.vec", "3 1\nA 1\nB 2\n"))

    def test_extra_rows(self, write_file):
        """Test more rows than announced raises."""
        with pytest.raises(EmbeddingError):
            load_embeddings(write_file("e.vec", "1 1\nA 1\nB 2\n"))

    def test_bad_header(self, write_file):
        """Test a header without two integers raises."""
        with pytest.raises(EmbeddingError):
            load_embeddings(write_file("e.vec", "A 1 2\n"))

    def test_non_finite(self, write_file):
        """Test nan values are rejected."""
        with pytest.raises(EmbeddingError):
            load_embeddings(write_file("e.vec", "1 2\nA nan 1\n"))

    def test_write_round_trip(self, write_file, tmp_path):
        """Test writing a loaded file reproduces it byte for byte."""
        text = "2 3\nA 0.1 -2.0 3e-05\nB 1.0 0.25 12345.678\n"
        store = load_embeddings(write_file("e.vec", text))
        out = write_embeddings(store, tmp_path / "out.vec")
        assert out.read_text(encoding="utf-8") == text

    def test_vectors_read_only(self, tiny_store):
        """Test the stored matrix cannot be modified."""
        with pytest.raises(ValueError):
            tiny_store.vectors[0, 0] = 5.0


class TestPairFeatures:
    """Test cases for pair_features."""

    def test_equal_vectors(self):
        """Test h=t gives a zero difference block and squares."""
        assert pair_features([1, 2], [1, 2]).tolist() == [1, 2, 1, 2, 0, 0, 1, 4]

    def test_orthogonal_vectors(self):
        """Test block layout on unit vectors."""
        assert pair_features([1, 0], [0, 1]).tolist() == [1, 0, 0, 1, 1, -1, 0, 0]

    def test_dimension_mismatch(self):
        """Test vectors of different length raise."""
        with pytest.raises(EmbeddingError):
            pair_features([1, 2], [1, 2, 3])

    def test_self_pair_difference_zero(self):
        """Test the difference block is zero for random self pairs."""
        rng = np.random.default_rng(0)
        for _ in range(50):
            h = rng.standard_normal(7)
            features = pair_features(h, h)
            assert features.shape == (28,)
            assert np.all(features[14:21] == 0.0)


class TestSynthesize:
    """Test cases for synthesize."""

    def test_exact_one_hot(self, athlete_ontology):
        """Test sigma=0 plants the level-1 one-hot and ln(1)=0."""
        kb = KnowledgeStore(ontology=athlete_ontology)
        store = synthesize(SynthSpec(dim=4, sigma=0.0, seed=1), kb)
        # level-1 types sorted: Person, Place
        assert store.get("A0")[:2].tolist() == [1.0, 0.0]
        assert store.get("C3")[:2].tolist() == [0.0, 1.0]
        assert store.get("A0")[2] == 0.0

    def test_three_types(self):
        """Test an entity of the second of three types gets [0, 1, 0]."""
        types = {t: TypeInfo(t, None, 1) for t in ("Alpha", "Beta", "Gamma")}
        kb = KnowledgeStore(ontology=TypeOntology(types, {"X": ["Beta"]}))
        store = synthesize(SynthSpec(dim=5, sigma=0.0), kb)
        assert store.get("X")[:3].tolist() == [0.0, 1.0, 0.0]

    def test_popularity_channel(self, five_type_kb):
        """Test the popularity dim holds ln(1 + M_e)."""
        store = synthesize(SynthSpec(dim=8, sigma=0.0), five_type_kb)
        count = five_type_kb.popularity.count("E010")
        assert store.get("E010")[5] == pytest.approx(np.log1p(count))

    def test_deterministic(self, five_type_kb):
        """Test the same spec gives identical vectors."""
        spec = SynthSpec(dim=12, sigma=0.3, background=1.0, seed=9)
        first = synthesize(spec, five_type_kb)
        second = synthesize(spec, five_type_kb)
        assert first.ids == second.ids
        assert np.array_equal(first.vectors, second.vectors)

    def test_seed_changes_noise(self, five_type_kb):
        """Test another seed changes the noisy channels."""
        a = synthesize(SynthSpec(dim=12, sigma=0.3, seed=1), five_type_kb)
        b = synthesize(SynthSpec(dim=12, sigma=0.3, seed=2), five_type_kb)
        assert not np.array_equal(a.vectors, b.vectors)

    def test_too_many_channels(self, five_type_kb):
        """Test planted channels beyond dim raise."""
        with pytest.raises(EmbeddingError):
            synthesize(SynthSpec(dim=5, sigma=0.0), five_type_kb)

    def test_relation_offsets(self):
        """Test tail vectors equal head vectors plus the relation offset."""
        triples = frozenset({Triple("A", "r", "B"), Triple("C", "r", "D"), Triple("E", "s", "F")})
        kb = KnowledgeStore(triples=triples, stats=RelationStats.from_triples(triples))
        spec = SynthSpec(dim=6, plant_types=False, plant_popularity=False, relation_dims=4, seed=5)
        store = synthesize(spec, kb)
        offset_ab = store.get("B")[:4] - store.get("A")[:4]
        offset_cd = store.get("D")[:4] - store.get("C")[:4]
        offset_ef = store.get("F")[:4] - store.get("E")[:4]
        assert np.allclose(offset_ab, offset_cd)
        assert not np.allclose(offset_ab, offset_ef)

    def test_shared_tail_averages_offsets(self):
        """Test a tail of several triples gets the mean of head plus offset over all of them."""
        triples = frozenset({Triple("A", "r", "T"), Triple("C", "s", "T"), Triple("E", "r", "F"),
                             Triple("G", "s", "H")})
        kb = KnowledgeStore(triples=triples, stats=RelationStats.from_triples(triples))
        spec = SynthSpec(dim=6, plant_types=False, plant_popularity=False, relation_dims=4, seed=5)
        store = synthesize(spec, kb)
        offset_r = store.get("F")[:4] - store.get("E")[:4]
        offset_s = store.get("H")[:4] - store.get("G")[:4]
        expected = ((store.get("A")[:4] + offset_r) + (store.get("C")[:4] + offset_s)) / 2
        assert np.allclose(store.get("T")[:4], expected)

    def test_empty_store(self):
        """Test an empty knowledge store raises."""
        with pytest.raises(EmbeddingError):
            synthesize(SynthSpec(), KnowledgeStore(popularity=PopularityTable()))

    def test_invalid_spec(self):
        """Test negative sigma is rejected."""
        with pytest.raises(ValidationError):
            SynthSpec(sigma=-1.0)


class TestEmbeddingStore:
    """Test cases for EmbeddingStore construction."""

    def test_id_count_mismatch(self):
        """Test ids and rows must agree."""
        with pytest.raises(EmbeddingError):
            EmbeddingStore(["A"], np.zeros((2, 3)))

    def test_random_embeddings(self):
        """Test random tables are seeded."""
        a = random_embeddings(["A", "B"], 4, seed=3)
        b = random_embeddings(["A", "B"], 4, seed=3)
        assert a.dim == 4
        assert np.array_equal(a.vectors, b.vectors)
