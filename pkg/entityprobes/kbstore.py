"""
Knowledge-base and corpus stores consumed by the task generators.

Every input is a pre-extracted UTF-8, LF, tab-separated file; nothing here
tokenizes text or talks to the network. Stores are built once and then only
read, so they can be shared freely between worker threads.
"""

import logging
import math
import pickle
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from .exceptions import IngestError, OntologyError, PopularityError
from .utils import PathLike, atomic_write, iter_tsv, warn_counts

logger = logging.getLogger(__name__)

ROOT = "ROOT"
MAX_LEVEL = 3
LITERAL_ATTRIBUTES = ("birthYear", "areaKm2", "population", "revenue")
MIN_BIRTH_YEAR = -3000
MAX_BIRTH_YEAR = 2100


@dataclass(frozen=True)
class Entity:
    """
    A knowledge-base entity.

    Attributes:
        id: Unique opaque identifier
        name: Surface form (defaults to the id when no names file is given)
    """
    id: str
    name: str = ""

    def __post_init__(self):
        if not self.id:
            raise ValueError("Entity id must be non-empty")
        if not self.name:
            object.__setattr__(self, "name", self.id)


@dataclass(frozen=True, order=True)
class Triple:
    """A relationship triple (head, relation, tail). Self-relations are allowed."""
    head: str
    relation: str
    tail: str


@dataclass
class RelationStats:
    """
    Per-relation role counts over a deduplicated triple set.

    Attributes:
        head_counts: relation -> entity -> number of triples with the entity as head
        tail_counts: relation -> entity -> number of triples with the entity as tail
        triple_counts: relation -> number of distinct triples
    """
    head_counts: Dict[str, Counter] = field(default_factory=dict)
    tail_counts: Dict[str, Counter] = field(default_factory=dict)
    triple_counts: Dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_triples(cls, triples: Iterable[Triple]) -> "RelationStats":
        """Count roles over an already deduplicated collection of triples."""
        head_counts: Dict[str, Counter] = defaultdict(Counter)
        tail_counts: Dict[str, Counter] = defaultdict(Counter)
        triple_counts: Counter = Counter()
        for t in triples:
            head_counts[t.relation][t.head] += 1
            tail_counts[t.relation][t.tail] += 1
            triple_counts[t.relation] += 1
        return cls(dict(head_counts), dict(tail_counts), dict(triple_counts))

    def relations(self) -> List[str]:
        """All relation ids, sorted."""
        return sorted(self.triple_counts)

    def head_count(self, relation: str, entity: str) -> int:
        return self.head_counts.get(relation, Counter()).get(entity, 0)

    def tail_count(self, relation: str, entity: str) -> int:
        return self.tail_counts.get(relation, Counter()).get(entity, 0)

    def heads(self, relation: str) -> List[str]:
        """Entities seen as head of `relation`, sorted."""
        return sorted(self.head_counts.get(relation, {}))

    def tails(self, relation: str) -> List[str]:
        """Entities seen as tail of `relation`, sorted."""
        return sorted(self.tail_counts.get(relation, {}))

    def n_triples(self, relation: str) -> int:
        return self.triple_counts.get(relation, 0)

    def head_replacement_probability(self, triple: Triple) -> float:
        """
        Probability of replacing the head when corrupting `triple`.

        headCount(h) / (headCount(h) + tailCount(t)) within the triple's relation;
        the entity with the larger role count (the '1' side of a 1-to-N relation)
        is the one most likely to be replaced.
        """
        h = self.head_count(triple.relation, triple.head)
        t = self.tail_count(triple.relation, triple.tail)
        if h + t == 0:
            return 0.5
        return h / (h + t)


@dataclass(frozen=True)
class TypeInfo:
    """One ontology type row."""
    type_id: str
    parent: Optional[str]
    level: int


class TypeOntology:
    """
    A typed ontology restricted to its first three levels, plus entity assignments.

    Assignments may name any subset of an entity's chain; the full coarse-to-fine
    chain is reconstructed by walking parent links from the deepest assigned type.
    """

    def __init__(self, types: Dict[str, TypeInfo], assignments: Dict[str, List[str]]):
        self.types = dict(types)
        self.assignments = {e: list(ts) for e, ts in assignments.items()}
        self._chains: Dict[str, Tuple[str, ...]] = {}
        for entity in sorted(self.assignments):
            self._chains[entity] = self._build_chain(entity)

    def _build_chain(self, entity: str) -> Tuple[str, ...]:
        assigned = self.assignments[entity]
        for type_id in assigned:
            if type_id not in self.types:
                raise OntologyError(f"entity {entity!r} assigned to unknown type {type_id!r}")
        deepest = max(assigned, key=lambda t: (self.types[t].level, t))
        chain = self.ancestors(deepest)
        missing = [t for t in assigned if t not in chain]
        if missing:
            raise OntologyError(
                f"types assigned to {entity!r} do not form a chain: {sorted(assigned)}"
            )
        return tuple(chain)

    def ancestors(self, type_id: str) -> List[str]:
        """Chain from the level-1 ancestor down to `type_id` (inclusive)."""
        chain = []
        current: Optional[str] = type_id
        while current is not None:
            chain.append(current)
            current = self.types[current].parent
        chain.reverse()
        return chain

    def chain(self, entity: str) -> Tuple[str, ...]:
        """Assigned type chain of `entity`, coarse to fine (empty when untyped)."""
        return self._chains.get(entity, ())

    def finest_type(self, entity: str) -> Optional[str]:
        """Deepest type of `entity`, or None when the entity has no assignment."""
        chain = self._chains.get(entity)
        return chain[-1] if chain else None

    def type_at_level(self, entity: str, level: int) -> Optional[str]:
        """Type of `entity` at ontology `level`, or None when its chain is shorter."""
        chain = self._chains.get(entity, ())
        return chain[level - 1] if len(chain) >= level else None

    def level(self, type_id: str) -> int:
        return self.types[type_id].level

    def types_at_level(self, level: int) -> List[str]:
        return sorted(t for t, info in self.types.items() if info.level == level)

    def children(self, type_id: str) -> List[str]:
        return sorted(t for t, info in self.types.items() if info.parent == type_id)

    def entities(self) -> List[str]:
        """Entities with at least one type, sorted."""
        return sorted(self._chains)

    def entities_by_type(self, level: int) -> Dict[str, List[str]]:
        """Type at `level` -> sorted entities whose chain passes through it."""
        grouped: Dict[str, List[str]] = defaultdict(list)
        for entity in sorted(self._chains):
            type_id = self.type_at_level(entity, level)
            if type_id is not None:
                grouped[type_id].append(entity)
        return dict(grouped)

    def entities_with_type(self, type_id: str) -> List[str]:
        """Sorted entities whose chain passes through `type_id`."""
        level = self.level(type_id)
        return [e for e in sorted(self._chains) if self.type_at_level(e, level) == type_id]

    def __len__(self) -> int:
        return len(self.types)

    def __repr__(self) -> str:
        return f"TypeOntology(types={len(self.types)}, entities={len(self._chains)})"


@dataclass(frozen=True)
class LiteralFact:
    """
    A literal attribute of an entity.

    Attributes:
        entity: Entity id
        attribute: One of birthYear, areaKm2, population, revenue
        value: Parsed value (int for birthYear/population, float otherwise)
        currency: Currency code, only for revenue
    """
    entity: str
    attribute: str
    value: float
    currency: Optional[str] = None


@dataclass
class LiteralStore:
    """Literal facts grouped by attribute, first value per (entity, attribute) kept."""
    facts: Dict[str, Dict[str, LiteralFact]] = field(default_factory=dict)
    skipped: Dict[str, int] = field(default_factory=dict)

    def add(self, fact: LiteralFact) -> bool:
        bucket = self.facts.setdefault(fact.attribute, {})
        if fact.entity in bucket:
            return False
        bucket[fact.entity] = fact
        return True

    def values(self, attribute: str) -> Dict[str, LiteralFact]:
        """Entity -> fact for one attribute."""
        return dict(self.facts.get(attribute, {}))

    def all_facts(self) -> List[LiteralFact]:
        return [
            self.facts[a][e] for a in sorted(self.facts) for e in sorted(self.facts[a])
        ]

    def __len__(self) -> int:
        return sum(len(v) for v in self.facts.values())


@dataclass
class PopularityTable:
    """
    Inlink counts per entity.

    Attributes:
        counts: entity -> number of links pointing at it (M_e)
        m_star: total number of links (M_*)
    """
    counts: Dict[str, int] = field(default_factory=dict)
    m_star: int = 0

    def count(self, entity: str) -> int:
        """M_e, or 0 for entities absent from the count file."""
        return self.counts.get(entity, 0)

    def prior(self, entity: str) -> float:
        """
        Popularity prior M_e / M_*.

        Raises:
            PopularityError: If the table holds no links at all
        """
        if self.m_star <= 0:
            raise PopularityError("popularity prior is undefined: total link count is 0")
        return self.count(entity) / self.m_star

    def entities(self) -> List[str]:
        return sorted(self.counts)

    def __len__(self) -> int:
        return len(self.counts)


@dataclass
class ContextStore:
    """
    Context-word sets and description document frequencies.

    Attributes:
        contexts: entity -> words found both in the description prefix and near a mention
        doc_freq: word -> number of descriptions containing it
        described: entities that have a description, sorted
        skipped: warning counters collected while building
    """
    contexts: Dict[str, FrozenSet[str]] = field(default_factory=dict)
    doc_freq: Dict[str, int] = field(default_factory=dict)
    described: List[str] = field(default_factory=list)
    skipped: Dict[str, int] = field(default_factory=dict)

    def context(self, entity: str) -> FrozenSet[str]:
        return self.contexts.get(entity, frozenset())

    def entities_with(self, word: str) -> List[str]:
        """Described entities whose context contains `word`, sorted."""
        return [e for e in self.described if word in self.contexts.get(e, ())]

    def words_in_band(self, above: int, at_most: Optional[int] = None) -> List[str]:
        """Words with above < df (<= at_most when given), sorted."""
        return sorted(
            w for w, df in self.doc_freq.items()
            if df > above and (at_most is None or df <= at_most)
        )


def ingest_entities(path: PathLike) -> Dict[str, Entity]:
    """
    Read an optional entity names file ("entity<TAB>name").

    Raises:
        IngestError: On rows without exactly two fields or duplicate ids
    """
    entities: Dict[str, Entity] = {}
    for line_number, fields in iter_tsv(path):
        if len(fields) != 2 or not fields[0]:
            raise IngestError(f"expected 2 fields, got {len(fields)}", path, line_number)
        if fields[0] in entities:
            raise IngestError(f"duplicate entity id {fields[0]!r}", path, line_number)
        entities[fields[0]] = Entity(fields[0], fields[1])
    return entities


def ingest_triples(path: PathLike) -> Tuple[FrozenSet[Triple], RelationStats]:
    """
    Read relationship triples ("head<TAB>relation<TAB>tail").

    Duplicate lines collapse to a single triple; the stats are computed over the
    deduplicated set.

    Args:
        path: Triples file

    Returns:
        (triples, stats)

    Raises:
        IngestError: If a line does not have exactly three non-empty fields
    """
    triples: Set[Triple] = set()
    duplicates = 0
    for line_number, fields in iter_tsv(path):
        if len(fields) != 3 or not all(fields):
            raise IngestError(f"expected 3 fields, got {len(fields)}", path, line_number)
        triple = Triple(*fields)
        if triple in triples:
            duplicates += 1
            continue
        triples.add(triple)
    if duplicates:
        logger.debug("%s: dropped %d duplicate triples", path, duplicates)
    frozen = frozenset(triples)
    stats = RelationStats.from_triples(sorted(frozen))
    logger.info("Loaded %d triples over %d relations", len(frozen), len(stats.triple_counts))
    return frozen, stats


def ingest_ontology(ontology_path: PathLike, assignments_path: PathLike) -> TypeOntology:
    """
    Read ontology rows ("type<TAB>parent-or-ROOT<TAB>level") and assignments
    ("entity<TAB>type").

    Raises:
        OntologyError: On unknown parents or types, level inconsistencies, or
            assignments that do not lie on one parent chain
    """
    raw: Dict[str, Tuple[str, int, int]] = {}
    for line_number, fields in iter_tsv(ontology_path):
        if len(fields) != 3:
            raise OntologyError(f"expected 3 fields, got {len(fields)}", ontology_path, line_number)
        type_id, parent, level_text = fields
        try:
            level = int(level_text)
        except ValueError:
            raise OntologyError(f"level {level_text!r} is not an integer", ontology_path, line_number)
        if not 1 <= level <= MAX_LEVEL:
            raise OntologyError(f"level {level} outside 1..{MAX_LEVEL}", ontology_path, line_number)
        if type_id in raw:
            raise OntologyError(f"duplicate type {type_id!r}", ontology_path, line_number)
        raw[type_id] = (parent, level, line_number)

    types: Dict[str, TypeInfo] = {}
    for type_id, (parent, level, line_number) in raw.items():
        if parent == ROOT:
            if level != 1:
                raise OntologyError(
                    f"type {type_id!r} hangs off ROOT but has level {level}",
                    ontology_path, line_number,
                )
            types[type_id] = TypeInfo(type_id, None, level)
            continue
        if parent not in raw:
            raise OntologyError(f"unknown parent type {parent!r}", ontology_path, line_number)
        if raw[parent][1] + 1 != level:
            raise OntologyError(
                f"type {type_id!r} has level {level} but parent {parent!r} has level {raw[parent][1]}",
                ontology_path, line_number,
            )
        types[type_id] = TypeInfo(type_id, parent, level)

    assignments: Dict[str, List[str]] = defaultdict(list)
    for line_number, fields in iter_tsv(assignments_path):
        if len(fields) != 2:
            raise OntologyError(f"expected 2 fields, got {len(fields)}", assignments_path, line_number)
        entity, type_id = fields
        if type_id not in types:
            raise OntologyError(f"unknown type {type_id!r}", assignments_path, line_number)
        if type_id not in assignments[entity]:
            assignments[entity].append(type_id)

    ontology = TypeOntology(types, dict(assignments))
    logger.info("Loaded %r", ontology)
    return ontology


def _parse_number(text: str, path: PathLike, line_number: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise IngestError(f"value {text!r} is not numeric", path, line_number)
    if not math.isfinite(value):
        raise IngestError(f"value {text!r} is not finite", path, line_number)
    return value


def _parse_integer(text: str, path: PathLike, line_number: int) -> int:
    value = _parse_number(text, path, line_number)
    if value != int(value):
        raise IngestError(f"value {text!r} is not an integer", path, line_number)
    return int(value)


def ingest_literals(path: PathLike) -> LiteralStore:
    """
    Read literal facts ("entity<TAB>attribute<TAB>value[<TAB>unit]").

    Rows with an unknown attribute are skipped and counted; everything else
    must satisfy the attribute schema.

    Raises:
        IngestError: On non-numeric values, out-of-range values, or revenue rows
            without a currency
    """
    store = LiteralStore()
    skipped: Counter = Counter()
    for line_number, fields in iter_tsv(path):
        if len(fields) not in (3, 4):
            raise IngestError(f"expected 3 or 4 fields, got {len(fields)}", path, line_number)
        entity, attribute, text = fields[:3]
        unit = fields[3] if len(fields) == 4 and fields[3] else None
        if attribute not in LITERAL_ATTRIBUTES:
            skipped["unknown_attribute"] += 1
            continue
        if attribute == "birthYear":
            value = _parse_integer(text, path, line_number)
            if not MIN_BIRTH_YEAR <= value <= MAX_BIRTH_YEAR:
                raise IngestError(f"birthYear {value} out of range", path, line_number)
            fact = LiteralFact(entity, attribute, value)
        elif attribute == "population":
            value = _parse_integer(text, path, line_number)
            if value < 0:
                raise IngestError("population must be >= 0", path, line_number)
            fact = LiteralFact(entity, attribute, value)
        else:
            value = _parse_number(text, path, line_number)
            if value < 0:
                raise IngestError(f"{attribute} must be >= 0", path, line_number)
            if attribute == "revenue":
                if unit is None:
                    raise IngestError("revenue row without currency", path, line_number)
                fact = LiteralFact(entity, attribute, value, unit)
            else:
                fact = LiteralFact(entity, attribute, value)
        if not store.add(fact):
            skipped["duplicate_fact"] += 1
    store.skipped = dict(skipped)
    warn_counts(logger, f"literals {path}", store.skipped)
    return store


def build_popularity(path: PathLike) -> PopularityTable:
    """
    Read link counts ("entity<TAB>count").

    Raises:
        IngestError: On malformed rows or duplicate entities
        PopularityError: On negative counts
    """
    counts: Dict[str, int] = {}
    for line_number, fields in iter_tsv(path):
        if len(fields) != 2:
            raise IngestError(f"expected 2 fields, got {len(fields)}", path, line_number)
        entity, text = fields
        if entity in counts:
            raise IngestError(f"duplicate entity {entity!r}", path, line_number)
        count = _parse_integer(text, path, line_number)
        if count < 0:
            raise PopularityError(f"{path}:{line_number}: negative link count {count}")
        counts[entity] = count
    return PopularityTable(counts=counts, m_star=sum(counts.values()))


def build_context_sets(descriptions: PathLike, mentions: PathLike,
                       window: int = 10, desc_limit: int = 500) -> ContextStore:
    """
    Build context-word sets.

    context(e) is the set of words in the first `desc_limit` tokens of e's
    description that also occur within `window` tokens of some mention of e.
    Document frequency counts each description once per word, over the full
    description.

    Args:
        descriptions: Rows "entity<TAB>token token ..."
        mentions: Rows "entity<TAB>left-tokens<TAB>right-tokens"
        window: Tokens kept on each side of a mention
        desc_limit: Description prefix length

    Raises:
        IngestError: On malformed rows or repeated descriptions
    """
    if window < 1 or desc_limit < 1:
        raise ValueError("window and desc_limit must be >= 1")

    prefixes: Dict[str, FrozenSet[str]] = {}
    doc_freq: Counter = Counter()
    for line_number, fields in iter_tsv(descriptions):
        if len(fields) > 2 or not fields[0]:
            raise IngestError(f"expected 2 fields, got {len(fields)}", descriptions, line_number)
        entity = fields[0]
        if entity in prefixes:
            raise IngestError(f"duplicate description for {entity!r}", descriptions, line_number)
        tokens = fields[1].split() if len(fields) == 2 else []
        prefixes[entity] = frozenset(tokens[:desc_limit])
        doc_freq.update(set(tokens))

    near: Dict[str, Set[str]] = defaultdict(set)
    skipped: Counter = Counter()
    for line_number, fields in iter_tsv(mentions):
        if len(fields) != 3:
            raise IngestError(f"expected 3 fields, got {len(fields)}", mentions, line_number)
        entity, left, right = fields
        if entity not in prefixes:
            skipped["mention_without_description"] += 1
            continue
        near[entity].update(left.split()[-window:])
        near[entity].update(right.split()[:window])

    contexts = {
        entity: frozenset(prefixes[entity] & near[entity])
        for entity in sorted(prefixes) if entity in near
    }
    store = ContextStore(
        contexts=contexts,
        doc_freq=dict(doc_freq),
        described=sorted(prefixes),
        skipped=dict(skipped),
    )
    warn_counts(logger, f"mentions {mentions}", store.skipped)
    return store


@dataclass
class KnowledgeStore:
    """
    Everything the task generators and the synthetic-embedding oracle consume.

    Any component may be absent when its input file was not configured.
    """
    entities: Dict[str, Entity] = field(default_factory=dict)
    ontology: Optional[TypeOntology] = None
    triples: FrozenSet[Triple] = frozenset()
    stats: RelationStats = field(default_factory=RelationStats)
    literals: LiteralStore = field(default_factory=LiteralStore)
    popularity: PopularityTable = field(default_factory=PopularityTable)
    contexts: ContextStore = field(default_factory=ContextStore)

    @classmethod
    def from_paths(cls, triples: Optional[PathLike] = None,
                   ontology: Optional[PathLike] = None,
                   assignments: Optional[PathLike] = None,
                   literals: Optional[PathLike] = None,
                   popularity: Optional[PathLike] = None,
                   descriptions: Optional[PathLike] = None,
                   mentions: Optional[PathLike] = None,
                   entities: Optional[PathLike] = None,
                   window: int = 10, desc_limit: int = 500) -> "KnowledgeStore":
        """Ingest every configured input file."""
        store = cls()
        if entities:
            store.entities = ingest_entities(entities)
        if triples:
            store.triples, store.stats = ingest_triples(triples)
        if ontology and assignments:
            store.ontology = ingest_ontology(ontology, assignments)
        if literals:
            store.literals = ingest_literals(literals)
        if popularity:
            store.popularity = build_popularity(popularity)
        if descriptions and mentions:
            store.contexts = build_context_sets(descriptions, mentions, window, desc_limit)
        for entity_id in store.entity_ids():
            if entity_id not in store.entities:
                store.entities[entity_id] = Entity(entity_id)
        return store

    def entity_ids(self) -> List[str]:
        """Every entity id seen in any input, sorted."""
        ids: Set[str] = set(self.entities)
        for t in self.triples:
            ids.add(t.head)
            ids.add(t.tail)
        if self.ontology is not None:
            ids.update(self.ontology.entities())
        for bucket in self.literals.facts.values():
            ids.update(bucket)
        ids.update(self.popularity.counts)
        ids.update(self.contexts.described)
        return sorted(ids)

    def get_entity(self, entity_id: str) -> Optional[Entity]:
        return self.entities.get(entity_id)

    def summary(self) -> Dict[str, int]:
        """Counts written next to a snapshot."""
        return {
            "entities": len(self.entity_ids()),
            "types": len(self.ontology) if self.ontology is not None else 0,
            "typed_entities": len(self.ontology.entities()) if self.ontology is not None else 0,
            "triples": len(self.triples),
            "relations": len(self.stats.triple_counts),
            "literals": len(self.literals),
            "popularity_entities": len(self.popularity),
            "links": self.popularity.m_star,
            "described_entities": len(self.contexts.described),
            "context_entities": len(self.contexts.contexts),
        }

    def save(self, path: PathLike) -> Path:
        """Write a pickled snapshot of the store."""
        return atomic_write(path, pickle.dumps(self, protocol=4))

    @classmethod
    def load(cls, path: PathLike) -> "KnowledgeStore":
        """Read a snapshot written by `save`."""
        with open(path, "rb") as f:
            store = pickle.load(f)
        if not isinstance(store, cls):
            raise IngestError("snapshot does not contain a KnowledgeStore", path)
        return store
