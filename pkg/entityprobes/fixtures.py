"""
Bundled toy fixture.

`write_toy_fixture` writes a small, fully deterministic knowledge base
(240 entities, a 4/8/16-type ontology, 6 relations, literals, link counts,
descriptions, mentions, aliases, entity-linking mentions and word vectors)
together with a `toy.conf` scaled so every task family can be generated and
probed in seconds.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .utils import PathLike, atomic_write, format_float

logger = logging.getLogger(__name__)

N_ENTITIES = 240

ONTOLOGY = {
    "Person": {"Artist": ("Painter", "Musician"), "Athlete": ("Runner", "Swimmer")},
    "Place": {"Settlement": ("City", "Village"), "NaturalPlace": ("Mountain", "Lake")},
    "Organisation": {"Company": ("Bank", "Airline"), "School": ("University", "College")},
    "Work": {"Book": ("Novel", "Poem"), "Film": ("Drama", "Comedy")},
}
ROOTS = ("Person", "Place", "Organisation", "Work")

FIRST_NAMES = (
    "amber", "basil", "cedar", "dover", "ember", "fable", "garnet", "harbor", "indigo", "juniper",
    "kestrel", "linden", "marlow", "nimbus", "onyx", "pallas", "quill", "rowan", "sable", "tamsin",
    "umber", "vesper", "willow", "xenon", "yarrow", "zephyr", "alder", "briar", "cobalt", "delta",
)
LAST_NAMES = ("north", "stone", "field", "brook", "vale", "crest", "moor", "haven")

# word -> (in description when, near a mention when)
HIGH_WORDS = {
    "famous": (lambda i: i % 5 != 0, lambda i: i % 2 == 0),
    "known": (lambda i: i % 3 != 0, lambda i: i % 2 == 0),
    "early": (lambda i: i % 4 != 3, lambda i: i % 2 == 1),
}
MID_WORDS = {
    "river": (lambda i: i % 3 == 0, lambda i: (i // 2) % 2 == 0),
    "golden": (lambda i: i % 4 == 1, lambda i: (i // 2) % 2 == 0),
    "silver": (lambda i: i % 5 == 2, lambda i: (i // 2) % 2 == 1),
}

TYPE_WORDS = {
    "Person": ("born", "sang", "married"),
    "Place": ("located", "capital", "border"),
    "Organisation": ("founded", "shares", "employees"),
    "Work": ("published", "chapter", "premiere"),
}

TOY_CONF = """\
# Toy pipeline configuration (paths are relative to this file)
triples = triples.tsv
ontology = ontology.tsv
assignments = assignments.tsv
literals = literals.tsv
popularity = popularity.tsv
descriptions = descriptions.tsv
mentions = mentions.tsv
entities = entities.tsv
aliases = aliases.tsv
word_embeddings = words.vec
el_train = el_train.jsonl
el_test = el_test.jsonl
out = out

seed = 13
per_label = 4
regression_size = 20
words_per_band = 2
high_min = 100
mid_min = 30
none_per_relation = 4
detection_per_relation = 2
max_epochs = 200

synth_dim = {dim}
el_max_epochs = 30
"""


def entity_id(i: int) -> str:
    return f"E{i:03d}"


def root_of(i: int) -> str:
    return ROOTS[i % 4]


def level2_of(i: int) -> str:
    return list(ONTOLOGY[root_of(i)])[(i // 4) % 2]


def level3_of(i: int) -> str:
    return ONTOLOGY[root_of(i)][level2_of(i)][(i // 8) % 2]


def name_of(i: int) -> str:
    return f"{FIRST_NAMES[i % 30]} {LAST_NAMES[i // 30]}"


def _members(root: str) -> List[int]:
    return [i for i in range(N_ENTITIES) if root_of(i) == root]


def _tsv(rows: List[Tuple]) -> str:
    return "".join("\t".join(str(c) for c in row) + "\n" for row in rows)


def _ontology_rows() -> List[Tuple]:
    rows = []
    for root, children in ONTOLOGY.items():
        rows.append((root, "ROOT", 1))
        for child, grandchildren in children.items():
            rows.append((child, root, 2))
            rows.extend((g, child, 3) for g in grandchildren)
    return rows


def _assignment_rows() -> List[Tuple]:
    rows = []
    for i in range(N_ENTITIES):
        # a few entities are only typed down to level 2
        finest = level2_of(i) if i % 37 == 36 else level3_of(i)
        rows.append((entity_id(i), finest))
        if i % 2 == 0:
            rows.append((entity_id(i), root_of(i)))
    return rows


def _triple_rows() -> List[Tuple]:
    persons, places = _members("Person"), _members("Place")
    orgs, works = _members("Organisation"), _members("Work")
    rows = []
    for k, p in enumerate(persons):
        rows.append((entity_id(p), "birthPlace", entity_id(places[(3 * k + 1) % 60])))
        rows.append((entity_id(p), "influencedBy", entity_id(persons[(k + 7) % 60])))
        if k % 3 != 0:
            rows.append((entity_id(p), "employer", entity_id(orgs[(5 * k + 2) % 60])))
    for k, o in enumerate(orgs):
        rows.append((entity_id(o), "headquarter", entity_id(places[(7 * k + 3) % 60])))
    for k, pl in enumerate(places):
        rows.append((entity_id(pl), "locatedIn", entity_id(places[(k + 11) % 60])))
    for k, w in enumerate(works):
        rows.append((entity_id(w), "author", entity_id(persons[(2 * k + 5) % 60])))
    return rows


def _literal_rows() -> List[Tuple]:
    decades = (1850, 1870, 1910, 1950, 1980, 2000)
    rows = []
    for k, p in enumerate(_members("Person")):
        rows.append((entity_id(p), "birthYear", decades[k % 6] + k % 10))
    for k, pl in enumerate(_members("Place")):
        rows.append((entity_id(pl), "areaKm2", format_float(10.5 * (k + 1))))
        rows.append((entity_id(pl), "population", 1000 * (k + 1) + k))
    for k, o in enumerate(_members("Organisation")):
        currency = "USD" if k % 2 == 0 else "EUR"
        rows.append((entity_id(o), "revenue", format_float(2.5e6 * (k + 1)), currency))
    return rows


def _popularity_rows() -> List[Tuple]:
    rows = []
    for i in range(N_ENTITIES):
        band = i % 5
        if band == 0:
            count = 0
        elif band == 1:
            count = 1 + i % 10
        elif band == 2:
            count = 11 + i % 90
        elif band == 3:
            count = 101 + (7 * i) % 900
        else:
            count = 1001 + 13 * i
        rows.append((entity_id(i), count))
    return rows


def _text_rows() -> Tuple[List[Tuple], List[Tuple]]:
    descriptions, mentions = [], []
    words = {**HIGH_WORDS, **MID_WORDS}
    for i in range(N_ENTITIES):
        tokens = [f"entity{i}", root_of(i).lower()]
        tokens += [w for w, (in_desc, _) in words.items() if in_desc(i)]
        descriptions.append((entity_id(i), " ".join(tokens)))
        left = ["the"] + [w for w, (_, near) in words.items() if near(i)]
        mentions.append((entity_id(i), " ".join(left), "said " + root_of(i).lower()))
    # a mention of an entity without a description is counted and skipped
    mentions.append(("E999", "the famous", "one"))
    return descriptions, mentions


def _el_mentions(start: int, count: int, stride: int, prefix: str, per_doc: int) -> List[Dict]:
    records = []
    for j in range(count):
        i = (start + stride * j) % N_ENTITIES
        surface = name_of(i) if j % 3 == 0 else FIRST_NAMES[i % 30]
        records.append({
            "id": f"{prefix}{j:03d}",
            "doc": f"{prefix}D{j // per_doc:02d}",
            "surface": surface.title(),
            "context": ["the", *TYPE_WORDS[root_of(i)]],
            "gold": entity_id(i),
        })
    return records


def _word_vectors(dim: int, seed: int) -> str:
    rng = np.random.default_rng(seed)
    # synthetic entity tables put the level-1 type one-hot first, roots in sorted order
    column = {root: j for j, root in enumerate(sorted(ROOTS))}
    lines = []
    vocabulary = [("the", None)] + [(w, root) for root in ROOTS for w in TYPE_WORDS[root]]
    for word, root in vocabulary:
        vector = 0.05 * rng.standard_normal(dim)
        if root is not None:
            vector[column[root]] += 1.0
        lines.append(word + " " + " ".join(format_float(x) for x in vector))
    return f"{len(lines)} {dim}\n" + "\n".join(lines) + "\n"


def write_toy_fixture(directory: PathLike, dim: int = 32, seed: int = 7) -> Dict[str, Path]:
    """
    Write the toy fixture and its configuration.

    Args:
        directory: Target directory (created if needed)
        dim: Dimension of the word vectors; must match the synthetic entity embeddings
        seed: Seed of the word-vector noise

    Returns:
        Mapping of file role to written path, including "config"
    """
    if dim < len(ROOTS) + 1:
        raise ValueError(f"dim must be at least {len(ROOTS) + 1}")
    directory = Path(directory)
    descriptions, mentions = _text_rows()
    el_train = _el_mentions(0, 120, 7, "tr", 10)
    el_test = _el_mentions(3, 60, 11, "te", 6)
    el_test.append({"id": "te999", "doc": "teD99", "surface": "Nobody", "context": ["the"], "gold": "E999"})
    aliases = [(f"{LAST_NAMES[i // 30]} {FIRST_NAMES[i % 30]}", entity_id(i)) for i in range(N_ENTITIES)]

    contents = {
        "ontology": ("ontology.tsv", _tsv(_ontology_rows())),
        "assignments": ("assignments.tsv", _tsv(_assignment_rows())),
        "triples": ("triples.tsv", _tsv(_triple_rows())),
        "literals": ("literals.tsv", _tsv(_literal_rows())),
        "popularity": ("popularity.tsv", _tsv(_popularity_rows())),
        "descriptions": ("descriptions.tsv", _tsv(descriptions)),
        "mentions": ("mentions.tsv", _tsv(mentions)),
        "entities": ("entities.tsv", _tsv([(entity_id(i), name_of(i).title()) for i in range(N_ENTITIES)])),
        "aliases": ("aliases.tsv", _tsv(aliases)),
        "word_embeddings": ("words.vec", _word_vectors(dim, seed)),
        "el_train": ("el_train.jsonl", "".join(json.dumps(r) + "\n" for r in el_train)),
        "el_test": ("el_test.jsonl", "".join(json.dumps(r) + "\n" for r in el_test)),
        "config": ("toy.conf", TOY_CONF.format(dim=dim)),
    }
    paths = {role: atomic_write(directory / name, text) for role, (name, text) in contents.items()}
    logger.info("Wrote toy fixture (%d files) to %s", len(paths), directory)
    return paths
