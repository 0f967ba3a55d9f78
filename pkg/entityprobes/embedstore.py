"""
Per-entity embedding tables.

The interchange format is word2vec-style text: a header "N d" followed by N
rows "entity-id f1 ... fd". Vectors are held as one read-only float64 matrix.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import EmbeddingError, ValidationError
from .kbstore import KnowledgeStore
from .utils import PathLike, atomic_write, format_float

logger = logging.getLogger(__name__)


class EmbeddingStore:
    """
    Immutable mapping entity-id -> vector of length `dim`.

    Lookups of unknown ids return None rather than raising; callers decide
    whether a missing vector drops an instance.
    """

    def __init__(self, ids: Sequence[str], vectors: np.ndarray):
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] == 0:
            raise EmbeddingError(f"expected a non-empty (N, d) matrix, got shape {vectors.shape}")
        if len(ids) != vectors.shape[0]:
            raise EmbeddingError(f"{len(ids)} ids for {vectors.shape[0]} vectors")
        if not np.all(np.isfinite(vectors)):
            raise EmbeddingError("embedding table contains non-finite values")
        index: Dict[str, int] = {}
        for i, entity_id in enumerate(ids):
            if entity_id in index:
                raise EmbeddingError(f"duplicate entity id {entity_id!r}")
            index[entity_id] = i
        vectors.setflags(write=False)
        self._ids = list(ids)
        self._index = index
        self._vectors = vectors

    @property
    def dim(self) -> int:
        return self._vectors.shape[1]

    @property
    def ids(self) -> List[str]:
        return list(self._ids)

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    def get(self, entity_id: str) -> Optional[np.ndarray]:
        """Vector for `entity_id`, or None when absent."""
        i = self._index.get(entity_id)
        return None if i is None else self._vectors[i]

    def __contains__(self, entity_id: object) -> bool:
        return entity_id in self._index

    def __len__(self) -> int:
        return len(self._ids)

    def __iter__(self) -> Iterator[str]:
        return iter(self._ids)

    def __repr__(self) -> str:
        return f"EmbeddingStore(n={len(self)}, dim={self.dim})"


def load_embeddings(path: PathLike) -> EmbeddingStore:
    """
    Load a text embedding file.

    Args:
        path: File with header "N d" and N rows "entity-id f1 ... fd"

    Returns:
        EmbeddingStore with exactly N entries of dimension d

    Raises:
        EmbeddingError: On a bad header, wrong row length (with line number),
            non-numeric or non-finite values, duplicate ids, or a row count
            different from N
    """
    with open(path, "r", encoding="utf-8", newline="\n") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise EmbeddingError(f"{path}:1: header must be 'N d'")
        try:
            n, dim = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingError(f"{path}:1: header must hold two integers")
        if n < 0 or dim <= 0:
            raise EmbeddingError(f"{path}:1: invalid header values N={n} d={dim}")

        ids: List[str] = []
        seen = set()
        vectors = np.empty((n, dim), dtype=np.float64)
        for line_number, line in enumerate(f, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(ids) >= n:
                raise EmbeddingError(f"{path}:{line_number}: more rows than the header's N={n}")
            if len(parts) - 1 != dim:
                raise EmbeddingError(
                    f"{path}:{line_number}: expected {dim} values, got {len(parts) - 1}"
                )
            entity_id = parts[0]
            if entity_id in seen:
                raise EmbeddingError(f"{path}:{line_number}: duplicate entity id {entity_id!r}")
            try:
                row = [float(x) for x in parts[1:]]
            except ValueError:
                raise EmbeddingError(f"{path}:{line_number}: non-numeric value")
            if not all(math.isfinite(x) for x in row):
                raise EmbeddingError(f"{path}:{line_number}: non-finite value")
            vectors[len(ids)] = row
            ids.append(entity_id)
            seen.add(entity_id)

    if len(ids) != n:
        raise EmbeddingError(f"{path}: header announces {n} rows, found {len(ids)}")
    if n == 0:
        raise EmbeddingError(f"{path}: embedding file holds no vectors")
    store = EmbeddingStore(ids, vectors)
    logger.info("Loaded %r from %s", store, path)
    return store


def write_embeddings(store: EmbeddingStore, path: PathLike) -> Path:
    """
    Write `store` in the text format read by `load_embeddings`.

    Floats use the shortest decimal that round-trips to the same float64.
    """
    lines = [f"{len(store)} {store.dim}"]
    for entity_id, row in zip(store.ids, store.vectors):
        lines.append(entity_id + " " + " ".join(format_float(x) for x in row))
    return atomic_write(path, "\n".join(lines) + "\n")


def pair_features(h: np.ndarray, t: np.ndarray) -> np.ndarray:
    """
    Features for a pair of entities: [h ; t ; h - t ; h * t].

    Raises:
        EmbeddingError: If the two vectors differ in length
    """
    h = np.asarray(h, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if h.shape != t.shape or h.ndim != 1:
        raise EmbeddingError(f"pair dimension mismatch: {h.shape} vs {t.shape}")
    return np.concatenate([h, t, h - t, h * t])


@dataclass
class SynthSpec:
    """
    Plan for a synthetic embedding table with planted, linearly recoverable signals.

    Layout: [level-1 type one-hot (k dims)] [ln(1 + M_e)] [relation block] [background].

    Attributes:
        dim: Total dimension
        sigma: Std-dev of Gaussian noise added to the type and popularity channels
        plant_types: Plant a one-hot of the entity's level-1 type
        plant_popularity: Plant ln(1 + link count) in one dim
        relation_dims: Size of the relation block (0 disables it); a tail vector
            is head + relation offset, averaged over its triples
        relations: Relations whose triples are planted (empty = all relations)
        offset_scale: Std-dev of the per-relation offset vectors
        background: Std-dev of the Gaussian filling the unplanted dims
        seed: RNG seed
    """
    dim: int = 32
    sigma: float = 0.0
    plant_types: bool = True
    plant_popularity: bool = True
    relation_dims: int = 0
    relations: Tuple[str, ...] = field(default_factory=tuple)
    offset_scale: float = 1.0
    background: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dim <= 0:
            raise ValidationError("SynthSpec.dim must be > 0")
        if self.sigma < 0 or self.background < 0 or self.offset_scale < 0:
            raise ValidationError("SynthSpec noise scales must be >= 0")
        if self.relation_dims < 0:
            raise ValidationError("SynthSpec.relation_dims must be >= 0")
        self.relations = tuple(self.relations)


def synthesize(spec: SynthSpec, kb: KnowledgeStore) -> EmbeddingStore:
    """
    Build a synthetic embedding table over every entity of `kb`.

    The same (spec, kb) always yields bit-identical vectors.

    Raises:
        EmbeddingError: If the planted channels do not fit within spec.dim
    """
    ids = kb.entity_ids()
    if not ids:
        raise EmbeddingError("cannot synthesize embeddings for an empty knowledge store")

    root_types: List[str] = []
    if spec.plant_types and kb.ontology is not None:
        root_types = kb.ontology.types_at_level(1)
    k = len(root_types)
    pop_dims = 1 if spec.plant_popularity else 0
    planted = k + pop_dims + spec.relation_dims
    if planted > spec.dim:
        raise EmbeddingError(
            f"{planted} planted channels ({k} type, {pop_dims} popularity, "
            f"{spec.relation_dims} relation) exceed dim={spec.dim}"
        )

    rng = np.random.default_rng(spec.seed)
    n = len(ids)
    noise = rng.standard_normal((n, spec.dim))
    vectors = np.zeros((n, spec.dim), dtype=np.float64)
    row_of = {entity_id: i for i, entity_id in enumerate(ids)}

    if k:
        column = {t: j for j, t in enumerate(root_types)}
        for i, entity_id in enumerate(ids):
            chain = kb.ontology.chain(entity_id)
            if chain:
                vectors[i, column[chain[0]]] = 1.0
        if spec.sigma > 0:
            vectors[:, :k] += spec.sigma * noise[:, :k]

    if pop_dims:
        counts = np.array([kb.popularity.count(e) for e in ids], dtype=np.float64)
        vectors[:, k] = np.log1p(counts)
        if spec.sigma > 0:
            vectors[:, k] += spec.sigma * noise[:, k]

    start = k + pop_dims
    stop = start + spec.relation_dims
    if spec.relation_dims:
        base = noise[:, start:stop].copy()
        vectors[:, start:stop] = base
        relations = list(spec.relations) or kb.stats.relations()
        offsets = rng.standard_normal((len(relations), spec.relation_dims)) * spec.offset_scale
        offset_of = dict(zip(relations, offsets))
        # A tail of several planted triples gets the mean of head + offset over them.
        total = np.zeros_like(base)
        hits = np.zeros(n)
        for triple in sorted(kb.triples):
            if triple.relation not in offset_of:
                continue
            total[row_of[triple.tail]] += base[row_of[triple.head]] + offset_of[triple.relation]
            hits[row_of[triple.tail]] += 1
        tails = hits > 0
        vectors[tails, start:stop] = total[tails] / hits[tails, None]

    if stop < spec.dim and spec.background > 0:
        vectors[:, stop:] = spec.background * noise[:, stop:]

    store = EmbeddingStore(ids, vectors)
    logger.info("Synthesized %r (planted=%d, sigma=%s)", store, planted, spec.sigma)
    return store


def random_embeddings(ids: Sequence[str], dim: int, seed: int, scale: float = 1.0) -> EmbeddingStore:
    """Gaussian embeddings with no planted signal (chance-level control)."""
    rng = np.random.default_rng(seed)
    return EmbeddingStore(list(ids), scale * rng.standard_normal((len(ids), dim)))
