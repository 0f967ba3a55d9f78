"""
Desk-scale entity-linking harness.

Candidates come from an alias index and are ranked by popularity prior; a
linear scorer over five features is trained with a margin (hinge) loss and
evaluated with micro and macro precision@1.
"""

import json
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .embedstore import EmbeddingStore
from .exceptions import EmbeddingError, IngestError, TrainingError, ValidationError
from .kbstore import Entity, PopularityTable
from .utils import PathLike, atomic_write, iter_tsv, make_rng

logger = logging.getLogger(__name__)

FEATURES = ("cosine", "prior", "exact_name", "token_overlap", "missing_embedding")

_TOKEN = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> List[str]:
    """Lowercased word tokens."""
    return _TOKEN.findall(text.casefold())


@dataclass(frozen=True)
class Mention:
    """
    A linkable span.

    Attributes:
        id: Mention id
        surface: Mention text
        context: Tokens around the mention
        gold: Gold entity id (None when unknown)
        doc: Document id
        offset: Position of the mention among the context tokens (the number of
            tokens left of it); None places it at the middle of the context
    """
    id: str
    surface: str
    context: Tuple[str, ...] = ()
    gold: Optional[str] = None
    doc: str = ""
    offset: Optional[int] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Mention":
        return cls(
            id=str(data["id"]),
            surface=str(data["surface"]),
            context=tuple(str(t) for t in data.get("context", [])),
            gold=data.get("gold"),
            doc=str(data.get("doc", "")),
            offset=None if data.get("offset") is None else int(data["offset"]),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"id": self.id, "doc": self.doc, "surface": self.surface,
                "context": list(self.context), "gold": self.gold, "offset": self.offset}


def load_mentions(path: PathLike) -> List[Mention]:
    """
    Read mentions from JSON lines {"id", "doc", "surface", "context", "gold"} with an optional "offset".

    Raises:
        IngestError: On invalid JSON or a missing id/surface (with line number)
    """
    mentions = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                mentions.append(Mention.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as e:
                raise IngestError(f"invalid mention record: {e}", path, line_number)
    return mentions


def write_mentions(mentions: Iterable[Mention], path: PathLike) -> Path:
    return atomic_write(path, "".join(json.dumps(m.to_dict(), ensure_ascii=False) + "\n" for m in mentions))


class AliasIndex:
    """
    Case-folded lookup from surface strings to entities.

    Three kinds of hits are kept apart: entity names matching the whole
    surface, anchor-text aliases matching the whole surface, and tokens of
    names or aliases matching a token of the surface.
    """

    def __init__(self):
        self._names: Dict[str, Set[str]] = defaultdict(set)
        self._aliases: Dict[str, Set[str]] = defaultdict(set)
        self._tokens: Dict[str, Set[str]] = defaultdict(set)
        self._name_of: Dict[str, str] = {}

    def add_name(self, entity_id: str, name: str) -> None:
        self._name_of[entity_id] = name
        self._names[name.casefold()].add(entity_id)
        for token in tokenize(name):
            self._tokens[token].add(entity_id)

    def add_alias(self, surface: str, entity_id: str) -> None:
        self._aliases[surface.casefold()].add(entity_id)
        for token in tokenize(surface):
            self._tokens[token].add(entity_id)

    def name(self, entity_id: str) -> str:
        return self._name_of.get(entity_id, entity_id)

    def name_matches(self, surface: str) -> Set[str]:
        return set(self._names.get(surface.casefold(), ()))

    def alias_matches(self, surface: str) -> Set[str]:
        return set(self._aliases.get(surface.casefold(), ()))

    def token_matches(self, surface: str) -> Set[str]:
        hits: Set[str] = set()
        for token in tokenize(surface):
            hits.update(self._tokens.get(token, ()))
        return hits

    def lookup(self, surface: str) -> Set[str]:
        return self.name_matches(surface) | self.alias_matches(surface) | self.token_matches(surface)

    def entities(self) -> Set[str]:
        known = set(self._name_of)
        for bucket in self._aliases.values():
            known.update(bucket)
        return known

    @classmethod
    def build(cls, aliases: Iterable[Tuple[str, str]],
              entities: Optional[Dict[str, Entity]] = None) -> "AliasIndex":
        index = cls()
        for entity_id, entity in sorted((entities or {}).items()):
            index.add_name(entity_id, entity.name)
        for surface, entity_id in aliases:
            index.add_alias(surface, entity_id)
        return index

    def __repr__(self) -> str:
        return (f"AliasIndex(names={len(self._names)}, aliases={len(self._aliases)}, "
                f"tokens={len(self._tokens)})")


def load_aliases(path: PathLike) -> List[Tuple[str, str]]:
    """
    Read "surface<TAB>entity" rows.

    Raises:
        IngestError: On rows without exactly two non-empty fields
    """
    pairs = []
    for line_number, fields in iter_tsv(path):
        if len(fields) != 2 or not fields[0] or not fields[1]:
            raise IngestError(f"expected 'surface<TAB>entity', got {len(fields)} fields", path, line_number)
        pairs.append((fields[0], fields[1]))
    return pairs


def generate_candidates(mention: Mention, index: AliasIndex, pop: PopularityTable, k: int = 30) -> List[str]:
    """
    Candidates for a mention ranked by popularity prior.

    The union of name, alias and token hits is ordered by (prior desc, id asc)
    and cut to k, so a larger k never reorders the shared prefix.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    hits = index.lookup(mention.surface)
    return sorted(hits, key=lambda e: (-pop.count(e), e))[:k]


@dataclass
class LinkerConfig:
    """
    Linker settings.

    Attributes:
        candidates: Candidates kept per mention
        window: Context tokens used per mention
        margin: Hinge margin
        patience: Epochs without validation improvement before stopping
        max_epochs: Epoch cap
        learning_rate: Initial subgradient step (decays as 1 / sqrt(epoch))
        l2: Weight penalty
        validation_fraction: Held-out share of training mentions when no validation set is given
        seed: Seed of the validation split
    """
    candidates: int = 30
    window: int = 20
    margin: float = 1.0
    patience: int = 3
    max_epochs: int = 100
    learning_rate: float = 0.5
    l2: float = 0.0
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.candidates < 1:
            raise ValidationError("candidates must be >= 1")
        if self.window < 0:
            raise ValidationError("window must be >= 0")
        if self.margin <= 0:
            raise ValidationError("margin must be > 0")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValidationError("patience and max_epochs must be >= 1")
        if self.learning_rate <= 0 or self.l2 < 0:
            raise ValidationError("learning_rate must be > 0 and l2 >= 0")
        if not 0 <= self.validation_fraction < 1:
            raise ValidationError("validation_fraction must be in [0, 1)")


@dataclass
class LinkScorer:
    """Linear scorer over FEATURES."""
    weights: np.ndarray = field(default_factory=lambda: np.zeros(len(FEATURES)))
    margin: float = 1.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(FEATURES),):
            raise ValidationError(f"scorer needs {len(FEATURES)} weights, got {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise TrainingError("scorer weights are not finite")

    def scores(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights

    def to_dict(self) -> Dict[str, Any]:
        return {"features": list(FEATURES), "weights": self.weights.tolist(), "margin": self.margin}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LinkScorer":
        return cls(weights=np.array(data["weights"], dtype=np.float64), margin=float(data.get("margin", 1.0)))

    @classmethod
    def popularity_only(cls) -> "LinkScorer":
        return cls(weights=np.array([0.0, 1.0, 0.0, 0.0, 0.0]))


class FeatureBuilder:
    """Computes the candidate feature matrix of a mention."""

    def __init__(self, index: AliasIndex, pop: PopularityTable,
                 entity_store: Optional[EmbeddingStore] = None,
                 word_store: Optional[EmbeddingStore] = None, window: int = 20):
        if entity_store is not None and word_store is not None and entity_store.dim != word_store.dim:
            raise EmbeddingError(
                f"entity vectors (dim {entity_store.dim}) and word vectors (dim {word_store.dim}) differ"
            )
        self.index = index
        self.pop = pop
        self.entity_store = entity_store
        self.word_store = word_store
        self.window = window

    def window_tokens(self, mention: Mention) -> Tuple[str, ...]:
        """Up to `window` context tokens centred on the mention, shifted inward at the context edges."""
        context = mention.context
        if mention.offset is None:
            centre = len(context) // 2
        else:
            centre = min(max(mention.offset, 0), len(context))
        start = max(0, min(centre - self.window // 2, len(context) - self.window))
        return context[start:start + self.window]

    def context_vector(self, mention: Mention) -> Optional[np.ndarray]:
        """Mean vector of the known window tokens, None when none is known."""
        if self.word_store is None:
            return None
        tokens = [t.casefold() for t in self.window_tokens(mention)]
        vectors = [v for v in (self.word_store.get(t) for t in tokens) if v is not None]
        if not vectors:
            return None
        return np.mean(vectors, axis=0)

    def features(self, mention: Mention, candidates: Sequence[str]) -> np.ndarray:
        context = self.context_vector(mention)
        surface = mention.surface.casefold()
        surface_tokens = set(tokenize(mention.surface))
        rows = []
        for entity_id in candidates:
            vector = self.entity_store.get(entity_id) if self.entity_store is not None else None
            name = self.index.name(entity_id)
            name_tokens = set(tokenize(name))
            prior = self.pop.prior(entity_id) if self.pop.m_star > 0 else 0.0
            overlap = len(surface_tokens & name_tokens) / len(surface_tokens) if surface_tokens else 0.0
            rows.append([
                cosine(vector, context),
                prior,
                1.0 if name.casefold() == surface else 0.0,
                overlap,
                1.0 if vector is None else 0.0,
            ])
        return np.array(rows, dtype=np.float64).reshape(len(rows), len(FEATURES))


def cosine(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> float:
    """Cosine similarity; 0 when either vector is absent or has zero norm."""
    if a is None or b is None:
        return 0.0
    norm = float(np.linalg.norm(a) * np.linalg.norm(b))
    if norm == 0.0:
        return 0.0
    return float(np.dot(a, b) / norm)


def score(mention: Mention, candidate: str, scorer: LinkScorer, builder: FeatureBuilder) -> float:
    """Score of one candidate for one mention."""
    return float(scorer.scores(builder.features(mention, [candidate]))[0])


@dataclass
class _Prepared:
    mention: Mention
    candidates: List[str]
    features: np.ndarray
    gold_index: int


def hinge_objective(weights: np.ndarray, prepared: Sequence[Tuple[np.ndarray, int]],
                    margin: float, l2: float = 0.0) -> Tuple[float, np.ndarray]:
    """
    Mean of max(0, margin - s(gold) + max over other candidates of s(c)) plus (l2 / 2) * ||w||^2.

    Args:
        weights: Scorer weights
        prepared: (candidate feature matrix, gold row) per mention; each matrix has >= 2 rows
        margin: Hinge margin
        l2: Weight penalty

    Returns:
        (loss, subgradient)
    """
    loss = 0.0
    grad = np.zeros_like(weights)
    for features, gold in prepared:
        scores = features @ weights
        others = np.delete(np.arange(len(scores)), gold)
        rival = others[int(np.argmax(scores[others]))]
        violation = margin - scores[gold] + scores[rival]
        if violation > 0:
            loss += violation
            grad += features[rival] - features[gold]
    n = max(len(prepared), 1)
    loss = loss / n + 0.5 * l2 * float(weights @ weights)
    grad = grad / n + l2 * weights
    return float(loss), grad


@dataclass
class HingeTrainingLog:
    """Per-epoch losses and the mention bookkeeping of a training run."""
    train_losses: List[float] = field(default_factory=list)
    validation_losses: List[float] = field(default_factory=list)
    best_epoch: int = 0
    trained_mentions: int = 0
    validation_mentions: int = 0
    skipped_gold_missing: int = 0
    skipped_single_candidate: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "train_losses": list(self.train_losses),
            "validation_losses": list(self.validation_losses),
            "best_epoch": self.best_epoch,
            "trained_mentions": self.trained_mentions,
            "validation_mentions": self.validation_mentions,
            "skipped_gold_missing": self.skipped_gold_missing,
            "skipped_single_candidate": self.skipped_single_candidate,
        }


def _prepare(mentions: Sequence[Mention], builder: FeatureBuilder, k: int,
             log: HingeTrainingLog) -> List[_Prepared]:
    prepared = []
    for mention in mentions:
        candidates = generate_candidates(mention, builder.index, builder.pop, k)
        if mention.gold not in candidates:
            log.skipped_gold_missing += 1
            continue
        if len(candidates) < 2:
            log.skipped_single_candidate += 1
            continue
        prepared.append(_Prepared(mention, candidates, builder.features(mention, candidates),
                                  candidates.index(mention.gold)))
    return prepared


def train_hinge(mentions: Sequence[Mention], builder: FeatureBuilder, cfg: Optional[LinkerConfig] = None,
                validation: Optional[Sequence[Mention]] = None) -> Tuple[LinkScorer, HingeTrainingLog]:
    """
    Train a LinkScorer by full-batch subgradient descent on the hinge loss.

    Mentions whose gold is not among their candidates (or that have a single
    candidate) are skipped and counted. Without a validation set a seeded
    `validation_fraction` of the mentions is held out; training stops when the
    validation loss has not improved for `patience` epochs and the best
    weights are returned.

    Raises:
        TrainingError: If no mention is trainable
    """
    cfg = cfg or LinkerConfig()
    log = HingeTrainingLog()
    prepared = _prepare(mentions, builder, cfg.candidates, log)
    if validation is not None:
        held_out = _prepare(validation, builder, cfg.candidates, HingeTrainingLog())
    else:
        n_val = int(math.floor(cfg.validation_fraction * len(prepared)))
        if 0 < n_val < len(prepared):
            order = make_rng(cfg.seed, "el-validation").permutation(len(prepared))
            held_out = [prepared[i] for i in order[:n_val]]
            prepared = [prepared[i] for i in sorted(order[n_val:])]
        else:
            held_out = []
    if not prepared:
        raise TrainingError(
            f"no trainable mentions ({log.skipped_gold_missing} without gold candidate, "
            f"{log.skipped_single_candidate} with a single candidate)"
        )
    if log.skipped_gold_missing:
        logger.warning("Skipped %d training mentions whose gold is not a candidate", log.skipped_gold_missing)
    log.trained_mentions = len(prepared)
    log.validation_mentions = len(held_out)

    train_set = [(p.features, p.gold_index) for p in prepared]
    val_set = [(p.features, p.gold_index) for p in held_out] or train_set

    weights = np.zeros(len(FEATURES))
    best_weights = weights.copy()
    best_loss, _ = hinge_objective(weights, val_set, cfg.margin, 0.0)
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        loss, grad = hinge_objective(weights, train_set, cfg.margin, cfg.l2)
        if not math.isfinite(loss):
            raise TrainingError("hinge loss is not finite", epoch=epoch, loss=loss)
        log.train_losses.append(loss)
        weights = weights - cfg.learning_rate / math.sqrt(epoch) * grad
        val_loss, _ = hinge_objective(weights, val_set, cfg.margin, 0.0)
        log.validation_losses.append(val_loss)
        if val_loss < best_loss - 1e-12:
            best_loss, best_weights, stale = val_loss, weights.copy(), 0
            log.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    logger.info("Linker trained on %d mentions, best epoch %d, validation loss %.4f",
                log.trained_mentions, log.best_epoch, best_loss)
    return LinkScorer(best_weights, cfg.margin), log


@dataclass
class LinkingResult:
    """Precision@1 of a scorer and its per-mention predictions."""
    micro_p1: float
    macro_p1: float
    n_mentions: int
    n_documents: int
    excluded: int = 0
    predictions: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "micro_p1": self.micro_p1,
            "macro_p1": self.macro_p1,
            "n_mentions": self.n_mentions,
            "n_documents": self.n_documents,
            "excluded": self.excluded,
            "predictions": list(self.predictions),
        }

    def save(self, path: PathLike) -> Path:
        return atomic_write(path, json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n")


def precision_at_1(outcomes: Sequence[Tuple[str, bool]]) -> Tuple[float, float]:
    """
    Micro and macro P@1 from (document, correct) pairs.

    Raises:
        ValueError: On an empty list
    """
    if not outcomes:
        raise ValueError("no mentions to evaluate")
    by_doc: Dict[str, List[bool]] = defaultdict(list)
    for doc, correct in outcomes:
        by_doc[doc].append(correct)
    micro = 100.0 * sum(c for _, c in outcomes) / len(outcomes)
    macro = 100.0 * float(np.mean([sum(v) / len(v) for _, v in sorted(by_doc.items())]))
    return micro, macro


def evaluate_el(mentions: Sequence[Mention], scorer: LinkScorer, builder: FeatureBuilder,
                k: int = 30, kb_entities: Optional[Set[str]] = None) -> LinkingResult:
    """
    Link every mention whose gold is in the KB and report P@1.

    A mention without candidates counts as a miss. Ties go to the candidate
    ranked first by prior.

    Raises:
        ValueError: If no mention has a gold entity in the KB
    """
    known = kb_entities if kb_entities is not None else builder.index.entities()
    outcomes = []
    predictions = []
    excluded = 0
    for mention in mentions:
        if mention.gold is None or mention.gold not in known:
            excluded += 1
            continue
        candidates = generate_candidates(mention, builder.index, builder.pop, k)
        predicted = None
        if candidates:
            scores = scorer.scores(builder.features(mention, candidates))
            predicted = candidates[int(np.argmax(scores))]
        correct = predicted == mention.gold
        outcomes.append((mention.doc, correct))
        predictions.append({"id": mention.id, "doc": mention.doc, "gold": mention.gold,
                            "predicted": predicted, "correct": correct})
    if excluded:
        logger.warning("Excluded %d mentions whose gold entity is not in the KB", excluded)
    micro, macro = precision_at_1(outcomes)
    return LinkingResult(micro, macro, len(outcomes), len({d for d, _ in outcomes}), excluded, predictions)
