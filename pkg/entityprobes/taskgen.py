"""
Probing-task generation.

Every generator is a pure function of the stores, a master seed and its
settings: each task (and each subtask) draws from its own numpy Generator
derived from (seed, task id), so tasks can be generated in any order or in
parallel without changing a single byte of output.
"""

import bisect
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Collection, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import CorruptionError, TaskGenerationError, ValidationError
from .kbstore import (
    ContextStore, KnowledgeStore, LiteralStore, PopularityTable, RelationStats, Triple, TypeOntology,
)
from .utils import PathLike, atomic_write, hashed_stem, make_rng, sanitize_task_id

logger = logging.getLogger(__name__)

KINDS = ("binary", "multiclass", "regression", "pairwise-binary", "pairwise-multiclass")

FAMILIES = (
    "W-H", "W-M",
    "T-1", "T-2", "T-3",
    "R-D", "R-I", "R-C", "R-C+I",
    "P-R", "P-B", "P-Any", "P-2", "P-5", "P-10",
    "F-C", "F-D", "F-A", "F-A+T", "F-P", "F-P+T", "F-R",
)
EXTRA_FAMILIES = ("T-S",)

# Families whose report row averages per-subtask macro F1.
SUBTASK_FAMILIES = ("W-H", "W-M", "R-I")

POSITIVE, NEGATIVE = "positive", "negative"
RELATED, UNRELATED = "related", "unrelated"
FIRST, SECOND = "first", "second"
NONE_LABEL = "None"
POPULARITY_BINS = ("1-10", "10-100", "100-1000", ">1000")
COMPARE_RATIOS = {"P-Any": 1.0, "P-2": 2.0, "P-5": 5.0, "P-10": 10.0}
FACT_ATTRIBUTES = {"area": "areaKm2", "population": "population", "revenue": "revenue"}

Label = Union[str, float]


@dataclass(frozen=True)
class Instance:
    """One probing instance: 1-2 entity ids and a label (class name or real value)."""
    inputs: Tuple[str, ...]
    label: Label


@dataclass
class TaskDataset:
    """
    One probing task with its train and test splits.

    Attributes:
        task_id: Identifier such as "T-1", "R-I:birthPlace" or "P-5"
        kind: binary, multiclass, regression, pairwise-binary or pairwise-multiclass
        labels: Ordered label list (empty for regression)
        train: Training instances
        test: Test instances
        family: Task family ("R-I" for "R-I:birthPlace")
        stats: Drop/skip counters collected while generating
    """
    task_id: str
    kind: str
    labels: List[str]
    train: List[Instance] = field(default_factory=list)
    test: List[Instance] = field(default_factory=list)
    family: str = ""
    stats: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown task kind {self.kind!r}")
        if not self.family:
            self.family = self.task_id.split(":", 1)[0]

    @property
    def is_regression(self) -> bool:
        return self.kind == "regression"

    @property
    def is_pairwise(self) -> bool:
        return self.kind.startswith("pairwise")

    def label_counts(self, split: str) -> Dict[str, int]:
        instances = self.train if split == "train" else self.test
        counts = Counter(str(i.label) for i in instances)
        return {label: counts.get(label, 0) for label in self.labels}

    def records(self) -> Iterable[Dict[str, Any]]:
        """Task-file records, train split first."""
        for split, instances in (("train", self.train), ("test", self.test)):
            for instance in instances:
                yield {
                    "task": self.task_id,
                    "kind": self.kind,
                    "split": split,
                    "inputs": list(instance.inputs),
                    "label": instance.label,
                }

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in self.records())

    def manifest_entry(self, file_name: str) -> Dict[str, Any]:
        entry: Dict[str, Any] = {
            "task": self.task_id,
            "family": self.family,
            "kind": self.kind,
            "labels": list(self.labels),
            "file": file_name,
            "counts": {"train": len(self.train), "test": len(self.test)},
            "stats": dict(sorted(self.stats.items())),
        }
        if not self.is_regression:
            entry["counts"]["train_per_label"] = self.label_counts("train")
            entry["counts"]["test_per_label"] = self.label_counts("test")
        return entry

    def __repr__(self) -> str:
        return (f"TaskDataset({self.task_id}, kind={self.kind}, labels={len(self.labels)}, "
                f"train={len(self.train)}, test={len(self.test)})")


@dataclass
class CorruptionConfig:
    """
    Settings for the corruption sampler.

    Attributes:
        max_resample_attempts: Redraws allowed when a corruption hits a positive triple
        seed: Seed used when no Generator is passed in
    """
    max_resample_attempts: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.max_resample_attempts < 1:
            raise ValidationError("max_resample_attempts must be >= 1")


@dataclass
class GenerationLog:
    """Everything skipped or excluded during generation, keyed by family."""
    skipped: Dict[str, List[str]] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)

    def skip(self, family: str, item: str, reason: str) -> None:
        self.skipped.setdefault(family, []).append(f"{item}: {reason}")

    def fail(self, task_id: str, reason: str) -> None:
        self.failures[task_id] = reason

    def merge(self, other: "GenerationLog") -> None:
        for family, items in other.skipped.items():
            self.skipped.setdefault(family, []).extend(items)
        self.failures.update(other.failures)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "skipped": {k: list(v) for k, v in sorted(self.skipped.items())},
            "failures": dict(sorted(self.failures.items())),
        }


def _split_pool(pool: Sequence[str], per_label: int, rng: np.random.Generator) -> Tuple[List[str], List[str]]:
    """Draw 2 * per_label distinct entities; the first half trains, the rest tests."""
    order = rng.permutation(len(pool))[: 2 * per_label]
    chosen = [pool[i] for i in order]
    return chosen[:per_label], chosen[per_label:]


def _shuffled(instances: List[Instance], rng: np.random.Generator) -> List[Instance]:
    return [instances[i] for i in rng.permutation(len(instances))]


def _single_entity_task(task_id: str, kind: str, groups: Dict[str, Sequence[str]],
                        labels: List[str], per_label: int, rng: np.random.Generator) -> TaskDataset:
    train: List[Instance] = []
    test: List[Instance] = []
    for label in labels:
        tr, te = _split_pool(groups[label], per_label, rng)
        train.extend(Instance((e,), label) for e in tr)
        test.extend(Instance((e,), label) for e in te)
    return TaskDataset(task_id, kind, list(labels), _shuffled(train, rng), _shuffled(test, rng))


# Context words

def gen_word_tasks(band: str, n_words: int, per_label: int, ctx: ContextStore, seed: int,
                   high_min: int = 100_000, mid_min: int = 10_000,
                   log: Optional[GenerationLog] = None) -> List[TaskDataset]:
    """
    One binary task per selected word of a frequency band.

    Positives are entities with the word in their context set; negatives are
    drawn uniformly from described entities without it. Positive and negative
    entities of the two splits never overlap.

    Args:
        band: "high" (df > high_min) or "mid" (mid_min < df <= high_min)
        n_words: Number of words to select
        per_label: Instances per label per split
        ctx: Context store
        seed: Master seed

    Returns:
        Tasks "W-H:<word>" / "W-M:<word>", sorted by word
    """
    if band not in ("high", "mid"):
        raise ValidationError(f"unknown word band {band!r}")
    family = "W-H" if band == "high" else "W-M"
    log = log if log is not None else GenerationLog()
    if band == "high":
        band_words = ctx.words_in_band(high_min)
    else:
        band_words = ctx.words_in_band(mid_min, high_min)

    holders: Dict[str, List[str]] = defaultdict(list)
    for entity in ctx.described:
        for word in ctx.context(entity):
            holders[word].append(entity)
    described = set(ctx.described)

    qualifying = []
    for word in band_words:
        positives = holders.get(word, [])
        if len(positives) < 2 * per_label:
            log.skip(family, word, f"{len(positives)} positives < {2 * per_label}")
        elif len(described) - len(positives) < 2 * per_label:
            log.skip(family, word, f"{len(described) - len(positives)} negatives < {2 * per_label}")
        else:
            qualifying.append(word)

    if len(qualifying) > n_words:
        picks = make_rng(seed, family).choice(len(qualifying), n_words, replace=False)
        selected = sorted(qualifying[i] for i in picks)
    else:
        selected = qualifying
        if len(selected) < n_words:
            logger.warning("%s: only %d of %d requested words qualify", family, len(selected), n_words)

    tasks = []
    for word in selected:
        task_id = f"{family}:{word}"
        rng = make_rng(seed, task_id)
        positives = holders[word]
        held = set(positives)
        negatives = [e for e in ctx.described if e not in held]
        task = _single_entity_task(
            task_id, "binary", {POSITIVE: positives, NEGATIVE: negatives},
            [POSITIVE, NEGATIVE], per_label, rng,
        )
        task.family = family
        tasks.append(task)
    return tasks


# Entity types

def gen_type_task(level: int, ontology: TypeOntology, per_label: int, seed: int,
                  log: Optional[GenerationLog] = None) -> TaskDataset:
    """
    One multiclass task over all types at `level` with enough entities.

    Raises:
        TaskGenerationError: If fewer than two types qualify
    """
    if level not in (1, 2, 3):
        raise ValidationError(f"type level must be 1, 2 or 3, got {level}")
    task_id = f"T-{level}"
    log = log if log is not None else GenerationLog()
    groups = ontology.entities_by_type(level)
    labels = []
    for type_id in sorted(groups):
        if len(groups[type_id]) >= 2 * per_label:
            labels.append(type_id)
        else:
            log.skip(task_id, type_id, f"{len(groups[type_id])} entities < {2 * per_label}")
    if len(labels) < 2:
        raise TaskGenerationError(
            f"{task_id}: {len(labels)} types have >= {2 * per_label} entities",
            counts={t: len(v) for t, v in sorted(groups.items())},
        )
    return _single_entity_task(task_id, "multiclass", groups, labels, per_label, make_rng(seed, task_id))


def gen_subtype_tasks(ontology: TypeOntology, per_label: int, seed: int,
                      log: Optional[GenerationLog] = None) -> List[TaskDataset]:
    """One multiclass task per level-1/2 type over its child types ("T-S:<Type>")."""
    log = log if log is not None else GenerationLog()
    tasks = []
    for level in (1, 2):
        child_groups = ontology.entities_by_type(level + 1)
        for parent in ontology.types_at_level(level):
            task_id = f"T-S:{parent}"
            labels = [
                c for c in ontology.children(parent)
                if len(child_groups.get(c, ())) >= 2 * per_label
            ]
            if len(labels) < 2:
                log.skip("T-S", parent, f"{len(labels)} qualifying subtypes")
                continue
            task = _single_entity_task(
                task_id, "multiclass", child_groups, labels, per_label, make_rng(seed, task_id)
            )
            tasks.append(task)
    return tasks


# Relations

class CorruptionSampler:
    """
    Type-restricted head/tail corruption of positive triples.

    Side selection: the head is replaced with probability
    headCount(h) / (headCount(h) + tailCount(t)). The replacement shares the
    replaced entity's finest type exactly; when no other entity has that type
    the sampler tries entities whose finest type is the parent, then the
    grandparent. Members of subtypes never join an ancestor's pool. Untyped
    entities fall back to the entities seen in the same role for the relation.
    """

    def __init__(self, triples: Iterable[Triple], stats: RelationStats,
                 ontology: Optional[TypeOntology] = None,
                 config: Optional[CorruptionConfig] = None):
        self.positives: FrozenSet[Triple] = frozenset(triples)
        self.pairs = frozenset((t.head, t.tail) for t in self.positives)
        self.stats = stats
        self.ontology = ontology
        self.config = config or CorruptionConfig()
        self._by_finest: Dict[str, List[str]] = defaultdict(list)
        if ontology is not None:
            for entity in ontology.entities():
                self._by_finest[ontology.finest_type(entity)].append(entity)
        self._roles: Dict[Tuple[str, str], List[str]] = {}

    def _role_pool(self, relation: str, role: str) -> List[str]:
        key = (relation, role)
        if key not in self._roles:
            self._roles[key] = self.stats.heads(relation) if role == "head" else self.stats.tails(relation)
        return self._roles[key]

    def candidate_pool(self, entity: str, relation: str, role: str) -> Tuple[List[str], str]:
        """
        Sorted pool a replacement for `entity` is drawn from, and its source.

        The pool may contain `entity` itself; draws skip it.
        """
        chain = self.ontology.chain(entity) if self.ontology is not None else ()
        for type_id in reversed(chain):
            pool = self._by_finest.get(type_id, [])
            if len(pool) > 1 or (pool and pool[0] != entity):
                return pool, f"type:{type_id}"
        return self._role_pool(relation, role), f"role:{role}"

    @staticmethod
    def _draw_excluding(pool: List[str], entity: str, rng: np.random.Generator) -> Optional[str]:
        position = bisect.bisect_left(pool, entity)
        contains = position < len(pool) and pool[position] == entity
        size = len(pool) - (1 if contains else 0)
        if size <= 0:
            return None
        i = int(rng.integers(size))
        if contains and i >= position:
            i += 1
        return pool[i]

    def corrupt(self, triple: Triple, rng: np.random.Generator, avoid_pairs: bool = False) -> Triple:
        """
        Corrupt one slot of `triple`.

        Args:
            triple: Positive triple
            rng: Random stream
            avoid_pairs: Also reject corruptions whose (head, tail) pair is related
                by any positive triple

        Raises:
            CorruptionError: If no valid replacement is found within the attempt budget
        """
        replace_head = rng.random() < self.stats.head_replacement_probability(triple)
        role = "head" if replace_head else "tail"
        replaced = triple.head if replace_head else triple.tail
        pool, _ = self.candidate_pool(replaced, triple.relation, role)
        for _ in range(self.config.max_resample_attempts):
            replacement = self._draw_excluding(pool, replaced, rng)
            if replacement is None:
                break
            if replace_head:
                corrupted = Triple(replacement, triple.relation, triple.tail)
            else:
                corrupted = Triple(triple.head, triple.relation, replacement)
            if corrupted in self.positives:
                continue
            if avoid_pairs and (corrupted.head, corrupted.tail) in self.pairs:
                continue
            return corrupted
        raise CorruptionError(
            f"no valid {role} replacement for {triple}",
            counts={"pool": len(pool), "attempts": self.config.max_resample_attempts},
        )


def corrupt(triple: Triple, stats: RelationStats, ontology: Optional[TypeOntology],
            triples: Iterable[Triple], cfg: CorruptionConfig,
            rng: Optional[np.random.Generator] = None) -> Triple:
    """Corrupt a single triple (convenience wrapper around CorruptionSampler)."""
    sampler = CorruptionSampler(triples, stats, ontology, cfg)
    return sampler.corrupt(triple, rng if rng is not None else np.random.default_rng(cfg.seed))


def _group_by_relation(triples: Iterable[Triple]) -> Dict[str, List[Triple]]:
    grouped: Dict[str, List[Triple]] = defaultdict(list)
    for t in sorted(triples):
        grouped[t.relation].append(t)
    return dict(grouped)


def _draw_corruptions(sampler: CorruptionSampler, sources: Sequence[Triple], count: int,
                      rng: np.random.Generator, used_pairs: set) -> Tuple[List[Triple], int]:
    """
    Corrupt sources (cycling in a random order) until `count` new pairs exist.

    Returns:
        (corruptions, failures)

    Raises:
        TaskGenerationError: If the budget runs out first
    """
    out: List[Triple] = []
    failures = 0
    if count == 0:
        return out, failures
    if not sources:
        raise TaskGenerationError("no source triples to corrupt", counts={"needed": count})
    order = rng.permutation(len(sources))
    budget = max(10 * count, 2 * len(sources))
    for step in range(budget):
        source = sources[order[step % len(sources)]]
        try:
            corrupted = sampler.corrupt(source, rng, avoid_pairs=True)
        except CorruptionError:
            failures += 1
            continue
        key = (corrupted.head, corrupted.tail)
        if key in used_pairs:
            continue
        used_pairs.add(key)
        out.append(corrupted)
        if len(out) == count:
            return out, failures
    raise TaskGenerationError(
        f"only {len(out)} of {count} distinct corruptions",
        counts={"found": len(out), "needed": count, "failures": failures},
    )


def _pick_unused(triples: Sequence[Triple], count: int, rng: np.random.Generator,
                 used_pairs: set) -> Optional[List[Triple]]:
    """Pick `count` triples whose (head, tail) pairs are not used yet; claim them."""
    picked = []
    for i in rng.permutation(len(triples)):
        t = triples[i]
        key = (t.head, t.tail)
        if key in used_pairs:
            continue
        picked.append(t)
        if len(picked) == count:
            used_pairs.update((p.head, p.tail) for p in picked)
            return picked
    return None


def _pair(t: Triple) -> Tuple[str, str]:
    return (t.head, t.tail)


def gen_relation_tasks(mode: str, triples: Iterable[Triple], stats: RelationStats,
                       ontology: Optional[TypeOntology], per_label: int, cfg: CorruptionConfig,
                       seed: int, none_per_relation: int = 100, detection_per_relation: int = 5,
                       log: Optional[GenerationLog] = None) -> List[TaskDataset]:
    """
    Relation probing tasks.

    Modes:
        identification: one binary task per relation ("R-I:<relation>"),
            per_label positives and per_label corruptions per split
        classification: one multiclass task over relations ("R-C")
        classification+none: R-C plus a None label holding `none_per_relation`
            corruptions per relation per split ("R-C+I")
        detection: one binary related/unrelated task pooling
            `detection_per_relation` positives and corruptions per relation per split ("R-D")

    Relations with fewer than 2 * per_label triples are excluded and logged.

    Raises:
        TaskGenerationError: If a pooled task ends up with fewer than two usable labels
    """
    log = log if log is not None else GenerationLog()
    triples = frozenset(triples)
    by_relation = _group_by_relation(triples)
    sampler = CorruptionSampler(triples, stats, ontology, cfg)

    if mode == "identification":
        return _identification_tasks(by_relation, sampler, per_label, seed, log)
    if mode in ("classification", "classification+none"):
        return [_classification_task(mode, by_relation, sampler, per_label, seed,
                                     none_per_relation, log)]
    if mode == "detection":
        return [_detection_task(by_relation, sampler, detection_per_relation, seed, log)]
    raise ValidationError(f"unknown relation task mode {mode!r}")


def _identification_tasks(by_relation, sampler, per_label, seed, log) -> List[TaskDataset]:
    tasks = []
    for relation, rel_triples in sorted(by_relation.items()):
        task_id = f"R-I:{relation}"
        if len(rel_triples) < 2 * per_label:
            log.skip("R-I", relation, f"{len(rel_triples)} triples < {2 * per_label}")
            continue
        rng = make_rng(seed, task_id)
        order = rng.permutation(len(rel_triples))
        positives = [rel_triples[i] for i in order[: 2 * per_label]]
        used = set(_pair(t) for t in positives)
        splits = {}
        failures = 0
        try:
            for split, split_pos in (("train", positives[:per_label]), ("test", positives[per_label:])):
                negatives, failed = _draw_corruptions(sampler, split_pos, per_label, rng, used)
                failures += failed
                instances = [Instance(_pair(t), POSITIVE) for t in split_pos]
                instances += [Instance(_pair(t), NEGATIVE) for t in negatives]
                splits[split] = _shuffled(instances, rng)
        except TaskGenerationError as e:
            log.skip("R-I", relation, str(e))
            continue
        task = TaskDataset(task_id, "pairwise-binary", [POSITIVE, NEGATIVE],
                           splits["train"], splits["test"], family="R-I",
                           stats={"corruption_failures": failures})
        tasks.append(task)
    return tasks


def _classification_task(mode, by_relation, sampler, per_label, seed, none_per_relation, log) -> TaskDataset:
    with_none = mode == "classification+none"
    task_id = "R-C+I" if with_none else "R-C"
    rng = make_rng(seed, task_id)
    used: set = set()
    train: List[Instance] = []
    test: List[Instance] = []
    labels: List[str] = []
    failures = 0
    for relation, rel_triples in sorted(by_relation.items()):
        if len(rel_triples) < 2 * per_label:
            log.skip(task_id, relation, f"{len(rel_triples)} triples < {2 * per_label}")
            continue
        claimed = set(used)
        picked = _pick_unused(rel_triples, 2 * per_label, rng, claimed)
        if picked is None:
            log.skip(task_id, relation, "not enough triples with unused entity pairs")
            continue
        rel_train = [Instance(_pair(t), relation) for t in picked[:per_label]]
        rel_test = [Instance(_pair(t), relation) for t in picked[per_label:]]
        if with_none:
            try:
                none_train, f1 = _draw_corruptions(sampler, rel_triples, none_per_relation, rng, claimed)
                none_test, f2 = _draw_corruptions(sampler, rel_triples, none_per_relation, rng, claimed)
            except TaskGenerationError as e:
                log.skip(task_id, relation, f"None corruptions: {e}")
                continue
            failures += f1 + f2
            rel_train += [Instance(_pair(t), NONE_LABEL) for t in none_train]
            rel_test += [Instance(_pair(t), NONE_LABEL) for t in none_test]
        used = claimed
        labels.append(relation)
        train.extend(rel_train)
        test.extend(rel_test)
    if len(labels) < 2:
        raise TaskGenerationError(
            f"{task_id}: {len(labels)} relations qualify",
            counts={r: len(v) for r, v in sorted(by_relation.items())},
        )
    if with_none:
        labels.append(NONE_LABEL)
    kind = "pairwise-multiclass"
    return TaskDataset(task_id, kind, labels, _shuffled(train, rng), _shuffled(test, rng),
                       stats={"corruption_failures": failures})


def _detection_task(by_relation, sampler, per_relation, seed, log) -> TaskDataset:
    task_id = "R-D"
    rng = make_rng(seed, task_id)
    used: set = set()
    train: List[Instance] = []
    test: List[Instance] = []
    included = 0
    failures = 0
    for relation, rel_triples in sorted(by_relation.items()):
        if len(rel_triples) < 2 * per_relation:
            log.skip(task_id, relation, f"{len(rel_triples)} triples < {2 * per_relation}")
            continue
        claimed = set(used)
        picked = _pick_unused(rel_triples, 2 * per_relation, rng, claimed)
        if picked is None:
            log.skip(task_id, relation, "not enough triples with unused entity pairs")
            continue
        try:
            neg_train, f1 = _draw_corruptions(sampler, picked[:per_relation], per_relation, rng, claimed)
            neg_test, f2 = _draw_corruptions(sampler, picked[per_relation:], per_relation, rng, claimed)
        except TaskGenerationError as e:
            log.skip(task_id, relation, str(e))
            continue
        used = claimed
        failures += f1 + f2
        included += 1
        train += [Instance(_pair(t), RELATED) for t in picked[:per_relation]]
        train += [Instance(_pair(t), UNRELATED) for t in neg_train]
        test += [Instance(_pair(t), RELATED) for t in picked[per_relation:]]
        test += [Instance(_pair(t), UNRELATED) for t in neg_test]
    if not included:
        raise TaskGenerationError(f"{task_id}: no relation has {2 * per_relation} usable triples")
    return TaskDataset(task_id, "pairwise-binary", [RELATED, UNRELATED],
                       _shuffled(train, rng), _shuffled(test, rng),
                       stats={"relations": included, "corruption_failures": failures})


# Pair sampling shared by the comparative tasks

def _draw_pairs(task_id: str, anchors: Sequence[str], draw_partner: Callable[[str, np.random.Generator], Optional[str]],
                value_of: Callable[[str], float], per_label: int, rng: np.random.Generator,
                attempts_per_pair: int = 50) -> Tuple[List[Instance], List[Instance], Dict[str, int]]:
    """
    Draw 4 * per_label distinct unordered pairs with strictly different values.

    Labels alternate first/second (which input holds the larger value), so each
    split receives per_label of each.
    """
    needed = 4 * per_label
    if not anchors:
        raise TaskGenerationError(f"{task_id}: no entity has an eligible partner", counts={"needed": needed})
    seen = set()
    instances: List[Instance] = []
    rejected = 0
    budget = attempts_per_pair * needed
    while len(instances) < needed and budget > 0:
        budget -= 1
        a = anchors[int(rng.integers(len(anchors)))]
        b = draw_partner(a, rng)
        if b is None or b == a or value_of(a) == value_of(b):
            rejected += 1
            continue
        key = (a, b) if a < b else (b, a)
        if key in seen:
            rejected += 1
            continue
        seen.add(key)
        larger, smaller = (a, b) if value_of(a) > value_of(b) else (b, a)
        if len(instances) % 2 == 0:
            instances.append(Instance((larger, smaller), FIRST))
        else:
            instances.append(Instance((smaller, larger), SECOND))
    if len(instances) < needed:
        raise TaskGenerationError(
            f"{task_id}: only {len(instances)} of {needed} distinct pairs",
            counts={"pairs": len(instances), "needed": needed, "rejected": rejected},
        )
    half = 2 * per_label
    return _shuffled(instances[:half], rng), _shuffled(instances[half:], rng), {"rejected_pairs": rejected}


# Popularity

def popularity_bin(count: int) -> Optional[str]:
    """Bin label for a link count; None for entities without links."""
    if count < 1:
        return None
    if count <= 10:
        return "1-10"
    if count <= 100:
        return "10-100"
    if count <= 1000:
        return "100-1000"
    return ">1000"


def compare_task_id(ratio: float) -> str:
    return "P-Any" if ratio == 1 else f"P-{ratio:g}"


def gen_popularity_tasks(kind: str, pop: PopularityTable, per_label: int, seed: int,
                         ratio: float = 1.0, regression_size: Optional[int] = None) -> TaskDataset:
    """
    Popularity probing tasks.

    Args:
        kind: "regression" (P-R, label ln(1 + M_e)), "binned" (P-B) or "compare"
        pop: Popularity table
        per_label: Instances per label per split
        seed: Master seed
        ratio: Compare only; pairs satisfy max >= ratio * min (ratio 1 = P-Any, ties excluded)
        regression_size: P-R instances per split (defaults to per_label)

    Raises:
        TaskGenerationError: When bins or pair constraints cannot be filled
    """
    if kind == "regression":
        size = regression_size or per_label
        task_id = "P-R"
        entities = pop.entities()
        if len(entities) < 2 * size:
            raise TaskGenerationError(
                f"{task_id}: {len(entities)} entities < {2 * size}",
                counts={"entities": len(entities), "needed": 2 * size},
            )
        rng = make_rng(seed, task_id)
        tr, te = _split_pool(entities, size, rng)
        train = [Instance((e,), math.log1p(pop.count(e))) for e in tr]
        test = [Instance((e,), math.log1p(pop.count(e))) for e in te]
        return TaskDataset(task_id, "regression", [], train, test)

    if kind == "binned":
        task_id = "P-B"
        groups: Dict[str, List[str]] = defaultdict(list)
        for entity in pop.entities():
            label = popularity_bin(pop.count(entity))
            if label is not None:
                groups[label].append(entity)
        short = {b: len(groups.get(b, ())) for b in POPULARITY_BINS if len(groups.get(b, ())) < 2 * per_label}
        if short:
            raise TaskGenerationError(f"{task_id}: bins below {2 * per_label} entities: {short}", counts=short)
        return _single_entity_task(task_id, "multiclass", groups, list(POPULARITY_BINS),
                                   per_label, make_rng(seed, task_id))

    if kind == "compare":
        if ratio < 1:
            raise ValidationError(f"compare ratio must be >= 1, got {ratio}")
        task_id = compare_task_id(ratio)
        linked = sorted((pop.count(e), e) for e in pop.entities() if pop.count(e) >= 1)
        values = np.array([c for c, _ in linked], dtype=np.float64)
        ids = [e for _, e in linked]
        count_of = {e: c for c, e in linked}

        def bounds(entity: str) -> Tuple[int, int]:
            m = count_of[entity]
            if ratio == 1:
                lower = int(np.searchsorted(values, m, side="left"))
                upper = int(np.searchsorted(values, m, side="right"))
            else:
                lower = int(np.searchsorted(values, m / ratio, side="right"))
                upper = int(np.searchsorted(values, m * ratio, side="left"))
            return lower, upper

        def draw_partner(entity: str, rng: np.random.Generator) -> Optional[str]:
            lower, upper = bounds(entity)
            size = lower + (len(ids) - upper)
            if size == 0:
                return None
            i = int(rng.integers(size))
            return ids[i] if i < lower else ids[upper + i - lower]

        anchors = [e for e in ids if bounds(e)[0] + len(ids) - bounds(e)[1] > 0]
        rng = make_rng(seed, task_id)
        train, test, stats = _draw_pairs(task_id, anchors, draw_partner, count_of.__getitem__, per_label, rng)
        return TaskDataset(task_id, "pairwise-binary", [FIRST, SECOND], train, test, stats=stats)

    raise ValidationError(f"unknown popularity task kind {kind!r}")


# Factual knowledge

def century_label(year: int) -> str:
    return f"{year // 100}xx"


def decade_label(year: int) -> str:
    return f"{year // 10 * 10}s"


def _label_sort_key(label: str) -> Tuple[int, str]:
    digits = label.rstrip("xs")
    try:
        return int(digits), label
    except ValueError:
        return 0, label


def gen_factual_tasks(kind: str, type_restricted: bool, literals: LiteralStore,
                      ontology: Optional[TypeOntology], per_label: int, seed: int,
                      century_labels: int = 5, decade_labels: int = 20,
                      location_roots: Sequence[str] = ("Place",),
                      organisation_roots: Sequence[str] = ("Organisation",),
                      log: Optional[GenerationLog] = None) -> TaskDataset:
    """
    Factual probing tasks.

    Args:
        kind: century (F-C), decade (F-D), area (F-A), population (F-P) or revenue (F-R)
        type_restricted: Pairs must share their finest type ("+T" variants)
        literals: Literal store
        ontology: Needed for root filtering and type restriction
        per_label: Instances per label per split
        seed: Master seed
        century_labels / decade_labels: Maximum label counts; the most populous labels are kept
        location_roots / organisation_roots: Level-1 types eligible for the pair tasks

    Raises:
        TaskGenerationError: When labels or pairs cannot be filled
    """
    log = log if log is not None else GenerationLog()
    if kind in ("century", "decade"):
        if type_restricted:
            raise ValidationError("type restriction applies to the pairwise factual tasks only")
        task_id = "F-C" if kind == "century" else "F-D"
        label_of = century_label if kind == "century" else decade_label
        limit = century_labels if kind == "century" else decade_labels
        groups: Dict[str, List[str]] = defaultdict(list)
        for entity, fact in sorted(literals.values("birthYear").items()):
            groups[label_of(int(fact.value))].append(entity)
        qualifying = [label for label in groups if len(groups[label]) >= 2 * per_label]
        for label in sorted(set(groups) - set(qualifying)):
            log.skip(task_id, label, f"{len(groups[label])} entities < {2 * per_label}")
        qualifying.sort(key=lambda label: (-len(groups[label]), _label_sort_key(label)))
        labels = sorted(qualifying[:limit], key=_label_sort_key)
        for label in qualifying[limit:]:
            log.skip(task_id, label, f"beyond the {limit} most populous labels")
        if len(labels) < 2:
            raise TaskGenerationError(
                f"{task_id}: {len(labels)} labels qualify",
                counts={label: len(v) for label, v in sorted(groups.items())},
            )
        return _single_entity_task(task_id, "multiclass", groups, labels, per_label, make_rng(seed, task_id))

    if kind not in FACT_ATTRIBUTES:
        raise ValidationError(f"unknown factual task kind {kind!r}")
    if type_restricted and ontology is None:
        raise ValidationError("type-restricted pairs need an ontology")
    task_id = {"area": "F-A", "population": "F-P", "revenue": "F-R"}[kind] + ("+T" if type_restricted else "")
    roots = set(organisation_roots if kind == "revenue" else location_roots)

    facts = literals.values(FACT_ATTRIBUTES[kind])
    pair_groups: Dict[Tuple[str, ...], List[str]] = defaultdict(list)
    off_root = 0
    for entity in sorted(facts):
        if roots and ontology is not None:
            chain = ontology.chain(entity)
            if not chain or chain[0] not in roots:
                off_root += 1
                continue
        key: Tuple[str, ...] = ()
        if kind == "revenue":
            key += (facts[entity].currency,)
        if type_restricted:
            finest = ontology.finest_type(entity)
            if finest is None:
                off_root += 1
                continue
            key += (finest,)
        pair_groups[key].append(entity)

    group_of = {e: key for key, members in pair_groups.items() for e in members}
    def value_of(entity: str) -> float:
        return facts[entity].value

    anchors = []
    unmatched = 0
    for entity in sorted(group_of):
        members = pair_groups[group_of[entity]]
        if any(value_of(m) != value_of(entity) for m in members):
            anchors.append(entity)
        else:
            unmatched += 1
    if unmatched:
        log.skip(task_id, "pairs", f"{unmatched} entities without an eligible partner")

    def draw_partner(entity: str, rng: np.random.Generator) -> Optional[str]:
        members = pair_groups[group_of[entity]]
        return members[int(rng.integers(len(members)))]

    rng = make_rng(seed, task_id)
    train, test, stats = _draw_pairs(task_id, anchors, draw_partner, value_of, per_label, rng)
    stats.update({"filtered_entities": off_root, "unmatched_entities": unmatched})
    return TaskDataset(task_id, "pairwise-binary", [FIRST, SECOND], train, test, stats=stats)


# Family dispatch and task files

@dataclass
class GenerationSettings:
    """Knobs shared by all generators (derived from the run configuration)."""
    per_label: int = 500
    regression_size: int = 500
    words_per_band: int = 1000
    high_min: int = 100_000
    mid_min: int = 10_000
    none_per_relation: int = 100
    detection_per_relation: int = 5
    century_labels: int = 5
    decade_labels: int = 20
    location_roots: Tuple[str, ...] = ("Place",)
    organisation_roots: Tuple[str, ...] = ("Organisation",)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)

    def __post_init__(self):
        if self.per_label < 1:
            raise ValidationError("per_label must be >= 1")


def generate_family(family: str, kb: KnowledgeStore, settings: GenerationSettings, seed: int,
                    log: Optional[GenerationLog] = None) -> List[TaskDataset]:
    """
    Generate every task of one family.

    Raises:
        TaskGenerationError: If the family cannot be generated at all
        ValidationError: For an unknown family or missing inputs
    """
    log = log if log is not None else GenerationLog()
    s = settings
    if family in ("W-H", "W-M"):
        return gen_word_tasks("high" if family == "W-H" else "mid", s.words_per_band, s.per_label,
                              kb.contexts, seed, s.high_min, s.mid_min, log)
    if family in ("T-1", "T-2", "T-3"):
        _require(kb.ontology is not None, family, "an ontology")
        return [gen_type_task(int(family[-1]), kb.ontology, s.per_label, seed, log)]
    if family == "T-S":
        _require(kb.ontology is not None, family, "an ontology")
        return gen_subtype_tasks(kb.ontology, s.per_label, seed, log)
    if family in ("R-I", "R-C", "R-C+I", "R-D"):
        _require(bool(kb.triples), family, "relation triples")
        mode = {"R-I": "identification", "R-C": "classification",
                "R-C+I": "classification+none", "R-D": "detection"}[family]
        return gen_relation_tasks(mode, kb.triples, kb.stats, kb.ontology, s.per_label, s.corruption,
                                  seed, s.none_per_relation, s.detection_per_relation, log)
    if family == "P-R":
        return [gen_popularity_tasks("regression", kb.popularity, s.per_label, seed,
                                     regression_size=s.regression_size)]
    if family == "P-B":
        return [gen_popularity_tasks("binned", kb.popularity, s.per_label, seed)]
    if family in COMPARE_RATIOS:
        return [gen_popularity_tasks("compare", kb.popularity, s.per_label, seed,
                                     ratio=COMPARE_RATIOS[family])]
    factual = {"F-C": ("century", False), "F-D": ("decade", False),
               "F-A": ("area", False), "F-A+T": ("area", True),
               "F-P": ("population", False), "F-P+T": ("population", True),
               "F-R": ("revenue", False), "F-R+T": ("revenue", True)}
    if family in factual:
        kind, restricted = factual[family]
        return [gen_factual_tasks(kind, restricted, kb.literals, kb.ontology, s.per_label, seed,
                                  s.century_labels, s.decade_labels, s.location_roots,
                                  s.organisation_roots, log)]
    raise ValidationError(f"unknown task family {family!r}")


def _require(condition: bool, family: str, what: str) -> None:
    if not condition:
        raise ValidationError(f"{family} needs {what}")


def write_task_file(dataset: TaskDataset, path: PathLike) -> Path:
    """Write one task as JSON lines (atomically)."""
    return atomic_write(path, dataset.to_jsonl())


def read_task_file(path: PathLike, entry: Dict[str, Any]) -> TaskDataset:
    """
    Read a task file back using its manifest entry for kind and label order.
    """
    train: List[Instance] = []
    test: List[Instance] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            record = json.loads(line)
            instance = Instance(tuple(record["inputs"]), record["label"])
            (train if record["split"] == "train" else test).append(instance)
    return TaskDataset(entry["task"], entry["kind"], list(entry["labels"]), train, test,
                       family=entry.get("family", ""), stats=dict(entry.get("stats", {})))


@dataclass
class TaskManifest:
    """Sidecar listing every generated task, its label set, counts and skip statistics."""
    tasks: List[Dict[str, Any]] = field(default_factory=list)
    log: GenerationLog = field(default_factory=GenerationLog)
    seed: int = 0
    config: Dict[str, Any] = field(default_factory=dict)

    def add(self, dataset: TaskDataset, file_name: str) -> None:
        self.tasks.append(dataset.manifest_entry(file_name))

    def entry(self, task_id: str) -> Dict[str, Any]:
        for e in self.tasks:
            if e["task"] == task_id:
                return e
        raise KeyError(task_id)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "config": self.config,
            "tasks": self.tasks,
            **self.log.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TaskManifest":
        log = GenerationLog(
            skipped={k: list(v) for k, v in data.get("skipped", {}).items()},
            failures=dict(data.get("failures", {})),
        )
        return cls(tasks=list(data.get("tasks", [])), log=log,
                   seed=data.get("seed", 0), config=dict(data.get("config", {})))

    def write(self, path: PathLike) -> Path:
        return atomic_write(path, json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: PathLike) -> "TaskManifest":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def task_file_name(task_id: str, taken: Collection[str] = ()) -> str:
    """Task file name for `task_id`; falls back to a hashed stem when the plain name is in `taken`."""
    name = sanitize_task_id(task_id) + ".jsonl"
    if name in taken:
        name = hashed_stem(task_id) + ".jsonl"
    return name
