"""
Command-line entry point: ingest -> synth -> gen-tasks -> probe -> report, plus el and toy.

Exit codes: 0 success, 1 other errors, 2 missing input or upstream artifact,
3 validation failure.
"""

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Set, Tuple

from tqdm import tqdm

from .__version__ import __version__
from .config import RunConfig
from .embedstore import EmbeddingStore, load_embeddings, synthesize, write_embeddings
from .exceptions import (
    EmbeddingError, KindMismatchError, MissingArtifactError, ProbeBenchError, TaskGenerationError,
    TrainingError, ValidationError,
)
from .fixtures import write_toy_fixture
from .kbstore import KnowledgeStore
from .linker import (
    AliasIndex, FeatureBuilder, LinkScorer, evaluate_el, load_aliases, load_mentions, train_hinge,
)
from .probe import EvalResult, run_task
from .report import EvalReport, emit_comparison, emit_report, report_from_saved, save_results
from .taskgen import (
    GenerationLog, TaskDataset, TaskManifest, generate_family, read_task_file, task_file_name,
    write_task_file,
)
from .utils import atomic_write, sanitize_task_id

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING = 2
EXIT_VALIDATION = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

KB_SNAPSHOT = "kb.pkl"
KB_SUMMARY = "kb_summary.json"
SYNTHETIC_EMBEDDINGS = "synthetic.vec"
TASKS_DIR = "tasks"
MANIFEST = "manifest.json"
MODELS_DIR = "models"
RESULTS = "results.json"
HEATMAPS_DIR = "heatmaps"
EL_RESULTS = "el_results.json"
EL_SCORER = "el_scorer.json"
EMBEDDINGS_DIR = "embeddings"

INPUT_KEYS = ("triples", "ontology", "assignments", "literals", "popularity",
              "descriptions", "mentions", "entities")


def _fan_out(items: Sequence[Any], work: Callable[[Any], Any], jobs: int, desc: str,
             progress: bool) -> List[Any]:
    """Run `work` over `items` on up to `jobs` threads; results keep the input order."""
    results: List[Any] = [None] * len(items)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {pool.submit(work, item): i for i, item in enumerate(items)}
        for future in tqdm(as_completed(futures), total=len(futures), desc=desc, disable=not progress):
            results[futures[future]] = future.result()
    return results


class Pipeline:
    """
    The pipeline stages over one output directory.

    Every stage reads its inputs from the configuration or from artifacts an
    earlier stage left in `cfg.out`, and writes its outputs atomically.
    """

    def __init__(self, cfg: RunConfig, progress: bool = False):
        self.cfg = cfg
        self.progress = progress
        self.out = Path(cfg.out)

    @property
    def kb_path(self) -> Path:
        return self.out / KB_SNAPSHOT

    @property
    def tasks_dir(self) -> Path:
        return self.out / TASKS_DIR

    @property
    def manifest_path(self) -> Path:
        return self.tasks_dir / MANIFEST

    @property
    def results_path(self) -> Path:
        return self.out / RESULTS

    @property
    def report_path(self) -> Path:
        return self.out / f"report.{self.cfg.format}"

    @property
    def comparison_path(self) -> Path:
        return self.out / f"comparison.{self.cfg.format}"

    def ingest(self) -> KnowledgeStore:
        """Ingest every configured input file and write a snapshot."""
        paths = {key: self.cfg.path(key) for key in INPUT_KEYS}
        if not any(paths.values()):
            raise ValidationError("no input files configured")
        kb = KnowledgeStore.from_paths(**paths, window=self.cfg.window, desc_limit=self.cfg.desc_limit)
        kb.save(self.kb_path)
        summary = kb.summary()
        atomic_write(self.out / KB_SUMMARY, json.dumps(summary, indent=2) + "\n")
        logger.info("Ingested %s", ", ".join(f"{k}={v}" for k, v in summary.items()))
        return kb

    def load_kb(self) -> KnowledgeStore:
        if not self.kb_path.exists():
            raise MissingArtifactError(f"knowledge-base snapshot not found: {self.kb_path} (run ingest)",
                                       self.kb_path)
        return KnowledgeStore.load(self.kb_path)

    def synth(self) -> Path:
        """Write synthetic embeddings with planted type/popularity/relation signals."""
        store = synthesize(self.cfg.synth_spec(), self.load_kb())
        return write_embeddings(store, self.out / SYNTHETIC_EMBEDDINGS)

    def gen_tasks(self) -> TaskManifest:
        """Generate the selected task families and write task files plus the manifest."""
        kb = self.load_kb()
        settings = self.cfg.generation_settings()
        families = self.cfg.families

        def work(family: str) -> Tuple[List[TaskDataset], GenerationLog]:
            log = GenerationLog()
            try:
                datasets = generate_family(family, kb, settings, self.cfg.seed, log)
            except (TaskGenerationError, ValidationError) as e:
                log.fail(family, str(e))
                return [], log
            if not datasets:
                log.fail(family, "no task qualified")
            return datasets, log

        manifest = TaskManifest(seed=self.cfg.seed, config=self.cfg.echo())
        taken: Set[str] = set()
        for datasets, log in _fan_out(families, work, self.cfg.jobs, "gen-tasks", self.progress):
            manifest.log.merge(log)
            for dataset in datasets:
                name = task_file_name(dataset.task_id, taken)
                if name != task_file_name(dataset.task_id):
                    logger.warning("%s: file name collides, writing %s", dataset.task_id, name)
                taken.add(name)
                write_task_file(dataset, self.tasks_dir / name)
                manifest.add(dataset, name)
        for family, reason in sorted(manifest.log.failures.items()):
            logger.warning("%s not generated: %s", family, reason)
        for family, items in sorted(manifest.log.skipped.items()):
            logger.warning("%s: %d items skipped or excluded", family, len(items))
        manifest.write(self.manifest_path)
        logger.info("Generated %d tasks into %s", len(manifest.tasks), self.tasks_dir)
        return manifest

    def load_manifest(self) -> TaskManifest:
        if not self.manifest_path.exists():
            raise MissingArtifactError(f"task manifest not found: {self.manifest_path} (run gen-tasks)",
                                       self.manifest_path)
        return TaskManifest.load(self.manifest_path)

    def embedding_sets(self) -> List[Tuple[str, Path]]:
        """
        (label, path) per configured entity embedding file, or the synthetic
        table when none is configured. Labels are file stems, numbered when two
        stems are equal.
        """
        paths = self.cfg.embedding_paths() or [self.out / SYNTHETIC_EMBEDDINGS]
        sets: List[Tuple[str, Path]] = []
        labels: Set[str] = set()
        for path in paths:
            base = sanitize_task_id(path.stem)
            label, n = base, 2
            while label in labels:
                label, n = f"{base}-{n}", n + 1
            labels.add(label)
            sets.append((label, path))
        return sets

    def set_dir(self, label: str, n_sets: int) -> Path:
        """Output directory of one embedding set: the run directory itself when it is the only one."""
        return self.out if n_sets == 1 else self.out / EMBEDDINGS_DIR / label

    def source_name(self, path: Path) -> str:
        """`path` relative to the output directory when it lies inside it, else as configured."""
        try:
            return str(path.resolve().relative_to(self.out.resolve()))
        except ValueError:
            return str(path)

    def load_entity_embeddings(self, path: Optional[Path] = None) -> EmbeddingStore:
        path = path if path is not None else self.embedding_sets()[0][1]
        if not path.exists():
            raise MissingArtifactError(f"embedding file not found: {path} (configure embeddings or run synth)",
                                       path)
        return load_embeddings(path)

    def probe(self, heatmaps: bool = False) -> Dict[str, EvalReport]:
        """
        Train and evaluate one probe per selected task and embedding set.

        Each set gets its models, results and report; with several sets a
        side-by-side comparison table is written as well.
        """
        manifest = self.load_manifest()
        selected = set(self.cfg.tasks)
        entries = [e for e in manifest.tasks if not selected or e["family"] in selected]
        if not entries:
            raise ValidationError("no generated task matches the selection")
        sets = self.embedding_sets()
        reports: Dict[str, EvalReport] = {}
        for label, path in sets:
            if len(sets) > 1:
                logger.info("Probing embedding set %s (%s)", label, path)
            reports[label] = self._probe_set(manifest, entries, path, self.set_dir(label, len(sets)), heatmaps)
        if len(sets) > 1:
            emit_comparison(reports, self.comparison_path, self.cfg.format)
        return reports

    def _probe_set(self, manifest: TaskManifest, entries: List[Dict[str, Any]], path: Path,
                   out_dir: Path, heatmaps: bool) -> EvalReport:
        store = self.load_entity_embeddings(path)
        probe_cfg = self.cfg.probe_config()
        stems = {e["task"]: Path(e["file"]).stem for e in entries}

        def work(entry: Dict[str, Any]) -> Tuple[Optional[EvalResult], Optional[str]]:
            task_path = self.tasks_dir / entry["file"]
            if not task_path.exists():
                raise MissingArtifactError(f"task file listed in the manifest is missing: {task_path}", task_path)
            dataset = read_task_file(task_path, entry)
            try:
                model, result = run_task(dataset, store, probe_cfg)
            except (TrainingError, EmbeddingError, KindMismatchError) as e:
                return None, str(e)
            model.save(out_dir / MODELS_DIR / f"{stems[entry['task']]}.json")
            return result, None

        results: List[EvalResult] = []
        failures = dict(manifest.log.failures)
        for entry, (result, error) in zip(entries, _fan_out(entries, work, self.cfg.jobs, "probe", self.progress)):
            if error is not None:
                logger.warning("%s not probed: %s", entry["task"], error)
                failures[entry["task"]] = error
            else:
                results.append(result)
        if not results:
            raise ProbeBenchError(f"no task could be probed with {path}")

        if heatmaps:
            for result in results:
                if result.confusion is not None:
                    result.confusion.visualize(
                        str(out_dir / HEATMAPS_DIR / f"{stems[result.task_id]}.html"),
                        title=f"{result.task_id} confusion matrix",
                    )
        source = self.source_name(path)
        save_results(results, out_dir / RESULTS, source, store.dim)
        report = EvalReport.from_results(results, self.cfg.per_word_rows, self.cfg.seed,
                                         self.cfg.echo(), failures, source, store.dim)
        emit_report(report, out_dir / f"report.{self.cfg.format}", self.cfg.format)
        return report

    def report(self) -> Path:
        """Rebuild the report(s) from saved results (e.g. in another format)."""
        failures = self.load_manifest().log.failures if self.manifest_path.exists() else {}
        sets = self.embedding_sets()
        reports: Dict[str, EvalReport] = {}
        written = self.report_path
        for label, _ in sets:
            out_dir = self.set_dir(label, len(sets))
            results_path = out_dir / RESULTS
            if not results_path.exists():
                raise MissingArtifactError(f"probe results not found: {results_path} (run probe)", results_path)
            reports[label] = report_from_saved(results_path, self.cfg.per_word_rows, self.cfg.seed,
                                               self.cfg.echo(), failures)
            written = emit_report(reports[label], out_dir / f"report.{self.cfg.format}", self.cfg.format)
        if len(sets) > 1:
            written = emit_comparison(reports, self.comparison_path, self.cfg.format)
        return written

    def el(self) -> Dict[str, Any]:
        """
        Train the linking scorer and report P@1 next to the popularity baseline.

        The entity vectors come from the first embedding set; with
        `el_entity_embeddings` off the cosine feature is dropped to zero and
        every candidate is flagged as missing an embedding.
        """
        aliases_path, train_path, test_path, words_path = self.cfg.require(
            "aliases", "el_train", "el_test", "word_embeddings"
        )
        kb = self.load_kb()
        linker_cfg = self.cfg.linker_config()
        index = AliasIndex.build(load_aliases(aliases_path), kb.entities)
        entity_store, source = None, None
        if self.cfg.el_entity_embeddings:
            path = self.embedding_sets()[0][1]
            entity_store, source = self.load_entity_embeddings(path), self.source_name(path)
        else:
            logger.info("Entity embeddings disabled for linking")
        builder = FeatureBuilder(index, kb.popularity, entity_store, load_embeddings(words_path),
                                 linker_cfg.window)
        scorer, log = train_hinge(load_mentions(train_path), builder, linker_cfg)
        test = load_mentions(test_path)
        known = set(kb.entity_ids())
        trained = evaluate_el(test, scorer, builder, linker_cfg.candidates, known)
        baseline = evaluate_el(test, LinkScorer.popularity_only(), builder, linker_cfg.candidates, known)
        atomic_write(self.out / EL_SCORER, json.dumps({**scorer.to_dict(), "training": log.to_dict(),
                                                       "config": self.cfg.echo()}, indent=2) + "\n")
        summary = {
            "seed": self.cfg.seed,
            "entity_embeddings": source,
            "trained": trained.to_dict(),
            "popularity_baseline": baseline.to_dict(),
        }
        atomic_write(self.out / EL_RESULTS, json.dumps(summary, indent=2, ensure_ascii=False) + "\n")
        logger.info("EL P@1 micro %.1f macro %.1f (popularity baseline micro %.1f macro %.1f)",
                    trained.micro_p1, trained.macro_p1, baseline.micro_p1, baseline.macro_p1)
        return summary


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' configuration file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--tasks", help="comma-separated task families, e.g. T-1,R-I")
    common.add_argument("--per-label", type=int, dest="per_label", help="instances per label per split")
    common.add_argument("--jobs", type=int, help="worker threads")
    common.add_argument("--format", choices=("tsv", "json"), help="report format")
    common.add_argument("--embeddings", action="append", metavar="PATH",
                        help="entity embedding file; repeat to probe several sets side by side")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")

    parser = argparse.ArgumentParser(prog="entity-probes", description="Probing tasks for entity embeddings")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="ingest input files into a snapshot")
    synth = sub.add_parser("synth", parents=[common], help="write synthetic embeddings")
    synth.add_argument("--dim", type=int, dest="synth_dim", help="embedding dimension")
    synth.add_argument("--sigma", type=float, dest="synth_sigma", help="noise on planted channels")
    sub.add_parser("gen-tasks", parents=[common], help="generate probing tasks")
    probe = sub.add_parser("probe", parents=[common], help="train and evaluate probes")
    probe.add_argument("--heatmaps", action="store_true", help="write confusion-matrix heatmaps")
    probe.add_argument("--per-word-rows", action="store_true", default=None, dest="per_word_rows",
                       help="add per-subtask rows below W-H, W-M and R-I")
    el = sub.add_parser("el", parents=[common], help="train and evaluate the entity-linking scorer")
    el.add_argument("--no-entity-embeddings", action="store_false", default=None, dest="el_entity_embeddings",
                    help="link without entity vectors (cosine feature off)")
    report = sub.add_parser("report", parents=[common], help="rebuild the report from saved results")
    report.add_argument("--per-word-rows", action="store_true", default=None, dest="per_word_rows")
    toy = sub.add_parser("toy", parents=[common], help="write the bundled toy fixture")
    toy.add_argument("directory", help="target directory")
    toy.add_argument("--dim", type=int, default=32, help="word-vector dimension")
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def load_config(args: argparse.Namespace) -> RunConfig:
    """Configuration file (if any) with command-line flags applied on top."""
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    tasks = None
    if args.tasks is not None:
        tasks = tuple(t.strip() for t in args.tasks.split(",") if t.strip())
    overrides = {
        "seed": args.seed,
        "out": args.out,
        "tasks": tasks,
        "per_label": args.per_label,
        "jobs": args.jobs,
        "format": args.format,
        "embeddings": tuple(args.embeddings) if args.embeddings else None,
        "el_entity_embeddings": getattr(args, "el_entity_embeddings", None),
        "synth_dim": getattr(args, "synth_dim", None),
        "synth_sigma": getattr(args, "synth_sigma", None),
        "per_word_rows": getattr(args, "per_word_rows", None),
    }
    return cfg.with_overrides(**overrides)


def run(args: argparse.Namespace) -> int:
    if args.command == "toy":
        paths = write_toy_fixture(args.directory, dim=args.dim)
        print(paths["config"])
        return EXIT_OK
    cfg = load_config(args)
    pipeline = Pipeline(cfg, progress=not args.quiet and sys.stderr.isatty())
    if args.command == "ingest":
        pipeline.ingest()
    elif args.command == "synth":
        print(pipeline.synth())
    elif args.command == "gen-tasks":
        pipeline.gen_tasks()
    elif args.command == "probe":
        reports = pipeline.probe(heatmaps=args.heatmaps)
        print(pipeline.report_path if len(reports) == 1 else pipeline.comparison_path)
    elif args.command == "el":
        pipeline.el()
        print(pipeline.out / EL_RESULTS)
    elif args.command == "report":
        print(pipeline.report())
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return run(args)
    except MissingArtifactError as e:
        logger.error("%s", e)
        return EXIT_MISSING
    except ValidationError as e:
        logger.error("%s", e)
        return EXIT_VALIDATION
    except (ProbeBenchError, ValueError, OSError) as e:
        logger.error("%s", e)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
