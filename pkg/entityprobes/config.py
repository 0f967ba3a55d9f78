"""
Run configuration.

A run is described by one flat "key = value" file plus command-line
overrides. The resolved configuration is echoed into the task manifest,
every model file and every report.
"""

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .embedstore import SynthSpec
from .exceptions import MissingArtifactError, ValidationError
from .linker import LinkerConfig
from .probe import ProbeConfig
from .taskgen import EXTRA_FAMILIES, FAMILIES, CorruptionConfig, GenerationSettings
from .utils import PathLike

logger = logging.getLogger(__name__)

PATH_KEYS = (
    "triples", "ontology", "assignments", "literals", "popularity", "descriptions", "mentions",
    "entities", "word_embeddings", "aliases", "el_train", "el_test",
)
# Left out of the echoed configuration.
RUNTIME_KEYS = ("jobs", "out")
FORMATS = ("tsv", "json")


@dataclass
class RunConfig:
    """
    Complete run configuration.

    Attributes:
        triples ... el_test: Input paths (None when not configured)
        embeddings: Entity embedding files; several sets are probed side by side
        out: Output directory
        seed: Master seed every random stream derives from
        per_label: Instances per label per split
        tasks: Task families to generate/probe (all families when empty)
        jobs: Worker threads for task fan-out
        format: Report format, tsv or json
        The remaining fields tune generation, probing, linking and synthetic embeddings.
    """
    triples: Optional[str] = None
    ontology: Optional[str] = None
    assignments: Optional[str] = None
    literals: Optional[str] = None
    popularity: Optional[str] = None
    descriptions: Optional[str] = None
    mentions: Optional[str] = None
    entities: Optional[str] = None
    embeddings: Tuple[str, ...] = ()
    word_embeddings: Optional[str] = None
    aliases: Optional[str] = None
    el_train: Optional[str] = None
    el_test: Optional[str] = None

    out: str = "out"
    seed: int = 13
    per_label: int = 500
    regression_size: int = 500
    tasks: Tuple[str, ...] = ()
    jobs: int = 1
    format: str = "tsv"

    words_per_band: int = 1000
    high_min: int = 100_000
    mid_min: int = 10_000
    window: int = 10
    desc_limit: int = 500
    none_per_relation: int = 100
    detection_per_relation: int = 5
    max_resample_attempts: int = 50
    century_labels: int = 5
    decade_labels: int = 20
    location_roots: Tuple[str, ...] = ("Place",)
    organisation_roots: Tuple[str, ...] = ("Organisation",)
    subtype_tasks: bool = False

    l2: float = 1e-4
    max_epochs: int = 500
    tol: float = 1e-6
    huber_delta: float = 1.0
    standardize: bool = False

    candidates: int = 30
    el_window: int = 20
    margin: float = 1.0
    patience: int = 3
    el_max_epochs: int = 100
    el_learning_rate: float = 0.5
    el_validation_fraction: float = 0.1
    el_entity_embeddings: bool = True

    synth_dim: int = 32
    synth_sigma: float = 0.0
    synth_relation_dims: int = 0
    synth_seed: Optional[int] = None

    per_word_rows: bool = False

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        self.embeddings = tuple(self.embeddings)
        self.location_roots = tuple(self.location_roots)
        self.organisation_roots = tuple(self.organisation_roots)
        if self.per_label < 1 or self.regression_size < 1:
            raise ValidationError("per_label and regression_size must be >= 1")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        if self.format not in FORMATS:
            raise ValidationError(f"format must be one of {FORMATS}, got {self.format!r}")
        if self.mid_min >= self.high_min:
            raise ValidationError("mid_min must be below high_min")
        unknown = [t for t in self.tasks if t not in FAMILIES + EXTRA_FAMILIES]
        if unknown:
            raise ValidationError(f"unknown task families: {', '.join(unknown)}")

    @property
    def families(self) -> List[str]:
        """Selected families in canonical order."""
        if self.tasks:
            return [f for f in FAMILIES + EXTRA_FAMILIES if f in self.tasks]
        return list(FAMILIES) + (["T-S"] if self.subtype_tasks else [])

    def to_dict(self) -> Dict[str, Any]:
        data = {}
        for f in fields(self):
            value = getattr(self, f.name)
            data[f.name] = list(value) if isinstance(value, tuple) else value
        return data

    def echo(self) -> Dict[str, Any]:
        """Configuration written into manifests, models and reports (runtime-only keys dropped)."""
        data = self.to_dict()
        for key in RUNTIME_KEYS:
            data.pop(key)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: PathLike) -> "RunConfig":
        """
        Parse a flat "key = value" file.

        Blank lines and lines starting with '#' are ignored. Relative input
        paths are resolved against the file's directory.

        Raises:
            MissingArtifactError: If the file does not exist
            ValidationError: On malformed lines, unknown keys or bad values
        """
        path = Path(path)
        if not path.is_file():
            raise MissingArtifactError(f"config file not found: {path}", path)
        data: Dict[str, Any] = {}
        with open(path, "r", encoding="utf-8") as f:
            for line_number, raw in enumerate(f, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValidationError(f"{path}:{line_number}: expected 'key = value'")
                key, value = (part.strip() for part in line.split("=", 1))
                data[key] = parse_value(key, value, f"{path}:{line_number}")
        for key in PATH_KEYS + ("out",):
            if data.get(key) and not Path(data[key]).is_absolute():
                data[key] = str(path.parent / data[key])
        if data.get("embeddings"):
            data["embeddings"] = tuple(e if Path(e).is_absolute() else str(path.parent / e)
                                       for e in data["embeddings"])
        return cls.from_dict(data)

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with every non-None override applied (command-line flags win)."""
        data = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in data:
                raise ValidationError(f"unknown configuration key {key!r}")
            data[key] = value
        return RunConfig.from_dict(data)

    def require(self, *keys: str) -> List[Path]:
        """
        Paths for `keys`, which must be configured and exist.

        Raises:
            ValidationError: If a key is not configured
            MissingArtifactError: If a configured path does not exist
        """
        paths = []
        for key in keys:
            value = getattr(self, key)
            if not value:
                raise ValidationError(f"configuration key {key!r} is required")
            path = Path(value)
            if not path.exists():
                raise MissingArtifactError(f"{key} file not found: {path}", path)
            paths.append(path)
        return paths

    def path(self, key: str) -> Optional[Path]:
        """Configured path for `key` or None; a configured but missing file raises."""
        value = getattr(self, key)
        if not value:
            return None
        return self.require(key)[0]

    def embedding_paths(self) -> List[Path]:
        """
        Configured entity embedding files, in order (empty when none is configured).

        Raises:
            MissingArtifactError: If a configured file does not exist
        """
        paths = [Path(value) for value in self.embeddings]
        for path in paths:
            if not path.exists():
                raise MissingArtifactError(f"embeddings file not found: {path}", path)
        return paths

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(l2=self.l2, max_epochs=self.max_epochs, tol=self.tol,
                           huber_delta=self.huber_delta, standardize=self.standardize)

    def corruption_config(self) -> CorruptionConfig:
        return CorruptionConfig(max_resample_attempts=self.max_resample_attempts, seed=self.seed)

    def generation_settings(self) -> GenerationSettings:
        return GenerationSettings(
            per_label=self.per_label,
            regression_size=self.regression_size,
            words_per_band=self.words_per_band,
            high_min=self.high_min,
            mid_min=self.mid_min,
            none_per_relation=self.none_per_relation,
            detection_per_relation=self.detection_per_relation,
            century_labels=self.century_labels,
            decade_labels=self.decade_labels,
            location_roots=self.location_roots,
            organisation_roots=self.organisation_roots,
            corruption=self.corruption_config(),
        )

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(dim=self.synth_dim, sigma=self.synth_sigma,
                         relation_dims=self.synth_relation_dims,
                         seed=self.seed if self.synth_seed is None else self.synth_seed)

    def linker_config(self) -> LinkerConfig:
        return LinkerConfig(candidates=self.candidates, window=self.el_window, margin=self.margin,
                            patience=self.patience, max_epochs=self.el_max_epochs,
                            learning_rate=self.el_learning_rate,
                            validation_fraction=self.el_validation_fraction, seed=self.seed)


_INT_KEYS = {f.name for f in fields(RunConfig) if f.type in (int, "int")}
_FLOAT_KEYS = {f.name for f in fields(RunConfig) if f.type in (float, "float")}
_BOOL_KEYS = {f.name for f in fields(RunConfig) if f.type in (bool, "bool")}
_LIST_KEYS = {"tasks", "location_roots", "organisation_roots", "embeddings"}


def parse_value(key: str, text: str, where: str = "") -> Any:
    """
    Parse one configuration value according to its key.

    Raises:
        ValidationError: If the text does not parse as the key's type
    """
    prefix = f"{where}: " if where else ""
    try:
        if key in _BOOL_KEYS:
            lowered = text.lower()
            if lowered not in ("true", "false"):
                raise ValueError(f"expected true or false, got {text!r}")
            return lowered == "true"
        if key in _INT_KEYS or key == "synth_seed":
            return int(text)
        if key in _FLOAT_KEYS:
            return float(text)
    except ValueError as e:
        raise ValidationError(f"{prefix}bad value for {key}: {e}")
    if key in _LIST_KEYS:
        return tuple(item.strip() for item in text.split(",") if item.strip())
    return text
