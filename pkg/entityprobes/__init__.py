from .kbstore import KnowledgeStore, Triple, TypeOntology, RelationStats, PopularityTable
from .embedstore import EmbeddingStore, SynthSpec, load_embeddings, synthesize, pair_features
from .taskgen import Instance, TaskDataset, TaskManifest, CorruptionConfig, CorruptionSampler
from .probe import ProbeConfig, ProbeModel, EvalResult, train_classifier, train_regressor, evaluate
from .metrics import ConfusionMatrix, MetricSet
from .linker import AliasIndex, Mention, LinkScorer, LinkerConfig
from .report import EvalReport, emit_report
from .config import RunConfig
from .__version__ import __version__

__all__ = [
    'KnowledgeStore',
    'Triple',
    'TypeOntology',
    'RelationStats',
    'PopularityTable',
    'EmbeddingStore',
    'SynthSpec',
    'load_embeddings',
    'synthesize',
    'pair_features',
    'Instance',
    'TaskDataset',
    'TaskManifest',
    'CorruptionConfig',
    'CorruptionSampler',
    'ProbeConfig',
    'ProbeModel',
    'EvalResult',
    'train_classifier',
    'train_regressor',
    'evaluate',
    'ConfusionMatrix',
    'MetricSet',
    'AliasIndex',
    'Mention',
    'LinkScorer',
    'LinkerConfig',
    'EvalReport',
    'emit_report',
    'RunConfig',
    '__version__'
]
