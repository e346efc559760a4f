"""
rpprec Core Modules
Data, prompt actions, state encoding, agents, environments and metrics.
"""

from .actions import ActionCatalog, SentenceRefiner, assemble, load_catalog
from .dataset import SplitDataset, build_split, load_embeddings, load_interactions, sample_candidates
from .evaluation import FixedPrompt, enumeration_baseline, evaluate, manual_prompt
from .exceptions import (
    CheckpointError,
    ConfigError,
    EnvironmentFailure,
    IngestionError,
    NumericalError,
    RPPError,
    TapeError,
    ValidationError,
)
from .llm_env import ChatCompletionsBackend, SimPopulation, SimulatedEnvironment, gen_sim_population, parse_reply
from .log_monitor import LogMonitor
from .marl import AgentBundle, EpisodeContext, load_checkpoint, save_checkpoint, train_epoch
from .metrics import MetricReport, hit_at_k, mrr_at_k, ndcg_at_k
from .run_monitor import RunMonitor
from .state_encoder import HashTextEncoder, StateEncoder
from .types import CandidateSet, JointAction, PatternKind, UserRecord

__all__ = [
    'ActionCatalog', 'AgentBundle', 'CandidateSet', 'ChatCompletionsBackend', 'CheckpointError', 'ConfigError',
    'EnvironmentFailure', 'EpisodeContext', 'FixedPrompt', 'HashTextEncoder', 'IngestionError', 'JointAction',
    'LogMonitor', 'MetricReport', 'NumericalError', 'PatternKind', 'RPPError', 'RunMonitor', 'SentenceRefiner',
    'SimPopulation', 'SimulatedEnvironment', 'SplitDataset', 'StateEncoder', 'TapeError', 'UserRecord',
    'ValidationError', 'assemble', 'build_split', 'enumeration_baseline', 'evaluate', 'gen_sim_population',
    'hit_at_k', 'load_catalog', 'load_checkpoint', 'load_embeddings', 'load_interactions', 'manual_prompt',
    'mrr_at_k', 'ndcg_at_k', 'parse_reply', 'sample_candidates', 'save_checkpoint', 'train_epoch',
]
