"""
rpprec - Instance-wise Prompt Personalization for LLM Recommenders

Learns, per user, which role-playing, history, reasoning and output-format
sentences to put in front of an LLM ranker:
- four actor-critic agents sharing one state, trained on NDCG rewards
- a seeded simulated ranker for offline work, or any chat-completions endpoint
- manual and enumeration baselines evaluated on the same candidates
"""

__version__ = "1.0.0"
__license__ = "MIT"

import dataclasses
import logging
import os
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from .core.actions import DEFAULT_REFINE_INSTRUCTION, ActionCatalog, SentenceRefiner, load_catalog
from .core.dataset import (
    EmbeddingKind,
    SplitDataset,
    build_split,
    load_embeddings,
    load_interactions,
)
from .core.evaluation import (
    EnumerationResult,
    FixedPrompt,
    enumeration_baseline,
    evaluate,
    manual_prompt,
)
from .core.exceptions import CheckpointError, ConfigError, RPPError, ValidationError
from .core.llm_env import (
    ChatCompletionsBackend,
    EchoBackend,
    HttpSettings,
    LlmBackend,
    LlmEnvironment,
    RankingEnvironment,
    SimPopulation,
    gen_sim_population,
)
from .core.marl import (
    AgentBundle,
    EpisodeContext,
    EpochReport,
    StopRule,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_epoch,
)
from .core.metrics import MetricReport, action_distribution_table
from .core.neuralnet import GradCheckReport, Mlp2, PolicyLoss, SgdConfig, ValueLoss, grad_check
from .core.state_encoder import HashTextEncoder, RemoteTextEncoder, StateEncoder, TextEncoder
from .core.types import PATTERNS, JointAction, PatternKind, UserRecord
from .core.utils import derive_seed, dump_json, named_seeds, write_text

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = 'checkpoint.rpp'
EPOCHS_FILE = 'epochs.tsv'
METRICS_FILE = 'metrics.tsv'
SUMMARY_FILE = 'summary.txt'
DISTRIBUTION_FILE = 'action_distribution.tsv'
RESOLVED_CONFIG_FILE = 'resolved_config.json'
POPULATION_FILE = 'population.json'

PolicyLike = Union[AgentBundle, FixedPrompt, EnumerationResult, str]


@dataclasses.dataclass
class TrainingResult:
    bundle: AgentBundle
    epochs: List[EpochReport]
    personalized: List[str]
    checkpoint_path: Optional[str] = None


@dataclasses.dataclass
class GradCheckSuite:
    """Outcome of the seeded gradient-check sweep plus the corrupted-gradient check."""

    results: List[Dict[str, Any]]
    corrupted_error: float
    tol: float = 1e-4
    corruption_floor: float = 1e-2

    @property
    def max_rel_error(self) -> float:
        return max(r['max_rel_error'] for r in self.results)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol and self.corrupted_error > self.corruption_floor

    def to_table(self) -> str:
        rows = ['\t'.join(('seed', 'loss', 'max_rel_error'))]
        rows.extend(f"{r['seed']}\t{r['loss']}\t{r['max_rel_error']:.3e}" for r in self.results)
        rows.append(f"corrupted\tpolicy\t{self.corrupted_error:.3e}")
        return '\n'.join(rows)


class PromptPersonalizer:
    """
    Wires configuration, data, environment, agents and evaluation together.

    Usage:
        rpp = PromptPersonalizer(config={
            'RPP_POPULATION': 'population.json',
            'RPP_EPOCHS': 5,
            'RPP_OUTPUT_DIR': 'runs/demo',
        })
        result = rpp.train()
        report = rpp.evaluate(result.bundle)

    Configuration keys passed in ``config`` are remembered as explicit
    overrides; mode presets never replace them.
    """

    MODE_PRESETS = {
        'rpp': {
            'RPP_REFINE_ENABLED': False,
        },
        'rpp+': {
            'RPP_REFINE_ENABLED': True,
        },
    }

    def __init__(self, config: Optional[Mapping[str, Any]] = None):
        self.config = self._get_default_config()
        self._explicit_overrides = set()

        initial_config = dict(config or {})
        if initial_config:
            self._explicit_overrides.update(initial_config.keys())
            self.config.update(initial_config)

        self.apply_mode(self.config.get('RPP_MODE'))

        self.dataset: Optional[SplitDataset] = None
        self.population: Optional[SimPopulation] = None
        self._catalog: Optional[ActionCatalog] = None
        self._env: Optional[RankingEnvironment] = None
        self._refiner: Optional[SentenceRefiner] = None
        self._context: Optional[EpisodeContext] = None

    def _get_default_config(self) -> Dict[str, Any]:
        """Get default configuration for rpprec."""
        return {
            # Core settings
            'RPP_SEED': 0,
            'RPP_MODE': 'rpp',
            'RPP_REFINE_ENABLED': False,
            'RPP_REFINE_INSTRUCTION': DEFAULT_REFINE_INSTRUCTION,
            'RPP_PERSONALIZED_PATTERNS': [kind.key for kind in PATTERNS],

            # Task setting
            'RPP_NUM_CANDIDATES': 10,
            'RPP_GAMMA': 0.95,
            'RPP_L0': 1,
            'RPP_TEMPERATURE': 0.2,
            'RPP_N_TRAIN': 200,
            'RPP_N_TEST': 100,
            'RPP_PATIENCE': 7,
            'RPP_MAX_ITERS': 15,
            'RPP_INFERENCE_ITERS': 3,

            # Training
            'RPP_EPOCHS': 30,
            'RPP_LR_ACTOR': 0.01,
            'RPP_LR_CRITIC': 0.01,
            'RPP_GRAD_CLIP': 5.0,
            'RPP_HIDDEN': 64,
            'RPP_UPDATE_CADENCE': 'episode',

            # State encoding
            'RPP_STATE_DIM': 64,
            'RPP_TEXT_DIM': 256,
            'RPP_GRU_INPUT_DIM': 32,
            'RPP_OUTPUT_ENCODER': 'gru',
            'RPP_TEXT_ENCODER': 'hash',
            'RPP_EMBEDDING_ENDPOINT': None,
            'RPP_EMBEDDING_TIMEOUT': 10,
            'RPP_EMBEDDING_MAX_RETRIES': 3,

            # Ranking backend
            'RPP_BACKEND': 'simulated',
            'RPP_LLM_ENDPOINT': None,
            'RPP_LLM_MODEL': None,
            'RPP_LLM_TIMEOUT': 30,
            'RPP_LLM_MAX_RETRIES': 5,
            'RPP_LLM_MAX_IN_FLIGHT': 4,
            'RPP_LLM_BACKOFF_FACTOR': 1.0,
            'RPP_REFINER_ENDPOINT': None,
            'RPP_REFINER_MODEL': None,

            # Data
            'RPP_INTERACTIONS': None,
            'RPP_DELIMITER': '\t',
            'RPP_MALFORMED_THRESHOLD': 0.1,
            'RPP_USER_EMBEDDINGS': None,
            'RPP_ITEM_EMBEDDINGS': None,
            'RPP_EMBEDDING_FALLBACK': True,
            'RPP_CATALOG': None,
            'RPP_POPULATION': None,

            # Simulated population
            'RPP_SIM_ITEMS': 500,
            'RPP_SIM_SWAP_RATE': 3.0,
            'RPP_SIM_DEMOTION': 4,
            'RPP_SIM_PLANTED_ACTION': None,
            'RPP_SIM_PLANTED_SHARE': 0.0,

            # Evaluation
            'RPP_MANUAL_HISTORY_LEN': 10,
            'RPP_ENUMERATION_BUDGET': 540,
            'RPP_REPEATS': 5,
            'RPP_EVAL_WORKERS': 1,

            # Output and logging
            'RPP_OUTPUT_DIR': os.path.join('runs', 'latest'),
            'RPP_LOG_LEVEL': 'INFO',
            'RPP_MAX_LOG_ENTRIES': 1000,
        }

    def apply_mode(self, mode: Optional[str] = None, *, respect_overrides: bool = True,
                   extra_overrides: Optional[Iterable[str]] = None) -> str:
        """Apply the ``rpp`` or ``rpp+`` preset.

        Keys the caller set explicitly survive unless ``respect_overrides``
        is off. Returns the normalized mode name.
        """
        normalized = str(mode or self.config.get('RPP_MODE') or 'rpp').lower().strip()
        if normalized not in self.MODE_PRESETS:
            raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(self.MODE_PRESETS)}")
        self.config['RPP_MODE'] = normalized

        preserved = set(self._explicit_overrides)
        if extra_overrides:
            preserved.update(extra_overrides)
            if respect_overrides:
                self._explicit_overrides.update(extra_overrides)

        for key, value in self.MODE_PRESETS[normalized].items():
            if respect_overrides and key in preserved:
                continue
            self.config[key] = value
        return normalized

    # ------------------------------------------------------------------ config

    def _int(self, key: str) -> int:
        try:
            return int(self.config[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key} must be an integer, got {self.config.get(key)!r}") from exc

    def _float(self, key: str) -> float:
        try:
            return float(self.config[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key} must be a number, got {self.config.get(key)!r}") from exc

    @property
    def seed(self) -> int:
        return self._int('RPP_SEED')

    @property
    def output_dir(self) -> str:
        return str(self.config.get('RPP_OUTPUT_DIR') or os.path.join('runs', 'latest'))

    def output_path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def resolved_config(self) -> Dict[str, Any]:
        resolved = dict(self.config)
        resolved['RPP_SEEDS'] = named_seeds(self.seed)
        return resolved

    def write_resolved_config(self) -> str:
        path = self.output_path(RESOLVED_CONFIG_FILE)
        write_text(path, dump_json(self.resolved_config()))
        return path

    def personalized_patterns(self) -> List[PatternKind]:
        raw = self.config.get('RPP_PERSONALIZED_PATTERNS')
        if isinstance(raw, str):
            raw = [part for part in raw.split(',') if part.strip()]
        try:
            kinds = sorted({PatternKind.from_key(key) for key in (raw or [])})
        except ValidationError as exc:
            raise ConfigError(f"RPP_PERSONALIZED_PATTERNS: {exc}") from exc
        if not kinds:
            raise ConfigError("RPP_PERSONALIZED_PATTERNS must name at least one pattern")
        return kinds

    def pinned_actions(self) -> Dict[PatternKind, int]:
        """Task-wise defaults for every pattern that is not personalized."""
        catalog = self.catalog
        personalized = set(self.personalized_patterns())
        pinned = {}
        for kind in PATTERNS:
            if kind in personalized:
                continue
            if kind == PatternKind.HISTORY_RECORDS:
                pinned[kind] = catalog.history_index_for(self._int('RPP_MANUAL_HISTORY_LEN'))
            else:
                pinned[kind] = 0
        return pinned

    # ---------------------------------------------------------------- building

    @property
    def catalog(self) -> ActionCatalog:
        if self._catalog is None:
            catalog = load_catalog(self.config.get('RPP_CATALOG'))
            l0 = self._int('RPP_L0')
            if l0 != catalog.l0:
                catalog = dataclasses.replace(catalog, l0=l0)
            self._catalog = catalog
        return self._catalog

    def _require_file(self, key: str) -> str:
        path = self.config.get(key)
        if not path:
            raise ConfigError(f"{key} is not set")
        if not os.path.exists(path):
            raise ConfigError(f"{key}: file not found: {path}")
        return str(path)

    def load_dataset(self) -> SplitDataset:
        """Split users from a population file or an interaction log."""
        n_train, n_test = self._int('RPP_N_TRAIN'), self._int('RPP_N_TEST')
        split_seed = derive_seed(self.seed, 'dataset')
        if self.config.get('RPP_POPULATION'):
            self.population = SimPopulation.load(self._require_file('RPP_POPULATION'))
            self.dataset = self.population.split(n_train, n_test, split_seed)
        elif self.config.get('RPP_INTERACTIONS'):
            raw = load_interactions(
                self._require_file('RPP_INTERACTIONS'),
                delimiter=self.config.get('RPP_DELIMITER') or '\t',
                malformed_threshold=self._float('RPP_MALFORMED_THRESHOLD'),
            )
            self.dataset = build_split(raw, split_seed, n_train, n_test)
        else:
            raise ConfigError("either RPP_INTERACTIONS or RPP_POPULATION must be set")
        logger.info("Loaded dataset: %d train users, %d test users, %d items",
                    len(self.dataset.train_user_ids), len(self.dataset.test_user_ids),
                    len(self.dataset.item_catalog))
        return self.dataset

    def _ensure_dataset(self) -> SplitDataset:
        return self.dataset if self.dataset is not None else self.load_dataset()

    def _http_settings(self, endpoint_key: str, model_key: str) -> HttpSettings:
        endpoint = self.config.get(endpoint_key) or self.config.get('RPP_LLM_ENDPOINT')
        model = self.config.get(model_key) or self.config.get('RPP_LLM_MODEL') or ''
        try:
            return HttpSettings(
                endpoint=endpoint or '',
                model=model,
                timeout=self._float('RPP_LLM_TIMEOUT'),
                max_retries=self._int('RPP_LLM_MAX_RETRIES'),
                max_in_flight=self._int('RPP_LLM_MAX_IN_FLIGHT'),
                backoff_factor=self._float('RPP_LLM_BACKOFF_FACTOR'),
            )
        except ValidationError as exc:
            raise ConfigError(f"{endpoint_key}: {exc}") from exc

    def build_environment(self) -> RankingEnvironment:
        backend = str(self.config.get('RPP_BACKEND') or 'simulated').lower()
        if backend == 'simulated':
            self._ensure_dataset()
            if self.population is None:
                raise ConfigError("the simulated backend needs RPP_POPULATION (run 'rpprec simulate' first)")
            self._env = self.population.environment()
        elif backend == 'http':
            settings = self._http_settings('RPP_LLM_ENDPOINT', 'RPP_LLM_MODEL')
            self._env = LlmEnvironment(ChatCompletionsBackend(settings), temperature=self._float('RPP_TEMPERATURE'))
        else:
            raise ConfigError(f"unknown backend {backend!r}; expected 'simulated' or 'http'")
        return self._env

    def build_refiner(self, backend: Optional[LlmBackend] = None) -> Optional[SentenceRefiner]:
        if not self.config.get('RPP_REFINE_ENABLED'):
            return None
        if backend is None:
            if self.config.get('RPP_REFINER_ENDPOINT') or (
                    self.config.get('RPP_BACKEND') == 'http' and self.config.get('RPP_LLM_ENDPOINT')):
                backend = ChatCompletionsBackend(self._http_settings('RPP_REFINER_ENDPOINT', 'RPP_REFINER_MODEL'))
            else:
                logger.warning("No refiner endpoint configured; refinement keeps sentences unchanged")
                backend = EchoBackend()
        self._refiner = SentenceRefiner(
            backend,
            instruction=self.config.get('RPP_REFINE_INSTRUCTION') or '',
            model=self.config.get('RPP_REFINER_MODEL') or self.config.get('RPP_LLM_MODEL') or '',
            temperature=self._float('RPP_TEMPERATURE'),
        )
        return self._refiner

    def _text_encoder(self) -> TextEncoder:
        kind = str(self.config.get('RPP_TEXT_ENCODER') or 'hash').lower()
        dim = self._int('RPP_TEXT_DIM')
        if kind == 'hash':
            return HashTextEncoder(dim)
        if kind == 'http':
            try:
                return RemoteTextEncoder(
                    self.config.get('RPP_EMBEDDING_ENDPOINT') or '',
                    dim,
                    timeout=self._float('RPP_EMBEDDING_TIMEOUT'),
                    max_retries=self._int('RPP_EMBEDDING_MAX_RETRIES'),
                    backoff_factor=self._float('RPP_LLM_BACKOFF_FACTOR'),
                )
            except ValidationError as exc:
                raise ConfigError(f"RPP_EMBEDDING_ENDPOINT: {exc}") from exc
        raise ConfigError(f"unknown text encoder {kind!r}; expected 'hash' or 'http'")

    def _embedding_tables(self, dataset: SplitDataset):
        if self.population is not None:
            return self.population.user_embeddings(), self.population.item_embeddings()
        fallback = bool(self.config.get('RPP_EMBEDDING_FALLBACK', True))
        users = load_embeddings(self.config.get('RPP_USER_EMBEDDINGS'), EmbeddingKind.USER,
                                dataset.user_index, fallback=fallback)
        item_index = {item.title: item.id for item in dataset.item_catalog}
        items = load_embeddings(self.config.get('RPP_ITEM_EMBEDDINGS'), EmbeddingKind.ITEM,
                                item_index, fallback=fallback)
        return users, items

    def build_encoder(self) -> StateEncoder:
        dataset = self._ensure_dataset()
        users, items = self._embedding_tables(dataset)
        return StateEncoder(
            self._text_encoder(),
            state_dim=self._int('RPP_STATE_DIM'),
            gru_input_dim=self._int('RPP_GRU_INPUT_DIM'),
            seed=derive_seed(self.seed, 'encoder'),
            user_embeddings=users,
            item_embeddings=items,
            output_encoder=str(self.config.get('RPP_OUTPUT_ENCODER') or 'gru'),
        )

    def build_context(self) -> EpisodeContext:
        if self._context is not None:
            return self._context
        dataset = self._ensure_dataset()
        env = self._env or self.build_environment()
        try:
            self._context = EpisodeContext(
                catalog=self.catalog,
                encoder=self.build_encoder(),
                env=env,
                item_pool=dataset.item_catalog,
                seed=self.seed,
                refiner=self._refiner or self.build_refiner(),
                pinned=self.pinned_actions(),
                num_candidates=self._int('RPP_NUM_CANDIDATES'),
            )
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        return self._context

    def build_bundle(self) -> AgentBundle:
        sgd = SgdConfig(
            lr_actor=self._float('RPP_LR_ACTOR'),
            lr_critic=self._float('RPP_LR_CRITIC'),
            clip=self._float('RPP_GRAD_CLIP'),
        )
        return AgentBundle.create(
            self._int('RPP_STATE_DIM'),
            self._int('RPP_HIDDEN'),
            self.catalog.sizes,
            sgd=sgd,
            seed=derive_seed(self.seed, 'policy-init'),
        )

    def load_policy(self, path: str) -> AgentBundle:
        bundle = load_checkpoint(path, expected_sizes=self.catalog.sizes)
        if bundle.state_dim != self._int('RPP_STATE_DIM'):
            raise CheckpointError(
                f"checkpoint state dimension {bundle.state_dim} does not match RPP_STATE_DIM "
                f"{self._int('RPP_STATE_DIM')}"
            )
        return bundle

    # -------------------------------------------------------------- operations

    def train(self, bundle: Optional[AgentBundle] = None, write: bool = True) -> TrainingResult:
        """Train for ``RPP_EPOCHS`` epochs; writes the checkpoint and epoch report."""
        epochs = self._int('RPP_EPOCHS')
        if epochs < 0:
            raise ConfigError(f"RPP_EPOCHS must be non-negative, got {epochs}")
        dataset = self._ensure_dataset()
        users = dataset.train_users
        if not users:
            raise ConfigError("RPP_N_TRAIN is 0; nothing to train on")
        ctx = self.build_context()
        try:
            cfg = TrainConfig(
                gamma=self._float('RPP_GAMMA'),
                stop_rule=StopRule(self._int('RPP_PATIENCE'), self._int('RPP_MAX_ITERS')),
                cadence=str(self.config.get('RPP_UPDATE_CADENCE') or 'episode'),
            )
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        bundle = bundle or self.build_bundle()
        personalized = [kind.key for kind in self.personalized_patterns()]
        logger.info("Training %s for %d epochs on %d users (personalized: %s)",
                    self.config['RPP_MODE'], epochs, len(users), ', '.join(personalized))

        reports: List[EpochReport] = []
        for epoch in range(epochs):
            reports.append(train_epoch(bundle, users, ctx, cfg, epoch))

        result = TrainingResult(bundle=bundle, epochs=reports, personalized=personalized)
        if write:
            result.checkpoint_path = self.output_path(CHECKPOINT_FILE)
            save_checkpoint(bundle, result.checkpoint_path)
            rows = ['\t'.join(EpochReport.COLUMNS)] + [report.to_row() for report in reports]
            write_text(self.output_path(EPOCHS_FILE), '\n'.join(rows))
            self.write_resolved_config()
        return result

    def resolve_source(self, source: PolicyLike) -> Union[AgentBundle, FixedPrompt]:
        """Turn ``'manual'``, ``'enumeration'`` or a checkpoint path into a policy source."""
        if isinstance(source, EnumerationResult):
            return source.prompt
        if not isinstance(source, str):
            return source
        if source == 'manual':
            return manual_prompt(self.catalog, self._int('RPP_MANUAL_HISTORY_LEN'))
        if source == 'enumeration':
            return self.enumeration().prompt
        return self.load_policy(source)

    def enumeration(self) -> EnumerationResult:
        dataset = self._ensure_dataset()
        if not dataset.train_users:
            raise ConfigError("the enumeration baseline searches on training users; RPP_N_TRAIN is 0")
        return enumeration_baseline(
            dataset.train_users,
            self.build_context(),
            budget=self._int('RPP_ENUMERATION_BUDGET'),
            history_len=self._int('RPP_MANUAL_HISTORY_LEN'),
            seed=self.seed,
            workers=self._int('RPP_EVAL_WORKERS'),
        )

    def evaluate(self, source: PolicyLike, users: Optional[Sequence[UserRecord]] = None,
                 write: bool = True) -> MetricReport:
        """Score a policy, a fixed prompt or a named baseline on the test users."""
        dataset = self._ensure_dataset()
        resolved = self.resolve_source(source)
        users = list(users) if users is not None else dataset.test_users
        if not users:
            raise ConfigError("RPP_N_TEST is 0; nothing to evaluate")
        try:
            report = evaluate(
                resolved,
                users,
                self.build_context(),
                repeats=self._int('RPP_REPEATS'),
                fixed_iters=self._int('RPP_INFERENCE_ITERS'),
                workers=self._int('RPP_EVAL_WORKERS'),
            )
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        if write:
            write_text(self.output_path(METRICS_FILE), report.to_table())
            write_text(self.output_path(SUMMARY_FILE), report.to_summary())
            if report.action_distribution:
                write_text(self.output_path(DISTRIBUTION_FILE), action_distribution_table(report.action_distribution))
            self.write_resolved_config()
        return report

    def simulate(self, n_users: int, path: Optional[str] = None) -> SimPopulation:
        """Generate and save a seeded simulated population."""
        planted = self.config.get('RPP_SIM_PLANTED_ACTION')
        try:
            population = gen_sim_population(
                n_users,
                self.catalog,
                derive_seed(self.seed, 'simulator'),
                n_items=self._int('RPP_SIM_ITEMS'),
                planted_action=JointAction.parse(planted) if planted else None,
                planted_share=self._float('RPP_SIM_PLANTED_SHARE'),
                swap_rate=self._float('RPP_SIM_SWAP_RATE'),
                demotion=self._int('RPP_SIM_DEMOTION'),
            )
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        target = path or self.output_path(POPULATION_FILE)
        population.save(target)
        logger.info("Wrote %d simulated users to %s", n_users, target)
        return population

    def grad_check(self, seeds: int = 20, d_in: int = 12, hidden: int = 10, d_out: int = 5,
                   eps: float = 1e-5, tol: float = 1e-4) -> GradCheckSuite:
        """Finite-difference check of actor and critic gradients over ``seeds`` random nets.

        A copy of one analytic policy gradient with ``W1`` scaled by 1.5 must
        be flagged, which shows the check can fail.
        """
        results: List[Dict[str, Any]] = []
        corrupted = 0.0
        for i in range(seeds):
            seed = derive_seed(self.seed, 'grad-check', i)
            rng = np.random.default_rng(seed)
            state = rng.standard_normal(d_in)
            actor = Mlp2.create(d_in, hidden, d_out, seed)
            critic = Mlp2.create(d_in, hidden, 1, seed + 1)
            policy_loss = PolicyLoss(state, int(rng.integers(0, d_out)), float(rng.normal()))
            value_loss = ValueLoss(state, float(rng.normal()))
            for name, net, loss in (('policy', actor, policy_loss), ('value', critic, value_loss)):
                report: GradCheckReport = grad_check(net, loss, eps=eps, tol=tol)
                results.append({'seed': i, 'loss': name, 'max_rel_error': report.max_rel_error})
            if i == 0:
                tampered = policy_loss.gradients(actor)
                tampered['W1'] = tampered['W1'] * 1.5
                corrupted = grad_check(actor, policy_loss, eps=eps, tol=tol, analytic=tampered).max_rel_error
        suite = GradCheckSuite(results=results, corrupted_error=corrupted, tol=tol)
        logger.info("Gradient check over %d seeds: max relative error %.3e, corrupted gradient %.3e",
                    seeds, suite.max_rel_error, suite.corrupted_error)
        return suite

    def stats(self) -> Dict[str, int]:
        """Call accounting for the run info."""
        stats: Dict[str, int] = {}
        if self._env is not None:
            stats['env_calls'] = self._env.calls
            backend = getattr(self._env, 'backend', None)
            if backend is not None and hasattr(backend, 'retries'):
                stats['env_retries'] = backend.retries
        if self._refiner is not None:
            stats.update({f"refiner_{k}": v for k, v in self._refiner.stats().items()})
        return stats


def create_personalizer(**config) -> PromptPersonalizer:
    """Convenience constructor taking ``RPP_*`` keys as keyword arguments."""
    return PromptPersonalizer(config=config)


__all__ = [
    'CHECKPOINT_FILE',
    'GradCheckSuite',
    'PromptPersonalizer',
    'RPPError',
    'TrainingResult',
    '__version__',
    'create_personalizer',
]
