"""
rpprec Evaluation
Repeated evaluation of a trained bundle or a fixed prompt, plus the manual
and enumeration baselines.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .actions import ActionCatalog, AssembledPrompt, assemble
from .exceptions import EnvironmentFailure, RPPError, ValidationError
from .llm_env import parse_reply
from .marl import AgentBundle, EpisodeContext, run_episode_inference
from .metrics import MetricReport, score_ranking
from .types import PATTERNS, CandidateSet, JointAction, PatternKind, UserRecord, iter_joint_actions
from .utils import derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FixedPrompt:
    """One joint action and history length applied to every user."""

    action: JointAction
    history_len: int
    label: str = 'fixed'


PolicySource = Union[AgentBundle, FixedPrompt]


@dataclass
class UserOutcome:
    user_id: int
    scores: Dict[str, float]
    action: JointAction
    steps: int = 1


def manual_action(catalog: ActionCatalog, history_len: int = 10) -> JointAction:
    """The task-wise example sentences (catalog index 0 of each sentence pattern)."""
    return JointAction.from_mapping({
        PatternKind.ROLE_PLAYING: 0,
        PatternKind.HISTORY_RECORDS: catalog.history_index_for(history_len),
        PatternKind.REASONING_GUIDANCE: 0,
        PatternKind.OUTPUT_FORMAT: 0,
    })


def manual_prompt(catalog: ActionCatalog, history_len: int = 10) -> FixedPrompt:
    return FixedPrompt(manual_action(catalog, history_len), history_len, label='manual')


def manual_baseline_prompt(user: UserRecord, cands: CandidateSet, catalog: ActionCatalog,
                           history_len: int = 10) -> AssembledPrompt:
    return assemble(user, cands, manual_action(catalog, history_len), history_len, catalog)


def _env_rng(ctx: EpisodeContext, stream: Tuple, user: UserRecord) -> np.random.Generator:
    return np.random.default_rng(derive_seed(ctx.seed, 'environment', *stream, user.user_id))


def _fixed_outcome(prompt_source: FixedPrompt, user: UserRecord, ctx: EpisodeContext,
                   cands: CandidateSet, env_rng: np.random.Generator) -> UserOutcome:
    prompt = assemble(user, cands, prompt_source.action, prompt_source.history_len, ctx.catalog)
    ranking = parse_reply(ctx.env.query(user, prompt, cands, env_rng), cands)
    return UserOutcome(user.user_id, score_ranking(ranking, cands.ground_truth_pos), prompt_source.action)


def _policy_outcome(bundle: AgentBundle, user: UserRecord, ctx: EpisodeContext, cands: CandidateSet,
                    env_rng: np.random.Generator, fixed_iters: int) -> UserOutcome:
    result = run_episode_inference(bundle, user, ctx, fixed_iters, cands=cands, env_rng=env_rng)
    best = result.best_step
    return UserOutcome(user.user_id, score_ranking(best.ranking, cands.ground_truth_pos),
                       best.joint_action, steps=len(result.steps))


def _run_users(source: PolicySource, users: Sequence[UserRecord], ctx: EpisodeContext, stream: Tuple,
               fixed_iters: int, workers: int, cand_stream: Optional[Tuple] = None) -> List[Optional[UserOutcome]]:
    cand_stream = cand_stream if cand_stream is not None else stream

    def _one(user: UserRecord) -> Optional[UserOutcome]:
        cands = ctx.candidates(user, *cand_stream)
        env_rng = _env_rng(ctx, stream, user)
        try:
            if isinstance(source, AgentBundle):
                return _policy_outcome(source, user, ctx, cands, env_rng, fixed_iters)
            return _fixed_outcome(source, user, ctx, cands, env_rng)
        except EnvironmentFailure as exc:
            logger.error("Evaluation failed for user %d: %s", user.user_id, exc)
            return None

    if workers <= 1:
        outcomes = [_one(user) for user in users]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_one, users))
    return sorted(outcomes, key=lambda o: (o is None, o.user_id if o else 0))


def evaluate(source: PolicySource, users: Sequence[UserRecord], ctx: EpisodeContext, repeats: int = 1,
             fixed_iters: int = 3, workers: int = 1, vary_seeds: bool = True,
             label: str = '') -> MetricReport:
    """Mean and sample std of every metric across ``repeats`` runs over ``users``.

    Each repeat draws fresh candidates and backend noise unless
    ``vary_seeds`` is off. A bundle is evaluated on a parameter snapshot.
    """
    if repeats < 1:
        raise ValidationError(f"repeats must be at least 1, got {repeats}")
    if not users:
        raise ValidationError("evaluate needs at least one user")
    if isinstance(source, AgentBundle):
        source = source.snapshot()
        label = label or 'policy'
    else:
        label = label or source.label

    runs: List[Dict[str, float]] = []
    failures = 0
    distribution: Optional[Dict[str, List[int]]] = None
    n_users = 0
    for repeat in range(repeats):
        stream = ('eval', repeat) if vary_seeds else ('eval',)
        outcomes = _run_users(source, users, ctx, stream, fixed_iters, workers)
        succeeded = [o for o in outcomes if o is not None]
        failures += len(outcomes) - len(succeeded)
        if not succeeded:
            raise RPPError(f"evaluation repeat {repeat}: no user completed")
        keys = list(succeeded[0].scores)
        runs.append({key: float(np.mean([o.scores[key] for o in succeeded])) for key in keys})
        n_users = len(succeeded)
        if repeat == 0 and isinstance(source, AgentBundle):
            distribution = action_distribution(succeeded, ctx.catalog)
        logger.info("Evaluation %s repeat %d: NDCG@10 %.4f over %d users",
                    label, repeat, runs[-1].get('NDCG@10', float('nan')), n_users)

    return MetricReport.from_runs(runs, n_users=n_users, failures=failures, label=label,
                                  action_distribution=distribution)


def action_distribution(outcomes: Sequence[UserOutcome], catalog: ActionCatalog) -> Dict[str, List[int]]:
    """Per pattern, how many users ended on each action index."""
    sizes = catalog.sizes
    counts = {kind.key: [0] * sizes[kind] for kind in PATTERNS}
    for outcome in outcomes:
        for kind in PATTERNS:
            counts[kind.key][outcome.action[kind]] += 1
    return counts


@dataclass
class EnumerationResult:
    action: JointAction
    score: float
    history_len: int
    table: List[Tuple[JointAction, float]] = field(default_factory=list)

    @property
    def prompt(self) -> FixedPrompt:
        return FixedPrompt(self.action, self.history_len, label='enumeration')


def enumeration_baseline(users: Sequence[UserRecord], ctx: EpisodeContext, budget: int = 540,
                         history_len: int = 10, seed: int = 0, workers: int = 1) -> EnumerationResult:
    """Task-wise search: the sentence combination with the best mean NDCG@10 on ``users``.

    The history action is held fixed. Candidates are visited in lexicographic
    order and only a strictly better score replaces the incumbent, so ties
    keep the lowest action. Grids larger than ``budget`` are subsampled.
    """
    if budget < 1:
        raise ValidationError(f"enumeration budget must be at least 1, got {budget}")
    if not users:
        raise ValidationError("enumeration needs at least one user")
    catalog = ctx.catalog
    fixed = {PatternKind.HISTORY_RECORDS: catalog.history_index_for(history_len)}
    grid = list(iter_joint_actions(catalog.sizes, fixed=fixed))
    total = len(grid)
    if total > budget:
        rng = np.random.default_rng(derive_seed(seed, 'enumeration'))
        keep = sorted(rng.choice(len(grid), size=budget, replace=False).tolist())
        grid = [grid[i] for i in keep]
        logger.info("Enumeration grid subsampled to %d of %d actions", budget, total)

    best: Optional[JointAction] = None
    best_score = -1.0
    table: List[Tuple[JointAction, float]] = []
    for action in grid:
        outcomes = _run_users(FixedPrompt(action, history_len), users, ctx, ('enumeration',), 1, workers,
                              cand_stream=('train',))
        scores = [o.scores['NDCG@10'] if 'NDCG@10' in o.scores else _ndcg_fallback(o) for o in outcomes if o]
        if not scores:
            continue
        score = float(np.mean(scores))
        table.append((action, score))
        if best is None or score > best_score:
            best, best_score = action, score
    if best is None:
        raise RPPError("enumeration failed for every candidate action")
    logger.info("Enumeration picked %s with mean NDCG@10 %.4f over %d actions",
                best.serialize(), best_score, len(grid))
    return EnumerationResult(best, best_score, history_len, table)


def _ndcg_fallback(outcome: UserOutcome) -> float:
    """NDCG at the largest cutoff scored when rankings are shorter than 10."""
    keys = sorted((k for k in outcome.scores if k.startswith('NDCG@')), key=lambda k: int(k.split('@')[1]))
    return outcome.scores[keys[-1]]


__all__ = [
    'EnumerationResult', 'FixedPrompt', 'PolicySource', 'UserOutcome', 'action_distribution',
    'enumeration_baseline', 'evaluate', 'manual_action', 'manual_baseline_prompt', 'manual_prompt',
]
