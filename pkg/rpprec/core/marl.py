"""
rpprec MARL
Four actor-critic agents sharing one observed state: rollouts, n-step
returns, episode-level updates, greedy inference, early stopping and
text checkpoints.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .actions import ActionCatalog, AssembledPrompt, SentenceRefiner, apply_length_action, assemble
from .dataset import sample_candidates
from .exceptions import CheckpointError, EnvironmentFailure, RPPError, ValidationError
from .llm_env import ParsedRanking, RankingEnvironment, parse_reply
from .metrics import ndcg_at_k
from .neuralnet import (
    GradTape,
    Mlp2,
    SgdConfig,
    accumulate,
    backward_policy,
    backward_value,
    forward_policy,
    forward_value,
    greedy_action,
    mlp_from_lines,
    mlp_to_lines,
    sample_categorical,
    sgd_step,
    zero_grads,
)
from .state_encoder import StateEncoder, StateVector
from .types import PATTERNS, CandidateSet, ItemCatalog, JointAction, PatternKind, UserRecord
from .utils import derive_seed, write_text

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = 'RPPCKPT'
CHECKPOINT_VERSION = 1


@dataclass
class Agent:
    """One pattern's actor and critic. Agents never read each other's parameters."""

    pattern: PatternKind
    actor: Mlp2
    critic: Mlp2


class AgentBundle:
    def __init__(self, agents: Mapping[PatternKind, Agent], sgd: SgdConfig, seeds: Mapping[str, int]):
        missing = [kind.key for kind in PATTERNS if kind not in agents]
        if missing:
            raise ValidationError("bundle is missing agents", pattern=missing[0])
        self.agents: Dict[PatternKind, Agent] = {kind: agents[kind] for kind in PATTERNS}
        self.sgd = sgd
        self.seeds = dict(seeds)
        dims = {agent.actor.d_in for agent in self.agents.values()} | {a.critic.d_in for a in self.agents.values()}
        if len(dims) != 1:
            raise ValidationError(f"agents disagree on state dimension: {sorted(dims)}")
        for agent in self.agents.values():
            if agent.critic.d_out != 1:
                raise ValidationError("critic must have a single output", pattern=agent.pattern.key)

    @classmethod
    def create(cls, state_dim: int, hidden: int, action_sizes: Mapping[PatternKind, int],
               sgd: Optional[SgdConfig] = None, seed: int = 0) -> "AgentBundle":
        agents = {}
        seeds = {'policy-init': int(seed)}
        for kind in PATTERNS:
            actor_seed = derive_seed(seed, 'actor', kind.key)
            critic_seed = derive_seed(seed, 'critic', kind.key)
            seeds[f'actor.{kind.key}'] = actor_seed
            seeds[f'critic.{kind.key}'] = critic_seed
            agents[kind] = Agent(
                pattern=kind,
                actor=Mlp2.create(state_dim, hidden, action_sizes[kind], actor_seed),
                critic=Mlp2.create(state_dim, hidden, 1, critic_seed),
            )
        return cls(agents, sgd or SgdConfig(), seeds)

    @property
    def state_dim(self) -> int:
        return self.agents[PatternKind.ROLE_PLAYING].actor.d_in

    @property
    def hidden(self) -> int:
        return self.agents[PatternKind.ROLE_PLAYING].actor.hidden

    @property
    def action_sizes(self) -> Dict[PatternKind, int]:
        return {kind: agent.actor.d_out for kind, agent in self.agents.items()}

    def check_sizes(self, sizes: Mapping[PatternKind, int]) -> None:
        for kind in PATTERNS:
            if self.agents[kind].actor.d_out != sizes[kind]:
                raise CheckpointError(
                    f"{kind.key}: policy has {self.agents[kind].actor.d_out} actions, catalog has {sizes[kind]}"
                )

    def snapshot(self) -> "AgentBundle":
        """Parameter copy for read-only concurrent rollouts."""
        agents = {
            kind: Agent(kind, agent.actor.copy(), agent.critic.copy()) for kind, agent in self.agents.items()
        }
        return AgentBundle(agents, self.sgd, self.seeds)

    def fingerprint(self) -> str:
        return ':'.join(f"{a.actor.fingerprint()}/{a.critic.fingerprint()}" for a in self.agents.values())


@dataclass(frozen=True)
class StopRule:
    patience: int = 7
    max_iters: int = 15

    def __post_init__(self):
        if self.patience < 1 or self.max_iters < 1:
            raise ValidationError("patience and max_iters must be at least 1")
        if self.patience > self.max_iters:
            raise ValidationError(f"patience {self.patience} exceeds max_iters {self.max_iters}")


def early_stop(history: Sequence[float], rule: StopRule) -> Tuple[bool, int]:
    """Stop once the best NDCG@10 is ``patience`` iterations old or ``max_iters`` is reached."""
    if not history:
        return False, -1
    best = 0
    for i, value in enumerate(history):
        if value > history[best]:
            best = i
    current = len(history) - 1
    return (current - best >= rule.patience or len(history) >= rule.max_iters), best


def compute_returns(rewards: Sequence[float], gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    """``R_t = r_t + gamma * R_{t+1}`` with ``R_T = bootstrap``."""
    if len(rewards) == 0:
        raise ValidationError("cannot compute returns for an empty episode")
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError(f"gamma must lie in [0, 1], got {gamma}")
    returns = np.zeros(len(rewards))
    running = float(bootstrap)
    for t in range(len(rewards) - 1, -1, -1):
        running = float(rewards[t]) + gamma * running
        returns[t] = running
    return returns


@dataclass(eq=False)
class EpisodeStep:
    t: int
    state: StateVector
    joint_action: JointAction
    probs: Dict[PatternKind, float]
    values: Dict[PatternKind, float]
    prompt: AssembledPrompt
    ranking: ParsedRanking
    reward: float
    ndcg10: float
    history_len: int
    _policy_tapes: Dict[PatternKind, GradTape] = field(default_factory=dict, repr=False)
    _value_tapes: Dict[PatternKind, GradTape] = field(default_factory=dict, repr=False)


@dataclass
class EpisodeContext:
    """Everything a rollout needs besides the agents and the user."""

    catalog: ActionCatalog
    encoder: StateEncoder
    env: RankingEnvironment
    item_pool: ItemCatalog
    seed: int = 0
    refiner: Optional[SentenceRefiner] = None
    pinned: Dict[PatternKind, int] = field(default_factory=dict)
    num_candidates: int = 10

    def candidates(self, user: UserRecord, *stream) -> CandidateSet:
        return sample_candidates(
            user, self.item_pool, derive_seed(self.seed, 'candidates', *stream, user.user_id), self.num_candidates
        )

    def prompt_for(self, user: UserRecord, cands: CandidateSet, action: JointAction, l_t: int) -> AssembledPrompt:
        templates = self.refiner.refine_templates(self.catalog, action) if self.refiner else None
        return assemble(user, cands, action, l_t, self.catalog, templates)


def rollout_step(
    bundle: AgentBundle,
    state: StateVector,
    user: UserRecord,
    cands: CandidateSet,
    ctx: EpisodeContext,
    l_prev: int,
    rng: np.random.Generator,
    env_rng: np.random.Generator,
    greedy: bool = False,
) -> Tuple[EpisodeStep, StateVector, int]:
    """Act, prompt, query, parse and observe once."""
    chosen: Dict[PatternKind, int] = {}
    probs: Dict[PatternKind, float] = {}
    values: Dict[PatternKind, float] = {}
    policy_tapes: Dict[PatternKind, GradTape] = {}
    value_tapes: Dict[PatternKind, GradTape] = {}
    for kind in PATTERNS:
        if kind in ctx.pinned:
            chosen[kind] = ctx.pinned[kind]
            probs[kind] = 1.0
            continue
        agent = bundle.agents[kind]
        dist, policy_tapes[kind] = forward_policy(agent.actor, state)
        chosen[kind] = greedy_action(dist) if greedy else sample_categorical(dist, rng)
        probs[kind] = float(dist[chosen[kind]])
        values[kind], value_tapes[kind] = forward_value(agent.critic, state)

    action = JointAction(tuple(chosen[kind] for kind in PATTERNS))
    l_t = apply_length_action(l_prev, ctx.catalog.increment(action[PatternKind.HISTORY_RECORDS]), len(user.history))
    prompt = ctx.prompt_for(user, cands, action, l_t)
    reply = ctx.env.query(user, prompt, cands, env_rng)
    ranking = parse_reply(reply, cands)
    reward = ndcg_at_k(ranking, cands.ground_truth_pos, len(cands))
    ndcg10 = ndcg_at_k(ranking, cands.ground_truth_pos, min(10, len(cands)))
    next_state = ctx.encoder.update_state(prompt, ranking.items(cands), state.step + 1)
    step = EpisodeStep(
        t=state.step, state=state, joint_action=action, probs=probs, values=values, prompt=prompt,
        ranking=ranking, reward=reward, ndcg10=ndcg10, history_len=l_t,
        _policy_tapes=policy_tapes, _value_tapes=value_tapes,
    )
    logger.debug("user %d step %d action %s reward %.4f", user.user_id, step.t, action.serialize(), reward)
    return step, next_state, l_t


@dataclass
class EpisodeTrace:
    user_id: int
    steps: List[EpisodeStep]
    final_state: StateVector

    @property
    def rewards(self) -> List[float]:
        return [step.reward for step in self.steps]

    @property
    def best_index(self) -> int:
        return max(range(len(self.steps)), key=lambda i: (self.steps[i].ndcg10, -i))

    @property
    def best_step(self) -> EpisodeStep:
        return self.steps[self.best_index]


StepHook = Callable[[EpisodeStep, StateVector], None]


def run_episode(bundle: AgentBundle, user: UserRecord, cands: CandidateSet, ctx: EpisodeContext,
                rule: StopRule, rng: np.random.Generator, env_rng: np.random.Generator,
                on_step: Optional[StepHook] = None) -> EpisodeTrace:
    state = ctx.encoder.init_state(user.user_id)
    length = ctx.catalog.l0
    steps: List[EpisodeStep] = []
    history: List[float] = []
    while True:
        step, state, length = rollout_step(bundle, state, user, cands, ctx, length, rng, env_rng)
        steps.append(step)
        history.append(step.ndcg10)
        if on_step is not None:
            on_step(step, state)
        stop, _ = early_stop(history, rule)
        if stop:
            return EpisodeTrace(user.user_id, steps, state)


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.95
    stop_rule: StopRule = StopRule()
    cadence: str = 'episode'

    def __post_init__(self):
        if self.cadence not in ('episode', 'step'):
            raise ValidationError(f"update cadence must be 'episode' or 'step', got {self.cadence!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass
class EpochReport:
    epoch: int
    mean_reward: float
    mean_actor_loss: float
    mean_critic_loss: float
    failures: int
    users: int
    mean_best_ndcg10: float = 0.0
    mean_steps: float = 0.0

    COLUMNS = ('epoch', 'mean_reward', 'mean_actor_loss', 'mean_critic_loss', 'failures',
               'users', 'mean_best_ndcg10', 'mean_steps')

    def to_row(self) -> str:
        return '\t'.join([
            str(self.epoch), f"{self.mean_reward:.6f}", f"{self.mean_actor_loss:.6f}",
            f"{self.mean_critic_loss:.6f}", str(self.failures), str(self.users),
            f"{self.mean_best_ndcg10:.6f}", f"{self.mean_steps:.3f}",
        ])


def _update_agents(bundle: AgentBundle, pairs: Sequence[Tuple[EpisodeStep, Dict[PatternKind, float]]],
                   pinned: Mapping[PatternKind, int]) -> Tuple[float, float]:
    """One SGD step per active agent from (step, per-agent target return) pairs.

    Returns the mean actor and critic loss over agents and steps.
    """
    actor_losses: List[float] = []
    critic_losses: List[float] = []
    weight = 1.0 / len(pairs)
    for kind in PATTERNS:
        if kind in pinned:
            continue
        agent = bundle.agents[kind]
        actor_grads = zero_grads(agent.actor)
        critic_grads = zero_grads(agent.critic)
        for step, targets in pairs:
            advantage = targets[kind] - step.values[kind]
            accumulate(actor_grads, backward_policy(step._policy_tapes[kind], step.joint_action[kind], advantage), weight)
            accumulate(critic_grads, backward_value(step._value_tapes[kind], targets[kind]), weight)
            actor_losses.append(-np.log(step.probs[kind]) * advantage)
            critic_losses.append(0.5 * advantage ** 2)
        sgd_step(agent.actor, actor_grads, bundle.sgd.lr_actor, bundle.sgd.clip)
        sgd_step(agent.critic, critic_grads, bundle.sgd.lr_critic, bundle.sgd.clip)
    if not actor_losses:
        return 0.0, 0.0
    return float(np.mean(actor_losses)), float(np.mean(critic_losses))


def _bootstrap_values(bundle: AgentBundle, state: StateVector, pinned) -> Dict[PatternKind, float]:
    return {kind: forward_value(bundle.agents[kind].critic, state)[0] for kind in PATTERNS if kind not in pinned}


def train_epoch(bundle: AgentBundle, users: Sequence[UserRecord], ctx: EpisodeContext, cfg: TrainConfig,
                epoch: int = 0) -> EpochReport:
    """Roll one episode per user and update every unpinned agent after each."""
    if not users:
        raise ValidationError("train_epoch needs at least one user")
    rewards: List[float] = []
    best: List[float] = []
    lengths: List[int] = []
    actor_losses: List[float] = []
    critic_losses: List[float] = []
    failures = 0

    for user in users:
        cands = ctx.candidates(user, 'train')
        rng = np.random.default_rng(derive_seed(ctx.seed, 'sampling', epoch, user.user_id))
        env_rng = np.random.default_rng(derive_seed(ctx.seed, 'environment', 'train', epoch, user.user_id))
        step_losses: List[Tuple[float, float]] = []

        def _per_step(step: EpisodeStep, next_state: StateVector) -> None:
            bootstrap = _bootstrap_values(bundle, next_state, ctx.pinned)
            targets = {kind: step.reward + cfg.gamma * v for kind, v in bootstrap.items()}
            step_losses.append(_update_agents(bundle, [(step, targets)], ctx.pinned))

        try:
            trace = run_episode(bundle, user, cands, ctx, cfg.stop_rule, rng, env_rng,
                                on_step=_per_step if cfg.cadence == 'step' else None)
        except EnvironmentFailure as exc:
            failures += 1
            logger.error("Episode aborted for user %d in epoch %d: %s", user.user_id, epoch, exc)
            continue

        if cfg.cadence == 'episode':
            bootstrap = _bootstrap_values(bundle, trace.final_state, ctx.pinned)
            returns = {kind: compute_returns(trace.rewards, cfg.gamma, v) for kind, v in bootstrap.items()}
            pairs = [(step, {kind: float(r[t]) for kind, r in returns.items()}) for t, step in enumerate(trace.steps)]
            actor_loss, critic_loss = _update_agents(bundle, pairs, ctx.pinned)
        else:
            actor_loss = float(np.mean([a for a, _ in step_losses]))
            critic_loss = float(np.mean([c for _, c in step_losses]))

        rewards.append(float(np.mean(trace.rewards)))
        best.append(trace.best_step.ndcg10)
        lengths.append(len(trace.steps))
        actor_losses.append(actor_loss)
        critic_losses.append(critic_loss)

    if not rewards:
        raise RPPError(f"epoch {epoch}: every training episode failed ({failures} users)")
    report = EpochReport(
        epoch=epoch,
        mean_reward=float(np.mean(rewards)),
        mean_actor_loss=float(np.mean(actor_losses)),
        mean_critic_loss=float(np.mean(critic_losses)),
        failures=failures,
        users=len(rewards),
        mean_best_ndcg10=float(np.mean(best)),
        mean_steps=float(np.mean(lengths)),
    )
    logger.info(
        "Epoch %d: reward %.4f, best NDCG@10 %.4f, actor loss %.4f, critic loss %.4f, %d failures",
        epoch, report.mean_reward, report.mean_best_ndcg10, report.mean_actor_loss,
        report.mean_critic_loss, failures,
    )
    return report


@dataclass
class InferenceResult:
    user_id: int
    steps: List[EpisodeStep]
    cands: CandidateSet
    aborted: bool = False

    @property
    def best_step(self) -> EpisodeStep:
        best = max(range(len(self.steps)), key=lambda i: (self.steps[i].ndcg10, -i))
        return self.steps[best]

    @property
    def prompt(self) -> AssembledPrompt:
        return self.best_step.prompt


def run_episode_inference(bundle: AgentBundle, user: UserRecord, ctx: EpisodeContext, fixed_iters: int = 3,
                          cands: Optional[CandidateSet] = None,
                          env_rng: Optional[np.random.Generator] = None) -> InferenceResult:
    """Greedy episode of exactly ``fixed_iters`` steps; keeps the best NDCG@10 step (earliest on ties)."""
    if fixed_iters < 1:
        raise ValidationError(f"fixed_iters must be at least 1, got {fixed_iters}")
    cands = cands or ctx.candidates(user, 'eval')
    env_rng = env_rng or np.random.default_rng(derive_seed(ctx.seed, 'environment', 'eval', user.user_id))
    rng = np.random.default_rng(0)
    state = ctx.encoder.init_state(user.user_id)
    length = ctx.catalog.l0
    steps: List[EpisodeStep] = []
    for _ in range(fixed_iters):
        try:
            step, state, length = rollout_step(bundle, state, user, cands, ctx, length, rng, env_rng, greedy=True)
        except EnvironmentFailure as exc:
            if not steps:
                raise
            logger.warning("User %d: environment failed after %d steps, keeping best so far: %s",
                           user.user_id, len(steps), exc)
            return InferenceResult(user.user_id, steps, cands, aborted=True)
        steps.append(step)
    return InferenceResult(user.user_id, steps, cands)


def save_checkpoint(bundle: AgentBundle, path: str) -> None:
    header = {
        'version': CHECKPOINT_VERSION,
        'state_dim': bundle.state_dim,
        'hidden': bundle.hidden,
        'action_sizes': {kind.key: size for kind, size in bundle.action_sizes.items()},
        'seeds': bundle.seeds,
        'sgd': {'lr_actor': bundle.sgd.lr_actor, 'lr_critic': bundle.sgd.lr_critic, 'clip': bundle.sgd.clip},
    }
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", json.dumps(header, sort_keys=True)]
    for kind, agent in bundle.agents.items():
        lines.extend(mlp_to_lines(f"{kind.key}.actor", agent.actor))
        lines.extend(mlp_to_lines(f"{kind.key}.critic", agent.critic))
    lines.append('end')
    write_text(path, '\n'.join(lines))
    logger.info("Saved checkpoint to %s", path)


def load_checkpoint(path: str, expected_sizes: Optional[Mapping[PatternKind, int]] = None) -> AgentBundle:
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC + ' '):
        raise CheckpointError(f"{path} is not a checkpoint")
    version = lines[0].split(' ', 1)[1].strip()
    if version != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
    if len(lines) < 2:
        raise CheckpointError("truncated checkpoint: missing header")
    try:
        header = json.loads(lines[1])
        sizes = {PatternKind.from_key(k): int(v) for k, v in header['action_sizes'].items()}
        sgd = SgdConfig(**header['sgd'])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc

    body = iter(lines[2:])
    agents = {}
    for kind in PATTERNS:
        actor = mlp_from_lines(f"{kind.key}.actor", body)
        critic = mlp_from_lines(f"{kind.key}.critic", body)
        if actor.d_out != sizes.get(kind):
            raise CheckpointError(f"{kind.key}: actor has {actor.d_out} outputs, header says {sizes.get(kind)}")
        agents[kind] = Agent(kind, actor, critic)
    if next(body, None) != 'end':
        raise CheckpointError("truncated checkpoint: missing end marker")

    try:
        bundle = AgentBundle(agents, sgd, header.get('seeds', {}))
    except ValidationError as exc:
        raise CheckpointError(str(exc)) from exc
    if bundle.state_dim != header.get('state_dim'):
        raise CheckpointError(f"state dimension {bundle.state_dim} does not match header {header.get('state_dim')}")
    if expected_sizes is not None:
        bundle.check_sizes(expected_sizes)
    return bundle


__all__ = [
    'Agent', 'AgentBundle', 'EpisodeContext', 'EpisodeStep', 'EpisodeTrace', 'EpochReport', 'InferenceResult',
    'StopRule', 'TrainConfig', 'compute_returns', 'early_stop', 'load_checkpoint', 'rollout_step',
    'run_episode', 'run_episode_inference', 'save_checkpoint', 'train_epoch',
]
