"""
rpprec LLM Environment
Reply parsing with trim-and-pad, HTTP chat-completions backend with retry,
and a seeded simulated recommender used for offline training and tests.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import backoff
import numpy as np
import requests

from .actions import ActionCatalog, AssembledPrompt
from .dataset import EmbeddingKind, EmbeddingTable, SplitDataset, embeddings_from_arrays
from .exceptions import EnvironmentFailure, ValidationError
from .types import CandidateSet, ItemCatalog, JointAction, PatternKind, UserRecord, intern_catalog
from .utils import dump_json, write_text

logger = logging.getLogger(__name__)

API_KEY_ENV = 'LLM_API_KEY'

_ORDER_PREFIX = re.compile(r'^\s*\(?\d+\s*[.)]\s*')
_QUOTES = '"\'“”‘’`'


@dataclass(frozen=True)
class ParsedRanking:
    order: Tuple[int, ...]
    n_matched: int
    padded: bool

    def items(self, cands: CandidateSet) -> List:
        return [cands.items[i] for i in self.order]

    def rank_of(self, position: int) -> int:
        """1-based rank of candidate ``position``."""
        return self.order.index(position) + 1


def _strip_quotes(text: str) -> str:
    text = text.strip()
    while len(text) >= 2 and text[0] in _QUOTES and text[-1] in _QUOTES:
        text = text[1:-1].strip()
    return text


def parse_reply(reply: str, cands: CandidateSet) -> ParsedRanking:
    """Map reply lines onto candidate positions, then trim and pad to a full ranking.

    Each line has one leading order number removed, then matches a candidate
    by exact case-insensitive title, else by containing a title (longest
    title wins, earlier candidate on ties). Unmatched lines and repeated
    candidates are ignored; candidates never mentioned are appended in
    their original order.
    """
    size = len(cands)
    folded = [item.title.casefold() for item in cands.items]
    exact: Dict[str, int] = {}
    for pos, title in enumerate(folded):
        exact.setdefault(title, pos)

    order: List[int] = []
    seen = set()
    for line in str(reply or '').splitlines():
        raw = line.strip()
        if not raw:
            continue
        unnumbered = _ORDER_PREFIX.sub('', raw, count=1).strip()
        match = None
        for variant in (_strip_quotes(unnumbered), unnumbered, raw):
            match = exact.get(variant.casefold())
            if match is not None:
                break
        if match is None:
            haystack = _strip_quotes(unnumbered).casefold()
            best_len = 0
            for pos, title in enumerate(folded):
                if title in haystack and len(title) > best_len:
                    match, best_len = pos, len(title)
        if match is None or match in seen:
            continue
        order.append(match)
        seen.add(match)
        if len(order) == size:
            break

    n_matched = len(order)
    order.extend(pos for pos in range(size) if pos not in seen)
    return ParsedRanking(order=tuple(order), n_matched=n_matched, padded=n_matched < size)


def render_ranking(order: Sequence[int], cands: CandidateSet) -> str:
    """``i. <title>`` lines, the format the simulator replies in."""
    return '\n'.join(f"{rank}. {cands.items[pos].title}" for rank, pos in enumerate(order, start=1))


class _Retryable(Exception):
    pass


class JsonPoster:
    """POST JSON with exponential backoff on transport errors, 429 and 5xx."""

    def __init__(self, timeout: float = 30, max_retries: int = 5, backoff_factor: float = 1.0,
                 session: Optional[requests.Session] = None):
        if max_retries < 0:
            raise ValidationError("max_retries must be non-negative")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_factor = backoff_factor
        self.session = session or requests.Session()
        self.retries = 0
        self._lock = threading.Lock()

    def _on_backoff(self, details: Dict[str, Any]) -> None:
        with self._lock:
            self.retries += 1
        logger.warning(
            "Retrying request after attempt %d (waiting %.2fs): %s",
            details.get('tries', 0), details.get('wait', 0.0), details.get('exception'),
        )

    def post(self, url: str, payload: Dict[str, Any], headers: Optional[Dict[str, str]] = None) -> Any:
        @backoff.on_exception(
            backoff.expo,
            _Retryable,
            max_tries=self.max_retries + 1,
            jitter=None,
            on_backoff=self._on_backoff,
            logger=None,
            base=2,
            factor=self.backoff_factor,
        )
        def _send():
            try:
                response = self.session.post(url, json=payload, headers=headers or {}, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                raise _Retryable(f"transport error: {exc}") from exc
            if response.status_code == 429 or response.status_code >= 500:
                raise _Retryable(f"HTTP {response.status_code}")
            if response.status_code >= 400:
                raise EnvironmentFailure(f"HTTP {response.status_code} from {url}: {response.text[:200]}")
            try:
                return response.json()
            except ValueError as exc:
                raise EnvironmentFailure(f"non-JSON reply from {url}") from exc

        try:
            return _send()
        except _Retryable as exc:
            raise EnvironmentFailure(f"{url}: gave up after {self.max_retries + 1} attempts ({exc})") from exc


class LlmBackend(ABC):
    """complete(prompt, temperature) -> reply text; counts its calls."""

    name = 'llm'

    def __init__(self):
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return self._calls

    def complete(self, prompt: str, temperature: float = 0.2) -> str:
        with self._lock:
            self._calls += 1
        return self._complete(prompt, temperature)

    @abstractmethod
    def _complete(self, prompt: str, temperature: float) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class HttpSettings:
    endpoint: str
    model: str
    timeout: float = 30
    max_retries: int = 5
    max_in_flight: int = 4
    backoff_factor: float = 1.0

    def __post_init__(self):
        if not self.endpoint:
            raise ValidationError("LLM endpoint is not configured")
        if self.max_in_flight < 1:
            raise ValidationError("max_in_flight must be at least 1")


class ChatCompletionsBackend(LlmBackend):
    """A single user-role message per request against a chat-completions endpoint."""

    name = 'chat-completions'

    def __init__(self, settings: HttpSettings, session: Optional[requests.Session] = None):
        super().__init__()
        self.settings = settings
        self._poster = JsonPoster(settings.timeout, settings.max_retries, settings.backoff_factor, session)
        self._slots = threading.BoundedSemaphore(settings.max_in_flight)

    @property
    def retries(self) -> int:
        return self._poster.retries

    def _headers(self) -> Dict[str, str]:
        headers = {'Content-Type': 'application/json'}
        token = os.environ.get(API_KEY_ENV)
        if token:
            headers['Authorization'] = f"Bearer {token}"
        return headers

    def _complete(self, prompt: str, temperature: float) -> str:
        payload = {
            'model': self.settings.model,
            'messages': [{'role': 'user', 'content': prompt}],
            'temperature': temperature,
        }
        with self._slots:
            body = self._poster.post(self.settings.endpoint, payload, headers=self._headers())
        try:
            content = body['choices'][0]['message']['content']
        except (KeyError, IndexError, TypeError) as exc:
            raise EnvironmentFailure("reply has no choices[0].message.content") from exc
        if not isinstance(content, str):
            raise EnvironmentFailure("reply content is not text")
        return content


def http_complete(settings: HttpSettings, prompt: str, temperature: float = 0.2,
                  session: Optional[requests.Session] = None) -> str:
    return ChatCompletionsBackend(settings, session=session).complete(prompt, temperature)


class EchoBackend(LlmBackend):
    """Replies with the last line of the prompt; an offline identity refiner."""

    name = 'echo'

    def _complete(self, prompt: str, temperature: float) -> str:
        lines = prompt.splitlines()
        return lines[-1] if lines else ''


@dataclass(frozen=True, eq=False)
class SimUserSpec:
    user_id: int
    preferred: JointAction
    preference: np.ndarray
    signal_window: int
    swap_rate: float = 3.0
    demotion: int = 4
    latent: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.signal_window < 1:
            raise ValidationError(f"signal_window must be at least 1, got {self.signal_window}")
        if self.swap_rate < 0 or self.demotion < 0:
            raise ValidationError("noise parameters must be non-negative")

    def matched_patterns(self, action: JointAction) -> int:
        return sum(1 for kind in PatternKind.sentence_patterns() if action[kind] == self.preferred[kind])


def simulate_reply(spec: SimUserSpec, prompt: AssembledPrompt, cands: CandidateSet,
                   rng: np.random.Generator) -> str:
    """Noisy rendering of the user's true preference order over ``cands``.

    Each unmatched sentence pattern costs ``swap_rate`` random
    transpositions; a history shorter than ``signal_window`` demotes the
    ground truth by ``floor((1 - used/window) * demotion)`` places.
    """
    size = len(cands)
    scores = np.array([spec.preference[item.id] for item in cands.items])
    order = sorted(range(size), key=lambda pos: (-scores[pos], pos))

    swaps = int(round(spec.swap_rate * (3 - spec.matched_patterns(prompt.action))))
    for _ in range(swaps):
        i, j = (int(v) for v in rng.integers(0, size, size=2))
        order[i], order[j] = order[j], order[i]

    if prompt.used_history_len < spec.signal_window:
        coverage = prompt.used_history_len / spec.signal_window
        shift = int(math.floor((1.0 - coverage) * spec.demotion))
        if shift:
            current = order.index(cands.ground_truth_pos)
            order.pop(current)
            order.insert(min(current + shift, size - 1), cands.ground_truth_pos)
    return render_ranking(order, cands)


class RankingEnvironment(ABC):
    """query(user, prompt, cands, rng) -> reply text."""

    name = 'environment'

    def __init__(self):
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return self._calls

    def query(self, user: UserRecord, prompt: AssembledPrompt, cands: CandidateSet,
              rng: np.random.Generator) -> str:
        with self._lock:
            self._calls += 1
        return self._query(user, prompt, cands, rng)

    @abstractmethod
    def _query(self, user, prompt, cands, rng) -> str:
        raise NotImplementedError


class LlmEnvironment(RankingEnvironment):
    name = 'llm'

    def __init__(self, backend: LlmBackend, temperature: float = 0.2):
        super().__init__()
        self.backend = backend
        self.temperature = temperature

    def _query(self, user, prompt, cands, rng) -> str:
        return self.backend.complete(prompt.text, self.temperature)


class SimulatedEnvironment(RankingEnvironment):
    name = 'simulated'

    def __init__(self, specs: Mapping[int, SimUserSpec]):
        super().__init__()
        self.specs = dict(specs)

    def _query(self, user, prompt, cands, rng) -> str:
        spec = self.specs.get(user.user_id)
        if spec is None:
            raise EnvironmentFailure(f"no simulated profile for user {user.user_id}")
        return simulate_reply(spec, prompt, cands, rng)


@dataclass
class SimPopulation:
    """Simulated users with their records, latent tastes and the item catalog."""

    catalog: ItemCatalog
    users: List[UserRecord]
    specs: Dict[int, SimUserSpec]
    item_latents: np.ndarray
    seed: int

    def user_embeddings(self) -> EmbeddingTable:
        return embeddings_from_arrays(EmbeddingKind.USER, {uid: spec.latent for uid, spec in self.specs.items()})

    def item_embeddings(self) -> EmbeddingTable:
        return embeddings_from_arrays(EmbeddingKind.ITEM, dict(enumerate(self.item_latents)))

    def split(self, n_train: int, n_test: int, seed: int) -> SplitDataset:
        if n_train + n_test > len(self.users):
            raise ValidationError(
                f"insufficient eligible users: need {n_train + n_test}, have {len(self.users)}"
            )
        order = np.random.default_rng(seed).permutation(len(self.users)).tolist()
        return SplitDataset(
            users=list(self.users),
            item_catalog=self.catalog,
            train_user_ids=sorted(order[:n_train]),
            test_user_ids=sorted(order[n_train:n_train + n_test]),
        )

    def environment(self) -> SimulatedEnvironment:
        return SimulatedEnvironment(self.specs)

    def to_json(self) -> str:
        return dump_json({
            'format': 'rpprec-population',
            'version': 1,
            'seed': self.seed,
            'items': self.catalog.titles,
            'item_latents': self.item_latents.tolist(),
            'users': [
                {
                    'id': user.user_id,
                    'key': user.key,
                    'history': [item.id for item in user.history],
                    'holdout': user.holdout_item.id,
                    'preferred': self.specs[user.user_id].preferred.serialize(),
                    'signal_window': self.specs[user.user_id].signal_window,
                    'swap_rate': self.specs[user.user_id].swap_rate,
                    'demotion': self.specs[user.user_id].demotion,
                    'latent': self.specs[user.user_id].latent.tolist(),
                }
                for user in self.users
            ],
        })

    @classmethod
    def from_json(cls, text: str) -> "SimPopulation":
        try:
            data = json.loads(text)
            if data.get('format') != 'rpprec-population' or data.get('version') != 1:
                raise ValidationError("not a version 1 population file")
            catalog, _ = intern_catalog(data['items'])
            item_latents = np.asarray(data['item_latents'], dtype=np.float64)
            users: List[UserRecord] = []
            specs: Dict[int, SimUserSpec] = {}
            for entry in data['users']:
                user = UserRecord(
                    user_id=int(entry['id']),
                    history=tuple(catalog.get(int(i)) for i in entry['history']),
                    holdout_item=catalog.get(int(entry['holdout'])),
                    key=str(entry['key']),
                )
                latent = np.asarray(entry['latent'], dtype=np.float64)
                users.append(user)
                specs[user.user_id] = SimUserSpec(
                    user_id=user.user_id,
                    preferred=JointAction.parse(entry['preferred']),
                    preference=item_latents @ latent,
                    signal_window=int(entry['signal_window']),
                    swap_rate=float(entry['swap_rate']),
                    demotion=int(entry['demotion']),
                    latent=latent,
                )
        except (KeyError, TypeError, IndexError, json.JSONDecodeError) as exc:
            raise ValidationError(f"malformed population file: {exc}") from exc
        return cls(catalog=catalog, users=users, specs=specs, item_latents=item_latents, seed=int(data['seed']))

    def save(self, path: str) -> None:
        write_text(path, self.to_json())

    @classmethod
    def load(cls, path: str) -> "SimPopulation":
        with open(path, 'r', encoding='utf-8') as fh:
            return cls.from_json(fh.read())


def gen_sim_population(
    n_users: int,
    actions: ActionCatalog,
    seed: int,
    n_items: int = 500,
    latent_dim: int = 8,
    planted_action: Optional[JointAction] = None,
    planted_share: float = 0.0,
    swap_rate: float = 3.0,
    demotion: int = 4,
    max_window: int = 8,
) -> SimPopulation:
    """Seeded population whose preferred sentences are a fixed function of each user's latent taste.

    With ``planted_action`` set, a seeded ``planted_share`` of users prefer
    its sentence indices instead.
    """
    if n_users < 1:
        raise ValidationError(f"n_users must be at least 1, got {n_users}")
    if n_items < 64:
        raise ValidationError(f"n_items must be at least 64, got {n_items}")
    if not 0.0 <= planted_share <= 1.0:
        raise ValidationError("planted_share must lie in [0, 1]")

    rng = np.random.default_rng(seed)
    sizes = actions.sizes
    item_latents = rng.standard_normal((n_items, latent_dim))
    readers = {kind: rng.standard_normal((sizes[kind], latent_dim)) for kind in PatternKind.sentence_patterns()}
    width = max(4, len(str(n_items - 1)))
    catalog, _ = intern_catalog([f"Movie {i:0{width}d}" for i in range(n_items)])

    users: List[UserRecord] = []
    specs: Dict[int, SimUserSpec] = {}
    for uid in range(n_users):
        latent = rng.standard_normal(latent_dim)
        window = int(rng.integers(1, max_window + 1))
        planted = bool(rng.random() < planted_share)
        hist_len = int(rng.integers(10, 31))

        scores = item_latents @ latent
        holdout = int(np.argmax(scores))
        weights = np.exp(scores - scores.max())
        weights[holdout] = 0.0
        history_ids = rng.choice(n_items, size=hist_len, replace=False, p=weights / weights.sum())

        preferred = {kind: int(np.argmax(readers[kind] @ latent)) for kind in PatternKind.sentence_patterns()}
        preferred[PatternKind.HISTORY_RECORDS] = actions.history_index_for(window)
        if planted and planted_action is not None:
            for kind in PatternKind.sentence_patterns():
                preferred[kind] = planted_action[kind]

        user = UserRecord(
            user_id=uid,
            history=tuple(catalog.get(int(i)) for i in history_ids),
            holdout_item=catalog.get(holdout),
            key=f"sim-{uid:05d}",
        )
        users.append(user)
        specs[uid] = SimUserSpec(
            user_id=uid,
            preferred=JointAction.from_mapping(preferred),
            preference=scores,
            signal_window=window,
            swap_rate=swap_rate,
            demotion=demotion,
            latent=latent,
        )
    logger.info("Generated simulated population: %d users, %d items (seed %d)", n_users, n_items, seed)
    return SimPopulation(catalog=catalog, users=users, specs=specs, item_latents=item_latents, seed=seed)


__all__ = [
    'API_KEY_ENV', 'ChatCompletionsBackend', 'EchoBackend', 'HttpSettings', 'JsonPoster', 'LlmBackend',
    'LlmEnvironment', 'ParsedRanking', 'RankingEnvironment', 'SimPopulation', 'SimUserSpec',
    'SimulatedEnvironment', 'gen_sim_population', 'http_complete', 'parse_reply', 'render_ranking',
    'simulate_reply',
]
