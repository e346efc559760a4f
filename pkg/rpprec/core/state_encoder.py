"""
rpprec State Encoder
Frozen, seeded encoders producing the shared state vector from user features,
the current prompt text and the ranked output list.
"""

from __future__ import annotations

import hashlib
import logging
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np

from .dataset import EmbeddingKind, EmbeddingTable
from .exceptions import EnvironmentFailure, ValidationError
from .types import ItemRef

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r'\w+')


class TextEncoder(ABC):
    """encode(text) -> vector of fixed dimension ``dim``."""

    name = 'text'
    dim: int

    @abstractmethod
    def encode(self, text: str) -> np.ndarray:
        raise NotImplementedError


@lru_cache(maxsize=65536)
def _token_slot(token: str, dim: int) -> Tuple[int, float]:
    raw = token.encode('utf-8', 'surrogatepass')
    bucket = int.from_bytes(hashlib.blake2b(raw, digest_size=8, person=b'rpp-bucket').digest(), 'big') % dim
    sign_bit = hashlib.blake2b(raw, digest_size=1, person=b'rpp-sign').digest()[0] & 1
    return bucket, (1.0 if sign_bit else -1.0)


class HashTextEncoder(TextEncoder):
    """Signed feature hashing over lowercase word tokens, L2-normalized."""

    name = 'hash'

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValidationError(f"text encoder dim must be positive, got {dim}")
        self.dim = dim

    def encode(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in _TOKEN_RE.findall(str(text).lower()):
            bucket, sign = _token_slot(token, self.dim)
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


class RemoteTextEncoder(TextEncoder):
    """POSTs ``{"input": text}`` and reads ``{"embedding": [...]}``."""

    name = 'http'

    def __init__(self, endpoint: str, dim: int, timeout: float = 10, max_retries: int = 3,
                 backoff_factor: float = 1.0, session=None):
        from .llm_env import JsonPoster

        if not endpoint:
            raise ValidationError("embedding endpoint is not configured")
        self.endpoint = endpoint
        self.dim = dim
        self._poster = JsonPoster(timeout=timeout, max_retries=max_retries,
                                  backoff_factor=backoff_factor, session=session)

    @property
    def retries(self) -> int:
        return self._poster.retries

    def encode(self, text: str) -> np.ndarray:
        body = self._poster.post(self.endpoint, {'input': text})
        values = body.get('embedding') if isinstance(body, dict) else None
        if not isinstance(values, list) or not all(isinstance(v, (int, float)) for v in values):
            raise EnvironmentFailure("embedding response has no numeric 'embedding' list")
        vec = np.asarray(values, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise EnvironmentFailure(f"embedding has dim {vec.shape[0]}, expected {self.dim}")
        if not np.all(np.isfinite(vec)):
            raise EnvironmentFailure("embedding contains non-finite values")
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _orthogonal(rng: np.random.Generator, size: int) -> np.ndarray:
    u, _, vt = np.linalg.svd(rng.standard_normal((size, size)))
    return u @ vt


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class GruEncoder:
    """Single-layer GRU with frozen seeded parameters; returns the final hidden state."""

    name = 'gru'

    def __init__(self, input_dim: int, hidden_dim: int, seed: int):
        if input_dim < 1 or hidden_dim < 1:
            raise ValidationError("GRU dimensions must be positive")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(input_dim)
        self.W_z = _frozen(rng.normal(0.0, scale, (hidden_dim, input_dim)))
        self.W_r = _frozen(rng.normal(0.0, scale, (hidden_dim, input_dim)))
        self.W_h = _frozen(rng.normal(0.0, scale, (hidden_dim, input_dim)))
        self.U_z = _frozen(_orthogonal(rng, hidden_dim))
        self.U_r = _frozen(_orthogonal(rng, hidden_dim))
        self.U_h = _frozen(_orthogonal(rng, hidden_dim))
        self.b_z = _frozen(np.zeros(hidden_dim))
        self.b_r = _frozen(np.zeros(hidden_dim))
        self.b_h = _frozen(np.zeros(hidden_dim))

    def step(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        z = _sigmoid(self.W_z @ x + self.U_z @ h + self.b_z)
        r = _sigmoid(self.W_r @ x + self.U_r @ h + self.b_r)
        n = np.tanh(self.W_h @ x + self.U_h @ (r * h) + self.b_h)
        return (1.0 - z) * n + z * h

    def run(self, sequence: Sequence[np.ndarray]) -> np.ndarray:
        h = np.zeros(self.hidden_dim)
        for x in sequence:
            h = self.step(np.asarray(x, dtype=np.float64), h)
        return h


class MeanPoolEncoder:
    """Order-insensitive alternative to the GRU: tanh of the projected mean."""

    name = 'mean'

    def __init__(self, input_dim: int, hidden_dim: int, seed: int):
        rng = np.random.default_rng(seed)
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.P_pool = _frozen(rng.normal(0.0, 1.0 / np.sqrt(input_dim), (hidden_dim, input_dim)))

    def run(self, sequence: Sequence[np.ndarray]) -> np.ndarray:
        if len(sequence) == 0:
            return np.zeros(self.hidden_dim)
        return np.tanh(self.P_pool @ np.mean(np.asarray(sequence, dtype=np.float64), axis=0))


@dataclass(frozen=True, eq=False)
class StateVector:
    values: np.ndarray
    step: int = 0

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ValidationError(f"state must be a vector, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError(f"state at step {self.step} has non-finite entries")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


class StateEncoder:
    """Maps users to the initial state and (prompt, ranking) pairs to later states.

    Pretrained embedding tables are optional; missing users and items are
    served by hashing ``user:<id>`` / ``item:<id>``. Every projection is a
    fixed seeded Gaussian matrix.
    """

    def __init__(
        self,
        text_encoder: TextEncoder,
        state_dim: int = 64,
        gru_input_dim: int = 32,
        seed: int = 0,
        user_embeddings: Optional[EmbeddingTable] = None,
        item_embeddings: Optional[EmbeddingTable] = None,
        output_encoder: str = 'gru',
        fallback_dim: int = 256,
    ):
        if state_dim < 1 or gru_input_dim < 1:
            raise ValidationError("state and GRU input dimensions must be positive")
        self.text_encoder = text_encoder
        self.state_dim = state_dim
        self.gru_input_dim = gru_input_dim
        self.user_embeddings = user_embeddings or EmbeddingTable.empty(EmbeddingKind.USER)
        self.item_embeddings = item_embeddings or EmbeddingTable.empty(EmbeddingKind.ITEM)
        self.fallback_encoder = HashTextEncoder(fallback_dim)

        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(state_dim)
        self.P_user_fallback = _frozen(rng.normal(0.0, scale, (fallback_dim, state_dim)))
        self.P_prompt = _frozen(rng.normal(0.0, scale, (text_encoder.dim, state_dim)))
        self.P_item_fallback = _frozen(rng.normal(0.0, scale, (fallback_dim, gru_input_dim)))
        self.P_user = (
            _frozen(rng.normal(0.0, scale, (self.user_embeddings.dim, state_dim)))
            if self.user_embeddings.dim else None
        )
        self.P_item = (
            _frozen(rng.normal(0.0, scale, (self.item_embeddings.dim, gru_input_dim)))
            if self.item_embeddings.dim else None
        )
        output_seed = int(rng.integers(0, 2**63 - 1))
        if output_encoder == 'gru':
            self.output_encoder = GruEncoder(gru_input_dim, state_dim, output_seed)
        elif output_encoder == 'mean':
            self.output_encoder = MeanPoolEncoder(gru_input_dim, state_dim, output_seed)
        else:
            raise ValidationError(f"unknown output encoder {output_encoder!r}")
        logger.debug(
            "State encoder ready: d_s=%d, text=%s(%d), output=%s, user table=%d, item table=%d",
            state_dim, text_encoder.name, text_encoder.dim, self.output_encoder.name,
            len(self.user_embeddings), len(self.item_embeddings),
        )

    def user_vector(self, user_id: int) -> np.ndarray:
        vec = self.user_embeddings.lookup(user_id)
        if vec is not None and self.P_user is not None:
            return vec @ self.P_user
        return self.fallback_encoder.encode(f"user:{user_id}") @ self.P_user_fallback

    def item_vector(self, item: ItemRef) -> np.ndarray:
        vec = self.item_embeddings.lookup(item.id)
        if vec is not None and self.P_item is not None:
            return vec @ self.P_item
        return self.fallback_encoder.encode(f"item:{item.id}") @ self.P_item_fallback

    def init_state(self, user_id: int) -> StateVector:
        return StateVector(values=self.user_vector(user_id), step=0)

    def encode_prompt(self, text: str) -> np.ndarray:
        return self.text_encoder.encode(text) @ self.P_prompt

    def encode_output(self, ranking: Sequence[ItemRef]) -> np.ndarray:
        return self.output_encoder.run([self.item_vector(item) for item in ranking])

    def update_state(self, prompt, ranking: Sequence[ItemRef], t: int) -> StateVector:
        """``prompt`` is an AssembledPrompt or its text."""
        text = getattr(prompt, "text", prompt)
        return StateVector(values=self.encode_prompt(text) + self.encode_output(ranking), step=t)


__all__ = [
    'GruEncoder', 'HashTextEncoder', 'MeanPoolEncoder', 'RemoteTextEncoder',
    'StateEncoder', 'StateVector', 'TextEncoder',
]
