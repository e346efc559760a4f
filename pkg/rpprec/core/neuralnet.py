"""
rpprec Neural Kernel
Two-layer MLPs with softmax or scalar heads, exact backward passes, plain SGD
with global-norm clipping and a central-difference gradient checker.
All arithmetic is float64.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from .exceptions import CheckpointError, NumericalError, TapeError, ValidationError

logger = logging.getLogger(__name__)

PARAM_NAMES = ('W1', 'b1', 'W2', 'b2')
Gradients = Dict[str, np.ndarray]


class Mlp2:
    """``x -> relu(x W1 + b1) W2 + b2``."""

    def __init__(self, W1: np.ndarray, b1: np.ndarray, W2: np.ndarray, b2: np.ndarray):
        self.W1 = np.array(W1, dtype=np.float64)
        self.b1 = np.array(b1, dtype=np.float64)
        self.W2 = np.array(W2, dtype=np.float64)
        self.b2 = np.array(b2, dtype=np.float64)
        d_in, hidden = self.W1.shape
        if self.b1.shape != (hidden,) or self.W2.shape[0] != hidden or self.b2.shape != (self.W2.shape[1],):
            raise ValidationError(
                f"inconsistent MLP shapes W1{self.W1.shape} b1{self.b1.shape} W2{self.W2.shape} b2{self.b2.shape}"
            )
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"parameter {name} has non-finite entries")
        self._version = 0

    @classmethod
    def create(cls, d_in: int, hidden: int, d_out: int, seed: int) -> "Mlp2":
        """He-scaled normal weights, zero biases."""
        rng = np.random.default_rng(seed)
        return cls(
            rng.normal(0.0, np.sqrt(2.0 / d_in), (d_in, hidden)),
            np.zeros(hidden),
            rng.normal(0.0, np.sqrt(2.0 / hidden), (hidden, d_out)),
            np.zeros(d_out),
        )

    @classmethod
    def zeros(cls, d_in: int, hidden: int, d_out: int) -> "Mlp2":
        return cls(np.zeros((d_in, hidden)), np.zeros(hidden), np.zeros((hidden, d_out)), np.zeros(d_out))

    @property
    def d_in(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def d_out(self) -> int:
        return self.W2.shape[1]

    @property
    def version(self) -> int:
        return self._version

    def params(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "Mlp2":
        return Mlp2(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name in PARAM_NAMES:
            array = getattr(self, name)
            digest.update(name.encode())
            digest.update(str(array.shape).encode())
            digest.update(np.ascontiguousarray(array).tobytes())
        return digest.hexdigest()

    def __repr__(self) -> str:
        return f"Mlp2(d_in={self.d_in}, hidden={self.hidden}, d_out={self.d_out})"


@dataclass(frozen=True)
class SgdConfig:
    """Learning rates and clip threshold. A zero rate freezes that network."""

    lr_actor: float = 0.01
    lr_critic: float = 0.01
    clip: Optional[float] = 5.0

    def __post_init__(self):
        if self.lr_actor < 0 or self.lr_critic < 0:
            raise ValidationError("learning rates must be non-negative")
        if self.clip is not None and self.clip <= 0:
            raise ValidationError("clip must be positive or None")


@dataclass
class GradTape:
    net: Mlp2
    version: int
    kind: str
    x: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray
    output: np.ndarray


def _as_input(net: Mlp2, state) -> np.ndarray:
    x = np.asarray(getattr(state, 'values', state), dtype=np.float64)
    if x.shape != (net.d_in,):
        raise ValidationError(f"input has shape {x.shape}, network expects ({net.d_in},)")
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite input", layer=0)
    return x


def _hidden_and_output(net: Mlp2, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    pre = x @ net.W1 + net.b1
    if not np.all(np.isfinite(pre)):
        raise NumericalError("non-finite pre-activation", layer=1)
    hidden = np.maximum(pre, 0.0)
    out = hidden @ net.W2 + net.b2
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite output", layer=2)
    return pre, hidden, out


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    exp = np.exp(shifted)
    return exp / np.sum(exp)


def forward_policy(net: Mlp2, state) -> Tuple[np.ndarray, GradTape]:
    x = _as_input(net, state)
    pre, hidden, logits = _hidden_and_output(net, x)
    probs = softmax(logits)
    return probs, GradTape(net, net.version, 'policy', x, pre, hidden, probs)


def forward_value(net: Mlp2, state) -> Tuple[float, GradTape]:
    if net.d_out != 1:
        raise ValidationError(f"value network must have one output, has {net.d_out}")
    x = _as_input(net, state)
    pre, hidden, out = _hidden_and_output(net, x)
    return float(out[0]), GradTape(net, net.version, 'value', x, pre, hidden, out)


def greedy_action(probs: np.ndarray) -> int:
    return int(np.argmax(probs))


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw using exactly one uniform from ``rng``."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise ValidationError("probabilities must be a non-empty vector")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0) or probs.sum() <= 0:
        raise NumericalError(f"degenerate probabilities {probs}")
    cdf = np.cumsum(probs)
    u = rng.random()
    index = int(np.searchsorted(cdf, u * cdf[-1], side='right'))
    return min(index, probs.size - 1)


def _check_tape(tape: Optional[GradTape], kind: str) -> GradTape:
    if tape is None:
        raise TapeError("backward called without a forward pass")
    if tape.kind != kind:
        raise TapeError(f"expected a {kind} tape, got {tape.kind}")
    if tape.version != tape.net.version:
        raise TapeError(
            f"stale tape: recorded at parameter version {tape.version}, network is at {tape.net.version}"
        )
    return tape


def _backprop(tape: GradTape, d_out: np.ndarray) -> Gradients:
    net = tape.net
    d_hidden = net.W2 @ d_out
    d_pre = d_hidden * (tape.pre > 0)
    return {
        'W1': np.outer(tape.x, d_pre),
        'b1': d_pre,
        'W2': np.outer(tape.hidden, d_out),
        'b2': d_out.copy(),
    }


def backward_policy(tape: GradTape, chosen: int, advantage: float) -> Gradients:
    """Gradients of ``-log(probs[chosen]) * advantage`` with the advantage held constant."""
    tape = _check_tape(tape, 'policy')
    probs = tape.output
    if not 0 <= chosen < probs.size:
        raise ValidationError(f"chosen action {chosen} outside [0, {probs.size})")
    d_logits = probs.copy()
    d_logits[chosen] -= 1.0
    d_logits *= float(advantage)
    return _backprop(tape, d_logits)


def backward_value(tape: GradTape, target: float) -> Gradients:
    """Gradients of ``0.5 * (target - v) ** 2``."""
    tape = _check_tape(tape, 'value')
    return _backprop(tape, np.array([tape.output[0] - float(target)]))


def zero_grads(net: Mlp2) -> Gradients:
    return {name: np.zeros_like(array) for name, array in net.params().items()}


def accumulate(total: Gradients, grads: Gradients, scale: float = 1.0) -> Gradients:
    for name in PARAM_NAMES:
        total[name] += scale * grads[name]
    return total


def global_norm(grads: Gradients) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def sgd_step(net: Mlp2, grads: Gradients, lr: float, clip: Optional[float] = None) -> Mlp2:
    """``params -= lr * clip(grads)`` in place; bumps the parameter version."""
    if lr < 0:
        raise ValidationError(f"learning rate must be non-negative, got {lr}")
    for name in PARAM_NAMES:
        if name not in grads:
            raise ValidationError(f"missing gradient for {name}")
        if grads[name].shape != getattr(net, name).shape:
            raise ValidationError(
                f"gradient {name} has shape {grads[name].shape}, parameter has {getattr(net, name).shape}"
            )
    scale = 1.0
    if clip is not None:
        norm = global_norm(grads)
        if norm > clip:
            scale = clip / norm
    for name in PARAM_NAMES:
        param = getattr(net, name)
        param -= (lr * scale) * grads[name]
    net._version += 1
    return net


@dataclass(frozen=True)
class PolicyLoss:
    state: np.ndarray
    chosen: int
    advantage: float

    def value(self, net: Mlp2) -> float:
        probs, _ = forward_policy(net, self.state)
        return float(-np.log(probs[self.chosen]) * self.advantage)

    def gradients(self, net: Mlp2) -> Gradients:
        _, tape = forward_policy(net, self.state)
        return backward_policy(tape, self.chosen, self.advantage)


@dataclass(frozen=True)
class ValueLoss:
    state: np.ndarray
    target: float

    def value(self, net: Mlp2) -> float:
        v, _ = forward_value(net, self.state)
        return 0.5 * (self.target - v) ** 2

    def gradients(self, net: Mlp2) -> Gradients:
        _, tape = forward_value(net, self.state)
        return backward_value(tape, self.target)


LossSpec = Union[PolicyLoss, ValueLoss]


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_tensor: Dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def numeric_gradients(net: Mlp2, loss: LossSpec, eps: float = 1e-5) -> Gradients:
    shifted = net.copy()
    grads: Gradients = {}
    for name in PARAM_NAMES:
        param = getattr(shifted, name)
        numeric = np.zeros_like(param)
        it = np.nditer(param, flags=['multi_index'])
        for _ in it:
            idx = it.multi_index
            original = param[idx]
            param[idx] = original + eps
            plus = loss.value(shifted)
            param[idx] = original - eps
            minus = loss.value(shifted)
            param[idx] = original
            numeric[idx] = (plus - minus) / (2.0 * eps)
        grads[name] = numeric
    return grads


def grad_check(net: Mlp2, loss: LossSpec, eps: float = 1e-5, tol: float = 1e-4,
               analytic: Optional[Gradients] = None) -> GradCheckReport:
    """Compare analytic gradients with central differences, tensor by tensor.

    Relative error is ``|a - n| / max(|a| + |n|, 1e-8)`` on the flattened
    tensor; the report carries the maximum over tensors.
    """
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    analytic = analytic if analytic is not None else loss.gradients(net)
    numeric = numeric_gradients(net, loss, eps)
    per_tensor = {}
    for name in PARAM_NAMES:
        diff = np.linalg.norm(analytic[name] - numeric[name])
        denom = max(np.linalg.norm(analytic[name]) + np.linalg.norm(numeric[name]), 1e-8)
        per_tensor[name] = float(diff / denom)
    report = GradCheckReport(max_rel_error=max(per_tensor.values()), per_tensor=per_tensor, tol=tol)
    logger.debug("grad_check %s: max rel error %.3e", type(loss).__name__, report.max_rel_error)
    return report


def _format_row(values: np.ndarray) -> str:
    return ' '.join(format(float(v), '.17g') for v in values)


def mlp_to_lines(prefix: str, net: Mlp2) -> List[str]:
    """``tensor <prefix>.<name> <dims>`` headers followed by value rows."""
    lines: List[str] = []
    for name in PARAM_NAMES:
        array = getattr(net, name)
        dims = 'x'.join(str(d) for d in array.shape)
        lines.append(f"tensor {prefix}.{name} {dims}")
        if array.ndim == 1:
            lines.append(_format_row(array))
        else:
            lines.extend(_format_row(row) for row in array)
    return lines


def mlp_from_lines(prefix: str, lines: Iterator[str]) -> Mlp2:
    tensors = {}
    for name in PARAM_NAMES:
        header = next(lines, None)
        if header is None:
            raise CheckpointError(f"truncated checkpoint: missing tensor {prefix}.{name}")
        parts = header.split()
        if len(parts) != 3 or parts[0] != 'tensor' or parts[1] != f"{prefix}.{name}":
            raise CheckpointError(f"expected tensor {prefix}.{name}, found {header[:60]!r}")
        try:
            shape = tuple(int(d) for d in parts[2].split('x'))
        except ValueError as exc:
            raise CheckpointError(f"bad shape {parts[2]!r} for {prefix}.{name}") from exc
        rows = 1 if len(shape) == 1 else shape[0]
        width = shape[-1]
        values = []
        for _ in range(rows):
            row = next(lines, None)
            if row is None:
                raise CheckpointError(f"truncated checkpoint inside tensor {prefix}.{name}")
            try:
                parsed = [float(v) for v in row.split()]
            except ValueError as exc:
                raise CheckpointError(f"non-numeric value in tensor {prefix}.{name}") from exc
            if len(parsed) != width:
                raise CheckpointError(f"row of {len(parsed)} values in tensor {prefix}.{name}, expected {width}")
            values.append(parsed)
        tensors[name] = np.array(values[0] if len(shape) == 1 else values, dtype=np.float64).reshape(shape)
    try:
        return Mlp2(tensors['W1'], tensors['b1'], tensors['W2'], tensors['b2'])
    except ValidationError as exc:
        raise CheckpointError(f"{prefix}: {exc}") from exc


__all__ = [
    'GradCheckReport', 'GradTape', 'Gradients', 'LossSpec', 'Mlp2', 'PolicyLoss', 'SgdConfig', 'ValueLoss',
    'accumulate', 'backward_policy', 'backward_value', 'forward_policy', 'forward_value', 'global_norm',
    'grad_check', 'greedy_action', 'mlp_from_lines', 'mlp_to_lines', 'numeric_gradients', 'sample_categorical',
    'sgd_step', 'softmax', 'zero_grads',
]
