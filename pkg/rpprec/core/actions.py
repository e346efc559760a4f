"""
rpprec Action Catalog
The four pattern action spaces, prompt assembly and optional sentence refinement.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Mapping, Optional, Sequence, Tuple

from .exceptions import ValidationError
from .types import CandidateSet, JointAction, PatternKind, UserRecord, validate_joint_action

if TYPE_CHECKING:  # pragma: no cover
    from .llm_env import LlmBackend

logger = logging.getLogger(__name__)

HISTORY_PLACEHOLDER = '<SeqH1>'
CANDIDATE_PLACEHOLDER = '<SeqH2>'
PLACEHOLDER_RE = re.compile(r'<SeqH\d+>')
KNOWN_PLACEHOLDERS = (HISTORY_PLACEHOLDER, CANDIDATE_PLACEHOLDER)

DEFAULT_CATALOG_PATH = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'data', 'catalog.json')
CATALOG_VERSION = 1

DEFAULT_REFINE_INSTRUCTION = (
    "Please refine this sentence to effectively prompt LLMs for recommendations"
)

# Placeholders each pattern must carry, by exact count.
_REQUIRED_PLACEHOLDERS: Dict[PatternKind, Dict[str, int]] = {
    PatternKind.ROLE_PLAYING: {},
    PatternKind.HISTORY_RECORDS: {HISTORY_PLACEHOLDER: 1},
    PatternKind.REASONING_GUIDANCE: {CANDIDATE_PLACEHOLDER: 1},
    PatternKind.OUTPUT_FORMAT: {},
}


def placeholder_counts(text: str) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for match in PLACEHOLDER_RE.findall(text):
        counts[match] = counts.get(match, 0) + 1
    return counts


def check_template(kind: PatternKind, template: str) -> None:
    """Raise ValidationError unless ``template`` carries exactly the placeholders ``kind`` requires."""
    if not template or not template.strip():
        raise ValidationError("empty template", pattern=kind.key)
    counts = placeholder_counts(template)
    unknown = sorted(set(counts) - set(KNOWN_PLACEHOLDERS))
    if unknown:
        raise ValidationError(f"template references unknown placeholder {unknown[0]}", pattern=kind.key)
    if counts != _REQUIRED_PLACEHOLDERS[kind]:
        raise ValidationError(
            f"template placeholders {counts or 'none'} do not match required {_REQUIRED_PLACEHOLDERS[kind] or 'none'}",
            pattern=kind.key,
        )


@dataclass(frozen=True)
class SentenceAction:
    pattern: PatternKind
    index: int
    template: str

    def __post_init__(self):
        check_template(self.pattern, self.template)


@dataclass(frozen=True)
class LengthAction:
    index: int
    increment: int

    def __post_init__(self):
        if self.increment < 0:
            raise ValidationError(f"increment must be non-negative, got {self.increment}",
                                  pattern=PatternKind.HISTORY_RECORDS.key)


@dataclass(frozen=True)
class AssembledPrompt:
    text: str
    used_history_len: int
    action: JointAction


@dataclass(frozen=True)
class ActionCatalog:
    """Sentence choices for three patterns plus length increments for history."""

    role_sentences: Tuple[SentenceAction, ...]
    history_template: str
    reasoning_sentences: Tuple[SentenceAction, ...]
    output_sentences: Tuple[SentenceAction, ...]
    history_increments: Tuple[LengthAction, ...]
    l0: int = 1

    def __post_init__(self):
        check_template(PatternKind.HISTORY_RECORDS, self.history_template)
        for kind, options in (
            (PatternKind.ROLE_PLAYING, self.role_sentences),
            (PatternKind.REASONING_GUIDANCE, self.reasoning_sentences),
            (PatternKind.OUTPUT_FORMAT, self.output_sentences),
        ):
            if not options:
                raise ValidationError("no sentence choices", pattern=kind.key)
            if len({s.template for s in options}) != len(options):
                raise ValidationError("duplicate sentence choices", pattern=kind.key)
        if not self.history_increments:
            raise ValidationError("no length increments", pattern=PatternKind.HISTORY_RECORDS.key)
        if self.l0 < 1:
            raise ValidationError(f"l0 must be at least 1, got {self.l0}", pattern=PatternKind.HISTORY_RECORDS.key)

    @property
    def sizes(self) -> Dict[PatternKind, int]:
        return {
            PatternKind.ROLE_PLAYING: len(self.role_sentences),
            PatternKind.HISTORY_RECORDS: len(self.history_increments),
            PatternKind.REASONING_GUIDANCE: len(self.reasoning_sentences),
            PatternKind.OUTPUT_FORMAT: len(self.output_sentences),
        }

    @property
    def joint_space_size(self) -> int:
        total = 1
        for size in self.sizes.values():
            total *= size
        return total

    def sentence(self, kind: PatternKind, index: int) -> SentenceAction:
        options = {
            PatternKind.ROLE_PLAYING: self.role_sentences,
            PatternKind.REASONING_GUIDANCE: self.reasoning_sentences,
            PatternKind.OUTPUT_FORMAT: self.output_sentences,
        }.get(kind)
        if options is None:
            raise ValidationError("pattern has no sentence choices", pattern=kind.key)
        if not 0 <= index < len(options):
            raise ValidationError(f"index {index} out of range for {len(options)} sentences", pattern=kind.key)
        return options[index]

    def increment(self, index: int) -> LengthAction:
        if not 0 <= index < len(self.history_increments):
            raise ValidationError(
                f"index {index} out of range for {len(self.history_increments)} increments",
                pattern=PatternKind.HISTORY_RECORDS.key,
            )
        return self.history_increments[index]

    def templates(self, action: JointAction) -> Dict[PatternKind, str]:
        """Unsubstituted templates selected by ``action`` in pattern order."""
        return {
            PatternKind.ROLE_PLAYING: self.sentence(PatternKind.ROLE_PLAYING, action[PatternKind.ROLE_PLAYING]).template,
            PatternKind.HISTORY_RECORDS: self.history_template,
            PatternKind.REASONING_GUIDANCE: self.sentence(
                PatternKind.REASONING_GUIDANCE, action[PatternKind.REASONING_GUIDANCE]).template,
            PatternKind.OUTPUT_FORMAT: self.sentence(PatternKind.OUTPUT_FORMAT, action[PatternKind.OUTPUT_FORMAT]).template,
        }

    def history_index_for(self, target_len: int) -> int:
        """Smallest increment whose first step from l0 reaches ``target_len``; the largest when none does."""
        reaching = [a for a in self.history_increments if self.l0 + a.increment >= target_len]
        if reaching:
            return min(reaching, key=lambda a: a.increment).index
        return max(self.history_increments, key=lambda a: a.increment).index

    def to_dict(self) -> Dict[str, object]:
        return {
            'version': CATALOG_VERSION,
            'l0': self.l0,
            'history_increments': [a.increment for a in self.history_increments],
            'patterns': {
                PatternKind.ROLE_PLAYING.key: [s.template for s in self.role_sentences],
                PatternKind.HISTORY_RECORDS.key: self.history_template,
                PatternKind.REASONING_GUIDANCE.key: [s.template for s in self.reasoning_sentences],
                PatternKind.OUTPUT_FORMAT.key: [s.template for s in self.output_sentences],
            },
        }


def catalog_from_dict(data: Mapping[str, object]) -> ActionCatalog:
    if int(data.get('version', CATALOG_VERSION)) != CATALOG_VERSION:
        raise ValidationError(f"unsupported catalog version {data.get('version')!r}")
    patterns = data.get('patterns')
    if not isinstance(patterns, Mapping):
        raise ValidationError("catalog has no 'patterns' section")

    def _sentences(kind: PatternKind) -> Tuple[SentenceAction, ...]:
        raw = patterns.get(kind.key)
        if not isinstance(raw, list):
            raise ValidationError("expected a list of sentences", pattern=kind.key)
        return tuple(SentenceAction(kind, i, str(text)) for i, text in enumerate(raw))

    history = patterns.get(PatternKind.HISTORY_RECORDS.key)
    if not isinstance(history, str):
        raise ValidationError("expected a single template", pattern=PatternKind.HISTORY_RECORDS.key)
    increments = data.get('history_increments', [1, 2, 4, 8])
    return ActionCatalog(
        role_sentences=_sentences(PatternKind.ROLE_PLAYING),
        history_template=history,
        reasoning_sentences=_sentences(PatternKind.REASONING_GUIDANCE),
        output_sentences=_sentences(PatternKind.OUTPUT_FORMAT),
        history_increments=tuple(LengthAction(i, int(inc)) for i, inc in enumerate(increments)),
        l0=int(data.get('l0', 1)),
    )


def load_catalog(path: Optional[str] = None) -> ActionCatalog:
    """Load a catalog file; the packaged default when ``path`` is None."""
    path = path or DEFAULT_CATALOG_PATH
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot load catalog {path}: {exc}") from exc
    catalog = catalog_from_dict(data)
    logger.debug("Loaded catalog %s with sizes %s", path, {k.key: v for k, v in catalog.sizes.items()})
    return catalog


def _quote(title: str) -> str:
    return f'"{title}"'


def render_history_list(user: UserRecord, length: int) -> str:
    recent = list(reversed(user.history))[:max(length, 0)]
    return ', '.join(_quote(item.title) for item in recent)


def render_candidate_list(cands: CandidateSet) -> str:
    return ', '.join(f"{pos}. {_quote(item.title)}" for pos, item in enumerate(cands.items, start=1))


def history_sentence(user: UserRecord, length: int, template: str = "I've watched these movies <SeqH1> recently.") -> str:
    """Fill the history template with the ``length`` most recent titles, newest first."""
    if length < 1:
        raise ValueError(f"history length must be at least 1, got {length}")
    return template.replace(HISTORY_PLACEHOLDER, render_history_list(user, min(length, len(user.history))))


def apply_length_action(l_prev: int, action, history_len: int) -> int:
    increment = action.increment if isinstance(action, LengthAction) else int(action)
    if l_prev < 1:
        raise ValueError(f"previous length must be at least 1, got {l_prev}")
    if increment < 0:
        raise ValueError(f"increment must be non-negative, got {increment}")
    return min(l_prev + increment, history_len)


def assemble(
    user: UserRecord,
    cands: CandidateSet,
    action: JointAction,
    l_t: int,
    catalog: ActionCatalog,
    templates: Optional[Mapping[PatternKind, str]] = None,
) -> AssembledPrompt:
    """Build the prompt for ``action``; ``templates`` overrides the catalog text (refined sentences)."""
    validate_joint_action(action, catalog.sizes)
    chosen = catalog.templates(action)
    if templates:
        chosen.update(templates)
    used = min(max(l_t, 1), len(user.history))
    values = {
        HISTORY_PLACEHOLDER: render_history_list(user, used),
        CANDIDATE_PLACEHOLDER: render_candidate_list(cands),
    }
    lines: List[str] = []
    for kind in PatternKind:
        template = chosen[kind]
        for name in PLACEHOLDER_RE.findall(template):
            if name not in values:
                raise ValidationError(f"template references placeholder {name} with no data", pattern=kind.key)
        lines.append(PLACEHOLDER_RE.sub(lambda m: values[m.group(0)], template))
    return AssembledPrompt(text='\n'.join(lines), used_history_len=used, action=action)


class SentenceRefiner:
    """Rewrites selected templates through a secondary LLM.

    Replies are cached per (sentence, model). A failed call or a reply that
    drops or invents placeholders keeps the original sentence.
    """

    def __init__(self, backend: "LlmBackend", instruction: str = DEFAULT_REFINE_INSTRUCTION,
                 model: str = '', temperature: float = 0.2):
        self.backend = backend
        self.instruction = instruction
        self.model = model or getattr(backend, 'name', 'refiner')
        self.temperature = temperature
        self._cache: Dict[Tuple[str, str], str] = {}
        self._lock = threading.Lock()
        self.calls = 0
        self.failures = 0
        self.rejected = 0
        self.cache_hits = 0

    def build_request(self, sentence: str) -> str:
        return f"{self.instruction}\n{sentence}"

    def _clean(self, reply: str) -> str:
        text = ' '.join(reply.split())
        if len(text) >= 2 and text[0] == text[-1] and text[0] in '"\'':
            text = text[1:-1].strip()
        return text

    def refine_one(self, sentence: str) -> str:
        key = (sentence, self.model)
        with self._lock:
            cached = self._cache.get(key)
            if cached is not None:
                self.cache_hits += 1
                return cached
            self.calls += 1
        try:
            reply = self.backend.complete(self.build_request(sentence), self.temperature)
        except Exception as exc:  # noqa: BLE001 - any refiner failure falls back
            with self._lock:
                self.failures += 1
            logger.warning("Refiner call failed, keeping original sentence: %s", exc)
            return sentence

        refined = self._clean(reply or '')
        if not refined or placeholder_counts(refined) != placeholder_counts(sentence):
            with self._lock:
                self.rejected += 1
            logger.warning("Refiner reply %r changed placeholders or was empty; keeping original", refined[:80])
            refined = sentence
        with self._lock:
            self._cache[key] = refined
        return refined

    def refine(self, sentences: Sequence[str]) -> List[str]:
        return [self.refine_one(sentence) for sentence in sentences]

    def refine_templates(self, catalog: ActionCatalog, action: JointAction) -> Dict[PatternKind, str]:
        chosen = catalog.templates(action)
        refined = self.refine([chosen[kind] for kind in PatternKind])
        return dict(zip(PatternKind, refined))

    def stats(self) -> Dict[str, int]:
        with self._lock:
            return {
                'calls': self.calls,
                'failures': self.failures,
                'rejected': self.rejected,
                'cache_hits': self.cache_hits,
                'cached': len(self._cache),
            }


__all__ = [
    'ActionCatalog', 'AssembledPrompt', 'LengthAction', 'SentenceAction', 'SentenceRefiner',
    'HISTORY_PLACEHOLDER', 'CANDIDATE_PLACEHOLDER', 'DEFAULT_REFINE_INSTRUCTION', 'DEFAULT_CATALOG_PATH',
    'apply_length_action', 'assemble', 'catalog_from_dict', 'check_template', 'history_sentence',
    'load_catalog', 'render_candidate_list', 'render_history_list',
]
