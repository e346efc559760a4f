"""
rpprec Metrics
Single-relevant-item ranking metrics and the aggregate report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from jinja2 import Environment

from .exceptions import ValidationError

CUTOFFS = (1, 5, 10)
METRIC_NAMES = ('NDCG', 'MRR', 'HR')


def _order_of(order) -> Tuple[int, ...]:
    return tuple(getattr(order, 'order', order))


def ground_truth_rank(order, gt_pos: int) -> int:
    """1-based rank of ``gt_pos`` inside ``order``."""
    positions = _order_of(order)
    try:
        return positions.index(gt_pos) + 1
    except ValueError:
        raise ValidationError(f"ground truth {gt_pos} is absent from the ranking") from None


def _checked_rank(order, gt_pos: int, k: int) -> int:
    size = len(_order_of(order))
    if not 1 <= k <= size:
        raise ValueError(f"cutoff k={k} outside [1, {size}]")
    return ground_truth_rank(order, gt_pos)


def ndcg_at_k(order, gt_pos: int, k: int) -> float:
    rank = _checked_rank(order, gt_pos, k)
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def mrr_at_k(order, gt_pos: int, k: int) -> float:
    rank = _checked_rank(order, gt_pos, k)
    return 1.0 / rank if rank <= k else 0.0


def hit_at_k(order, gt_pos: int, k: int) -> float:
    rank = _checked_rank(order, gt_pos, k)
    return 1.0 if rank <= k else 0.0


_METRIC_FUNCS = {'NDCG': ndcg_at_k, 'MRR': mrr_at_k, 'HR': hit_at_k}


def metric_keys(size: int = 10) -> List[str]:
    return [f"{name}@{k}" for name in METRIC_NAMES for k in CUTOFFS if k <= size]


def score_ranking(order, gt_pos: int) -> Dict[str, float]:
    """All metrics at every cutoff that fits the ranking length."""
    size = len(_order_of(order))
    return {
        f"{name}@{k}": _METRIC_FUNCS[name](order, gt_pos, k)
        for name in METRIC_NAMES for k in CUTOFFS if k <= size
    }


SUMMARY_TEMPLATE = """\
{{ title }}
{{ '=' * title|length }}
users: {{ report.n_users }}  repeats: {{ report.repeats }}{% if report.single_run %}  (single run){% endif %}
{%- if report.failures %}
failed episodes: {{ report.failures }}
{%- endif %}

{% for key in report.keys %}{{ '%-8s'|format(key) }} {{ '%.4f'|format(report.mean[key]) }} +/- {{ '%.4f'|format(report.std[key]) }}
{% endfor %}
{%- if distribution %}
action distribution (best step per user):
{% for pattern, counts in distribution.items() %}  {{ '%-20s'|format(pattern) }} {{ counts|join(' ') }}
{% endfor %}
{%- endif %}"""

_jinja = Environment(autoescape=False, keep_trailing_newline=True)


@dataclass
class MetricReport:
    """Mean and sample standard deviation of each metric across repeats."""

    mean: Dict[str, float]
    std: Dict[str, float]
    n_users: int
    repeats: int
    failures: int = 0
    label: str = ''
    action_distribution: Optional[Dict[str, List[int]]] = None
    keys: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.keys:
            self.keys = list(self.mean)
        for key in self.keys:
            if not -1e-12 <= self.mean[key] <= 1.0 + 1e-12:
                raise ValidationError(f"{key} mean {self.mean[key]} outside [0, 1]")
            if self.std[key] < 0.0:
                raise ValidationError(f"{key} std must be non-negative")

    @property
    def single_run(self) -> bool:
        return self.repeats == 1

    @classmethod
    def from_runs(cls, runs: Sequence[Mapping[str, float]], n_users: int, failures: int = 0,
                  label: str = '', action_distribution: Optional[Dict[str, List[int]]] = None) -> "MetricReport":
        """``runs`` holds one {metric: mean over users} mapping per repeat."""
        if not runs:
            raise ValidationError("no evaluation runs to aggregate")
        keys = list(runs[0])
        mean, std = {}, {}
        for key in keys:
            values = np.array([run[key] for run in runs], dtype=np.float64)
            mean[key] = float(np.mean(values))
            std[key] = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        return cls(mean=mean, std=std, n_users=n_users, repeats=len(runs), failures=failures, label=label,
                   action_distribution=action_distribution, keys=keys)

    def to_table(self) -> str:
        rows = ['\t'.join(('metric', 'mean', 'std', 'n_users', 'repeats'))]
        for key in self.keys:
            rows.append('\t'.join((key, f"{self.mean[key]:.6f}", f"{self.std[key]:.6f}",
                                   str(self.n_users), str(self.repeats))))
        return '\n'.join(rows)

    def to_summary(self) -> str:
        title = f"Evaluation: {self.label}" if self.label else "Evaluation"
        return _jinja.from_string(SUMMARY_TEMPLATE).render(
            title=title, report=self, distribution=self.action_distribution,
        )


def action_distribution_table(distribution: Mapping[str, Sequence[int]]) -> str:
    rows = ['\t'.join(('pattern', 'index', 'count'))]
    for pattern, counts in distribution.items():
        rows.extend('\t'.join((pattern, str(i), str(c))) for i, c in enumerate(counts))
    return '\n'.join(rows)


__all__ = [
    'CUTOFFS', 'MetricReport', 'action_distribution_table', 'ground_truth_rank', 'hit_at_k',
    'metric_keys', 'mrr_at_k', 'ndcg_at_k', 'score_ranking',
]
