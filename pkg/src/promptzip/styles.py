"""Compression-style catalog and the sampling controller.

The catalog holds the fixed set of human-written style instructions
(location focus, abstractive/extractive, readability, format awareness,
task awareness) plus the empty "vanilla" style. The controller samples
uniformly during a warm-up window, then switches to weighted random
sampling that favors styles with better observed task metrics.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field


class UnknownStyle(KeyError):
    """Raised when a style id is not in the catalog."""


@dataclass(frozen=True)
class StyleSpec:
    id: str
    instruction: str


_CATALOG: tuple[StyleSpec, ...] = (
    StyleSpec("vanilla", ""),
    StyleSpec("loc-begin", "Focus on the initial portion of the text."),
    StyleSpec("loc-mid", "Focus on the middle portion of the text."),
    StyleSpec("loc-end", "Focus on the latter portion of the text."),
    StyleSpec(
        "loc-all",
        "Compress the entire text comprehensively, ensuring all parts are condensed effectively.",
    ),
    StyleSpec(
        "style-ab",
        "Make it more abstractive, by paraphrasing in your own words or restructuring the "
        "original text to convey the same meaning in a more concise form.",
    ),
    StyleSpec(
        "style-ex",
        "Make it more extractive, by selecting the most important phrases or sentences to "
        "condense the content.",
    ),
    StyleSpec(
        "readable",
        "Make sure the compressed text is fluent, grammatically correct, and human-readable.",
    ),
    StyleSpec(
        "unreadable",
        "Do not make it human-readable. Abuse of language mixing, abbreviations, "
        "symbols(unicode and emojis) to aggressively compress it.",
    ),
    StyleSpec(
        "format-aware",
        "If the original text has a specific structure or format, maintain the key sentences "
        "from the original to preserve this structure or format.",
    ),
    StyleSpec("for reconstruction", "This is for the reconstruction task."),
    StyleSpec("for summarization", "This is for the summarisation task."),
    StyleSpec("for qa", "This is for the multi-hop QA task."),
    StyleSpec("for reasoning", "This is for the reasoning task."),
)

_BY_ID = {spec.id: spec for spec in _CATALOG}


def catalog() -> list[StyleSpec]:
    """The fixed style catalog in stable order (vanilla first)."""
    return list(_CATALOG)


def get_style(style_id: str) -> StyleSpec:
    try:
        return _BY_ID[style_id]
    except KeyError:
        raise UnknownStyle(style_id) from None


@dataclass
class _StyleRecord:
    trials: int = 0
    metric_sum: float = 0.0
    last_sampled_iter: int = -1


@dataclass
class ControllerConfig:
    warmup_ratio: float = 0.25
    smoothing_alpha: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ValueError("warmup_ratio must be in [0, 1]")
        if self.smoothing_alpha <= 0:
            raise ValueError("smoothing_alpha must be positive")


class StyleStats:
    """Running per-style performance record."""

    def __init__(self) -> None:
        self._records: dict[str, _StyleRecord] = {spec.id: _StyleRecord() for spec in _CATALOG}

    def record_for(self, style_id: str) -> _StyleRecord:
        if style_id not in self._records:
            raise UnknownStyle(style_id)
        return self._records[style_id]

    def update(self, style_id: str, metric: float) -> None:
        record = self.record_for(style_id)
        record.trials += 1
        record.metric_sum += metric

    def mark_sampled(self, style_id: str, iteration: int) -> None:
        self.record_for(style_id).last_sampled_iter = iteration

    def mean(self, style_id: str) -> float:
        record = self.record_for(style_id)
        return record.metric_sum / record.trials if record.trials else 0.0

    def global_mean(self) -> float:
        total_trials = sum(r.trials for r in self._records.values())
        if total_trials == 0:
            return 0.5  # neutral prior before any observation
        return sum(r.metric_sum for r in self._records.values()) / total_trials

    def smoothed_mean(self, style_id: str, alpha: float) -> float:
        record = self.record_for(style_id)
        prior = self.global_mean()
        return (record.metric_sum + alpha * prior) / (record.trials + alpha)

    def to_dict(self) -> dict:
        return {
            sid: {
                "trials": r.trials,
                "metric_sum": r.metric_sum,
                "last_sampled_iter": r.last_sampled_iter,
            }
            for sid, r in self._records.items()
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StyleStats":
        stats = cls()
        for sid, payload in data.items():
            record = stats.record_for(sid)
            record.trials = payload["trials"]
            record.metric_sum = payload["metric_sum"]
            record.last_sampled_iter = payload.get("last_sampled_iter", -1)
        return stats


def update_stats(stats: StyleStats, style_id: str, metric: float) -> StyleStats:
    """Accumulate one observed metric for a style; returns the same stats."""
    stats.update(style_id, metric)
    return stats


def sample_style(
    stats: StyleStats,
    cfg: ControllerConfig,
    iteration: int,
    total_iterations: int,
    rng: random.Random,
) -> StyleSpec:
    """Draw a style: uniform during warm-up, performance-weighted after.

    After warm-up each style's weight is its smoothed mean metric,
    (metric_sum + alpha * global_mean) / (trials + alpha), which keeps
    untried styles at the global mean instead of starving them.
    """
    specs = catalog()
    if iteration < cfg.warmup_ratio * total_iterations:
        choice = rng.choice(specs)
    else:
        weights = [stats.smoothed_mean(s.id, cfg.smoothing_alpha) for s in specs]
        if sum(weights) <= 0:
            choice = rng.choice(specs)
        else:
            choice = rng.choices(specs, weights=weights, k=1)[0]
    stats.mark_sampled(choice.id, iteration)
    return choice
