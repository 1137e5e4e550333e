"""Core pipeline: candidate generation, ranking, and inference compression.

The adaptation loop runs M iterations over fresh originals. Each
iteration generates N candidate compressions (style-instructed first,
then in-context from the best pooled demonstration), scores every
candidate on the downstream task through the evaluator model, and banks
the best candidate together with its comparative advantage — the spread
between the best score and the worst (``min`` variant) or the median
(``mid`` variant). At inference time the top-S pooled demonstrations
instruct the compressor few-shot.
"""

from __future__ import annotations

import random
import statistics
from dataclasses import dataclass, field

from .gateway import (
    BackendConfig,
    Gateway,
    GenerationRequest,
    build_gateway,
    count_tokens,
    truncate_tokens,
)
from .styles import ControllerConfig, StyleSpec, StyleStats, get_style, sample_style
from .tasks import EvalTarget, TaskInstance, TaskKind, build_eval_prompt, score_output


class EmptyOriginal(ValueError):
    pass


class PoolTooSmall(ValueError):
    pass


@dataclass
class AdaptConfig:
    M: int = 10
    n_style: int = 3
    n_icl: int = 2
    ratio: float = 0.25
    ca_variant: str = "min"  # min | mid
    warmup_ratio: float = 0.25
    S: int = 1
    seed: int = 0
    compressor: BackendConfig = field(default_factory=BackendConfig)
    evaluator: BackendConfig = field(default_factory=BackendConfig)
    smoothing_alpha: float = 1.0
    compressor_temperature: float = 0.7
    evaluator_temperature: float = 0.0
    eval_max_new_tokens: int = 256
    icl_pool_demos: int = 1  # demonstrations shown to the compressor during adaptation

    def __post_init__(self) -> None:
        if self.M < 1:
            raise ValueError("M must be positive")
        if self.n_style < 0 or self.n_icl < 0 or self.n_style + self.n_icl < 1:
            raise ValueError("need n_style + n_icl >= 1")
        if not 0 < self.ratio <= 1:
            raise ValueError("ratio must be in (0, 1]")
        if self.ca_variant not in ("min", "mid"):
            raise ValueError(f"unknown ca_variant {self.ca_variant!r}")
        if not 0 <= self.warmup_ratio <= 1:
            raise ValueError("warmup_ratio must be in [0, 1]")
        if not 1 <= self.S <= self.M:
            raise ValueError("S must satisfy 1 <= S <= M")

    @property
    def n_candidates(self) -> int:
        return self.n_style + self.n_icl

    def controller_config(self) -> ControllerConfig:
        return ControllerConfig(
            warmup_ratio=self.warmup_ratio, smoothing_alpha=self.smoothing_alpha, seed=self.seed
        )


# Task-specific defaults: demonstrations-per-prompt and CA variant.
TASK_DEFAULT_S = {
    TaskKind.RECONSTRUCTION: 1,
    TaskKind.SUMMARIZATION: 1,
    TaskKind.MULTIHOP_QA: 2,
    TaskKind.COT_REASONING: 3,
}
TASK_DEFAULT_CA = {
    TaskKind.RECONSTRUCTION: "min",
    TaskKind.SUMMARIZATION: "min",
    TaskKind.MULTIHOP_QA: "min",
    TaskKind.COT_REASONING: "mid",
}


@dataclass
class CompressionCandidate:
    origin: str  # "style" | "icl"
    style_id: str | None
    raw_text: str
    text: str
    target_tokens: int
    actual_tokens: int
    metric: float | None = None


@dataclass
class Demonstration:
    original: str
    compressed: str
    ca: float
    metric: float
    iteration: int

    def to_dict(self) -> dict:
        return {
            "original": self.original,
            "compressed": self.compressed,
            "ca": self.ca,
            "metric": self.metric,
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Demonstration":
        return cls(
            original=data["original"],
            compressed=data["compressed"],
            ca=data["ca"],
            metric=data["metric"],
            iteration=data["iteration"],
        )


@dataclass
class DemonstrationPool:
    entries: list[Demonstration] = field(default_factory=list)

    def add(self, demo: Demonstration) -> None:
        self.entries.append(demo)

    def sorted_entries(self) -> list[Demonstration]:
        # Descending CA; earlier iteration wins ties.
        return sorted(self.entries, key=lambda d: (-d.ca, d.iteration))

    def select(self, count: int) -> list[Demonstration]:
        if count < 1:
            raise ValueError("must select at least one demonstration")
        if count > len(self.entries):
            raise PoolTooSmall(f"pool has {len(self.entries)} entries, need {count}")
        return self.sorted_entries()[:count]

    def __len__(self) -> int:
        return len(self.entries)


def select_demonstrations(pool: DemonstrationPool, count: int) -> list[Demonstration]:
    """Top ``count`` pool entries by descending CA (earlier iteration first)."""
    return pool.select(count)


# --- prompt construction -----------------------------------------------------


def target_token_count(original: str, ratio: float) -> int:
    """Token budget for a compression: round(tokens * ratio), at least 1."""
    if not 0 < ratio <= 1:
        raise ValueError("ratio must be in (0, 1]")
    total = count_tokens(original)
    if total == 0:
        raise EmptyOriginal("cannot compress empty text")
    return max(1, int(total * ratio + 0.5))


def build_style_instruction(original: str, target: int, style: StyleSpec) -> str:
    """Zero-shot compression instruction, optionally style-conditioned."""
    head = (
        f"Compress the following text into {target} tokens, "
        "as such you can still understand the original meaning of it."
    )
    if style.instruction:
        head += " " + style.instruction
    return f"{head}\nOriginal Text: {original}\nCompressed Text:"


def build_icl_instruction(original: str, target: int, demos: list[Demonstration]) -> str:
    """Few-shot compression instruction built from pooled demonstrations."""
    if not demos:
        raise ValueError("demos must be nonempty")
    lines = [f"Follow the demonstrations to compress the original text in {target} tokens."]
    for demo in demos:
        lines += ["-------", f"Original text:{demo.original}", f"Compressed text:{demo.compressed}"]
    lines += ["-------", f"Original text:{original}", "Compressed text:"]
    return "\n".join(lines)


_OUTPUT_LABELS = ("Compressed Text:", "Compressed text:")
_CUT_PREFIXES = ("Original Text:", "Original text:", "Example")


def postprocess(raw: str) -> str:
    """Strip the redundant content small compressors tend to emit.

    In order: drop a leading output label, cut at the first demonstration
    delimiter, cut at the first made-up continuation line, trim.
    """
    text = raw.strip()
    for label in _OUTPUT_LABELS:
        if text.startswith(label):
            text = text[len(label) :].lstrip()
            break
    delim = text.find("-------")
    if delim >= 0:
        text = text[:delim]
    kept = []
    for line in text.splitlines():
        if line.lstrip().startswith(_CUT_PREFIXES):
            break
        kept.append(line)
    return "\n".join(kept).strip()


def truncate_to_target(text: str, target: int) -> str:
    """Hard length cap: first ``target`` whitespace tokens."""
    return truncate_tokens(text, target)


def comparative_advantage(values: list[float], variant: str = "min") -> float:
    """Spread of candidate metrics: max-min ("min") or max-median ("mid")."""
    if not values:
        raise ValueError("values must be nonempty")
    if variant == "min":
        return max(values) - min(values)
    if variant == "mid":
        return max(values) - statistics.median(values)
    raise ValueError(f"unknown CA variant {variant!r}")


# --- adaptation loop ---------------------------------------------------------


@dataclass
class AdaptState:
    """Loop-carried state; checkpointable between iterations."""

    completed_iterations: int = 0
    pool: DemonstrationPool = field(default_factory=DemonstrationPool)
    stats: StyleStats = field(default_factory=StyleStats)
    rng_state: tuple | None = None


@dataclass
class AdaptOutcome:
    pool: DemonstrationPool
    stats: StyleStats
    records: list[dict]
    run_id: str


def _compression_request(prompt: str, tag: str, target: int, temperature: float) -> GenerationRequest:
    return GenerationRequest(
        prompt=prompt,
        request_tag=tag,
        max_new_tokens=max(32, 2 * target),
        temperature=temperature,
    )


def adapt(
    cfg: AdaptConfig,
    instances: list[TaskInstance],
    kind: TaskKind,
    eval_targets: dict[str, EvalTarget] | None = None,
    compressor: Gateway | None = None,
    evaluator: Gateway | None = None,
    run_id: str = "adapt",
    on_iteration=None,
    resume_state: AdaptState | None = None,
) -> AdaptOutcome:
    """Build a demonstration pool from the first M instances.

    ``on_iteration(state, records_batch)`` fires after every completed
    iteration so callers can persist records and checkpoints; a backend
    failure mid-iteration propagates after the last completed iteration
    was reported, which makes runs resumable via ``resume_state``.
    """
    kind = TaskKind(kind)
    if len(instances) < cfg.M:
        raise ValueError(f"need at least M={cfg.M} instances, got {len(instances)}")
    eval_targets = eval_targets or {}
    compressor = compressor or build_gateway(cfg.compressor)
    evaluator = evaluator or build_gateway(cfg.evaluator)
    controller_cfg = cfg.controller_config()

    state = resume_state or AdaptState()
    rng = random.Random(cfg.seed)
    if state.rng_state is not None:
        rng.setstate(state.rng_state)

    all_records: list[dict] = []
    for iteration in range(state.completed_iterations, cfg.M):
        instance = instances[iteration]
        original = instance.compressible_text
        target = target_token_count(original, cfg.ratio)

        # Commit all style draws before dispatch so parallel generation
        # cannot perturb the controller's random stream.
        n_icl = cfg.n_icl if len(state.pool) else 0
        n_style = cfg.n_style + cfg.n_icl - n_icl
        plan: list[tuple[str, str | None, str, str]] = []  # origin, style_id, tag, prompt
        for j in range(n_style):
            style = sample_style(state.stats, controller_cfg, iteration, cfg.M, rng)
            tag = f"compress/style:{style.id}/iter:{iteration}/cand:{j}"
            plan.append(("style", style.id, tag, build_style_instruction(original, target, style)))
        if n_icl:
            top = state.pool.sorted_entries()[: cfg.icl_pool_demos]
            icl_prompt = build_icl_instruction(original, target, top)
            for j in range(n_style, n_style + n_icl):
                plan.append(("icl", None, f"compress/icl/iter:{iteration}/cand:{j}", icl_prompt))

        requests_ = [
            _compression_request(prompt, tag, target, cfg.compressor_temperature)
            for _, _, tag, prompt in plan
        ]
        results = compressor.generate_many(requests_)
        candidates = []
        compress_backends = []
        for (origin, style_id, _, _), result in zip(plan, results):
            text = truncate_to_target(postprocess(result.text), target)
            compress_backends.append(result.backend_id)
            candidates.append(
                CompressionCandidate(
                    origin=origin,
                    style_id=style_id,
                    raw_text=result.text,
                    text=text,
                    target_tokens=target,
                    actual_tokens=count_tokens(text),
                )
            )

        # Evaluate: degenerate (empty) compressions score 0 without a query.
        eval_requests = []
        eval_slots = []
        for j, candidate in enumerate(candidates):
            if not candidate.text:
                candidate.metric = 0.0
                continue
            prompt = build_eval_prompt(kind, candidate.text, instance, eval_targets.get(instance.id))
            eval_requests.append(
                GenerationRequest(
                    prompt=prompt,
                    request_tag=f"eval/iter:{iteration}/cand:{j}",
                    max_new_tokens=cfg.eval_max_new_tokens,
                    temperature=cfg.evaluator_temperature,
                )
            )
            eval_slots.append(j)
        eval_backends = {j: evaluator.backend_id for j in range(len(candidates))}
        for j, result in zip(eval_slots, evaluator.generate_many(eval_requests)):
            report = score_output(kind, result.text, instance)
            candidates[j].metric = report.scalar
            eval_backends[j] = result.backend_id

        metrics = [c.metric for c in candidates]
        ca = comparative_advantage(metrics, cfg.ca_variant)
        best_index = max(range(len(candidates)), key=lambda j: (metrics[j], -j))
        best = candidates[best_index]
        state.pool.add(
            Demonstration(
                original=original,
                compressed=best.text,
                ca=ca,
                metric=best.metric,
                iteration=iteration,
            )
        )
        for candidate in candidates:
            if candidate.origin == "style":
                state.stats.update(candidate.style_id, candidate.metric)

        batch = []
        for j, candidate in enumerate(candidates):
            row = {
                "run_id": run_id,
                "iteration": iteration,
                "instance_id": instance.id,
                "candidate_index": j,
                "origin": candidate.origin,
                "target_tokens": candidate.target_tokens,
                "actual_tokens": candidate.actual_tokens,
                "compressed_text": candidate.text,
                "metric": candidate.metric,
                "chosen": j == best_index,
                # ids from the results themselves, so replayed runs match
                "compressor_backend": compress_backends[j],
                "evaluator_backend": eval_backends[j],
            }
            if candidate.style_id is not None:
                row["style_id"] = candidate.style_id
            if j == best_index:
                row["ca"] = ca
            batch.append(row)
        all_records.extend(batch)

        state.completed_iterations = iteration + 1
        state.rng_state = rng.getstate()
        if on_iteration is not None:
            on_iteration(state, batch)

    return AdaptOutcome(pool=state.pool, stats=state.stats, records=all_records, run_id=run_id)


# --- inference ---------------------------------------------------------------


def compress(
    original: str,
    demos: list[Demonstration],
    ratio: float,
    compressor: Gateway,
    request_tag: str = "compress/adhoc",
    temperature: float = 0.7,
) -> str:
    """Compress one text with pooled demonstrations (vanilla zero-shot when
    none are given); output respects the target token budget."""
    target = target_token_count(original, ratio)
    if demos:
        prompt = build_icl_instruction(original, target, demos)
    else:
        prompt = build_style_instruction(original, target, get_style("vanilla"))
    result = compressor.generate(_compression_request(prompt, request_tag, target, temperature))
    return truncate_to_target(postprocess(result.text), target)


@dataclass
class EvalOutcome:
    aggregate: dict
    samples: list[dict]
    run_id: str


def evaluate_run(
    test: list[TaskInstance],
    kind: TaskKind,
    demos: list[Demonstration],
    cfg: AdaptConfig,
    eval_targets: dict[str, EvalTarget] | None = None,
    compressor: Gateway | None = None,
    evaluator: Gateway | None = None,
    run_id: str = "eval",
    on_sample=None,
) -> EvalOutcome:
    """Compress and score every test instance; aggregate metric means.

    The aggregate always reports the achieved compression ratio alongside
    the task metrics — generative compressors routinely land under the
    requested budget, and that drift should be visible in reports.
    """
    kind = TaskKind(kind)
    if not test:
        raise ValueError("test set must be nonempty")
    eval_targets = eval_targets or {}
    compressor = compressor or build_gateway(cfg.compressor)
    evaluator = evaluator or build_gateway(cfg.evaluator)

    samples = []
    for instance in test:
        original_tokens = count_tokens(instance.compressible_text)
        target = target_token_count(instance.compressible_text, cfg.ratio)
        compressed = compress(
            instance.compressible_text,
            demos,
            cfg.ratio,
            compressor,
            request_tag=f"infer-compress/{instance.id}",
            temperature=cfg.compressor_temperature,
        )
        if compressed:
            prompt = build_eval_prompt(kind, compressed, instance, eval_targets.get(instance.id))
            output = evaluator.generate(
                GenerationRequest(
                    prompt=prompt,
                    request_tag=f"infer-eval/{instance.id}",
                    max_new_tokens=cfg.eval_max_new_tokens,
                    temperature=cfg.evaluator_temperature,
                )
            ).text
            report = score_output(kind, output, instance)
        else:
            output = ""
            report = score_output(kind, "", instance)
        actual = count_tokens(compressed)
        row = {
            "run_id": run_id,
            "instance_id": instance.id,
            "original_tokens": original_tokens,
            "target_tokens": target,
            "actual_tokens": actual,
            "achieved_ratio": actual / original_tokens if original_tokens else 0.0,
            "compressed_text": compressed,
            "output_text": output,
        }
        row.update(report.as_flat_dict())
        samples.append(row)
        if on_sample is not None:
            on_sample(row)

    aggregate = aggregate_samples(samples)
    aggregate["n_samples"] = len(samples)
    return EvalOutcome(aggregate=aggregate, samples=samples, run_id=run_id)


_AGGREGATE_KEYS = (
    "scalar",
    "achieved_ratio",
    "rouge1_f1",
    "rouge2_f1",
    "rougeL_f1",
    "em",
    "f1",
    "accuracy",
)


def aggregate_samples(samples: list[dict]) -> dict:
    """Arithmetic means of the metric columns present in the samples."""
    out: dict = {}
    for key in _AGGREGATE_KEYS:
        values = [row[key] for row in samples if key in row]
        if values:
            out[key] = sum(values) / len(values)
    return out


__all__ = [
    "AdaptConfig",
    "AdaptOutcome",
    "AdaptState",
    "CompressionCandidate",
    "Demonstration",
    "DemonstrationPool",
    "EmptyOriginal",
    "EvalOutcome",
    "PoolTooSmall",
    "adapt",
    "build_icl_instruction",
    "build_style_instruction",
    "comparative_advantage",
    "compress",
    "evaluate_run",
    "postprocess",
    "select_demonstrations",
    "target_token_count",
    "truncate_to_target",
]
