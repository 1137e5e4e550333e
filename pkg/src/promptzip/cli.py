"""Command-line surface: adapt, compress, evaluate, report, styles.

A single YAML config file declares the task, dataset paths, backends and
pipeline hyperparameters; secrets stay in environment variables named by
the config. Exit codes: 1 config error, 2 backend failure (a resumable
checkpoint is written), 3 dataset error.
"""

from __future__ import annotations

import argparse
import glob as globmod
import hashlib
import json
import sys
from pathlib import Path

import yaml

from . import engine, records
from .engine import AdaptConfig, AdaptState, DemonstrationPool, PoolTooSmall
from .gateway import BackendConfig, GatewayError, build_gateway
from .styles import catalog
from .tasks import (
    EmptyDataset,
    MalformedRecord,
    TaskData,
    TaskKind,
    load_task_data,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BACKEND = 2
EXIT_DATASET = 3


class ConfigError(ValueError):
    pass


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def load_config(path: str | Path) -> dict:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def build_adapt_config(config: dict, args: argparse.Namespace | None = None) -> AdaptConfig:
    """Merge config-file settings, task defaults and CLI overrides."""
    if args is not None and getattr(args, "task", None):
        config["task"] = args.task
    try:
        kind = TaskKind(config.get("task", ""))
    except ValueError:
        raise ConfigError(f"unknown or missing task: {config.get('task')!r}") from None
    section = dict(config.get("adapt", {}))
    # Task defaults for S and the CA variant; S can never exceed M.
    section.setdefault("S", min(engine.TASK_DEFAULT_S[kind], int(section.get("M", 10))))
    section.setdefault("ca_variant", engine.TASK_DEFAULT_CA[kind])
    if args is not None:
        for flag in ("ratio", "seed"):
            value = getattr(args, flag, None)
            if value is not None:
                section[flag] = value
    try:
        compressor = BackendConfig.from_dict(config.get("compressor", {"kind": "mock"}))
        evaluator = BackendConfig.from_dict(config.get("evaluator", {"kind": "mock"}))
        known = set(AdaptConfig.__dataclass_fields__)
        extra = {k: v for k, v in section.items() if k in known}
        unknown = set(section) - known
        if unknown:
            raise ConfigError(f"unknown adapt settings: {sorted(unknown)}")
        return AdaptConfig(compressor=compressor, evaluator=evaluator, **extra)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def config_digest(cfg: AdaptConfig, task: str) -> str:
    payload = {
        "task": task,
        "M": cfg.M,
        "n_style": cfg.n_style,
        "n_icl": cfg.n_icl,
        "ratio": cfg.ratio,
        "ca_variant": cfg.ca_variant,
        "warmup_ratio": cfg.warmup_ratio,
        "S": cfg.S,
        "seed": cfg.seed,
        "compressor": cfg.compressor.to_dict(),
        "evaluator": cfg.evaluator.to_dict(),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def make_run_id(task: str, cfg: AdaptConfig, phase: str) -> str:
    return f"{phase}-{task}-r{cfg.ratio}-seed{cfg.seed}-{config_digest(cfg, task)[:8]}"


def _load_data(config: dict, cfg: AdaptConfig, dataset_key: str = "dataset") -> TaskData:
    kind = TaskKind(config["task"])
    path = config.get(dataset_key) or config.get("dataset")
    if not path:
        raise ConfigError(f"config is missing {dataset_key!r}")
    if not Path(path).exists():
        raise FileNotFoundError(path)
    cot_test = config.get("cot_test_dataset")
    if kind is TaskKind.COT_REASONING:
        if not cot_test:
            raise ConfigError("cot_reasoning requires 'cot_test_dataset' in the config")
        if not Path(cot_test).exists():
            raise FileNotFoundError(cot_test)
    return load_task_data(path, kind, limit=config.get("limit"), cot_test_path=cot_test)


def _gateways(cfg: AdaptConfig, config: dict, out_dir: Path, phase: str):
    record = bool(config.get("record_cassettes"))
    compressor = build_gateway(
        cfg.compressor,
        cassette_path=out_dir / f"{phase}_compressor_cassette.jsonl" if record else None,
    )
    evaluator = build_gateway(
        cfg.evaluator,
        cassette_path=out_dir / f"{phase}_evaluator_cassette.jsonl" if record else None,
    )
    return compressor, evaluator


def _render_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


# --- subcommands -------------------------------------------------------------


def cmd_adapt(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
        cfg = build_adapt_config(config, args)
        task = config["task"]
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        data = _load_data(config, cfg)
    except FileNotFoundError as exc:
        return _fail(EXIT_DATASET, f"dataset not found: {exc}")
    except (MalformedRecord, EmptyDataset) as exc:
        return _fail(EXIT_DATASET, f"bad dataset: {exc}")

    run_id = make_run_id(task, cfg, "adapt")
    out_dir = Path(args.out_dir or config.get("out_dir") or f"runs/{run_id}")
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / "records.jsonl"
    checkpoint_path = out_dir / "checkpoint.json"
    digest = config_digest(cfg, task)

    resume_state = None
    if args.resume:
        if not checkpoint_path.exists():
            return _fail(EXIT_CONFIG, f"--resume given but no checkpoint at {checkpoint_path}")
        resume_state, payload = records.load_checkpoint(checkpoint_path)
        if payload.get("config_digest") != digest:
            return _fail(EXIT_CONFIG, "checkpoint was written by a different configuration")
        print(f"resuming {run_id} from iteration {resume_state.completed_iterations}")
    else:
        records_path.unlink(missing_ok=True)

    compressor, evaluator = _gateways(cfg, config, out_dir, "adapt")

    def on_iteration(state: AdaptState, batch: list[dict]) -> None:
        records.append_jsonl(records_path, batch)
        records.save_checkpoint(checkpoint_path, state, run_id=run_id, config_digest=digest)

    try:
        outcome = engine.adapt(
            cfg,
            data.instances,
            data.kind,
            eval_targets=data.eval_targets,
            compressor=compressor,
            evaluator=evaluator,
            run_id=run_id,
            on_iteration=on_iteration,
            resume_state=resume_state,
        )
    except GatewayError as exc:
        return _fail(EXIT_BACKEND, f"backend failure: {exc} (checkpoint: {checkpoint_path})")
    except ValueError as exc:
        return _fail(EXIT_CONFIG, str(exc))

    pool_path = out_dir / "pool.json"
    records.save_pool(
        pool_path,
        outcome.pool,
        run_id=run_id,
        task=task,
        config=_config_echo(cfg, task),
        style_stats=outcome.stats,
    )
    manifest = records.RunManifest(
        run_id=run_id,
        task=task,
        dataset=str(config.get("dataset")),
        config=_config_echo(cfg, task),
        artifacts={
            "pool": str(pool_path),
            "records": str(records_path),
            "checkpoint": str(checkpoint_path),
        },
    )
    records.save_manifest(out_dir / "manifest.json", manifest)
    print(f"adapted {task}: pool of {len(outcome.pool)} demonstrations -> {pool_path}")
    print(f"queries: {compressor.calls} compressor + {evaluator.calls} evaluator")
    return EXIT_OK


def _config_echo(cfg: AdaptConfig, task: str) -> dict:
    return {
        "task": task,
        "M": cfg.M,
        "n_style": cfg.n_style,
        "n_icl": cfg.n_icl,
        "ratio": cfg.ratio,
        "ca_variant": cfg.ca_variant,
        "warmup_ratio": cfg.warmup_ratio,
        "S": cfg.S,
        "seed": cfg.seed,
        "smoothing_alpha": cfg.smoothing_alpha,
        "compressor": cfg.compressor.to_dict(),
        "evaluator": cfg.evaluator.to_dict(),
    }


def cmd_compress(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
        cfg = build_adapt_config(config, args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    demos = []
    if args.pool:
        try:
            pool, _ = records.load_pool(args.pool)
            demos = engine.select_demonstrations(pool, args.shots or cfg.S)
        except FileNotFoundError:
            return _fail(EXIT_CONFIG, f"pool file not found: {args.pool}")
        except PoolTooSmall as exc:
            return _fail(EXIT_CONFIG, str(exc))
    if args.input and args.input != "-":
        try:
            original = Path(args.input).read_text(encoding="utf-8").strip()
        except OSError as exc:
            return _fail(EXIT_DATASET, f"cannot read input: {exc}")
    else:
        original = sys.stdin.read().strip()
    if not original:
        return _fail(EXIT_DATASET, "input text is empty")
    compressor = build_gateway(cfg.compressor)
    ratio = args.ratio if args.ratio is not None else cfg.ratio
    try:
        compressed = engine.compress(
            original,
            demos,
            ratio,
            compressor,
            request_tag="cli-compress/input",
            temperature=cfg.compressor_temperature,
        )
    except GatewayError as exc:
        return _fail(EXIT_BACKEND, f"backend failure: {exc}")
    print(compressed)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
        cfg = build_adapt_config(config, args)
        task = config["task"]
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        data = _load_data(config, cfg, dataset_key="eval_dataset")
    except FileNotFoundError as exc:
        return _fail(EXIT_DATASET, f"dataset not found: {exc}")
    except (MalformedRecord, EmptyDataset) as exc:
        return _fail(EXIT_DATASET, f"bad dataset: {exc}")

    demos = []
    method = "vanilla"
    if args.pool:
        try:
            pool, _ = records.load_pool(args.pool)
            demos = engine.select_demonstrations(pool, args.shots or cfg.S)
            method = "adapted"
        except FileNotFoundError:
            return _fail(EXIT_CONFIG, f"pool file not found: {args.pool}")
        except PoolTooSmall as exc:
            return _fail(EXIT_CONFIG, str(exc))

    run_id = make_run_id(task, cfg, f"eval-{method}")
    out_dir = Path(args.out_dir or config.get("out_dir") or f"runs/{run_id}")
    out_dir.mkdir(parents=True, exist_ok=True)
    samples_path = out_dir / f"samples-{method}.jsonl"
    samples_path.unlink(missing_ok=True)
    compressor, evaluator = _gateways(cfg, config, out_dir, f"eval-{method}")

    try:
        outcome = engine.evaluate_run(
            data.instances,
            data.kind,
            demos,
            cfg,
            eval_targets=data.eval_targets,
            compressor=compressor,
            evaluator=evaluator,
            run_id=run_id,
            on_sample=lambda row: records.append_jsonl(samples_path, [row]),
        )
    except GatewayError as exc:
        return _fail(EXIT_BACKEND, f"backend failure: {exc} (partial samples: {samples_path})")
    except ValueError as exc:
        return _fail(EXIT_CONFIG, str(exc))

    report = {
        "run_id": run_id,
        "task": task,
        "ratio": cfg.ratio,
        "method": method,
        "shots": len(demos),
        "metrics": outcome.aggregate,
        "samples_path": str(samples_path),
        "created_at": records.utc_now_iso(),
    }
    report_path = out_dir / f"report-{method}.json"
    report_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")

    metric_keys = [k for k in outcome.aggregate if k != "n_samples"]
    headers = ["task", "ratio", "method"] + metric_keys
    row = [task, _fmt(cfg.ratio), method] + [_fmt(outcome.aggregate[k]) for k in metric_keys]
    print(_render_table(headers, [row]))
    print(f"report -> {report_path}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    paths: list[str] = []
    for pattern in args.globs:
        paths.extend(globmod.glob(pattern, recursive=True))
    paths = sorted(set(paths))
    if not paths:
        return _fail(EXIT_CONFIG, f"no report files match {args.globs}")
    seen_runs: set[str] = set()
    rows = []
    for path in paths:
        try:
            report = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
            continue
        run_id = report.get("run_id", path)
        if run_id in seen_runs:
            print(f"warning: duplicate run_id {run_id} ({path}), skipping", file=sys.stderr)
            continue
        seen_runs.add(run_id)
        rows.append(report)
    if not rows:
        return _fail(EXIT_CONFIG, "no readable report files")

    # One table row per (task, ratio, method); metrics averaged over runs,
    # which is how multi-seed repetitions are meant to be combined.
    groups: dict[tuple, list[dict]] = {}
    for report in rows:
        key = (report.get("task", "?"), report.get("ratio", "?"), report.get("method", "?"))
        groups.setdefault(key, []).append(report)

    metric_keys: list[str] = []
    for report in rows:
        for key in report.get("metrics", {}):
            if key not in metric_keys and key != "n_samples":
                metric_keys.append(key)

    headers = ["task", "ratio", "method", "runs", "n"] + metric_keys
    table_rows = []
    out_rows = []
    for key in sorted(groups, key=lambda k: tuple(str(part) for part in k)):
        members = groups[key]
        metrics = {}
        for metric in metric_keys:
            values = [m["metrics"][metric] for m in members if metric in m.get("metrics", {})]
            if values:
                metrics[metric] = sum(values) / len(values)
        n_samples = sum(m.get("metrics", {}).get("n_samples", 0) for m in members)
        task, ratio, method = key
        out_rows.append(
            {
                "task": task,
                "ratio": ratio,
                "method": method,
                "runs": len(members),
                "n_samples": n_samples,
                "metrics": metrics,
                "run_ids": [m.get("run_id") for m in members],
            }
        )
        table_rows.append(
            [str(task), _fmt(ratio), str(method), str(len(members)), _fmt(n_samples)]
            + [_fmt(metrics[k]) if k in metrics else "-" for k in metric_keys]
        )
    print(_render_table(headers, table_rows))
    if args.out:
        records.write_jsonl(args.out, out_rows)
        print(f"rows -> {args.out}")
    return EXIT_OK


def cmd_styles(_args: argparse.Namespace) -> int:
    rows = [[spec.id, spec.instruction or "(no style sentence)"] for spec in catalog()]
    print(_render_table(["id", "instruction"], rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptzip",
        description="Task-adaptive prompt compression with a small compressor model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_adapt = sub.add_parser("adapt", help="build a demonstration pool from a dataset")
    p_adapt.add_argument("--config", required=True)
    p_adapt.add_argument("--out-dir", default=None)
    p_adapt.add_argument("--resume", action="store_true")
    p_adapt.add_argument("--task", default=None, help="override the config task")
    p_adapt.add_argument("--ratio", type=float, default=None)
    p_adapt.add_argument("--seed", type=int, default=None)
    p_adapt.set_defaults(func=cmd_adapt)

    p_compress = sub.add_parser("compress", help="compress one text (file or stdin)")
    p_compress.add_argument("--config", required=True)
    p_compress.add_argument("--pool", default=None)
    p_compress.add_argument("--input", default="-", help="input file, '-' for stdin")
    p_compress.add_argument("--ratio", type=float, default=None)
    p_compress.add_argument("--shots", type=int, default=None, help="demonstrations to use (S)")
    p_compress.set_defaults(func=cmd_compress)

    p_eval = sub.add_parser("evaluate", help="score compressions over a test dataset")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--pool", default=None, help="omit for the vanilla zero-shot baseline")
    p_eval.add_argument("--out-dir", default=None)
    p_eval.add_argument("--task", default=None, help="override the config task")
    p_eval.add_argument("--ratio", type=float, default=None)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--shots", type=int, default=None)
    p_eval.set_defaults(func=cmd_evaluate)

    p_report = sub.add_parser("report", help="aggregate evaluation reports into one table")
    p_report.add_argument("globs", nargs="+", help="report file globs")
    p_report.add_argument("--out", default=None, help="also write rows as JSONL")
    p_report.set_defaults(func=cmd_report)

    p_styles = sub.add_parser("styles", help="print the style catalog")
    p_styles.set_defaults(func=cmd_styles)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
