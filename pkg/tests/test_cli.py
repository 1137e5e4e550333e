"""CLI integration tests (in-process, mock backends)."""

import io
import json
from pathlib import Path

import pytest
import yaml

from promptzip.cli import main
from promptzip.gateway import count_tokens
from promptzip.records import load_checkpoint, read_jsonl
from promptzip.tasks import TaskKind, mini_corpus_path


def write_config(path: Path, task="reconstruction", **overrides):
    config = {
        "task": task,
        "dataset": str(mini_corpus_path(task)),
        "adapt": {"M": 3, "n_style": 2, "n_icl": 1, "ratio": 0.25, "seed": 5,
                  "warmup_ratio": 0.5, "S": 1},
        "compressor": {"kind": "mock"},
        "evaluator": {"kind": "mock"},
    }
    if task == "cot_reasoning":
        config["cot_test_dataset"] = str(mini_corpus_path(task, test_questions=True))
    config.update(overrides)
    path.write_text(yaml.safe_dump(config))
    return config


def test_styles_lists_catalog_stably(capsys):
    assert main(["styles"]) == 0
    first = capsys.readouterr().out
    assert main(["styles"]) == 0
    second = capsys.readouterr().out
    assert first == second
    lines = [l for l in first.splitlines() if l.strip()]
    assert len(lines) == 2 + 14  # header + rule + catalog rows
    assert "loc-begin" in first and "for reasoning" in first


def test_adapt_writes_pool_records_manifest(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    write_config(cfg_path)
    out_dir = tmp_path / "out"
    assert main(["adapt", "--config", str(cfg_path), "--out-dir", str(out_dir)]) == 0
    pool = json.loads((out_dir / "pool.json").read_text())
    assert len(pool["entries"]) == 3
    assert pool["config"]["M"] == 3
    assert "style_stats" in pool
    records = read_jsonl(out_dir / "records.jsonl")
    assert len(records) == 3 * 3  # M * (n_style + n_icl)
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["run_id"] == pool["run_id"]
    assert (out_dir / "checkpoint.json").exists()


def test_adapt_missing_dataset_exits_3(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    write_config(cfg_path, dataset=str(tmp_path / "nope.jsonl"))
    assert main(["adapt", "--config", str(cfg_path), "--out-dir", str(tmp_path / "o")]) == 3
    assert "nope.jsonl" in capsys.readouterr().err


def test_adapt_bad_config_exits_1(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    write_config(cfg_path, task="reconstruction", adapt={"M": 0})
    assert main(["adapt", "--config", str(cfg_path)]) == 1


def test_adapt_unknown_task_exits_1(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(yaml.safe_dump({"task": "juggling", "dataset": "x"}))
    assert main(["adapt", "--config", str(cfg_path)]) == 1


def test_evaluate_adapted_and_vanilla(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    write_config(cfg_path)
    out_dir = tmp_path / "out"
    assert main(["adapt", "--config", str(cfg_path), "--out-dir", str(out_dir)]) == 0
    assert main(["evaluate", "--config", str(cfg_path), "--out-dir", str(out_dir),
                 "--pool", str(out_dir / "pool.json")]) == 0
    assert main(["evaluate", "--config", str(cfg_path), "--out-dir", str(out_dir)]) == 0

    adapted = json.loads((out_dir / "report-adapted.json").read_text())
    vanilla = json.loads((out_dir / "report-vanilla.json").read_text())
    assert adapted["method"] == "adapted"
    assert vanilla["method"] == "vanilla"
    for report in (adapted, vanilla):
        assert "achieved_ratio" in report["metrics"]
        assert "rougeL_f1" in report["metrics"]
        assert report["metrics"]["n_samples"] == 5
    samples = read_jsonl(out_dir / "samples-adapted.jsonl")
    assert len(samples) == 5
    assert all("compressed_text" in row for row in samples)


def test_evaluate_pool_too_small_exits_1(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    write_config(cfg_path)
    out_dir = tmp_path / "out"
    assert main(["adapt", "--config", str(cfg_path), "--out-dir", str(out_dir)]) == 0
    assert main(["evaluate", "--config", str(cfg_path), "--out-dir", str(out_dir),
                 "--pool", str(out_dir / "pool.json"), "--shots", "9"]) == 1


def test_compress_stdin_to_stdout(tmp_path, capsys, monkeypatch):
    cfg_path = tmp_path / "cfg.yaml"
    write_config(cfg_path)
    out_dir = tmp_path / "out"
    assert main(["adapt", "--config", str(cfg_path), "--out-dir", str(out_dir)]) == 0
    capsys.readouterr()

    text = " ".join(f"tok{i}" for i in range(40))
    monkeypatch.setattr("sys.stdin", io.StringIO(text))
    assert main(["compress", "--config", str(cfg_path), "--pool", str(out_dir / "pool.json"),
                 "--ratio", "0.5", "--shots", "2"]) == 0
    compressed = capsys.readouterr().out.strip()
    assert compressed
    assert count_tokens(compressed) <= 20


def test_compress_shots_exceeding_pool_exits_1(tmp_path, capsys, monkeypatch):
    cfg_path = tmp_path / "cfg.yaml"
    write_config(cfg_path)
    out_dir = tmp_path / "out"
    assert main(["adapt", "--config", str(cfg_path), "--out-dir", str(out_dir)]) == 0
    monkeypatch.setattr("sys.stdin", io.StringIO("some words to squeeze"))
    assert main(["compress", "--config", str(cfg_path), "--pool", str(out_dir / "pool.json"),
                 "--shots", "99"]) == 1


def test_compress_from_file(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    write_config(cfg_path)
    source = tmp_path / "input.txt"
    source.write_text(" ".join(f"tok{i}" for i in range(30)))
    assert main(["compress", "--config", str(cfg_path), "--input", str(source),
                 "--ratio", "0.5"]) == 0
    assert capsys.readouterr().out.strip()


def test_report_aggregates_and_dedupes(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    write_config(cfg_path)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["adapt", "--config", str(cfg_path), "--out-dir", str(out_a)]) == 0
    assert main(["evaluate", "--config", str(cfg_path), "--out-dir", str(out_a),
                 "--pool", str(out_a / "pool.json")]) == 0
    assert main(["evaluate", "--config", str(cfg_path), "--out-dir", str(out_b),
                 "--ratio", "0.5"]) == 0
    capsys.readouterr()

    assert main(["report", str(tmp_path / "*" / "report-*.json")]) == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l.startswith("reconstruction")]
    assert len(lines) == 2  # one adapted @0.25, one vanilla @0.5

    # duplicating the same report file must not duplicate the row
    dup = out_a / "report-copy.json"
    dup.write_text((out_a / "report-adapted.json").read_text())
    assert main(["report", str(tmp_path / "*" / "report-*.json")]) == 0
    captured = capsys.readouterr()
    lines = [l for l in captured.out.splitlines() if l.startswith("reconstruction")]
    assert len(lines) == 2
    assert "duplicate run_id" in captured.err


def test_report_groups_runs_with_same_key(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    write_config(cfg_path)
    pool_dir = tmp_path / "pool-run"
    assert main(["adapt", "--config", str(cfg_path), "--out-dir", str(pool_dir)]) == 0
    # same (task, ratio, method), two seeds -> one averaged row
    for seed, name in ((7, "a"), (8, "b")):
        assert main(["evaluate", "--config", str(cfg_path), "--out-dir", str(tmp_path / name),
                     "--pool", str(pool_dir / "pool.json"), "--seed", str(seed)]) == 0
    capsys.readouterr()
    out_rows = tmp_path / "rows.jsonl"
    assert main(["report", str(tmp_path / "?" / "report-*.json"), "--out", str(out_rows)]) == 0
    table = capsys.readouterr().out
    data_lines = [l for l in table.splitlines() if l.startswith("reconstruction")]
    assert len(data_lines) == 1
    rows = read_jsonl(out_rows)
    assert rows[0]["runs"] == 2
    assert rows[0]["n_samples"] == 10


def test_report_no_match_exits_1(tmp_path, capsys):
    assert main(["report", str(tmp_path / "nothing-*.json")]) == 1


def test_resume_after_backend_outage(tmp_path, capsys):
    """Record a full cassette, replay a truncated copy to force a mid-run
    failure, then restore the full cassette and --resume to completion."""
    cfg_path = tmp_path / "cfg.yaml"
    write_config(cfg_path, record_cassettes=True)
    rec_dir = tmp_path / "recorded"
    assert main(["adapt", "--config", str(cfg_path), "--out-dir", str(rec_dir)]) == 0
    cassette_lines = (rec_dir / "adapt_compressor_cassette.jsonl").read_text().splitlines()
    eval_lines = (rec_dir / "adapt_evaluator_cassette.jsonl").read_text().splitlines()

    replay_compressor = tmp_path / "compressor.jsonl"
    replay_evaluator = tmp_path / "evaluator.jsonl"
    replay_compressor.write_text("\n".join(cassette_lines) + "\n")
    # drop the final evaluator responses: iteration 2 will miss
    replay_evaluator.write_text("\n".join(eval_lines[:-3]) + "\n")

    replay_cfg = tmp_path / "replay.yaml"
    write_config(
        replay_cfg,
        record_cassettes=False,
        compressor={"kind": "replay", "cassette_path": str(replay_compressor)},
        evaluator={"kind": "replay", "cassette_path": str(replay_evaluator)},
    )
    out_dir = tmp_path / "replayed"
    assert main(["adapt", "--config", str(replay_cfg), "--out-dir", str(out_dir)]) == 2
    state, _ = load_checkpoint(out_dir / "checkpoint.json")
    assert 0 < state.completed_iterations < 3
    partial = read_jsonl(out_dir / "records.jsonl")
    assert len(partial) == state.completed_iterations * 3

    # outage over: full cassette is available again
    replay_evaluator.write_text("\n".join(eval_lines) + "\n")
    assert main(["adapt", "--config", str(replay_cfg), "--out-dir", str(out_dir),
                 "--resume"]) == 0
    records = read_jsonl(out_dir / "records.jsonl")
    assert len(records) == 9
    assert [r["iteration"] for r in records] == [0, 0, 0, 1, 1, 1, 2, 2, 2]
    pool = json.loads((out_dir / "pool.json").read_text())
    assert len(pool["entries"]) == 3

    # resuming with a different configuration is refused
    other_cfg = tmp_path / "other.yaml"
    write_config(other_cfg, record_cassettes=False,
                 compressor={"kind": "replay", "cassette_path": str(replay_compressor)},
                 evaluator={"kind": "replay", "cassette_path": str(replay_evaluator)},
                 adapt={"M": 3, "n_style": 2, "n_icl": 1, "ratio": 0.25, "seed": 6,
                        "warmup_ratio": 0.5, "S": 1})
    assert main(["adapt", "--config", str(other_cfg), "--out-dir", str(out_dir),
                 "--resume"]) == 1


def test_resume_without_checkpoint_exits_1(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    write_config(cfg_path)
    assert main(["adapt", "--config", str(cfg_path), "--out-dir", str(tmp_path / "fresh"),
                 "--resume"]) == 1


def test_task_flag_overrides_config(tmp_path, capsys):
    # reconstruction and summarization share the record shape, so the same
    # dataset can be re-scored as a summarization run via --task
    cfg_path = tmp_path / "cfg.yaml"
    write_config(cfg_path, task="reconstruction")
    out_dir = tmp_path / "out"
    assert main(["adapt", "--config", str(cfg_path), "--out-dir", str(out_dir),
                 "--task", "summarization"]) == 0
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["task"] == "summarization"


def test_cot_cli_round_trip(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    write_config(cfg_path, task="cot_reasoning")
    out_dir = tmp_path / "out"
    assert main(["adapt", "--config", str(cfg_path), "--out-dir", str(out_dir)]) == 0
    assert main(["evaluate", "--config", str(cfg_path), "--out-dir", str(out_dir),
                 "--pool", str(out_dir / "pool.json")]) == 0
    report = json.loads((out_dir / "report-adapted.json").read_text())
    assert "accuracy" in report["metrics"]
    assert report["shots"] == 1
