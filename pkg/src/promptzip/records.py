"""Run persistence: candidate records, demonstration pools, checkpoints,
and run manifests.

Everything is plain JSON / JSONL so runs can be diffed, replayed and
aggregated with standard tooling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .engine import AdaptState, Demonstration, DemonstrationPool
from .styles import StyleStats


def write_jsonl(path: str | Path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


def append_jsonl(path: str | Path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --- demonstration pool ------------------------------------------------------


def save_pool(
    path: str | Path,
    pool: DemonstrationPool,
    *,
    run_id: str,
    task: str,
    config: dict,
    style_stats: StyleStats | None = None,
) -> Path:
    payload = {
        "run_id": run_id,
        "task": task,
        "config": config,
        "entries": [demo.to_dict() for demo in pool.entries],
    }
    if style_stats is not None:
        payload["style_stats"] = style_stats.to_dict()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return path


def load_pool(path: str | Path) -> tuple[DemonstrationPool, dict]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    pool = DemonstrationPool(entries=[Demonstration.from_dict(e) for e in payload["entries"]])
    return pool, payload


# --- checkpoints -------------------------------------------------------------


def _rng_state_to_json(state: tuple | None) -> list | None:
    if state is None:
        return None
    version, internal, gauss = state
    return [version, list(internal), gauss]


def _rng_state_from_json(data: list | None) -> tuple | None:
    if data is None:
        return None
    version, internal, gauss = data
    return (version, tuple(internal), gauss)


def save_checkpoint(path: str | Path, state: AdaptState, *, run_id: str, config_digest: str) -> Path:
    payload = {
        "run_id": run_id,
        "config_digest": config_digest,
        "completed_iterations": state.completed_iterations,
        "pool": [demo.to_dict() for demo in state.pool.entries],
        "style_stats": state.stats.to_dict(),
        "rng_state": _rng_state_to_json(state.rng_state),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path: str | Path) -> tuple[AdaptState, dict]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    state = AdaptState(
        completed_iterations=payload["completed_iterations"],
        pool=DemonstrationPool(entries=[Demonstration.from_dict(e) for e in payload["pool"]]),
        stats=StyleStats.from_dict(payload["style_stats"]),
        rng_state=_rng_state_from_json(payload["rng_state"]),
    )
    return state, payload


# --- run manifest ------------------------------------------------------------


@dataclass
class RunManifest:
    run_id: str
    task: str
    dataset: str
    config: dict
    artifacts: dict
    created_at: str = ""

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "task": self.task,
            "dataset": self.dataset,
            "config": self.config,
            "artifacts": self.artifacts,
            "created_at": self.created_at or utc_now_iso(),
        }


def save_manifest(path: str | Path, manifest: RunManifest) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(manifest.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return path
