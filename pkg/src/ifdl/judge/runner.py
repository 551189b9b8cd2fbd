"""Batch judging with bounded concurrency, retries, a raw-response cache and aggregation."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ifdl.judge.client import JudgeProvider, JudgeTransportError
from ifdl.judge.protocol import (
    SCORE_FIELDS,
    JudgeRequest,
    JudgeResponseError,
    JudgeScores,
    aggregate_scores,
    build_judge_prompt,
    parse_pairwise_response,
    payload_bytes,
)

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 3


@dataclass
class JudgeOutcome:
    sample_id: str
    ok: bool
    scores_a: JudgeScores | None = None
    scores_b: JudgeScores | None = None
    attempts: int = 0
    cached: bool = False
    error: str | None = None
    raw_responses: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "status": "ok" if self.ok else "failed",
            "scores_a": self.scores_a.to_dict() if self.scores_a else None,
            "scores_b": self.scores_b.to_dict() if self.scores_b else None,
            "attempts": self.attempts,
            "cached": self.cached,
            "error": self.error,
        }


def _cache_path(cache_dir: Path, sample_id: str) -> Path:
    safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in sample_id)
    return cache_dir / f"{safe}.json"


def _digest(payload: dict) -> str:
    return hashlib.sha256(payload_bytes(payload)).hexdigest()


def _from_cache(path: Path, digest: str) -> tuple[JudgeScores, JudgeScores, str] | None:
    if not path.exists():
        return None
    try:
        entry = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return None
    if entry.get("payload_sha256") != digest or entry.get("status") != "ok":
        return None
    try:
        a, b = parse_pairwise_response(entry["final"])
    except (JudgeResponseError, KeyError):
        return None
    return a, b, entry["final"]


def _judge_one(
    sample_id: str, payload: dict, provider: JudgeProvider, cache_dir: Path | None, max_attempts: int
) -> JudgeOutcome:
    digest = _digest(payload)
    path = _cache_path(cache_dir, sample_id) if cache_dir is not None else None
    if path is not None:
        hit = _from_cache(path, digest)
        if hit is not None:
            return JudgeOutcome(sample_id, True, hit[0], hit[1], attempts=0, cached=True, raw_responses=[hit[2]])

    outcome = JudgeOutcome(sample_id, False)
    for attempt in range(1, max_attempts + 1):
        outcome.attempts = attempt
        try:
            raw = provider.complete(payload)
        except JudgeTransportError as exc:
            outcome.error = str(exc)
            log.warning("judge %s attempt %d: %s", sample_id, attempt, exc)
            continue
        outcome.raw_responses.append(raw)
        try:
            outcome.scores_a, outcome.scores_b = parse_pairwise_response(raw)
        except JudgeResponseError as exc:
            outcome.error = str(exc)
            log.warning("judge %s attempt %d unparseable: %s; raw=%r", sample_id, attempt, exc, raw[:500])
            continue
        outcome.ok, outcome.error = True, None
        break

    if path is not None:
        entry = {
            "sample_id": sample_id,
            "payload_sha256": digest,
            "status": "ok" if outcome.ok else "failed",
            "responses": outcome.raw_responses,
            "final": outcome.raw_responses[-1] if outcome.ok else None,
            "error": outcome.error,
        }
        path.write_text(json.dumps(entry, indent=2), encoding="utf-8")
    return outcome


def run_judge(
    requests: Sequence[JudgeRequest],
    provider: JudgeProvider,
    model: str = "judge",
    cache_dir: str | Path | None = None,
    max_attempts: int = MAX_ATTEMPTS,
    max_workers: int = 4,
) -> list[JudgeOutcome]:
    """Judge every request; results come back sorted by sample id.

    All payloads are built (and validated) before the first provider call. A
    cached raw response for an identical payload is reused without a call.
    Samples whose replies never parse are marked failed, never scored.
    """
    if max_attempts < 1 or max_workers < 1:
        raise ValueError("max_attempts and max_workers must be >= 1")
    ids = [r.sample_id for r in requests]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample ids in judge requests")
    payloads = [build_judge_prompt(r, model=model) for r in requests]
    cache = Path(cache_dir) if cache_dir is not None else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [
            pool.submit(_judge_one, r.sample_id, p, provider, cache, max_attempts) for r, p in zip(requests, payloads)
        ]
        outcomes = [f.result() for f in futures]
    return sorted(outcomes, key=lambda o: o.sample_id)


def _stats(values: list[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=0))}


def summarize_scores(scores: Sequence[JudgeScores]) -> dict[str, dict[str, float]]:
    """Mean and population std per dimension, plus the two aggregates computed per sample."""
    if not scores:
        raise ValueError("no scores to summarize")
    out = {name: _stats([getattr(s, name) for s in scores]) for name in SCORE_FIELDS}
    aggregates = [aggregate_scores(s) for s in scores]
    out["overall_text"] = _stats([a[0] for a in aggregates])
    out["overall"] = _stats([a[1] for a in aggregates])
    return out


def summarize_outcomes(outcomes: Sequence[JudgeOutcome]) -> dict:
    ordered = sorted(outcomes, key=lambda o: o.sample_id)
    ok = [o for o in ordered if o.ok]
    summary: dict = {
        "n": len(ordered),
        "n_ok": len(ok),
        "failed": [o.sample_id for o in ordered if not o.ok],
    }
    if ok:
        summary["model_a"] = summarize_scores([o.scores_a for o in ok])
        summary["model_b"] = summarize_scores([o.scores_b for o in ok])
    return summary
