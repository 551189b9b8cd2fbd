"""Judge providers: an HTTP client for a hosted multimodal model and an offline mock."""

from __future__ import annotations

import base64
import json
import os
import re
import threading
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ifdl.data import decode_mask_png
from ifdl.judge.protocol import SCORE_FIELDS, parse_explanation_text
from ifdl.metrics.localization import pixel_iou
from ifdl.metrics.text import tokenize


class JudgeTransportError(RuntimeError):
    """Network or provider failure; retriable."""


class JudgeProvider(Protocol):
    def complete(self, payload: dict) -> str:
        """Send one payload, return the raw text of the model's reply."""


DEFAULT_API_KEY_ENV = "IFDL_JUDGE_API_KEY"


@dataclass
class HTTPJudgeProvider:
    """POSTs the payload as JSON; reads ``choices[0].message.content`` or ``output_text`` from the reply."""

    endpoint: str
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 120.0

    def __post_init__(self):
        if not self.endpoint:
            raise ValueError("judge endpoint is empty")

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, payload: dict) -> str:
        import requests

        try:
            resp = requests.post(self.endpoint, json=payload, headers=self._headers(), timeout=self.timeout)
        except requests.RequestException as exc:
            raise JudgeTransportError(f"judge request failed: {exc}") from exc
        if resp.status_code != 200:
            raise JudgeTransportError(f"judge returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
        except ValueError:
            return resp.text
        if isinstance(body, dict):
            if "output_text" in body:
                return str(body["output_text"])
            try:
                return str(body["choices"][0]["message"]["content"])
            except (KeyError, IndexError, TypeError):
                pass
        return json.dumps(body)


_SECTIONS = re.compile(
    r"Model A explanation:\n(?P<a>.*?)\n\nModel B explanation:\n(?P<b>.*?)\n\nGround-truth rationale:\n(?P<gt>.*)", re.S
)

# rubric dimension -> explanation section it is judged on
_DIMENSION_SECTION = {
    "type": "type",
    "areas": "areas",
    "tampered": "tampered_content",
    "visual": "visual_inconsistencies",
    "summary": "summary",
}


def _token_f1(pred: str, ref: str) -> float:
    p, r = set(tokenize(pred)), set(tokenize(ref))
    if not p and not r:
        return 1.0
    if not p or not r:
        return 0.0
    common = len(p & r)
    return 2 * common / (len(p) + len(r))


class MockJudge:
    """Deterministic offline judge.

    Mask score is 5·IoU against the ground-truth mask; each text dimension is
    5·(token-set F1) between the model's section and the matching rationale
    section. Replies in the same JSON shape a hosted judge is asked for.
    """

    def __init__(self, fail_first: int = 0, garbage: str = "I cannot score this."):
        self.fail_first = fail_first  # reply with garbage this many times per sample (retry tests)
        self.garbage = garbage
        self.calls = 0
        self._seen: dict[str, int] = {}
        self._lock = threading.Lock()

    def _score(self, pred_mask: np.ndarray, gt_mask: np.ndarray, expl: str, rationale: str) -> dict[str, float]:
        pred, gt = parse_explanation_text(expl), parse_explanation_text(rationale)
        out = {"mask": round(5 * pixel_iou(pred_mask, gt_mask), 4)}
        for dim, section in _DIMENSION_SECTION.items():
            out[dim] = round(5 * _token_f1(getattr(pred, section), getattr(gt, section)), 4)
        return {k: out[k] for k in SCORE_FIELDS}

    def complete(self, payload: dict) -> str:
        sid = payload.get("metadata", {}).get("sample_id", "")
        with self._lock:
            self.calls += 1
            n = self._seen.get(sid, 0)
            self._seen[sid] = n + 1
        if n < self.fail_first:
            return self.garbage
        parts = payload["messages"][1]["content"]
        images = {
            p["name"]: decode_mask_png(base64.b64decode(p["data"]))
            for p in parts
            if p["type"] == "image" and p["name"] != "tampered_image"
        }
        text = next(p["text"] for p in parts if p["type"] == "text")
        m = _SECTIONS.match(text)
        if m is None:
            raise JudgeTransportError("mock judge could not read the explanation block")
        gt = images["gt_mask"]
        reply = {
            "model_a": self._score(images["predicted_mask_a"], gt, m["a"], m["gt"]),
            "model_b": self._score(images["predicted_mask_b"], gt, m["b"], m["gt"]),
        }
        return json.dumps(reply)

