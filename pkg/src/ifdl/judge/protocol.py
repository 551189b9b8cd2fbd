"""Pairwise judge request/response protocol and score aggregation."""

from __future__ import annotations

import base64
import io
import json
import re
from dataclasses import asdict, dataclass, field

from PIL import Image

from ifdl.data import SECTION_NAMES, ExplanationSections

SCORE_FIELDS = ("mask", "type", "areas", "tampered", "visual", "summary")
TEXT_WEIGHTS = (0.05, 0.35, 0.40, 0.15, 0.05)  # type, areas, tampered, visual, summary
MASK_WEIGHT = 0.5

DEFAULT_MAX_PAYLOAD_BYTES = 20 * 1024 * 1024

RUBRIC = """\
You are an expert image-forensics reviewer comparing two forgery analysis systems, Model A and Model B.

Inputs, in order:
  1. the tampered image;
  2. the ground-truth tampering mask (white = tampered);
  3. Model A's predicted mask;
  4. Model B's predicted mask;
  5. Model A's explanation, Model B's explanation, and the ground-truth rationale.

Score each model independently on a 0-5 scale (decimals allowed) for:
  mask     - how closely the predicted mask matches the ground-truth mask;
  type     - whether the stated forgery type is correct;
  areas    - whether the described tampered regions match where the image was altered;
  tampered - whether the tampered objects or parts are identified correctly;
  visual   - whether the cited visual inconsistencies are real and consistent with the evidence;
  summary  - overall accuracy of the summary.

Judge against the ground truth, not fluency. Generic or templated wording earns no credit by itself.

Respond with JSON only, exactly in this form:
{"model_a": {"mask": s, "type": s, "areas": s, "tampered": s, "visual": s, "summary": s},
 "model_b": {"mask": s, "type": s, "areas": s, "tampered": s, "visual": s, "summary": s}}
"""


class JudgeValidationError(ValueError):
    """Request is incomplete or inconsistent; raised before any network call."""


class PayloadTooLarge(JudgeValidationError):
    pass


class JudgeResponseError(ValueError):
    """Judge output could not be turned into scores. Retriable; keeps the raw text."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class JudgeParseError(JudgeResponseError):
    pass


class JudgeMissingFieldError(JudgeResponseError):
    def __init__(self, field_name: str, raw: str = ""):
        super().__init__(f"judge response missing field {field_name!r}", raw)
        self.field = field_name


class JudgeRangeError(JudgeResponseError):
    pass


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.7
    top_p: float = 0.95
    max_tokens: int = 8000


@dataclass(frozen=True)
class JudgeScores:
    mask: float
    type: float
    areas: float
    tampered: float
    visual: float
    summary: float

    def __post_init__(self):
        for name in SCORE_FIELDS:
            v = getattr(self, name)
            if not 0.0 <= v <= 5.0:
                raise JudgeRangeError(f"score {name}={v} outside [0, 5]")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, n) for n in SCORE_FIELDS)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def format_explanation(expl: ExplanationSections | str) -> str:
    """Section-labelled plain text, one ``name: text`` line per section."""
    if isinstance(expl, str):
        return expl
    return "\n".join(f"{name}: {text}" for name, text in zip(SECTION_NAMES, expl.as_tuple()))


def parse_explanation_text(text: str) -> ExplanationSections:
    sections = {name: "" for name in SECTION_NAMES}
    for line in text.splitlines():
        name, sep, rest = line.partition(":")
        if sep and name.strip() in sections:
            sections[name.strip()] = rest.strip()
    return ExplanationSections(**sections)


@dataclass(frozen=True)
class JudgeRequest:
    sample_id: str
    tampered_image: bytes
    gt_mask: bytes
    predicted_mask_a: bytes
    predicted_mask_b: bytes
    explanation_a: str
    explanation_b: str
    gt_rationale: str
    decoding: DecodingParams = field(default_factory=DecodingParams)

    def validate(self) -> None:
        for name in (
            "tampered_image",
            "gt_mask",
            "predicted_mask_a",
            "predicted_mask_b",
            "explanation_a",
            "explanation_b",
            "gt_rationale",
        ):
            if not getattr(self, name):
                raise JudgeValidationError(f"sample {self.sample_id}: {name} is empty")
        size = _png_size(self.tampered_image, "tampered_image")
        for name in ("gt_mask", "predicted_mask_a", "predicted_mask_b"):
            if _png_size(getattr(self, name), name) != size:
                raise JudgeValidationError(f"sample {self.sample_id}: {name} size differs from the image")


def _png_size(data: bytes, name: str) -> tuple[int, int]:
    try:
        with Image.open(io.BytesIO(data)) as img:
            return img.size
    except Exception as exc:
        raise JudgeValidationError(f"{name} is not a readable image: {exc}") from None


def _image_part(name: str, data: bytes) -> dict:
    return {"type": "image", "name": name, "media_type": "image/png", "data": base64.b64encode(data).decode("ascii")}


def build_judge_prompt(
    request: JudgeRequest, model: str = "judge", max_payload_bytes: int = DEFAULT_MAX_PAYLOAD_BYTES
) -> dict:
    """Assemble the provider payload: rubric, five images/texts in a fixed order, decoding params."""
    request.validate()
    text = (
        f"Model A explanation:\n{request.explanation_a}\n\n"
        f"Model B explanation:\n{request.explanation_b}\n\n"
        f"Ground-truth rationale:\n{request.gt_rationale}\n"
    )
    payload = {
        "model": model,
        "temperature": request.decoding.temperature,
        "top_p": request.decoding.top_p,
        "max_tokens": request.decoding.max_tokens,
        "response_format": {"type": "json_object"},
        "messages": [
            {"role": "system", "content": RUBRIC},
            {
                "role": "user",
                "content": [
                    _image_part("tampered_image", request.tampered_image),
                    _image_part("gt_mask", request.gt_mask),
                    _image_part("predicted_mask_a", request.predicted_mask_a),
                    _image_part("predicted_mask_b", request.predicted_mask_b),
                    {"type": "text", "text": text},
                ],
            },
        ],
        "metadata": {"sample_id": request.sample_id},
    }
    size = len(payload_bytes(payload))
    if size > max_payload_bytes:
        raise PayloadTooLarge(f"sample {request.sample_id}: payload {size} bytes exceeds limit {max_payload_bytes}")
    return payload


def payload_bytes(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("ascii")


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)


def _extract_object(text: str) -> dict:
    text = (text or "").strip()
    candidates = [text, *_FENCE.findall(text)]
    start, end = text.find("{"), text.rfind("}")
    if 0 <= start < end:
        candidates.append(text[start : end + 1])
    for cand in candidates:
        try:
            obj = json.loads(cand)
        except (json.JSONDecodeError, TypeError):
            continue
        if isinstance(obj, dict):
            return obj
    raise JudgeParseError("no JSON object in judge response", raw=text)


def _scores_from(obj: dict, raw: str) -> JudgeScores:
    values = {}
    for name in SCORE_FIELDS:
        if name not in obj:
            raise JudgeMissingFieldError(name, raw)
        try:
            values[name] = float(obj[name])
        except (TypeError, ValueError):
            raise JudgeParseError(f"field {name!r} is not numeric: {obj[name]!r}", raw) from None
    try:
        return JudgeScores(**values)
    except JudgeRangeError as exc:
        raise JudgeRangeError(str(exc), raw) from None


def parse_judge_response(text: str) -> JudgeScores:
    """Six-field score object -> JudgeScores."""
    return _scores_from(_extract_object(text), text)


def parse_pairwise_response(text: str) -> tuple[JudgeScores, JudgeScores]:
    obj = _extract_object(text)
    for key in ("model_a", "model_b"):
        if not isinstance(obj.get(key), dict):
            raise JudgeMissingFieldError(key, text)
    return _scores_from(obj["model_a"], text), _scores_from(obj["model_b"], text)


def aggregate_scores(scores: JudgeScores) -> tuple[float, float]:
    """(overall_text, overall): weighted text score, then an even blend with the mask score."""
    text_scores = (scores.type, scores.areas, scores.tampered, scores.visual, scores.summary)
    overall_text = sum(w * s for w, s in zip(TEXT_WEIGHTS, text_scores))
    return overall_text, MASK_WEIGHT * scores.mask + (1 - MASK_WEIGHT) * overall_text
