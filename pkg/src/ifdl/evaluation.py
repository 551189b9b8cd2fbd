"""Split-level evaluation: detection, localization, explanation text metrics, perturbation and α studies."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ifdl.data import FOREIGN_COLORS, QUADRANTS, SECTION_NAMES, SHAPES, ExplanationSections, Label, encode_mask_png
from ifdl.maskdec import binarize, sigmoid_probs
from ifdl.metrics.css import Embedder, css_sections
from ifdl.metrics.detection import detection_scores
from ifdl.metrics.localization import (
    UndefinedMetric,
    exact_mean,
    localization_summary,
    pixel_auc,
    pixel_f1,
    pixel_iou,
)
from ifdl.metrics.morphology import parse_perturbation, perturb_mask
from ifdl.metrics.text import bleu1, cider, rouge_l
from ifdl.model import Stage1Model
from ifdl.stage2 import BOS_ID, Stage2Model, generate_batch, tokens_to_explanation
from ifdl.train.common import TensorData

log = logging.getLogger(__name__)

TEXT_METRICS = ("bleu1", "rouge_l", "cider", "slot_accuracy")
CSS_KEYS = tuple(f"css_{n}" for n in SECTION_NAMES) + ("css_weighted",)


@dataclass
class Stage1Outputs:
    pred_labels: list[int]
    class_probs: np.ndarray  # (N, K)
    mask_probs: np.ndarray  # (N, H, W) float64
    pred_masks: np.ndarray  # (N, H, W) bool


def stage1_outputs(
    model: Stage1Model, data: TensorData, threshold: float = 0.5, batch_size: int = 64
) -> Stage1Outputs:
    model.eval()
    with torch.no_grad():
        class_logits, mask_logits = model.predict(data.images.to(model.dtype), batch_size)
    probs = torch.softmax(class_logits.to(torch.float64), -1).numpy()
    return Stage1Outputs(
        pred_labels=[int(v) for v in class_logits.argmax(-1)],
        class_probs=probs,
        mask_probs=sigmoid_probs(mask_logits),
        pred_masks=binarize(mask_logits, threshold),
    )


def oracle_outputs(data: TensorData) -> Stage1Outputs:
    """Predictions copied from ground truth (pipeline sanity check)."""
    labels = [int(v) for v in data.labels]
    probs = np.eye(len(Label))[labels]
    masks = data.masks.numpy() > 0.5
    return Stage1Outputs(labels, probs, masks.astype(np.float64), masks)


def explain(
    model: Stage2Model, images: torch.Tensor, masks: np.ndarray, alpha: float, batch_size: int = 64
) -> list[ExplanationSections]:
    """Greedy explanations conditioned on the blend of full and mask-gated image features."""
    model.eval()
    out: list[ExplanationSections] = []
    masks_t = torch.as_tensor(np.asarray(masks, dtype=np.float64))
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            sl = slice(start, start + batch_size)
            visual = model.visual(images[sl].to(model.dtype), masks_t[sl].to(model.dtype), alpha)
            out.extend(tokens_to_explanation(t) for t in generate_batch(visual, [BOS_ID], model))
    return out


def flat_text(expl: ExplanationSections) -> str:
    return " ".join(t for t in expl.as_tuple() if t)


def template_slots(expl: ExplanationSections) -> tuple[str | None, str | None, str | None]:
    """(shape, color, quadrant) named in a fixture explanation: first match of each, None if absent."""
    text = flat_text(expl)
    words = text.split()
    shape = next((w for w in words if w in SHAPES), None)
    color = next((w for w in words if w in FOREIGN_COLORS), None)
    quadrant = next((q for q in QUADRANTS if q in text), None)
    return shape, color, quadrant


def text_records(
    ids: Sequence[str],
    predictions: Sequence[ExplanationSections],
    references: Sequence[ExplanationSections],
    embedder: Embedder,
) -> list[dict]:
    """Per-sample BLEU-1, ROUGE-L, CIDEr (IDF over this set), template-slot match and section CSS."""
    cands = [flat_text(p) for p in predictions]
    refs = [flat_text(r) for r in references]
    cider_scores, _ = cider(cands, [[r] for r in refs]) if len(cands) > 1 else ([0.0] * len(cands), 0.0)
    records = []
    for sid, pred, ref, cand, flat_ref, c in zip(ids, predictions, references, cands, refs, cider_scores):
        css = css_sections(pred, ref, embedder, sample_id=sid)
        rec = {"id": sid, "bleu1": bleu1(cand, flat_ref), "rouge_l": rouge_l(cand, flat_ref), "cider": c}
        rec["slot_accuracy"] = float(template_slots(pred) == template_slots(ref))
        rec.update({f"css_{k}": v for k, v in css.to_dict().items()})
        records.append(rec)
    return records


def text_summary(records: Sequence[dict]) -> dict[str, float | None]:
    return {k: exact_mean([r[k] for r in records]) for k in TEXT_METRICS + CSS_KEYS}


def localization_record(sid: str, prob: np.ndarray, pred: np.ndarray, gt: np.ndarray) -> dict:
    try:
        auc = pixel_auc(prob, gt)
    except UndefinedMetric:
        auc = None
    return {"id": sid, "iou": pixel_iou(pred, gt), "f1": pixel_f1(pred, gt), "auc": auc}


@dataclass
class EvalResult:
    per_sample: list[dict]
    report: dict
    pred_masks: dict[str, np.ndarray] = field(default_factory=dict)


def evaluate(
    data: TensorData,
    outputs: Stage1Outputs,
    embedder: Embedder,
    explainer: Stage2Model | None = None,
    mask_source: str = "predicted",
    alpha: float = 0.5,
    perturb: Sequence[str] = (),
    alpha_grid: Sequence[float] | None = None,
    oracle_text: bool = False,
    batch_size: int = 64,
) -> EvalResult:
    """Score one split.

    Localization and explanation metrics cover Tampered samples only (the ones
    with a mask and a reference explanation). ``oracle_text`` copies reference
    explanations instead of generating them.
    """
    order = sorted(range(len(data)), key=lambda i: data.ids[i])
    labels = [int(data.labels[i]) for i in order]
    preds = [outputs.pred_labels[i] for i in order]
    detection = detection_scores(preds, labels)

    tampered = [i for i in order if int(data.labels[i]) == Label.TAMPERED.index]
    gt_masks = data.masks.numpy() > 0.5
    loc = {
        data.ids[i]: localization_record(data.ids[i], outputs.mask_probs[i], outputs.pred_masks[i], gt_masks[i])
        for i in tampered
    }
    report: dict = {
        "n": len(order),
        "detection": detection.to_dict(),
        "localization": localization_summary([loc[data.ids[i]] for i in tampered]),
    }

    with_text = [i for i in tampered if data.records and data.records[i].explanation is not None]
    text: dict[str, dict] = {}
    explanations: dict[str, ExplanationSections] = {}
    if with_text and (oracle_text or explainer is not None):
        ids = [data.ids[i] for i in with_text]
        refs = [data.records[i].explanation for i in with_text]
        images = data.images[with_text]
        cond = outputs.pred_masks[with_text] if mask_source == "predicted" else gt_masks[with_text]

        def generate(masks: np.ndarray, a: float) -> list[ExplanationSections]:
            if oracle_text:
                return list(refs)
            return explain(explainer, images, masks, a, batch_size)

        gens = generate(cond, alpha)
        explanations = dict(zip(ids, gens))
        text = {r["id"]: r for r in text_records(ids, gens, refs, embedder)}
        report["text"] = text_summary(list(text.values()))
        report["text"]["n"] = len(ids)
        report["text"]["mask_source"] = mask_source
        report["text"]["alpha"] = alpha

        if perturb:
            report["perturbation"] = perturbation_study(
                ids, refs, cond, gt_masks[with_text], perturb, generate, alpha, embedder, report["text"]
            )
        if alpha_grid:
            if oracle_text:
                log.warning("alpha sweep skipped: explanations are copied from ground truth")
            else:
                sweep = []
                for a in alpha_grid:
                    summary = text_summary(text_records(ids, generate(cond, a), refs, embedder))
                    sweep.append({"alpha": float(a), **summary})
                report["alpha_sweep"] = sweep
    elif with_text:
        report["text"] = None
        log.warning("no explanation model: text metrics skipped")

    per_sample = []
    for i in order:
        sid = data.ids[i]
        rec = {
            "id": sid,
            "label": Label.from_index(int(data.labels[i])).value,
            "pred_label": Label.from_index(outputs.pred_labels[i]).value,
            "class_probs": [float(p) for p in outputs.class_probs[i]],
        }
        if sid in loc:
            rec.update({k: v for k, v in loc[sid].items() if k != "id"})
        if sid in text:
            rec["explanation"] = explanations[sid].to_dict()
            rec["reference"] = data.records[i].explanation.to_dict()
            rec.update({k: v for k, v in text[sid].items() if k != "id"})
        per_sample.append(rec)
    masks = {data.ids[i]: outputs.pred_masks[i] for i in order}
    return EvalResult(per_sample, report, masks)


def perturbation_study(ids, refs, masks, gt_masks, specs, generate, alpha, embedder, clean: dict) -> dict:
    """Regenerate explanations from dilated/eroded masks; report each metric clean vs perturbed."""
    rows = {"iou": {"clean": exact_mean([pixel_iou(m, g) for m, g in zip(masks, gt_masks)])}}
    rows.update({k: {"clean": clean[k]} for k in TEXT_METRICS + CSS_KEYS})
    names = []
    for spec in specs:
        op, radius = parse_perturbation(spec)
        name = f"{op.value}:{radius}"
        names.append(name)
        moved = np.stack([perturb_mask(m, op, radius) for m in masks])
        summary = text_summary(text_records(ids, generate(moved, alpha), refs, embedder))
        summary["iou"] = exact_mean([pixel_iou(m, g) for m, g in zip(moved, gt_masks)])
        for k, row in rows.items():
            row[name] = summary[k]
            row[f"delta {name}"] = summary[k] - row["clean"]
    return {"perturbations": names, "rows": rows}


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def markdown_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(_fmt(c) for c in row) + " |" for row in rows]
    return "\n".join(lines)


def report_markdown(report: dict) -> str:
    parts = [f"# Evaluation ({report['n']} samples)", "", "## Detection", ""]
    det = report["detection"]
    rows = [(k, v["accuracy"], v["f1"]) for k, v in det["per_class"].items()]
    rows.append(("overall (macro)", det["overall_accuracy"], det["overall_f1"]))
    parts += [markdown_table(("class", "accuracy", "f1"), rows), ""]
    if det["flags"]:
        parts += ["Flags: " + "; ".join(det["flags"]), ""]
    loc = report["localization"]
    parts += ["## Localization (tampered samples)", ""]
    loc_row = (loc["n"], loc["iou"], loc["f1"], loc["auc"], loc["auc_skipped"])
    parts += [markdown_table(("n", "IoU", "F1", "AUC", "AUC skipped"), [loc_row]), ""]
    text = report.get("text")
    if text:
        parts += [f"## Explanations (n={text['n']}, masks: {text['mask_source']}, alpha={text['alpha']})", ""]
        parts += [markdown_table(("metric", "value"), [(k, text[k]) for k in TEXT_METRICS + CSS_KEYS]), ""]
    elif "text" in report:
        parts += ["## Explanations", "", "No explanation model available; text metrics skipped.", ""]
    pert = report.get("perturbation")
    if pert:
        names = pert["perturbations"]
        header = ["metric", "clean"] + [c for n in names for c in (n, f"delta {n}")]
        rows = [[k, row["clean"]] + [row[c] for c in header[2:]] for k, row in pert["rows"].items()]
        parts += ["## Mask perturbation", "", markdown_table(header, rows), ""]
    sweep = report.get("alpha_sweep")
    if sweep:
        keys = TEXT_METRICS + ("css_weighted",)
        rows = [[s["alpha"]] + [s[k] for k in keys] for s in sweep]
        parts += ["## Alpha sweep", "", markdown_table(("alpha",) + keys, rows), ""]
    return "\n".join(parts)


def write_eval(result: EvalResult, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    with (out_dir / "per_sample.jsonl").open("w", encoding="utf-8") as fh:
        for rec in result.per_sample:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    (out_dir / "report.json").write_text(json.dumps(result.report, indent=2, sort_keys=True), encoding="utf-8")
    (out_dir / "report.md").write_text(report_markdown(result.report), encoding="utf-8")
    for sid, mask in result.pred_masks.items():
        (out_dir / "masks" / f"{sid}.png").write_bytes(encode_mask_png(mask))
    return out_dir
