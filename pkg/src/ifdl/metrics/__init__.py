from ifdl.metrics.css import (
    SECTION_WEIGHTS,
    HashingEmbedder,
    SectionScores,
    css_sections,
    get_embedder,
    weighted_score,
)
from ifdl.metrics.detection import DetectionReport, detection_scores, macro_average
from ifdl.metrics.localization import UndefinedMetric, pixel_auc, pixel_f1, pixel_iou
from ifdl.metrics.morphology import MorphOp, perturb_mask
from ifdl.metrics.text import bleu1, cider, rouge_l, tokenize

__all__ = [
    "SECTION_WEIGHTS",
    "DetectionReport",
    "HashingEmbedder",
    "MorphOp",
    "SectionScores",
    "UndefinedMetric",
    "bleu1",
    "cider",
    "css_sections",
    "detection_scores",
    "get_embedder",
    "macro_average",
    "perturb_mask",
    "pixel_auc",
    "pixel_f1",
    "pixel_iou",
    "rouge_l",
    "tokenize",
    "weighted_score",
]
