"""Dataset records, manifests, mask codec, stratified splits and the synthetic forgery fixture."""

from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image, ImageDraw


class Label(Enum):
    REAL = "real"
    FULL_SYNTHETIC = "full_synthetic"
    TAMPERED = "tampered"

    @property
    def index(self) -> int:
        return _LABEL_ORDER.index(self)

    @classmethod
    def from_index(cls, index: int) -> "Label":
        return _LABEL_ORDER[index]


_LABEL_ORDER = (Label.REAL, Label.FULL_SYNTHETIC, Label.TAMPERED)
NUM_CLASSES = len(_LABEL_ORDER)


class ManifestError(ValueError):
    """Raised for unreadable or invalid manifest content."""


SECTION_NAMES = ("type", "areas", "tampered_content", "visual_inconsistencies", "summary")


@dataclass(frozen=True)
class ExplanationSections:
    type: str = ""
    areas: str = ""
    tampered_content: str = ""
    visual_inconsistencies: str = ""
    summary: str = ""

    def as_tuple(self) -> tuple[str, str, str, str, str]:
        return tuple(getattr(self, name) for name in SECTION_NAMES)  # type: ignore[return-value]

    def to_dict(self) -> dict[str, str]:
        return {name: getattr(self, name) for name in SECTION_NAMES}

    @classmethod
    def from_dict(cls, payload: dict) -> "ExplanationSections":
        unknown = set(payload) - set(SECTION_NAMES)
        if unknown:
            raise ValueError(f"unknown explanation sections: {sorted(unknown)}")
        missing = [name for name in SECTION_NAMES if name not in payload]
        if missing:
            raise ValueError(f"explanation missing sections: {missing}")
        return cls(**{name: str(payload[name]) for name in SECTION_NAMES})


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: Path
    label: Label
    mask_path: Path | None = None
    explanation: ExplanationSections | None = None


@dataclass
class DatasetManifest:
    records: list[SampleRecord]
    root: Path

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_label(self, label: Label) -> list[SampleRecord]:
        return [r for r in self.records if r.label is label]


# ---------------------------------------------------------------------------
# mask / image codec


def encode_mask_png(mask: np.ndarray) -> bytes:
    """Encode a boolean H×W mask as a single-channel 8-bit PNG with values 0/255."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.shape[0] == 0 or mask.shape[1] == 0:
        raise ValueError(f"mask must be a non-empty 2-D array, got shape {mask.shape}")
    buf = io.BytesIO()
    Image.fromarray(np.where(mask.astype(bool), 255, 0).astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def decode_mask_png(data: bytes) -> np.ndarray:
    """Decode a single-channel 8-bit PNG; pixels >= 128 are tampered."""
    with Image.open(io.BytesIO(data)) as img:
        if img.format != "PNG":
            raise ValueError(f"mask must be PNG, got {img.format}")
        if img.mode != "L":
            raise ValueError(f"mask must be single-channel 8-bit (mode 'L'), got mode {img.mode!r}")
        arr = np.asarray(img, dtype=np.uint8)
    return arr >= 128


def read_mask(path: str | Path) -> np.ndarray:
    return decode_mask_png(Path(path).read_bytes())


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    Path(path).write_bytes(encode_mask_png(mask))


def read_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit RGB PNG as an H×W×3 uint8 array."""
    with Image.open(path) as img:
        if img.mode != "RGB":
            raise ValueError(f"{path}: expected 8-bit RGB image, got mode {img.mode!r}")
        return np.asarray(img, dtype=np.uint8).copy()


def image_to_tensor(image: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """H×W×3 uint8 -> 3×H×W tensor in [0, 1]."""
    return torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1).to(dtype) / 255.0


def load_image_tensor(path: str | Path, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    return image_to_tensor(read_image(path), dtype)


def _image_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as img:
        return img.height, img.width


# ---------------------------------------------------------------------------
# manifest I/O


def _record_from_json(obj: dict, root: Path, lineno: int) -> SampleRecord:
    if not isinstance(obj, dict):
        raise ManifestError(f"line {lineno}: expected an object")
    for key in ("id", "image", "label"):
        if key not in obj:
            raise ManifestError(f"line {lineno}: missing field {key!r}")
    unknown = set(obj) - {"id", "image", "label", "mask", "explanation"}
    if unknown:
        raise ManifestError(f"line {lineno}: unknown fields {sorted(unknown)}")
    try:
        label = Label(obj["label"])
    except ValueError:
        raise ManifestError(f"line {lineno}: unknown label {obj['label']!r}") from None

    mask_path = root / obj["mask"] if obj.get("mask") else None
    if label is Label.TAMPERED and mask_path is None:
        raise ManifestError(f"line {lineno}: tampered record {obj['id']!r} has no mask")

    explanation = None
    if obj.get("explanation") is not None:
        try:
            explanation = ExplanationSections.from_dict(obj["explanation"])
        except ValueError as exc:
            raise ManifestError(f"line {lineno}: {exc}") from None

    return SampleRecord(
        id=str(obj["id"]),
        image_path=root / obj["image"],
        label=label,
        mask_path=mask_path,
        explanation=explanation,
    )


def _validate_record(record: SampleRecord, lineno: int) -> None:
    if not record.image_path.is_file():
        raise ManifestError(f"line {lineno}: image not found: {record.image_path}")
    if record.mask_path is None:
        return
    if not record.mask_path.is_file():
        raise ManifestError(f"line {lineno}: mask not found: {record.mask_path}")
    try:
        mask = read_mask(record.mask_path)
    except ValueError as exc:
        raise ManifestError(f"line {lineno}: {exc}") from None
    if mask.shape != _image_size(record.image_path):
        raise ManifestError(
            f"line {lineno}: mask shape {mask.shape} differs from image shape {_image_size(record.image_path)}"
        )
    if record.label is Label.REAL and mask.any():
        raise ManifestError(f"line {lineno}: real record {record.id!r} has a non-empty mask")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a line-delimited JSON manifest; relative paths resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent
    records: list[SampleRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            record = _record_from_json(obj, root, lineno)
            if record.id in seen:
                raise ManifestError(f"line {lineno}: duplicate id {record.id!r}")
            _validate_record(record, lineno)
            seen.add(record.id)
            records.append(record)
    return DatasetManifest(records=records, root=root)


def _relpath(path: Path, root: Path) -> str:
    try:
        return path.relative_to(root).as_posix()
    except ValueError:
        return str(path)


def manifest_lines(manifest: DatasetManifest, root: Path | None = None) -> list[str]:
    root = manifest.root if root is None else root
    lines = []
    for r in manifest.records:
        obj: dict = {"id": r.id, "image": _relpath(r.image_path, root), "label": r.label.value}
        if r.mask_path is not None:
            obj["mask"] = _relpath(r.mask_path, root)
        if r.explanation is not None:
            obj["explanation"] = r.explanation.to_dict()
        lines.append(json.dumps(obj, sort_keys=False))
    return lines


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    text = "".join(line + "\n" for line in manifest_lines(manifest, root=path.parent))
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# stratified split


class SplitWarning(UserWarning):
    pass


def stratified_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties go to the earlier split."""
    exact = [n * r for r in ratios]
    counts = [math.floor(x + 1e-9) for x in exact]
    leftover = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def split_dataset(
    manifest: DatasetManifest,
    ratios: Sequence[float] = (0.7, 0.1, 0.2),
    seed: int = 0,
    strict: bool = False,
) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Split into train/val/test, stratified by label.

    Records of each class are shuffled with ``seed`` and apportioned so that every
    per-class count is within one sample of its exact share. A class that ends up
    absent from some split is reported through :class:`SplitWarning`, or raised as
    ``ValueError`` when ``strict``.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive fractions summing to 1, got {ratios}")

    parts: list[list[SampleRecord]] = [[], [], []]
    problems = []
    for label in _LABEL_ORDER:
        members = manifest.by_label(label)
        if not members:
            continue
        rng = np.random.default_rng([seed, label.index])
        order = rng.permutation(len(members))
        counts = stratified_counts(len(members), ratios)
        start = 0
        for split_idx, count in enumerate(counts):
            parts[split_idx].extend(members[i] for i in order[start : start + count])
            start += count
            if count == 0:
                problems.append(f"class {label.value} ({len(members)} samples) gets 0 in split {split_idx}")
    if problems:
        msg = "; ".join(problems)
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, SplitWarning, stacklevel=2)
    return tuple(DatasetManifest(records=p, root=manifest.root) for p in parts)  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# synthetic fixture

FOREIGN_COLORS: dict[str, tuple[int, int, int]] = {
    "red": (215, 35, 35),
    "green": (40, 195, 50),
    "blue": (35, 70, 220),
    "yellow": (230, 215, 40),
    "magenta": (210, 45, 200),
    "cyan": (40, 205, 215),
}

_NATIVE_COLORS = ((118, 108, 96), (92, 100, 118), (138, 128, 108), (100, 118, 98), (128, 112, 120))

SHAPES = ("rectangle", "ellipse")

QUADRANTS = ("top left", "top right", "bottom left", "bottom right")


@dataclass(frozen=True)
class FixtureConfig:
    image_size: int = 64
    counts: tuple[int, int, int] = (200, 200, 200)  # real, full_synthetic, tampered
    shapes: tuple[str, ...] = SHAPES
    colors: tuple[str, ...] = tuple(FOREIGN_COLORS)
    # paste side length as a fraction of image_size; a fixed size keeps the shape
    # identifiable from its pixel footprint
    paste_min: float = 0.45
    paste_max: float = 0.45
    texture_sigma: float = 18.0

    def __post_init__(self):
        if self.image_size < 16:
            raise ValueError("image_size must be >= 16")
        if len(self.counts) != 3 or any(c < 0 for c in self.counts):
            raise ValueError(f"counts must be three non-negative integers, got {self.counts}")
        unknown = set(self.shapes) - set(SHAPES)
        if unknown or not self.shapes:
            raise ValueError(f"shapes must be drawn from {SHAPES}, got {self.shapes}")
        unknown = set(self.colors) - set(FOREIGN_COLORS)
        if unknown or not self.colors:
            raise ValueError(f"colors must be drawn from {sorted(FOREIGN_COLORS)}, got {self.colors}")
        if not 0 < self.paste_min <= self.paste_max < 1:
            raise ValueError("need 0 < paste_min <= paste_max < 1")


@dataclass(frozen=True)
class PasteInfo:
    shape: str
    color: str
    quadrant: str
    box: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive


def explanation_for(info: PasteInfo) -> ExplanationSections:
    s, c, q = info.shape, info.color, info.quadrant
    return ExplanationSections(
        type="tampered image with a pasted " + s,
        areas=f"the {q} region of the image",
        tampered_content=f"a {c} {s} pasted over the background",
        visual_inconsistencies=f"the {c} {s} has noisy texture and sharp edges unlike the smooth scene",
        summary=f"a {c} {s} was pasted in the {q} region",
    )


def _real_base(rng: np.random.Generator, size: int) -> Image.Image:
    top = rng.integers(70, 170, size=3)
    bottom = rng.integers(70, 170, size=3)
    t = np.linspace(0.0, 1.0, size)[:, None, None]
    grad = (1 - t) * top[None, None, :] + t * bottom[None, None, :]
    arr = np.broadcast_to(grad, (size, size, 3)).astype(np.float64)
    img = Image.fromarray(np.clip(np.rint(arr), 0, 255).astype(np.uint8), mode="RGB")
    draw = ImageDraw.Draw(img)
    for _ in range(int(rng.integers(1, 4))):
        w, h = rng.integers(size // 8, size // 3, size=2)
        x0 = int(rng.integers(0, size - w))
        y0 = int(rng.integers(0, size - h))
        color = _NATIVE_COLORS[int(rng.integers(len(_NATIVE_COLORS)))]
        box = (x0, y0, x0 + int(w), y0 + int(h))
        if rng.random() < 0.5:
            draw.rectangle(box, fill=color)
        else:
            draw.ellipse(box, fill=color)
    return img


def _footprint(shape: str, size: int, box: tuple[int, int, int, int]) -> np.ndarray:
    canvas = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    if shape == "rectangle":
        draw.rectangle(box, fill=255)
    else:
        draw.ellipse(box, fill=255)
    return np.asarray(canvas) > 0


def _quadrant(footprint: np.ndarray) -> tuple[str, float, float]:
    ys, xs = np.nonzero(footprint)
    cy, cx = ys.mean(), xs.mean()
    mid = (footprint.shape[0] - 1) / 2
    vert = "top" if cy < mid else "bottom"
    horiz = "left" if cx < mid else "right"
    return f"{vert} {horiz}", cy - mid, cx - mid


def _paste(rng: np.random.Generator, base: np.ndarray, config: FixtureConfig) -> tuple[np.ndarray, np.ndarray, PasteInfo]:
    size = config.image_size
    lo = max(2, int(round(config.paste_min * size)))
    hi = max(lo, int(round(config.paste_max * size)))
    while True:
        w, h = (int(v) for v in rng.integers(lo, hi + 1, size=2))
        x0 = int(rng.integers(0, size - w + 1))
        y0 = int(rng.integers(0, size - h + 1))
        shape = config.shapes[int(rng.integers(len(config.shapes)))]
        color = config.colors[int(rng.integers(len(config.colors)))]
        box = (x0, y0, x0 + w - 1, y0 + h - 1)
        footprint = _footprint(shape, size, box)
        if not footprint.any():
            continue
        quadrant, dy, dx = _quadrant(footprint)
        # keep the quadrant label unambiguous
        if min(abs(dy), abs(dx)) < size / 16:
            continue
        break
    texture = rng.normal(0.0, config.texture_sigma, size=(size, size, 3))
    fill = np.asarray(FOREIGN_COLORS[color], dtype=np.float64)[None, None, :] + texture
    out = base.astype(np.float64)
    out[footprint] = fill[footprint]
    image = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return image, footprint, PasteInfo(shape=shape, color=color, quadrant=quadrant, box=box)


def _full_synthetic(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    arr = np.zeros((size, size, 3))
    for ch in range(3):
        for _ in range(3):
            fx, fy = rng.uniform(0.5, 4.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            arr[..., ch] += np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    arr = 128 + 35 * arr / 3 + rng.normal(0.0, sigma, size=arr.shape)
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


@dataclass
class FixtureSample:
    id: str
    label: Label
    image: np.ndarray
    mask: np.ndarray | None
    paste: PasteInfo | None = None
    explanation: ExplanationSections | None = None


def render_fixture(config: FixtureConfig, seed: int) -> list[FixtureSample]:
    """Generate fixture samples in memory; each sample has its own RNG stream."""
    samples = []
    for label, count in zip(_LABEL_ORDER, config.counts):
        for i in range(count):
            rng = np.random.default_rng([seed, label.index, i])
            sid = f"{label.value}_{i:04d}"
            size = config.image_size
            if label is Label.REAL:
                image = np.asarray(_real_base(rng, size))
                samples.append(FixtureSample(sid, label, image, np.zeros((size, size), dtype=bool)))
            elif label is Label.FULL_SYNTHETIC:
                samples.append(FixtureSample(sid, label, _full_synthetic(rng, size, config.texture_sigma), None))
            else:
                base = np.asarray(_real_base(rng, size))
                image, footprint, info = _paste(rng, base, config)
                samples.append(FixtureSample(sid, label, image, footprint, info, explanation_for(info)))
    return samples


def generate_fixture(config: FixtureConfig, seed: int, out_dir: str | Path) -> DatasetManifest:
    """Write fixture images, masks and ``manifest.jsonl`` under ``out_dir``."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for sample in render_fixture(config, seed):
        image_path = out_dir / "images" / f"{sample.id}.png"
        Image.fromarray(sample.image, mode="RGB").save(image_path, format="PNG")
        mask_path = None
        if sample.mask is not None:
            mask_path = out_dir / "masks" / f"{sample.id}.png"
            write_mask(mask_path, sample.mask)
        records.append(SampleRecord(sample.id, image_path, sample.label, mask_path, sample.explanation))
    manifest = DatasetManifest(records=records, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def rebase(manifest: DatasetManifest, root: Path) -> DatasetManifest:
    return replace(manifest, root=Path(root))
