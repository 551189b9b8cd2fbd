from __future__ import annotations

import io
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from ifdl.data import (
    DatasetManifest,
    ExplanationSections,
    FixtureConfig,
    Label,
    ManifestError,
    SampleRecord,
    SplitWarning,
    decode_mask_png,
    encode_mask_png,
    generate_fixture,
    load_manifest,
    render_fixture,
    split_dataset,
    stratified_counts,
    write_mask,
)
from ifdl.data import _footprint
from ifdl.metrics.localization import pixel_iou


def png_bytes(arr: np.ndarray, mode: str) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# mask codec


def test_decode_all_zero_and_all_255():
    assert not decode_mask_png(png_bytes(np.zeros((4, 4), np.uint8), "L")).any()
    assert decode_mask_png(png_bytes(np.full((4, 4), 255, np.uint8), "L")).all()


def test_decode_threshold_at_128():
    arr = np.array([[0, 255], [127, 128]], dtype=np.uint8)
    got = decode_mask_png(png_bytes(arr, "L"))
    assert got.tolist() == [[False, True], [False, True]]


def test_decode_rejects_multichannel_and_16bit():
    with pytest.raises(ValueError):
        decode_mask_png(png_bytes(np.zeros((4, 4, 3), np.uint8), "RGB"))
    buf = io.BytesIO()
    Image.fromarray(np.zeros((4, 4), np.uint16)).save(buf, format="PNG")
    with pytest.raises(ValueError):
        decode_mask_png(buf.getvalue())


def test_encode_writes_0_and_255():
    mask = np.array([[True, False], [False, True]])
    with Image.open(io.BytesIO(encode_mask_png(mask))) as img:
        assert img.mode == "L"
        assert np.asarray(img).tolist() == [[255, 0], [0, 255]]


def test_encode_rejects_empty():
    with pytest.raises(ValueError):
        encode_mask_png(np.zeros((0, 3), bool))


@settings(max_examples=150, deadline=None)
@given(
    st.integers(1, 32).flatmap(
        lambda h: st.integers(1, 32).flatmap(lambda w: arrays(np.bool_, (h, w)))
    )
)
def test_mask_codec_round_trip(mask):
    assert np.array_equal(decode_mask_png(encode_mask_png(mask)), mask)


# ---------------------------------------------------------------------------
# manifests


def _write_image(path, size=8):
    Image.fromarray(np.zeros((size, size, 3), np.uint8), mode="RGB").save(path)


@pytest.fixture
def small_dir(tmp_path):
    for name in ("a", "b", "c"):
        _write_image(tmp_path / f"{name}.png")
    write_mask(tmp_path / "m.png", np.eye(8, dtype=bool))
    write_mask(tmp_path / "zero.png", np.zeros((8, 8), bool))
    return tmp_path


def _lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs), encoding="utf-8")
    return path


def test_empty_manifest(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_text("")
    assert len(load_manifest(path)) == 0


def test_manifest_preserves_order(small_dir):
    expl = dict(ExplanationSections(type="t", summary="s").to_dict())
    path = _lines(
        small_dir / "manifest.jsonl",
        [
            {"id": "z", "image": "c.png", "label": "tampered", "mask": "m.png", "explanation": expl},
            {"id": "y", "image": "a.png", "label": "real"},
            {"id": "x", "image": "b.png", "label": "full_synthetic"},
        ],
    )
    m = load_manifest(path)
    assert [r.id for r in m] == ["z", "y", "x"]
    assert m.records[0].label is Label.TAMPERED
    assert m.records[0].explanation.summary == "s"
    assert m.records[1].mask_path is None


def test_tampered_without_mask_names_line(small_dir):
    path = _lines(
        small_dir / "manifest.jsonl",
        [{"id": "a", "image": "a.png", "label": "real"}, {"id": "b", "image": "b.png", "label": "tampered"}],
    )
    with pytest.raises(ManifestError, match="line 2"):
        load_manifest(path)


@pytest.mark.parametrize(
    "bad, fragment",
    [
        ("{not json", "malformed"),
        (json.dumps({"id": "a", "image": "a.png"}), "missing field 'label'"),
        (json.dumps({"id": "a", "image": "a.png", "label": "fake"}), "unknown label"),
        (json.dumps({"id": "a", "image": "nope.png", "label": "real"}), "image not found"),
        (json.dumps({"id": "a", "image": "a.png", "label": "real", "mask": "m.png"}), "non-empty mask"),
        (json.dumps({"id": "a", "image": "a.png", "label": "real", "extra": 1}), "unknown fields"),
    ],
)
def test_manifest_errors_report_line(small_dir, bad, fragment):
    path = small_dir / "manifest.jsonl"
    path.write_text(json.dumps({"id": "ok", "image": "a.png", "label": "real"}) + "\n" + bad + "\n")
    with pytest.raises(ManifestError, match=f"line 2.*{fragment}"):
        load_manifest(path)


def test_manifest_duplicate_id(small_dir):
    path = _lines(small_dir / "manifest.jsonl", [{"id": "a", "image": "a.png", "label": "real"}] * 2)
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(path)


def test_manifest_mask_size_mismatch(small_dir):
    write_mask(small_dir / "big.png", np.ones((9, 9), bool))
    path = _lines(small_dir / "manifest.jsonl", [{"id": "a", "image": "a.png", "label": "tampered", "mask": "big.png"}])
    with pytest.raises(ManifestError, match="line 1.*differs"):
        load_manifest(path)


def test_real_with_zero_mask_is_fine(small_dir):
    path = _lines(small_dir / "manifest.jsonl", [{"id": "a", "image": "a.png", "label": "real", "mask": "zero.png"}])
    assert load_manifest(path).records[0].mask_path.name == "zero.png"


def test_missing_manifest_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "absent.jsonl")


# ---------------------------------------------------------------------------
# splits


def _fake_manifest(per_class: dict[Label, int]) -> DatasetManifest:
    recs = [
        SampleRecord(f"{label.value}_{i}", None, label)  # type: ignore[arg-type]
        for label, n in per_class.items()
        for i in range(n)
    ]
    return DatasetManifest(records=recs, root=None)  # type: ignore[arg-type]


def test_split_300_records():
    m = _fake_manifest({Label.REAL: 100, Label.FULL_SYNTHETIC: 100, Label.TAMPERED: 100})
    parts = split_dataset(m, (0.7, 0.1, 0.2), seed=3)
    assert [len(p) for p in parts] == [210, 30, 60]
    for label in Label:
        assert [len(p.by_label(label)) for p in parts] == [70, 10, 20]


def test_split_deterministic():
    m = _fake_manifest({Label.REAL: 17, Label.FULL_SYNTHETIC: 9, Label.TAMPERED: 23})
    a = split_dataset(m, seed=4)
    b = split_dataset(m, seed=4)
    assert [[r.id for r in p] for p in a] == [[r.id for r in p] for p in b]
    c = split_dataset(m, seed=5)
    assert [[r.id for r in p] for p in a] != [[r.id for r in p] for p in c]


def _rounding_oracle(n: int, ratios) -> list[int]:
    """Brute force: among all count vectors summing to n, the one closest to n*ratios
    (max deviation, then lexicographic preference for earlier splits)."""
    best = None
    for a in range(n + 1):
        for b in range(n + 1 - a):
            c = n - a - b
            dev = max(abs(x - n * r) for x, r in zip((a, b, c), ratios))
            key = (round(dev, 12), [-a, -b, -c])
            if best is None or key < best[0]:
                best = (key, [a, b, c])
    return best[1]


def test_split_10_one_class():
    m = _fake_manifest({Label.TAMPERED: 10})
    parts = split_dataset(m, (0.7, 0.1, 0.2), seed=0)
    assert [len(p) for p in parts] == [7, 1, 2] == _rounding_oracle(10, (0.7, 0.1, 0.2))


@settings(max_examples=200, deadline=None)
@given(
    st.integers(0, 60),
    st.tuples(st.integers(1, 20), st.integers(1, 20), st.integers(1, 20)),
)
def test_stratified_counts_within_one(n, weights):
    ratios = [w / sum(weights) for w in weights]
    counts = stratified_counts(n, ratios)
    assert sum(counts) == n
    assert all(abs(c - n * r) < 1 for c, r in zip(counts, ratios))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 40), st.integers(0, 40), st.integers(0, 40), st.integers(0, 2**31))
def test_split_stratified_every_seed(nr, nf, nt, seed):
    m = _fake_manifest({Label.REAL: nr, Label.FULL_SYNTHETIC: nf, Label.TAMPERED: nt})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SplitWarning)
        parts = split_dataset(m, (0.7, 0.1, 0.2), seed=seed)
    assert sorted(r.id for p in parts for r in p) == sorted(r.id for r in m)
    for label, n in ((Label.REAL, nr), (Label.FULL_SYNTHETIC, nf), (Label.TAMPERED, nt)):
        for p, ratio in zip(parts, (0.7, 0.1, 0.2)):
            assert abs(len(p.by_label(label)) - n * ratio) < 1


def test_split_reports_empty_share():
    m = _fake_manifest({Label.REAL: 3, Label.TAMPERED: 10})
    with pytest.warns(SplitWarning, match="real"):
        split_dataset(m, (0.7, 0.1, 0.2))
    with pytest.raises(ValueError, match="real"):
        split_dataset(m, (0.7, 0.1, 0.2), strict=True)


@pytest.mark.parametrize("ratios", [(0.5, 0.5, 0.1), (0.7, 0.3, 0.0), (0.5, 0.5)])
def test_split_bad_ratios(ratios):
    with pytest.raises(ValueError):
        split_dataset(_fake_manifest({Label.REAL: 3}), ratios)


# ---------------------------------------------------------------------------
# fixture


def test_fixture_2_2_2_masks_match_footprints(tmp_path):
    config = FixtureConfig(counts=(2, 2, 2))
    samples = render_fixture(config, seed=7)
    manifest = generate_fixture(config, 7, tmp_path)
    loaded = load_manifest(tmp_path / "manifest.jsonl")
    assert len(manifest) == len(loaded) == 6
    for s, rec in zip(samples, loaded):
        assert rec.id == s.id and rec.label is s.label
        if s.label is Label.TAMPERED:
            footprint = _footprint(s.paste.shape, config.image_size, s.paste.box)
            disk = decode_mask_png((tmp_path / "masks" / f"{s.id}.png").read_bytes())
            assert np.array_equal(disk, footprint)
            assert pixel_iou(disk, footprint) == 1.0
            assert s.paste.shape in rec.explanation.tampered_content
            assert s.paste.color in rec.explanation.tampered_content
            assert s.paste.quadrant in rec.explanation.areas
            assert footprint.sum() > 0
        elif s.label is Label.REAL:
            assert not decode_mask_png((tmp_path / "masks" / f"{s.id}.png").read_bytes()).any()
        else:
            assert rec.mask_path is None


def test_fixture_single_real(tmp_path):
    manifest = generate_fixture(FixtureConfig(counts=(1, 0, 0)), 0, tmp_path)
    (rec,) = load_manifest(tmp_path / "manifest.jsonl").records
    assert rec.label is Label.REAL and len(manifest) == 1
    assert rec.mask_path is None or not decode_mask_png(rec.mask_path.read_bytes()).any()


def test_fixture_byte_identical(tmp_path):
    config = FixtureConfig(counts=(2, 2, 3))
    generate_fixture(config, 9, tmp_path / "a")
    generate_fixture(config, 9, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) == 1 + 7 + 5
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_fixture_ground_truth_consistency_many():
    config = FixtureConfig(image_size=48, counts=(0, 0, 60), paste_min=0.2, paste_max=0.5)
    for s in render_fixture(config, seed=1):
        footprint = _footprint(s.paste.shape, config.image_size, s.paste.box)
        assert pixel_iou(s.mask, footprint) == 1.0 and s.mask.any()


def test_fixture_pasted_pixels_differ_from_background_colour():
    config = FixtureConfig(counts=(0, 0, 5))
    for s in render_fixture(config, seed=2):
        assert s.mask.sum() > 0
        assert s.image.shape == (64, 64, 3) and s.image.dtype == np.uint8


@pytest.mark.parametrize(
    "kwargs",
    [dict(image_size=8), dict(counts=(1, 1)), dict(shapes=("triangle",)), dict(paste_min=0.6, paste_max=0.5)],
)
def test_fixture_config_validation(kwargs):
    with pytest.raises(ValueError):
        FixtureConfig(**kwargs)
