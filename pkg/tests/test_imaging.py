import json

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from glass.imaging import (
    CropRect,
    DatasetManifest,
    DimensionError,
    Entry,
    ImageBuf,
    ImageError,
    SynthConfig,
    decode_image,
    extract_crop,
    require_min_size,
    resize_bilinear,
    split_dataset,
    synth_corpus,
    synth_pair,
)
from glass.sampler import make_rng, sample_crops


def _write(path, arr, fmt):
    Image.fromarray(arr).save(path, format=fmt)


def test_decode_white_ppm(tmp_path):
    p = tmp_path / "white.ppm"
    _write(p, np.full((1, 1, 3), 255, np.uint8), "PPM")
    img = decode_image(p)
    assert (img.height, img.width) == (1, 1)
    assert np.all(img.data == 1.0)
    with pytest.raises(DimensionError):
        require_min_size(img)


def test_decode_gray_png(tmp_path):
    p = tmp_path / "gray.png"
    _write(p, np.full((5, 7), 128, np.uint8), "PNG")
    img = decode_image(p)
    assert img.data.shape == (3, 5, 7)
    np.testing.assert_allclose(img.data, 128 / 255, rtol=0, atol=1e-7)


def test_decode_rejects_jpeg_and_garbage(tmp_path):
    jpg = tmp_path / "x.jpg"
    _write(jpg, np.zeros((8, 8, 3), np.uint8), "JPEG")
    with pytest.raises(ImageError):
        decode_image(jpg)
    junk = tmp_path / "junk.png"
    junk.write_bytes(b"not an image")
    with pytest.raises(ImageError):
        decode_image(junk)
    with pytest.raises(ImageError):
        decode_image(tmp_path / "missing.png")


def test_small_image_rejected_by_pipeline(tmp_path):
    p = tmp_path / "small.png"
    _write(p, np.zeros((200, 200, 3), np.uint8), "PNG")
    with pytest.raises(DimensionError):
        sample_crops(decode_image(p), 1, make_rng(0))


def test_imagebuf_validates():
    with pytest.raises(ValueError):
        ImageBuf(np.zeros((2, 4, 4), np.float32))
    with pytest.raises(ValueError):
        ImageBuf(np.full((3, 4, 4), 1.5, np.float32))
    with pytest.raises(ValueError):
        ImageBuf(np.full((3, 4, 4), np.nan, np.float32))


# -- resize ------------------------------------------------------------------


def test_resize_constant():
    img = ImageBuf(np.full((3, 300, 517), 0.7, np.float32))
    out = resize_bilinear(img, 224, 224)
    assert np.all(out.data == np.float32(0.7))


def test_resize_identity_is_bit_exact():
    data = np.random.default_rng(0).random((3, 224, 224), dtype=np.float32)
    out = resize_bilinear(ImageBuf(data), 224, 224)
    assert np.array_equal(out.data, data)


def test_resize_hand_example():
    # half-pixel centres: sources -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
    row = np.array([[0.0, 1.0], [0.0, 1.0]], np.float32)
    img = ImageBuf(np.stack([row] * 3))
    out = resize_bilinear(img, 2, 4)
    np.testing.assert_array_equal(out.data[0], [[0, 0.25, 0.75, 1], [0, 0.25, 0.75, 1]])


@pytest.mark.parametrize("shape,out", [((9, 13), (4, 5)), ((448, 448), (224, 224)),
                                       ((5, 6), (11, 17)), ((300, 257), (224, 224))])
def test_resize_matches_torch_half_pixel(shape, out):
    data = np.random.default_rng(1).random((3, *shape), dtype=np.float32)
    ours = resize_bilinear(ImageBuf(data), *out).data
    ref = F.interpolate(torch.from_numpy(data.astype(np.float64))[None], size=out,
                        mode="bilinear", align_corners=False, antialias=False)[0].numpy()
    np.testing.assert_allclose(ours, ref, atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(h=st.integers(1, 40), w=st.integers(1, 40), oh=st.integers(1, 40), ow=st.integers(1, 40),
       seed=st.integers(0, 2**32 - 1))
def test_resize_stays_in_input_range(h, w, oh, ow, seed):
    data = np.random.default_rng(seed).random((3, h, w), dtype=np.float32)
    out = resize_bilinear(ImageBuf(data), oh, ow).data
    for c in range(3):
        assert out[c].min() >= data[c].min()
        assert out[c].max() <= data[c].max()


# -- crops -------------------------------------------------------------------


def test_crop_identity():
    data = np.random.default_rng(2).random((3, 224, 224), dtype=np.float32)
    out = extract_crop(ImageBuf(data), CropRect(0, 0))
    assert np.array_equal(out.data, data)


def test_crop_direct_indexing():
    h, w = 300, 260
    rows = np.arange(h, dtype=np.float32)[:, None] / h
    img = ImageBuf(np.broadcast_to(rows, (3, h, w)).copy())
    out = extract_crop(img, CropRect(10, 20))
    assert out.data.shape == (3, 224, 224)
    assert out.data[1, 0, 0] == np.float32(10 / h)


@settings(max_examples=30, deadline=None)
@given(top=st.integers(0, 76), left=st.integers(0, 32), seed=st.integers(0, 1000))
def test_crop_pixels_equal_source(top, left, seed):
    data = np.random.default_rng(seed).random((3, 300, 256), dtype=np.float32)
    out = extract_crop(ImageBuf(data), CropRect(top, left)).data
    i, j = seed % 224, (seed * 7) % 224
    assert np.array_equal(out[:, i, j], data[:, top + i, left + j])


def test_crop_out_of_bounds():
    img = ImageBuf(np.zeros((3, 224, 230), np.float32))
    with pytest.raises(ValueError):
        extract_crop(img, CropRect(1, 0))
    with pytest.raises(ValueError):
        extract_crop(img, CropRect(0, 7))


# -- splitting -----------------------------------------------------------------


def _manifest(per_class):
    return DatasetManifest([Entry(f"{lab}/{i}.png", lab) for lab in ("real", "fake") for i in range(per_class)])


def _counts(m):
    return {(s, lab): sum(1 for e in m.entries if e.split == s and e.label == lab)
            for s in ("train", "val", "test") for lab in ("real", "fake")}


def test_split_12000_image_corpus():
    m = split_dataset(_manifest(6000), (0.70, 0.15, 0.15), seed=3)
    sizes = [len(m.subset(s)) for s in ("train", "val", "test")]
    assert sizes == [8400, 1800, 1800]


def test_split_small_stratified():
    c = _counts(split_dataset(_manifest(10), (0.8, 0.1, 0.1), seed=0))
    for lab in ("real", "fake"):
        assert (c["train", lab], c["val", lab], c["test", lab]) == (8, 1, 1)


def test_split_deterministic_and_seed_sensitive():
    a = split_dataset(_manifest(50), (0.7, 0.15, 0.15), seed=11)
    b = split_dataset(_manifest(50), (0.7, 0.15, 0.15), seed=11)
    c = split_dataset(_manifest(50), (0.7, 0.15, 0.15), seed=12)
    assert [e.split for e in a.entries] == [e.split for e in b.entries]
    assert [e.split for e in a.entries] != [e.split for e in c.entries]


@settings(max_examples=50, deadline=None)
@given(per_class=st.integers(3, 120), a=st.integers(1, 20), b=st.integers(1, 20), c=st.integers(1, 20),
       seed=st.integers(0, 10**6))
def test_split_partitions_and_balances(per_class, a, b, c, seed):
    total = a + b + c
    ratios = (a / total, b / total, 1.0 - a / total - b / total)
    m = split_dataset(_manifest(per_class), ratios, seed)
    assert all(e.split in ("train", "val", "test") for e in m.entries)
    assert sorted(e.path for e in m.entries) == sorted(e.path for e in _manifest(per_class).entries)
    counts = _counts(m)
    for s, r in zip(("train", "val", "test"), ratios):
        for lab in ("real", "fake"):
            assert abs(counts[s, lab] - per_class * r) <= 1


def test_split_errors():
    with pytest.raises(ValueError):
        split_dataset(DatasetManifest([]), (0.7, 0.15, 0.15))
    with pytest.raises(ValueError):
        split_dataset(_manifest(2), (0.7, 0.15, 0.15))
    with pytest.raises(ValueError):
        split_dataset(_manifest(10), (0.7, 0.2, 0.2))


def test_manifest_roundtrip(tmp_path):
    m = split_dataset(_manifest(5), (0.6, 0.2, 0.2), seed=1)
    m.save(tmp_path / "manifest.json")
    raw = json.loads((tmp_path / "manifest.json").read_text())
    assert set(raw) >= {"entries", "seed", "ratios", "schema_version"}
    back = DatasetManifest.load(tmp_path / "manifest.json")
    assert [e.split for e in back.entries] == [e.split for e in m.entries]
    assert back.entries[0].path == str(tmp_path / m.entries[0].path)


# -- synthetic corpus ---------------------------------------------------------


def _hf_energy(x):
    return np.abs(np.diff(x, axis=2)).mean()


def test_artifacts_vanish_in_global_view():
    for seed in range(20):
        real, fake, spots = synth_pair(seed)
        mask = np.zeros((448, 448), np.float32)
        for t, l in spots:
            mask[t:t + 32, l:l + 32] = 1
        region = resize_bilinear(ImageBuf(np.stack([mask] * 3)), 224, 224).data[0] > 0
        diff = np.abs(resize_bilinear(fake, 224, 224).data - resize_bilinear(real, 224, 224).data)
        assert diff[:, region].mean() < 0.01


def test_artifacts_visible_at_full_resolution():
    for seed in range(20):
        real, fake, spots = synth_pair(seed)
        t, l = spots[0]
        top, left = min(max(t - 96, 0), 224), min(max(l - 96, 0), 224)
        rect = CropRect(top, left)
        assert _hf_energy(extract_crop(fake, rect).data) >= 2 * _hf_energy(extract_crop(real, rect).data)


def test_synth_corpus_deterministic(tmp_path):
    a = synth_corpus(2, 448, 480, seed=5, out_dir=tmp_path / "a")
    b = synth_corpus(2, 448, 480, seed=5, out_dir=tmp_path / "b")
    assert len(a.entries) == 4
    for ea, eb in zip(a.entries, b.entries):
        assert open(ea.path, "rb").read() == open(eb.path, "rb").read()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    img = decode_image(a.entries[0].path)
    assert (img.height, img.width) == (448, 480)


def test_synth_rejects_small_sizes(tmp_path):
    with pytest.raises(ValueError):
        synth_corpus(1, 300, 448, seed=0, out_dir=tmp_path)
    with pytest.raises(ValueError):
        synth_corpus(0, 448, 448, seed=0, out_dir=tmp_path)


def test_synth_config_defaults():
    cfg = SynthConfig()
    assert (cfg.patch_size, cfg.patch_period, cfg.patch_amplitude, cfg.patch_count) == (32, 2, 0.06, 12)
