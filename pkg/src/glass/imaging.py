"""Image buffers, bilinear resize, crop extraction, dataset manifests and the
synthetic desk-scale corpus."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

CROP_SIDE = 224
LABELS = ("real", "fake")
SPLITS = ("train", "val", "test")
SCHEMA_VERSION = 1


class ImageError(Exception):
    """Raised when an image cannot be decoded or has an unsupported format."""


class DimensionError(ValueError):
    """Raised when an image is too small for the pipeline."""


@dataclass(frozen=True)
class ImageBuf:
    """RGB raster stored channel-major as float32 in [0, 1], shape (3, H, W)."""

    data: np.ndarray

    def __post_init__(self):
        data = self.data
        if data.ndim != 3 or data.shape[0] != 3:
            raise ValueError(f"expected shape (3, H, W), got {data.shape}")
        if data.shape[1] < 1 or data.shape[2] < 1:
            raise ValueError(f"empty image {data.shape}")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("pixel values must be finite and in [0, 1]")

    @property
    def channels(self) -> int:
        return 3

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> "ImageBuf":
        """Build from an (H, W, 3) or (3, H, W) uint8 array."""
        if arr.ndim == 3 and arr.shape[-1] == 3 and arr.shape[0] != 3:
            arr = arr.transpose(2, 0, 1)
        return cls(np.ascontiguousarray(arr, dtype=np.float32) / np.float32(255.0))

    def to_uint8(self) -> np.ndarray:
        """(H, W, 3) uint8 view suitable for PIL."""
        return np.round(self.data.transpose(1, 2, 0) * 255.0).astype(np.uint8)


@dataclass(frozen=True)
class CropRect:
    top: int
    left: int
    side: int = CROP_SIDE

    def check_bounds(self, height: int, width: int) -> None:
        if not (0 <= self.top <= height - self.side and 0 <= self.left <= width - self.side):
            raise ValueError(
                f"crop {self} out of bounds for {height}x{width} image"
            )

    def to_dict(self) -> dict:
        return {"top": self.top, "left": self.left, "side": self.side}


def require_min_size(img: ImageBuf, side: int = CROP_SIDE) -> None:
    if img.height < side or img.width < side:
        raise DimensionError(
            f"image is {img.height}x{img.width}; both dimensions must be >= {side}"
        )


_FORMATS = {"PNG", "PPM"}


def decode_image(path) -> ImageBuf:
    """Decode an 8-bit PNG or PNM file. Value v maps to v/255.

    Size is not checked here; the pipeline calls :func:`require_min_size`.
    """
    path = Path(path)
    if not path.is_file():
        raise ImageError(f"no such file: {path}")
    try:
        with Image.open(path) as im:
            if im.format not in _FORMATS:
                raise ImageError(f"unsupported format {im.format!r} for {path}")
            im.load()
            rgb = np.asarray(im.convert("RGB"))
    except ImageError:
        raise
    except Exception as exc:  # PIL raises a zoo of types on bad input
        raise ImageError(f"cannot decode {path}: {exc}") from exc
    return ImageBuf.from_uint8(rgb)


def save_png(img: ImageBuf, path) -> None:
    # explicit format so temp suffixes are fine
    with open(path, "wb") as fh:
        Image.fromarray(img.to_uint8(), mode="RGB").save(fh, format="PNG", compress_level=1)


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres, clamped to the valid source range
    d = np.arange(n_out, dtype=np.float64)
    s = (d + 0.5) * (n_in / n_out) - 0.5
    s = np.clip(s, 0.0, n_in - 1)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = s - i0
    return i0, i1, frac


def resize_bilinear(img: ImageBuf, out_h: int, out_w: int) -> ImageBuf:
    """Bilinear resize with half-pixel centres and edge clamping, no antialiasing."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    x = img.data.astype(np.float64)
    r0, r1, fr = _axis_weights(img.height, out_h)
    x = x[:, r0, :] * (1.0 - fr)[None, :, None] + x[:, r1, :] * fr[None, :, None]
    c0, c1, fc = _axis_weights(img.width, out_w)
    x = x[:, :, c0] * (1.0 - fc) + x[:, :, c1] * fc
    return ImageBuf(x.astype(np.float32))


def extract_crop(img: ImageBuf, rect: CropRect) -> ImageBuf:
    rect.check_bounds(img.height, img.width)
    s = rect.side
    return ImageBuf(img.data[:, rect.top:rect.top + s, rect.left:rect.left + s].copy())


# --------------------------------------------------------------------------
# dataset manifests


@dataclass
class Entry:
    path: str
    label: str
    split: str | None = None

    @property
    def target(self) -> int:
        return LABELS.index(self.label)


@dataclass
class DatasetManifest:
    entries: list[Entry]
    seed: int | None = None
    ratios: tuple[float, float, float] | None = None

    def subset(self, split: str) -> list[Entry]:
        return [e for e in self.entries if e.split == split]

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "entries": [
                {"path": e.path, "label": e.label, "split": e.split} for e in self.entries
            ],
            "seed": self.seed,
            "ratios": list(self.ratios) if self.ratios is not None else None,
        }

    def save(self, path) -> None:
        _atomic_write_text(Path(path), json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        raw = json.loads(path.read_text())
        entries = []
        for item in raw["entries"]:
            p = Path(item["path"])
            if not p.is_absolute():
                p = path.parent / p
            if item["label"] not in LABELS:
                raise ValueError(f"bad label {item['label']!r} in {path}")
            entries.append(Entry(str(p), item["label"], item.get("split")))
        ratios = raw.get("ratios")
        return cls(entries, raw.get("seed"), tuple(ratios) if ratios else None)

    @classmethod
    def from_directory(cls, root) -> "DatasetManifest":
        """Scan ``root/real`` and ``root/fake`` for PNG/PPM files."""
        root = Path(root)
        entries = []
        for label in LABELS:
            for p in sorted((root / label).glob("*")):
                if p.suffix.lower() in (".png", ".ppm"):
                    entries.append(Entry(str(p), label))
        return cls(entries)


def _split_sizes(n: int, ratios) -> list[int]:
    # largest remainder; ties go to the earlier split
    raw = [n * r for r in ratios]
    sizes = [int(np.floor(x + 1e-9)) for x in raw]
    rest = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return sizes


def split_dataset(manifest: DatasetManifest, ratios=(0.70, 0.15, 0.15), seed: int = 0) -> DatasetManifest:
    """Deterministic per-class split into train/val/test."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive fractions summing to 1, got {ratios}")
    if not manifest.entries:
        raise ValueError("empty manifest")
    rng = np.random.default_rng(seed)
    out = [Entry(e.path, e.label, None) for e in manifest.entries]
    for label in LABELS:
        idx = [i for i, e in enumerate(out) if e.label == label]
        if not idx:
            continue
        if len(idx) < len(SPLITS):
            raise ValueError(f"class {label!r} has {len(idx)} samples, fewer than {len(SPLITS)} splits")
        order = rng.permutation(len(idx))
        sizes = _split_sizes(len(idx), ratios)
        pos = 0
        for split, size in zip(SPLITS, sizes):
            for k in order[pos:pos + size]:
                out[idx[k]].split = split
            pos += size
    return DatasetManifest(out, seed, ratios)


# --------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SynthConfig:
    """Knobs for the synthetic real/fake generator.

    Fake images carry small patches of a 2-pixel-period checkerboard. A
    bilinear downscale by 2 or more averages each 2x2 block, so the pattern
    is invisible in the global view and only full-resolution crops see it.
    """

    height: int = 448
    width: int = 448
    n_waves: int = 6
    max_cycles: float = 1.5
    wave_amplitude: float = 0.03
    noise_sigma: float = 0.0015
    patch_size: int = 32
    patch_period: int = 2
    patch_amplitude: float = 0.06
    patch_count: int = 12


def _smooth_base(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    h, w = cfg.height, cfg.width
    yy = np.arange(h, dtype=np.float64) / h
    xx = np.arange(w, dtype=np.float64) / w
    base = np.empty((3, h, w))
    for c in range(3):
        chan = np.full((h, w), rng.uniform(0.3, 0.7))
        for _ in range(cfg.n_waves):
            fy, fx = rng.uniform(-cfg.max_cycles, cfg.max_cycles, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.3, 1.0) * cfg.wave_amplitude
            # cos(u + v) = cos u cos v - sin u sin v keeps each wave an outer product
            u = 2 * np.pi * fy * yy + phase
            v = 2 * np.pi * fx * xx
            chan += amp * (np.outer(np.cos(u), np.cos(v)) - np.outer(np.sin(u), np.sin(v)))
        base[c] = chan
    base += rng.normal(0.0, cfg.noise_sigma, size=base.shape)
    return base


def checkerboard_patches(rng: np.random.Generator, cfg: SynthConfig) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Additive artifact layer and the (top, left) of each patch."""
    h, w, s = cfg.height, cfg.width, cfg.patch_size
    half = max(cfg.patch_period // 2, 1)
    rows = (np.arange(h) // half) % 2
    cols = (np.arange(w) // half) % 2
    pattern = np.where((rows[:, None] + cols[None, :]) % 2 == 0, 1.0, -1.0) * cfg.patch_amplitude
    layer = np.zeros((h, w))
    spots = []
    for _ in range(cfg.patch_count):
        top = int(rng.integers(0, h - s + 1))
        left = int(rng.integers(0, w - s + 1))
        layer[top:top + s, left:left + s] = pattern[top:top + s, left:left + s]
        spots.append((top, left))
    return layer, spots


def _finish(x: np.ndarray) -> ImageBuf:
    x = np.clip(x, 0.0, 1.0)
    return ImageBuf(np.round(x * 255.0).astype(np.float32) / np.float32(255.0))


def synth_image(seed, label: str, cfg: SynthConfig | None = None) -> ImageBuf:
    """One synthetic image, already quantised to 8 bits."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    base = _smooth_base(rng, cfg)
    if label == "fake":
        layer, _ = checkerboard_patches(rng, cfg)
        base = base + layer[None]
    elif label != "real":
        raise ValueError(f"unknown label {label!r}")
    return _finish(base)


def synth_pair(seed, cfg: SynthConfig | None = None):
    """A (real, fake, patch positions) triple sharing one smooth base."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    base = _smooth_base(rng, cfg)
    layer, spots = checkerboard_patches(rng, cfg)
    return _finish(base), _finish(base + layer[None]), spots


def synth_corpus(count_per_class: int, height: int, width: int, seed: int, out_dir,
                 cfg: SynthConfig | None = None, ratios=None, split_seed: int | None = None) -> DatasetManifest:
    """Write ``count_per_class`` real and fake PNGs plus ``manifest.json``.

    With ``ratios`` the manifest is also split (stratified, see
    :func:`split_dataset`).
    """
    if count_per_class < 1:
        raise ValueError("count_per_class must be >= 1")
    if height < 2 * CROP_SIDE or width < 2 * CROP_SIDE:
        raise ValueError(f"synthetic images must be at least {2 * CROP_SIDE} on each side")
    base_cfg = cfg or SynthConfig()
    cfg = SynthConfig(**{**base_cfg.__dict__, "height": height, "width": width})
    out_dir = Path(out_dir)
    entries = []
    for k, label in enumerate(LABELS):
        (out_dir / label).mkdir(parents=True, exist_ok=True)
        for i in range(count_per_class):
            img = synth_image([seed, k, i], label, cfg)
            rel = f"{label}/{label}_{i:05d}.png"
            tmp = out_dir / (rel + ".tmp")
            save_png(img, tmp)
            os.replace(tmp, out_dir / rel)
            entries.append(Entry(rel, label))
    manifest = DatasetManifest(entries, seed)
    if ratios is not None:
        manifest = split_dataset(manifest, ratios, seed if split_seed is None else split_seed)
    manifest.save(out_dir / "manifest.json")
    for e in manifest.entries:
        e.path = str(out_dir / e.path)
    return manifest


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
