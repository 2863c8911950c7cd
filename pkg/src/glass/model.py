"""Two-stream global/local network with additive attention over crops.

Both streams use the same compact conv encoder with independent weights.
The sampled crop positions and dropout masks come from a numpy Generator
and are treated as data; gradients never flow through them.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .imaging import CROP_SIDE, CropRect, ImageBuf, require_min_size, resize_bilinear
from .sampler import sample_crops

GLOBAL = "global_backbone"
LOCAL = "local_backbone"


@dataclass(frozen=True)
class ArchConfig:
    embed_dim: int = 64
    attn_hidden: int = 128
    widths: tuple[int, ...] = (16, 32, 64)
    dropout: float = 0.1
    kind: str = "glass"  # or "global_only"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not 0.0 <= self.dropout <= 0.5:
            raise ValueError(f"dropout must be in [0, 0.5], got {self.dropout}")
        if self.kind not in ("glass", "global_only"):
            raise ValueError(f"unknown model kind {self.kind!r}")


class Backbone(nn.Module):
    """(conv3x3 -> ReLU -> avgpool2) per width, global average pool, linear to D."""

    def __init__(self, widths=(16, 32, 64), embed_dim=64):
        super().__init__()
        convs = []
        c_in = 3
        for w in widths:
            convs.append(nn.Conv2d(c_in, w, 3, padding=1))
            c_in = w
        self.convs = nn.ModuleList(convs)
        self.proj = nn.Linear(c_in, embed_dim)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) input, got {tuple(x.shape)}")
        x = x.contiguous(memory_format=torch.channels_last)
        for conv in self.convs:
            x = F.avg_pool2d(F.relu(conv(x), inplace=True), 2)
        return self.proj(x.mean(dim=(2, 3)))


def dropout(x, rate: float, rng: np.random.Generator | None):
    """Inverted dropout with a mask drawn from ``rng``; identity when rng is None."""
    if rng is None or rate <= 0.0:
        return x
    keep = rng.random(tuple(x.shape)) >= rate
    mask = torch.from_numpy(keep).to(x.dtype) / (1.0 - rate)
    return x * mask


class AdditiveAttention(nn.Module):
    """score_i = w2 . tanh(W1 h_i + b1); weights = softmax over crops."""

    def __init__(self, embed_dim=64, hidden=128, dropout_rate=0.0):
        super().__init__()
        self.hidden = nn.Linear(embed_dim, hidden)
        self.score = nn.Linear(hidden, 1, bias=False)
        self.dropout_rate = dropout_rate

    def scores(self, h, rng=None):
        a = torch.tanh(self.hidden(h))
        a = dropout(a, self.dropout_rate, rng)
        return self.score(a).squeeze(-1)

    def forward(self, h, rng=None):
        """h: (B, n, D) -> aggregate (B, D), weights (B, n)."""
        if h.dim() != 3 or h.shape[1] < 1:
            raise ValueError(f"expected (B, n>=1, D) embeddings, got {tuple(h.shape)}")
        if h.shape[2] != self.hidden.in_features:
            raise ValueError(f"embedding dim {h.shape[2]} != {self.hidden.in_features}")
        weights = torch.softmax(self.scores(h, rng), dim=1)
        return torch.einsum("bn,bnd->bd", weights, h), weights


def attention_aggregate(attn: AdditiveAttention, embeddings, train_mode=False, rng=None):
    """Single-bag convenience wrapper over a list/array of D-vectors."""
    h = torch.as_tensor(np.asarray(embeddings), dtype=attn.hidden.weight.dtype)
    if h.dim() != 2 or h.shape[0] == 0:
        raise ValueError("need a non-empty list of embeddings")
    with torch.no_grad():
        agg, w = attn(h[None], rng if train_mode else None)
    return agg[0].numpy(), w[0].numpy()


def classify(classifier: nn.Linear, global_emb, local_emb, dropout_rate=0.0, rng=None):
    """Concatenate (global, local), dropout, affine map, softmax."""
    if global_emb.shape[-1] + local_emb.shape[-1] != classifier.in_features:
        raise ValueError("embedding sizes do not match the classifier")
    z = torch.cat([global_emb, local_emb], dim=-1)
    logits = classifier(dropout(z, dropout_rate, rng))
    return logits, torch.softmax(logits, dim=-1)


class GlassModel(nn.Module):
    def __init__(self, arch: ArchConfig | None = None):
        super().__init__()
        arch = arch or ArchConfig()
        self.arch = arch
        d = arch.embed_dim
        self.global_backbone = Backbone(arch.widths, d)
        self.local_backbone = Backbone(arch.widths, d)
        self.attention = AdditiveAttention(d, arch.attn_hidden, arch.dropout)
        self.classifier = nn.Linear(2 * d, 2)

    def forward(self, global_views, crops, rng=None):
        """global_views: (B, 3, 224, 224); crops: (B, n, 3, 224, 224).

        ``rng`` switches on dropout (train mode). Returns logits and a dict of
        intermediates.
        """
        b, n = crops.shape[:2]
        g = self.global_backbone(global_views)
        h = self.local_backbone(crops.reshape(b * n, *crops.shape[2:])).reshape(b, n, -1)
        local, weights = self.attention(h, rng)
        logits, probs = classify(self.classifier, g, local, self.arch.dropout, rng)
        return logits, {"probs": probs, "attention": weights, "global_emb": g, "local_emb": local}


class GlobalOnlyModel(nn.Module):
    """Baseline: the resized view through one backbone and a linear head."""

    def __init__(self, arch: ArchConfig | None = None):
        super().__init__()
        arch = arch or ArchConfig(kind="global_only")
        self.arch = arch
        self.global_backbone = Backbone(arch.widths, arch.embed_dim)
        self.classifier = nn.Linear(arch.embed_dim, 2)

    def forward(self, global_views, crops=None, rng=None):
        g = self.global_backbone(global_views)
        logits = self.classifier(dropout(g, self.arch.dropout, rng))
        return logits, {"probs": torch.softmax(logits, dim=-1), "global_emb": g}


def build_model(arch: ArchConfig, seed: int = 0, dtype=torch.float32) -> nn.Module:
    """Seeded He-uniform init for weights; zero biases."""
    cls = GlassModel if arch.kind == "glass" else GlobalOnlyModel
    model = cls(arch)
    gen = torch.Generator().manual_seed(int(seed))
    for name, p in model.named_parameters():
        if name.endswith("bias"):
            nn.init.zeros_(p)
        elif "attention" in name:
            nn.init.xavier_uniform_(p, generator=gen)
        else:
            nn.init.kaiming_uniform_(p, nonlinearity="relu", generator=gen)
    return model.to(dtype)


def param_group(name: str) -> str:
    """Which branch a parameter belongs to: global, local or head."""
    if name.startswith(GLOBAL):
        return "global"
    if name.startswith(LOCAL):
        return "local"
    return "head"


# --------------------------------------------------------------------------
# inputs


@dataclass
class Prepared:
    global_view: np.ndarray            # (3, 224, 224)
    crops: np.ndarray | None           # (n, 3, 224, 224)
    rects: list[CropRect] = field(default_factory=list)


def global_view(img: ImageBuf) -> np.ndarray:
    require_min_size(img)
    return resize_bilinear(img, CROP_SIDE, CROP_SIDE).data


def prepare(img: ImageBuf, n: int, rng: np.random.Generator | None, with_crops: bool = True,
            view: np.ndarray | None = None) -> Prepared:
    """Global resize plus n sampled original-resolution crops.

    ``view`` may carry a precomputed :func:`global_view` of ``img``; it has no
    randomness, so callers that revisit an image can reuse it.
    """
    require_min_size(img)
    if view is None:
        view = global_view(img)
    if not with_crops:
        return Prepared(view, None)
    crops, rects = sample_crops(img, n, rng)
    return Prepared(view, np.stack([c.data for c in crops]), rects)


PIXEL_CENTRE = 0.5
PIXEL_SCALE = 4.0


def normalize_pixels(x: torch.Tensor) -> torch.Tensor:
    """Map [0, 1] pixels to roughly unit-scale, zero-centred network input."""
    return (x - PIXEL_CENTRE) * PIXEL_SCALE


def _stack(prepared: list[Prepared], dtype):
    g = normalize_pixels(torch.from_numpy(np.stack([p.global_view for p in prepared])).to(dtype))
    if prepared[0].crops is None:
        return g, None
    return g, normalize_pixels(torch.from_numpy(np.stack([p.crops for p in prepared])).to(dtype))


def model_dtype(model: nn.Module):
    return next(model.parameters()).dtype


def glass_forward(model: nn.Module, img: ImageBuf, n: int, rng: np.random.Generator,
                  train_mode: bool = False):
    """Full pipeline on one image; returns (probs, diagnostics)."""
    with_crops = isinstance(model, GlassModel)
    prep = prepare(img, n, rng, with_crops)
    g, c = _stack([prep], model_dtype(model))
    with torch.set_grad_enabled(train_mode):
        _, diag = model(g, c, rng if train_mode else None)
    out = {"rects": prep.rects}
    for k, v in diag.items():
        out[k] = v[0].detach().numpy()
    return out.pop("probs"), out


def loss_and_grads(model: nn.Module, batch, n: int, rng: np.random.Generator,
                   train_mode: bool = True, chunk: int | None = None):
    """Mean cross-entropy over ``batch`` [(ImageBuf, label)] and its gradients.

    ``chunk`` bounds how many images go through the network at once; the
    gradient is accumulated so the result does not depend on it (up to
    floating-point summation order). Returns (loss, {name: grad}).
    """
    if not batch:
        raise ValueError("empty batch")
    with_crops = isinstance(model, GlassModel)
    prepared = [prepare(img, n, rng, with_crops) for img, _ in batch]
    labels = torch.tensor([int(y) for _, y in batch])
    if torch.any((labels < 0) | (labels > 1)):
        raise ValueError("labels must be 0 (real) or 1 (fake)")
    return _loss_and_grads_prepared(model, prepared, labels, rng if train_mode else None, chunk)


def _loss_and_grads_prepared(model, prepared, labels, rng, chunk=None):
    model.zero_grad(set_to_none=False)
    total = len(prepared)
    chunk = chunk or total
    dtype = model_dtype(model)
    loss_sum = 0.0
    for start in range(0, total, chunk):
        part = prepared[start:start + chunk]
        g, c = _stack(part, dtype)
        logits, _ = model(g, c, rng)
        loss = F.cross_entropy(logits, labels[start:start + chunk], reduction="sum")
        (loss / total).backward()
        loss_sum += float(loss.detach())
    grads = {name: p.grad.detach().clone() for name, p in model.named_parameters()}
    return loss_sum / total, grads


# --------------------------------------------------------------------------
# checkpoints

_MAGIC = b"GLASSCK1"
CHECKPOINT_SCHEMA = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(model: nn.Module, path, extra: dict | None = None) -> None:
    """Magic, u64 header length, JSON header, then little-endian float32 arrays."""
    tensors, blobs, offset = [], [], 0
    for name, t in model.state_dict().items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
        raw = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": "<f4",
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"schema_version": CHECKPOINT_SCHEMA, "arch": asdict(model.arch),
              "tensors": tensors, "extra": extra or {}}
    hbytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def read_checkpoint_header(path) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16 or head[:8] != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic or truncated)")
        (hlen,) = struct.unpack("<Q", head[8:])
        hbytes = fh.read(hlen)
    if len(hbytes) != hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(hbytes)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    return header, 16 + hlen


def load_checkpoint(path, arch: ArchConfig | None = None) -> nn.Module:
    """Rebuild the model recorded in the header; reject any shape mismatch.

    If ``arch`` is given it must agree with the stored architecture.
    """
    header, data_start = read_checkpoint_header(path)
    try:
        stored = ArchConfig(**header["arch"])
        specs = header["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if arch is not None and asdict(arch) != asdict(stored):
        raise CheckpointError(f"{path}: architecture {stored} does not match {arch}")
    model = build_model(stored)
    expected = model.state_dict()
    names = [s["name"] for s in specs]
    if sorted(names) != sorted(expected):
        raise CheckpointError(f"{path}: parameter names do not match the architecture")
    with open(path, "rb") as fh:
        fh.seek(data_start)
        payload = fh.read()
    state = {}
    for s in specs:
        shape = tuple(s["shape"])
        if shape != tuple(expected[s["name"]].shape):
            raise CheckpointError(f"{path}: {s['name']} has shape {shape}, expected "
                                  f"{tuple(expected[s['name']].shape)}")
        count = int(np.prod(shape)) if shape else 1
        if s.get("dtype") != "<f4" or s["nbytes"] != 4 * count:
            raise CheckpointError(f"{path}: bad dtype or size for {s['name']}")
        end = s["offset"] + s["nbytes"]
        if s["offset"] < 0 or end > len(payload):
            raise CheckpointError(f"{path}: truncated data for {s['name']}")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=s["offset"]).reshape(shape)
        state[s["name"]] = torch.from_numpy(arr.astype(np.float32))
    model.load_state_dict(state)
    return model
