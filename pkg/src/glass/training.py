"""Per-branch AdamW, the training loop, evaluation and the crop-count scaling probe."""

from __future__ import annotations

import copy
import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import torch

from .imaging import CROP_SIDE, Entry, ImageBuf, SynthConfig, decode_image, require_min_size, synth_image
from .metrics import LinearFit, MetricsReport, linear_fit, metrics_report
from .model import (
    ArchConfig,
    GlassModel,
    Prepared,
    _loss_and_grads_prepared,
    _stack,
    build_model,
    global_view,
    param_group,
    prepare,
)
from .sampler import make_rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimiser and loop settings.

    The defaults are tuned for training the compact backbone from scratch on
    the synthetic corpus; see :data:`GLASS_VIT_PRESET` for the fine-tuning
    values reported for a pretrained ViT.
    """

    lr_global: float = 3e-3
    lr_local: float = 3e-3
    lr_head: float = 3e-3
    wd_global: float = 1e-4
    wd_local: float = 1e-4
    dropout_rate: float = 0.1
    batch_size: int = 16
    n_crops: int = 2
    epochs: int = 25
    seed: int = 0

    def __post_init__(self):
        for name in ("lr_global", "lr_local", "lr_head"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("wd_global", "wd_local"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.dropout_rate <= 0.5:
            raise ValueError("dropout_rate must be in [0, 0.5]")
        if self.n_crops < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("n_crops and batch_size must be >= 1, epochs >= 0")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


GLASS_VIT_PRESET = TrainConfig(
    lr_global=1.58e-5, lr_local=4.26e-5, lr_head=6.48e-5,
    wd_global=3.18e-5, wd_local=6.14e-6, dropout_rate=0.3, batch_size=64, n_crops=10,
)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def make_optimizer(config: TrainConfig, model: torch.nn.Module) -> torch.optim.AdamW:
    """AdamW with one group per branch; the attention+classifier head gets no decay."""
    settings = {
        "global": (config.lr_global, config.wd_global),
        "local": (config.lr_local, config.wd_local),
        "head": (config.lr_head, 0.0),
    }
    buckets = {k: [] for k in settings}
    for name, p in model.named_parameters():
        buckets[param_group(name)].append(p)
    groups = [
        {"params": ps, "lr": settings[k][0], "weight_decay": settings[k][1], "name": k}
        for k, ps in buckets.items() if ps
    ]
    return torch.optim.AdamW(groups, betas=ADAM_BETAS, eps=ADAM_EPS)


# --------------------------------------------------------------------------
# data


class Sample:
    """Labelled image held as uint8, a quarter of the float32 footprint."""

    def __init__(self, path: str, label: int, pixels: np.ndarray):
        self.path = path
        self.label = label
        self._pixels = pixels
        self._view = None

    @classmethod
    def from_entry(cls, entry: Entry) -> "Sample":
        img = decode_image(entry.path)
        require_min_size(img)
        return cls(entry.path, entry.target, np.round(img.data * 255).astype(np.uint8))

    @classmethod
    def from_image(cls, img: ImageBuf, label: int, path: str = "") -> "Sample":
        return cls(path, int(label), np.round(img.data * 255).astype(np.uint8))

    def image(self) -> ImageBuf:
        return ImageBuf(self._pixels.astype(np.float32) / np.float32(255.0))

    def prepare(self, n: int, rng, with_crops: bool = True):
        # the resized global view is deterministic, so it is computed once
        if self._view is not None and not with_crops:
            return Prepared(self._view, None)
        img = self.image()
        if self._view is None:
            self._view = global_view(img)
        return prepare(img, n, rng, with_crops, view=self._view)


def load_samples(entries: list[Entry]) -> list[Sample]:
    return [Sample.from_entry(e) for e in entries]


# --------------------------------------------------------------------------
# loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    epoch_seconds: float
    steps: int


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_acc", "epoch_seconds"])
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_acc),
                        f"{r.epoch_seconds:.3f}"])
        return buf.getvalue()


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: TrainHistory
    best_model: torch.nn.Module
    best_epoch: int


def _chunk_for(n_crops: int, with_crops: bool, crop_budget: int = 64) -> int:
    # bound the number of 224x224 inputs alive in one forward pass
    per_image = 1 + (n_crops if with_crops else 0)
    return max(1, crop_budget // per_image)


def train(model: torch.nn.Module, train_set: list[Sample], val_set: list[Sample],
          config: TrainConfig) -> TrainResult:
    """Returns the final-epoch model and a copy of the best-validation one.

    Crops and dropout masks are redrawn every epoch from streams derived from
    ``(seed, epoch, batch)``; validation uses one fixed draw per image.
    """
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be non-empty")
    model.arch = replace(model.arch, dropout=config.dropout_rate)
    if isinstance(model, GlassModel):
        model.attention.dropout_rate = config.dropout_rate
    opt = make_optimizer(config, model)
    with_crops = isinstance(model, GlassModel)
    chunk = _chunk_for(config.n_crops, with_crops)
    history = TrainHistory()
    best = (-1.0, math.inf)
    best_state, best_epoch = copy.deepcopy(model.state_dict()), 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        model.train()
        order = make_rng(config.seed, 1, epoch).permutation(len(train_set))
        losses, steps = [], 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            rng = make_rng(config.seed, 2, epoch, b)
            prepared = [train_set[i].prepare(config.n_crops, rng, with_crops) for i in idx]
            labels = torch.tensor([train_set[i].label for i in idx])
            loss, _ = _loss_and_grads_prepared(model, prepared, labels, rng, chunk)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.step()
            losses.append(loss * len(idx))
            steps += 1
        train_loss = float(sum(losses) / len(train_set))
        report, _ = evaluate(model, val_set, config.n_crops, config.seed)
        seconds = time.perf_counter() - t0
        history.records.append(EpochRecord(epoch, train_loss, report.loss, report.accuracy, seconds, steps))
        log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f (%.1fs)",
                 epoch, train_loss, report.loss, report.accuracy, seconds)
        key = (report.accuracy, -report.loss)
        if key > (best[0], -best[1]):
            best = (report.accuracy, report.loss)
            best_state, best_epoch = copy.deepcopy(model.state_dict()), epoch
    best_model = copy.deepcopy(model)
    best_model.load_state_dict(best_state)
    return TrainResult(model, history, best_model, best_epoch)


@dataclass
class ImageRecord:
    path: str
    label: int
    prob_fake: float
    rects: list[dict]
    attention: list[float] | None

    def to_dict(self):
        return asdict(self)


@torch.no_grad()
def evaluate(model: torch.nn.Module, dataset: list[Sample], n_crops: int, seed: int,
             batch_size: int = 16) -> tuple[MetricsReport, list[ImageRecord]]:
    """Eval-mode pass; image i draws its crops from stream (seed, i)."""
    if not dataset:
        raise ValueError("empty dataset")
    was_training = model.training
    model.eval()
    with_crops = isinstance(model, GlassModel)
    dtype = next(model.parameters()).dtype
    records = []
    for start in range(0, len(dataset), batch_size):
        part = dataset[start:start + batch_size]
        prepared = [s.prepare(n_crops, make_rng(seed, start + k), with_crops)
                    for k, s in enumerate(part)]
        g, c = _stack(prepared, dtype)
        _, diag = model(g, c, None)
        probs = diag["probs"][:, 1].double().numpy()
        attn = diag.get("attention")
        for k, (s, p) in enumerate(zip(part, prepared)):
            records.append(ImageRecord(
                s.path, s.label, float(probs[k]), [r.to_dict() for r in p.rects],
                None if attn is None else [float(a) for a in attn[k]],
            ))
    model.train(was_training)
    labels = [r.label for r in records]
    probs = [r.prob_fake for r in records]
    return metrics_report(labels, probs), records


# --------------------------------------------------------------------------
# scaling probe


def backbone_activation_elements(arch: ArchConfig, side: int = CROP_SIDE) -> int:
    """Elements produced by every layer of one backbone pass on a side x side input."""
    total, hw = 0, side
    for w in arch.widths:
        total += 2 * w * hw * hw          # conv output, ReLU output
        hw //= 2
        total += w * hw * hw              # pooled
    return total + arch.widths[-1] + arch.embed_dim


def activation_elements(arch: ArchConfig, n: int, batch_size: int = 32) -> int:
    """Analytic per-batch activation count; affine in n by construction."""
    d, k = arch.embed_dim, arch.attn_hidden
    per_crop = backbone_activation_elements(arch) + 2 * k + 2   # hidden, tanh, score, weight
    fixed = backbone_activation_elements(arch) + d + 2 * d + 2 * 2  # aggregate, concat, logits, probs
    return batch_size * (fixed + n * per_crop)


@dataclass
class ScalingRow:
    n: int
    seconds: float
    activation_elements: int


@dataclass
class ScalingReport:
    rows: list[ScalingRow]
    time_fit: LinearFit
    activation_fit: LinearFit

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "seconds_per_probe_epoch", "activation_elements"])
        for r in self.rows:
            w.writerow([r.n, f"{r.seconds:.4f}", r.activation_elements])
        return buf.getvalue()


def scaling_report(arch: ArchConfig, n_values, probe_batches: int = 1, batch_size: int = 32,
                   image_side: int = 448, seed: int = 0, repeats: int = 1) -> ScalingReport:
    """Time ``probe_batches`` training steps per n and fit both series against n.

    Each timing is the minimum over ``repeats`` runs, which trims scheduler noise.
    """
    n_values = list(n_values)
    if len(set(n_values)) < 2:
        raise ValueError("need at least two distinct n values")
    if probe_batches < 1:
        raise ValueError("probe_batches must be >= 1")
    images = [synth_image([seed, 9, i], "fake" if i % 2 else "real",
                          SynthConfig(height=image_side, width=image_side)) for i in range(batch_size)]
    batch = [(img, i % 2) for i, img in enumerate(images)]
    rows = []
    for n in n_values:
        model = build_model(arch, seed)
        opt = make_optimizer(TrainConfig(n_crops=n, seed=seed), model)
        chunk = _chunk_for(n, True)
        best = math.inf
        for rep in range(repeats):
            t0 = time.perf_counter()
            for b in range(probe_batches):
                rng = make_rng(seed, 3, n, b)
                prepared = [prepare(img, n, rng) for img, _ in batch]
                labels = torch.tensor([y for _, y in batch])
                _loss_and_grads_prepared(model, prepared, labels, rng, chunk)
                opt.step()
            best = min(best, time.perf_counter() - t0)
        rows.append(ScalingRow(n, best, activation_elements(arch, n, batch_size)))
        log.info("scaling n=%d %.2fs", n, best)
    ns = [r.n for r in rows]
    return ScalingReport(
        rows,
        linear_fit(ns, [r.seconds for r in rows]),
        linear_fit(ns, [r.activation_elements for r in rows]),
    )

