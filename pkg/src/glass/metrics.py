"""Classification metrics, least-squares fits and classifier weight statistics."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    ece: float
    loss: float
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LinearFit:
    intercept: float
    slope: float
    r_squared: float

    def __str__(self):
        return f"{self.intercept:.2f} + {self.slope:.2f} x n (R^2 {self.r_squared:.3f})"


def _as_arrays(labels, probs):
    y = np.asarray(labels, dtype=np.int64)
    p = np.asarray(probs, dtype=np.float64)
    if y.shape != p.shape or y.ndim != 1:
        raise ValueError(f"labels and scores must be 1-D of equal length, got {y.shape} and {p.shape}")
    if y.size == 0:
        raise ValueError("empty input")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    return y, p


def binary_metrics(labels, prob_fake, threshold: float = 0.5) -> dict:
    """Accuracy plus macro-averaged precision, recall and F1 (0/0 -> 0)."""
    y, p = _as_arrays(labels, prob_fake)
    pred = (p >= threshold).astype(np.int64)
    prec, rec, f1 = [], [], []
    for cls in (0, 1):
        tp = np.sum((pred == cls) & (y == cls))
        fp = np.sum((pred == cls) & (y != cls))
        fn = np.sum((pred != cls) & (y == cls))
        pc = tp / (tp + fp) if tp + fp else 0.0
        rc = tp / (tp + fn) if tp + fn else 0.0
        prec.append(pc)
        rec.append(rc)
        f1.append(2 * pc * rc / (pc + rc) if pc + rc else 0.0)
    return {
        "accuracy": float(np.mean(pred == y)),
        "precision": float(np.mean(prec)),
        "recall": float(np.mean(rec)),
        "f1": float(np.mean(f1)),
    }


def auc(labels, scores) -> float:
    """Mann-Whitney estimate of ROC AUC; ties count one half."""
    y, s = _as_arrays(labels, scores)
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs both classes present")
    # midranks handle ties
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[y == 1].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def ece(labels, prob_fake, bins: int = 15) -> float:
    """Binned |accuracy - confidence| with equal-width bins over [0.5, 1]."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    y, p = _as_arrays(labels, prob_fake)
    conf = np.maximum(p, 1.0 - p)
    correct = ((p >= 0.5).astype(np.int64) == y).astype(np.float64)
    idx = np.minimum(((conf - 0.5) / 0.5 * bins).astype(np.int64), bins - 1)
    total = 0.0
    for b in range(bins):
        m = idx == b
        if m.any():
            total += m.sum() / y.size * abs(correct[m].mean() - conf[m].mean())
    return float(total)


def cross_entropy(labels, prob_fake, eps: float = 1e-12) -> float:
    y, p = _as_arrays(labels, prob_fake)
    p_true = np.where(y == 1, p, 1.0 - p)
    return float(-np.mean(np.log(np.clip(p_true, eps, 1.0))))


def metrics_report(labels, prob_fake, loss: float | None = None, bins: int = 15) -> MetricsReport:
    y, p = _as_arrays(labels, prob_fake)
    m = binary_metrics(y, p)
    area = auc(y, p) if 0 < y.sum() < y.size else None
    return MetricsReport(
        m["accuracy"], m["precision"], m["recall"], m["f1"], area, ece(y, p, bins),
        cross_entropy(y, p) if loss is None else float(loss), int(y.size),
    )


def linear_fit(xs, ys) -> LinearFit:
    """Ordinary least squares with intercept; R^2 = 1 - SS_res / SS_tot."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D of equal length")
    if np.unique(x).size < 2:
        raise ValueError("need at least two distinct x values")
    xc = x - x.mean()
    yc = y - y.mean()
    ss_tot = float(yc @ yc)
    if ss_tot == 0.0:
        raise ValueError("ys have zero variance")
    slope = float(xc @ yc) / float(xc @ xc)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    r2 = 1.0 - float(resid @ resid) / ss_tot
    return LinearFit(intercept, slope, min(1.0, max(0.0, r2)))


HIST_BINS = 41


def weight_distribution(weight, bins: int = HIST_BINS) -> dict:
    """Column-split a (2, 2D) classifier weight into global and local halves.

    Both halves share one symmetric histogram range so they can be overlaid.
    """
    w = np.asarray(weight, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] % 2:
        raise ValueError(f"expected a (classes, 2D) weight matrix, got {w.shape}")
    d = w.shape[1] // 2
    halves = {"global": w[:, :d].ravel(), "local": w[:, d:].ravel()}
    bound = float(np.abs(w).max()) or 1.0
    edges = np.linspace(-bound, bound, bins + 1)
    out = {"edges": edges}
    for name, v in halves.items():
        counts, _ = np.histogram(v, bins=edges)
        out[name] = {
            "count": int(v.size), "mean": float(v.mean()), "std": float(v.std()),
            "min": float(v.min()), "max": float(v.max()), "histogram": counts,
        }
    return out


def weight_distribution_csv(dist: dict) -> tuple[str, str]:
    """(stats CSV, histogram CSV)."""
    stats = io.StringIO()
    w = csv.writer(stats, lineterminator="\n")
    w.writerow(["half", "count", "mean", "std", "min", "max"])
    for half in ("global", "local"):
        s = dist[half]
        w.writerow([half, s["count"], repr(s["mean"]), repr(s["std"]), repr(s["min"]), repr(s["max"])])
    hist = io.StringIO()
    w = csv.writer(hist, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "global_count", "local_count"])
    edges = dist["edges"]
    for i in range(len(edges) - 1):
        w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])),
                    int(dist["global"]["histogram"][i]), int(dist["local"]["histogram"][i])])
    return stats.getvalue(), hist.getvalue()
