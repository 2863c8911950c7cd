"""Expected pixel coverage of the local crop sampler.

Exact expectation, its closed-form approximation, a Monte Carlo oracle that
runs the real sampler, and the image-size by crop-count table.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .imaging import CROP_SIDE, DimensionError
from .sampler import Strategy, make_rng, plan, sample_rects

MC_PIXEL_CAP = 32_000_000

# (height, width) rows of the reference table, smallest first
TABLE_SIZES = [
    (224, 224), (256, 256), (480, 640), (768, 1024), (720, 1280),
    (1080, 1920), (1440, 2560), (2160, 3840), (2880, 5120), (4320, 7680),
]
TABLE_NS = [2, 4, 6, 8, 10, 12, 14, 16]


class Method(str, enum.Enum):
    EXACT_SUM = "exact_sum"
    CLOSED_FORM_APPROX = "closed_form_approx"
    GRID_EXACT = "grid_exact"
    MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class CoverageQuery:
    height: int
    width: int
    n: int
    crop_side: int = CROP_SIDE

    def __post_init__(self):
        p = self.crop_side
        if p < 1:
            raise ValueError(f"crop side must be positive, got {p}")
        if self.height < p or self.width < p:
            raise DimensionError(f"image {self.height}x{self.width} is smaller than the {p}px crop")
        if self.n < 1:
            raise ValueError(f"need at least one crop, got n={self.n}")


@dataclass(frozen=True)
class CoverageResult:
    percent: float
    strategy: Strategy
    method: Method
    stderr: float | None = None


def row_cover_count(y, extent: int, p: int = CROP_SIDE):
    """Number of crop offsets t in [0, extent - p] whose rows [t, t + p) contain y.

    Works elementwise on arrays.
    """
    y = np.asarray(y)
    if extent < p or np.any(y < 0) or np.any(y >= extent):
        raise ValueError("need 0 <= y < extent and extent >= p")
    count = np.minimum(y, extent - p) - np.maximum(0, y - p + 1) + 1
    return int(count) if count.ndim == 0 else count


def _strategy(q: CoverageQuery) -> Strategy:
    # the grid rule is defined in units of 224 regardless of the crop side
    return plan(q.height, q.width, q.n).strategy


def uniform_coverage_percent(height: int, width: int, p: int, n: int) -> float:
    """Expected covered percentage for n independent uniformly placed p x p crops."""
    h, w = height, width
    # the double sum only depends on (a_y, b_x), so group equal counts
    a_vals, a_mult = np.unique(row_cover_count(np.arange(h), h, p), return_counts=True)
    b_vals, b_mult = np.unique(row_cover_count(np.arange(w), w, p), return_counts=True)
    prob = np.outer(a_vals / (h - p + 1), b_vals / (w - p + 1))
    covered = 1.0 - (1.0 - prob) ** n
    total = float(a_mult @ covered @ b_mult)
    return min(100.0, 100.0 * total / (h * w))


def expected_coverage_exact(q: CoverageQuery) -> CoverageResult:
    strategy = _strategy(q)
    h, w, p, n = q.height, q.width, q.crop_side, q.n
    if strategy is Strategy.STRATIFIED_GRID:
        return CoverageResult(100.0 * n * p * p / (h * w), strategy, Method.GRID_EXACT)
    return CoverageResult(uniform_coverage_percent(h, w, p, n), strategy, Method.EXACT_SUM)


def expected_coverage_approx(q: CoverageQuery) -> CoverageResult:
    """Treat every pixel as covered with probability p^2 / (HW)."""
    frac = q.crop_side ** 2 / (q.height * q.width)
    return CoverageResult(100.0 * (1.0 - (1.0 - frac) ** q.n), _strategy(q), Method.CLOSED_FORM_APPROX)


def mc_coverage(q: CoverageQuery, trials: int = 1000, seed: int = 0,
                pixel_cap: int = MC_PIXEL_CAP) -> CoverageResult:
    """Run the sampler ``trials`` times on a bitmap and average the covered fraction."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if q.crop_side != CROP_SIDE:
        raise ValueError("the sampler only produces 224-pixel crops")
    if q.height * q.width > pixel_cap:
        raise MemoryError(f"{q.height}x{q.width} bitmap exceeds the {pixel_cap}-pixel cap")
    rng = make_rng(seed)
    bitmap = np.zeros((q.height, q.width), dtype=bool)
    counts = np.empty(trials, dtype=np.int64)
    p = q.crop_side
    strategy = None
    for t in range(trials):
        bitmap[:] = False
        grid, rects = sample_rects(q.height, q.width, q.n, rng)
        strategy = grid.strategy
        for r in rects:
            bitmap[r.top:r.top + p, r.left:r.left + p] = True
        counts[t] = np.count_nonzero(bitmap)
    area = q.height * q.width
    mean = 100.0 * int(counts.sum()) / (trials * area)
    if trials > 1:
        var = float(np.var(counts, ddof=1))
        stderr = 100.0 * np.sqrt(var / trials) / area
    else:
        stderr = float("nan")
    return CoverageResult(mean, strategy, Method.MONTE_CARLO, stderr)


def round1(x: float) -> float:
    """Round half away from zero to one decimal."""
    return float(Decimal(repr(x)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass
class CoverageRow:
    height: int
    width: int
    n: int
    strategy: Strategy
    exact_percent: float
    approx_percent: float
    mc_percent: float | None = None
    mc_stderr: float | None = None


CSV_COLUMNS = ["height", "width", "n", "strategy", "exact_percent", "approx_percent", "mc_percent", "mc_stderr"]


def coverage_table(sizes=TABLE_SIZES, ns=TABLE_NS, mc_trials: int = 0, seed: int = 0) -> list[CoverageRow]:
    rows = []
    for h, w in sizes:
        for n in ns:
            q = CoverageQuery(h, w, n)
            exact = expected_coverage_exact(q)
            row = CoverageRow(h, w, n, exact.strategy, round1(exact.percent),
                              round1(expected_coverage_approx(q).percent))
            if mc_trials:
                mc = mc_coverage(q, mc_trials, seed)
                row.mc_percent, row.mc_stderr = mc.percent, mc.stderr
            rows.append(row)
    return rows


def table_csv(rows: list[CoverageRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([
            r.height, r.width, r.n, r.strategy.value, f"{r.exact_percent:.1f}", f"{r.approx_percent:.1f}",
            "" if r.mc_percent is None else f"{r.mc_percent:.4f}",
            "" if r.mc_stderr is None else f"{r.mc_stderr:.4f}",
        ])
    return buf.getvalue()


def table_markdown(rows: list[CoverageRow]) -> str:
    """Image sizes down, crop counts across; each cell 'percent (strategy)'."""
    if not rows:
        return ""
    ns = sorted({r.n for r in rows})
    sizes = list(dict.fromkeys((r.height, r.width) for r in rows))
    cell = {(r.height, r.width, r.n): f"{r.exact_percent:.1f} ({r.strategy.value})" for r in rows}
    header = ["Image size (W x H)"] + [f"n={n}" for n in ns]
    body = [[f"{w} x {h}"] + [cell.get((h, w, n), "") for n in ns] for h, w in sizes]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]

    def fmt(line):
        return "| " + " | ".join(s.ljust(wd) for s, wd in zip(line, widths)) + " |"

    out = [fmt(header), "|" + "|".join("-" * (wd + 2) for wd in widths) + "|"]
    out += [fmt(line) for line in body]
    return "\n".join(out) + "\n"
