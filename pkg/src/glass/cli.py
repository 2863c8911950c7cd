"""``glass`` command line: coverage analytics, sampling, synthetic data, training and reports."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import torch

from . import coverage as cov
from .imaging import (
    CROP_SIDE,
    SCHEMA_VERSION,
    DatasetManifest,
    DimensionError,
    ImageBuf,
    ImageError,
    decode_image,
    resize_bilinear,
    save_png,
    split_dataset,
    synth_corpus,
)
from .metrics import weight_distribution, weight_distribution_csv
from .model import ArchConfig, CheckpointError, build_model, load_checkpoint, save_checkpoint
from .sampler import make_rng, plan, sample_crops
from .training import (
    DivergenceError,
    TrainConfig,
    evaluate,
    load_samples,
    scaling_report,
    train,
)

log = logging.getLogger("glass")

ARCH_KEYS = ("embed_dim", "attn_hidden", "widths", "global_only")
DATA_KEYS = ("data", "ratios", "out_dir", "checkpoint", "split")
META_KEYS = ("schema_version", "command")


class UsageError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get("GLASS_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"GLASS_SEED must be an integer, got {raw!r}")


# --------------------------------------------------------------------------
# output helpers


def _write(path: Path, data) -> None:
    # temp name then rename, so a failed run never leaves a half-written file
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    if isinstance(data, bytes):
        tmp.write_bytes(data)
    else:
        tmp.write_text(data)
    os.replace(tmp, path)


def _json(obj) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **obj}, indent=2, sort_keys=True) + "\n"


def _write_run(out_dir: Path | None, command: str, resolved: dict) -> None:
    if out_dir is not None:
        _write(out_dir / "run.json", _json({"command": command, **resolved}))


def _markdown(header: list[str], rows: list[list]) -> str:
    cells = [[str(c) for c in header]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |" for r in cells]
    lines.insert(1, "|" + "|".join("-" * (w + 2) for w in widths) + "|")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# configuration for train / eval / compare


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def resolve_config(args, command: str) -> dict:
    """Merge defaults, the JSON config file, ``--set`` overrides and explicit flags."""
    allowed = set(TrainConfig.field_names()) | set(ARCH_KEYS) | set(DATA_KEYS) | set(META_KEYS)
    cfg = {**asdict(TrainConfig()), "embed_dim": 64, "attn_hidden": 128, "widths": [16, 32, 64],
           "global_only": False, "ratios": [0.70, 0.15, 0.15], "seed": default_seed()}
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text())
        unknown = set(raw) - allowed
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(raw)
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep or key not in allowed:
            raise UsageError(f"bad override {item!r}")
        cfg[key] = _parse_value(value)
    for key in ("data", "epochs", "n_crops", "batch_size", "checkpoint", "split"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out_dir", None) is not None:
        cfg["out_dir"] = str(args.out_dir)
    cfg.pop("schema_version", None)
    cfg.pop("command", None)
    cfg["widths"] = list(cfg["widths"])
    cfg["ratios"] = list(cfg["ratios"])
    return cfg


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**{k: cfg[k] for k in TrainConfig.field_names()})


def _arch(cfg: dict, kind: str = "glass") -> ArchConfig:
    return ArchConfig(cfg["embed_dim"], cfg["attn_hidden"], tuple(cfg["widths"]), cfg["dropout_rate"], kind)


def _load_manifest(cfg: dict) -> DatasetManifest:
    if not cfg.get("data"):
        raise UsageError("no data given (use --data or a config file)")
    path = Path(cfg["data"])
    if path.is_dir() and (path / "manifest.json").is_file():
        path = path / "manifest.json"
    if path.is_file():
        manifest = DatasetManifest.load(path)
    elif path.is_dir():
        manifest = DatasetManifest.from_directory(path)
    else:
        raise UsageError(f"no dataset at {path}")
    if any(e.split is None for e in manifest.entries):
        manifest = split_dataset(manifest, cfg["ratios"], cfg["seed"])
    return manifest


def _out_dir(cfg: dict) -> Path:
    if not cfg.get("out_dir"):
        raise UsageError("an output directory is required (--out-dir)")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands


def cmd_coverage(args) -> int:
    q = cov.CoverageQuery(args.height, args.width, args.crops)
    plan(args.height, args.width, args.crops)  # dimension check
    exact = cov.expected_coverage_exact(q)
    result = {"height": q.height, "width": q.width, "n": q.n, "strategy": exact.strategy.value,
              "exact_percent": exact.percent}
    print(f"{cov.round1(exact.percent):.1f} {exact.strategy.value}")
    if args.approx:
        approx = cov.expected_coverage_approx(q).percent
        result["approx_percent"] = approx
        print(f"approx {cov.round1(approx):.1f}")
    if args.mc_trials:
        mc = cov.mc_coverage(q, args.mc_trials, args.seed)
        result["mc_percent"], result["mc_stderr"], result["mc_trials"] = mc.percent, mc.stderr, args.mc_trials
        print(f"mc {mc.percent:.2f} +/- {mc.stderr:.2f} ({args.mc_trials} trials)")
    if args.out_dir:
        out = Path(args.out_dir)
        _write(out / "coverage.json", _json(result))
        _write_run(out, "coverage", {"height": args.height, "width": args.width, "crops": args.crops,
                                     "approx": args.approx, "mc_trials": args.mc_trials, "seed": args.seed})
    return 0


def _parse_sizes(raw: str) -> list[tuple[int, int]]:
    sizes = []
    for item in raw.split(","):
        w, _, h = item.strip().lower().partition("x")
        sizes.append((int(h), int(w)))
    return sizes


def cmd_coverage_table(args) -> int:
    sizes = _parse_sizes(args.sizes) if args.sizes else cov.TABLE_SIZES
    ns = [int(n) for n in args.ns.split(",") if n.strip()] if args.ns is not None else cov.TABLE_NS
    rows = cov.coverage_table(sizes, ns, args.mc_trials, args.seed)
    md = cov.table_markdown(rows)
    print(md, end="")
    if args.out_dir:
        out = Path(args.out_dir)
        _write(out / "coverage_table.csv", cov.table_csv(rows))
        _write(out / "coverage_table.md", md)
        _write_run(out, "coverage-table", {"sizes": [f"{w}x{h}" for h, w in sizes], "ns": ns,
                                           "mc_trials": args.mc_trials, "seed": args.seed})
    return 0


def _upscale_to_min(img: ImageBuf) -> ImageBuf:
    scale = CROP_SIDE / min(img.height, img.width)
    if scale <= 1:
        return img
    return resize_bilinear(img, max(CROP_SIDE, round(img.height * scale)), max(CROP_SIDE, round(img.width * scale)))


def cmd_sample(args) -> int:
    img = decode_image(args.image)
    if args.upscale:
        img = _upscale_to_min(img)
    p = plan(img.height, img.width, args.crops)
    crops, rects = sample_crops(img, args.crops, make_rng(args.seed))
    print(f"strategy {p.strategy.value}, grid size {p.grid_size}, {len(rects)} crops")
    out = Path(args.out_dir)
    for i, crop in enumerate(crops):
        tmp = out / f"crop_{i:02d}.png.partial"
        out.mkdir(parents=True, exist_ok=True)
        save_png(crop, tmp)
        os.replace(tmp, out / f"crop_{i:02d}.png")
    _write(out / "rects.json", _json({"strategy": p.strategy.value, "grid_size": p.grid_size,
                                      "height": img.height, "width": img.width,
                                      "rects": [r.to_dict() for r in rects]}))
    _write_run(out, "sample", {"image": str(args.image), "crops": args.crops, "seed": args.seed,
                               "upscale": args.upscale})
    return 0


def cmd_synth(args) -> int:
    counts = (args.count, args.val_count, args.test_count)
    total = sum(counts)
    ratios = tuple(c / total for c in counts)
    h = args.height or args.size
    w = args.width or args.size
    manifest = synth_corpus(total, h, w, args.seed, args.out_dir, ratios=ratios)
    sizes = {s: len(manifest.subset(s)) for s in ("train", "val", "test")}
    print(f"wrote {len(manifest.entries)} images to {args.out_dir}: {sizes}")
    _write_run(Path(args.out_dir), "synth", {"count": args.count, "val_count": args.val_count,
                                             "test_count": args.test_count, "height": h, "width": w,
                                             "seed": args.seed})
    return 0


def _train_one(cfg: dict, kind: str, manifest: DatasetManifest, out: Path, prefix: str = ""):
    tc = _train_config(cfg)
    train_set = load_samples(manifest.subset("train"))
    val_set = load_samples(manifest.subset("val"))
    model = build_model(_arch(cfg, kind), tc.seed)
    t0 = time.perf_counter()
    result = train(model, train_set, val_set, tc)
    log.info("%s training took %.1fs (best epoch %d)", kind, time.perf_counter() - t0, result.best_epoch)
    save_checkpoint(result.model, out / f"{prefix}model.ckpt", {"epochs": tc.epochs})
    save_checkpoint(result.best_model, out / f"{prefix}best.ckpt", {"epoch": result.best_epoch})
    _write(out / f"{prefix}history.csv", result.history.to_csv())
    return result


def cmd_train(args) -> int:
    cfg = resolve_config(args, "train")
    out = _out_dir(cfg)
    manifest = _load_manifest(cfg)
    if args.global_only:
        cfg["global_only"] = True
    kind = "global_only" if cfg["global_only"] else "glass"
    result = _train_one(cfg, kind, manifest, out)
    last = result.history.records[-1] if result.history.records else None
    if last:
        print(f"epoch {last.epoch}: train_loss {last.train_loss:.4f} val_acc {last.val_acc:.4f}; "
              f"best epoch {result.best_epoch}")
    _write_run(out, "train", cfg)
    return 0


def _report_json(report, records=None) -> str:
    body = {"metrics": report.to_dict()}
    if records is not None:
        body["images"] = [r.to_dict() for r in records]
    return _json(body)


def cmd_eval(args) -> int:
    cfg = resolve_config(args, "eval")
    out = _out_dir(cfg)
    if not cfg.get("checkpoint"):
        raise UsageError("--checkpoint is required")
    model = load_checkpoint(cfg["checkpoint"])
    split = cfg.get("split") or "test"
    entries = _load_manifest(cfg).subset(split)
    if not entries:
        raise UsageError(f"split {split!r} is empty")
    report, records = evaluate(model, load_samples(entries), cfg["n_crops"], cfg["seed"])
    _write(out / "metrics.json", _json({"split": split, "metrics": report.to_dict()}))
    _write(out / "predictions.json", _json({"images": [r.to_dict() for r in records]}))
    print(f"{split}: accuracy {report.accuracy:.4f} auc {report.auc} f1 {report.f1:.4f} ece {report.ece:.4f}")
    _write_run(out, "eval", cfg)
    return 0


def cmd_compare(args) -> int:
    """GLASS and the global-only baseline with the same data, seed and epoch budget."""
    cfg = resolve_config(args, "compare")
    out = _out_dir(cfg)
    manifest = _load_manifest(cfg)
    test_set = load_samples(manifest.subset("test"))
    rows, reports = [], {}
    for kind in ("glass", "global_only"):
        t0 = time.perf_counter()
        result = _train_one(cfg, kind, manifest, out, prefix=f"{kind}_")
        report, records = evaluate(result.best_model, test_set, cfg["n_crops"], cfg["seed"])
        seconds = time.perf_counter() - t0
        reports[kind] = report
        _write(out / f"{kind}_metrics.json", _report_json(report, records))
        rows.append([kind, f"{report.accuracy:.4f}", f"{report.auc:.4f}" if report.auc is not None else "",
                     f"{report.f1:.4f}", f"{report.precision:.4f}", f"{report.recall:.4f}",
                     f"{report.ece:.4f}", result.best_epoch, f"{seconds:.1f}"])
    header = ["model", "accuracy", "auc", "f1", "precision", "recall", "ece", "best_epoch", "seconds"]
    _write(out / "compare.csv", ",".join(header) + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))
    md = _markdown(header, rows)
    _write(out / "compare.md", md)
    print(md, end="")
    gap = reports["glass"].accuracy - reports["global_only"].accuracy
    print(f"accuracy gain of GLASS over global-only: {100 * gap:+.1f} points")
    _write_run(out, "compare", cfg)
    return 0


def cmd_scaling(args) -> int:
    cfg = resolve_config(args, "scaling")
    out = _out_dir(cfg)
    ns = [int(n) for n in args.n_values.split(",")]
    report = scaling_report(_arch(cfg), ns, args.probe_batches, args.batch_size, seed=cfg["seed"],
                            repeats=args.repeats)
    _write(out / "scaling.csv", report.to_csv())
    fits = [["seconds_per_probe_epoch", report.time_fit], ["activation_elements", report.activation_fit]]
    _write(out / "scaling_fits.csv", "series,intercept,slope,r_squared\n" + "".join(
        f"{name},{repr(f.intercept)},{repr(f.slope)},{repr(f.r_squared)}\n" for name, f in fits))
    md = _markdown(["series", "linear fit", "R^2"],
                   [[name, f"{f.intercept:.4g} + {f.slope:.4g} x n", f"{f.r_squared:.3f}"] for name, f in fits])
    _write(out / "scaling.md", md)
    print(report.to_csv() + "\n" + md, end="")
    _write_run(out, "scaling", {**cfg, "n_values": ns, "probe_batches": args.probe_batches,
                                "scaling_batch_size": args.batch_size, "repeats": args.repeats})
    return 0


def cmd_weights(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if model.arch.kind != "glass":
        raise UsageError("weight halves need a two-stream checkpoint")
    dist = weight_distribution(model.classifier.weight.detach().numpy(), args.bins)
    stats_csv, hist_csv = weight_distribution_csv(dist)
    out = Path(args.out_dir)
    _write(out / "weights_stats.csv", stats_csv)
    _write(out / "weights_hist.csv", hist_csv)
    print(stats_csv, end="")
    _write_run(out, "weights", {"checkpoint": str(args.checkpoint), "bins": args.bins})
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glass", description=__doc__)
    parser.add_argument("--threads", type=int, default=None,
                        help="torch intra-op threads; 1 gives bit-reproducible runs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def seeded(p):
        p.add_argument("--seed", type=int, default=None, help="default: $GLASS_SEED or 0")
        return p

    p = seeded(sub.add_parser("coverage", help="expected crop coverage for one image size"))
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--crops", type=int, required=True)
    p.add_argument("--approx", action="store_true", help="also print the closed-form approximation")
    p.add_argument("--mc-trials", type=int, default=0)
    p.add_argument("--out-dir", type=Path)
    p.set_defaults(func=cmd_coverage)

    p = seeded(sub.add_parser("coverage-table", help="coverage grid over image sizes and crop counts"))
    p.add_argument("--sizes", help="comma list of WxH, default: the ten reference sizes")
    p.add_argument("--ns", help="comma list of crop counts, default 2,4,...,16")
    p.add_argument("--mc-trials", type=int, default=0)
    p.add_argument("--out-dir", type=Path)
    p.set_defaults(func=cmd_coverage_table)

    p = seeded(sub.add_parser("sample", help="sample local crops from one image"))
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--crops", type=int, required=True)
    p.add_argument("--upscale", action="store_true", help="upscale images smaller than 224 first")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_sample)

    p = seeded(sub.add_parser("synth", help="write the synthetic real/fake corpus"))
    p.add_argument("--count", type=int, default=250, help="training images per class")
    p.add_argument("--val-count", type=int, default=50, help="validation images per class")
    p.add_argument("--test-count", type=int, default=100, help="test images per class")
    p.add_argument("--size", type=int, default=448)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    def run_opts(p, need_data=True):
        seeded(p)
        p.add_argument("--config", type=Path)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out-dir", type=Path)
        if need_data:
            p.add_argument("--data", help="manifest.json or dataset root")
            p.add_argument("--epochs", type=int)
            p.add_argument("--n-crops", dest="n_crops", type=int)
            p.add_argument("--batch-size", dest="batch_size", type=int)
        return p

    p = run_opts(sub.add_parser("train", help="train a model"))
    p.add_argument("--global-only", action="store_true", help="train the resized-view baseline")
    p.set_defaults(func=cmd_train)

    p = run_opts(sub.add_parser("eval", help="evaluate a checkpoint"))
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)

    p = run_opts(sub.add_parser("compare", help="GLASS vs global-only with matched budget"))
    p.set_defaults(func=cmd_compare)

    p = run_opts(sub.add_parser("scaling", help="time and activation count vs number of crops"), need_data=False)
    p.add_argument("--n-values", default="1,2,4,8,16")
    p.add_argument("--probe-batches", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--repeats", type=int, default=1)
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("weights", help="classifier weight distribution by half")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--bins", type=int, default=41)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_weights)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.threads:
        torch.set_num_threads(args.threads)
    try:
        if getattr(args, "seed", "absent") is None and args.command in ("coverage", "coverage-table",
                                                                          "sample", "synth"):
            args.seed = default_seed()
        return args.func(args)
    except (UsageError, ImageError, DimensionError, CheckpointError, DivergenceError,
            ValueError, MemoryError, OSError, KeyError) as exc:
        print(f"glass {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
