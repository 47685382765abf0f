"""Command-line interface.

Subcommands: evaluate | baseline | ensemble | calibrate | disagree |
sweep | train | folds. Exit codes: 0 success, 1 validation/usage error,
2 I/O or file-format error. Reports are byte-identical for identical
configs and inputs; GAZEKIT_THREADS caps worker threads (0 = auto).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, calibration, ensemble, io, metrics, plots, report
from .baselines import KdeSpec
from .errors import FormatError, GazekitError, ValidationError
from .grids import Dataset, DensityGrid, FixationSet
from .metrics import Metric
from .readout import ReadoutModel, TrainConfig, forward, make_folds, train, write_checkpoint
from .report import ReportConfig, to_json

METRIC_FLAGS = {
    "ig": Metric.IG,
    "ll": Metric.LL,
    "auc": Metric.AUC,
    "sauc": Metric.SAUC,
    "nss": Metric.NSS,
    "cc": Metric.CC,
    "kldiv": Metric.KLDIV,
    "sim": Metric.SIM,
}


class Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_named_dir(value: str) -> tuple[str, Path]:
    if "=" not in value:
        raise ValidationError(f"expected NAME=DIR, got {value!r}")
    name, _, path = value.partition("=")
    if not name or not path:
        raise ValidationError(f"expected NAME=DIR, got {value!r}")
    return name, Path(path)


def load_density_dir(path: Path) -> dict[str, DensityGrid]:
    """image_id -> density from <image_id>.fdf1 files in a directory."""
    if not path.is_dir():
        raise FileNotFoundError(f"density directory {path} does not exist")
    out = {}
    for file in sorted(path.glob("*.fdf1")):
        out[file.stem] = io.read_density(file.read_bytes())
    if not out:
        raise ValidationError(f"no .fdf1 files in {path}")
    return out


def _build_dataset(
    fixations_path: Path | None, model_dirs: list[tuple[str, Path]]
) -> Dataset:
    densities = {}
    images: dict[str, tuple[int, int]] = {}
    for name, path in model_dirs:
        for image_id, grid in load_density_dir(path).items():
            densities[(name, image_id)] = grid
            known = images.get(image_id)
            if known is not None and known != grid.shape:
                raise ValidationError(
                    f"image {image_id!r} has conflicting shapes {known} and {grid.shape}"
                )
            images[image_id] = grid.shape
    fixations = FixationSet(())
    if fixations_path is not None:
        fixations = io.read_fixations(fixations_path.read_text(encoding="utf-8"))
    return Dataset(images, fixations, densities)


def _kde_spec(args) -> KdeSpec:
    grid = tuple(float(s) for s in args.kde_grid.split(","))
    return KdeSpec(
        bandwidth=args.kde_bandwidth, bandwidth_grid=grid, regularizer_eps=args.kde_eps
    )


def _add_kde_flags(parser) -> None:
    parser.add_argument(
        "--kde-grid",
        default="1,2,4,8,16,32",
        help="comma-separated bandwidth candidates (pixels)",
    )
    parser.add_argument("--kde-bandwidth", type=float, default=2.0,
                        help="fallback bandwidth when selection is impossible")
    parser.add_argument("--kde-eps", type=float, default=1e-4,
                        help="uniform mass mixed into KDE densities")


def _write_json(payload, out: str | None) -> None:
    text = to_json(payload) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        io.write_text_atomic(out, text)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    io.write_text_atomic(path, "\n".join(lines) + "\n")


# --- evaluate ---------------------------------------------------------------


def cmd_evaluate(args) -> int:
    model_dirs = [_parse_named_dir(m) for m in args.model]
    baseline_dir = _parse_named_dir(args.baseline) if args.baseline else None
    all_dirs = model_dirs + ([baseline_dir] if baseline_dir else [])
    dataset = _build_dataset(Path(args.fixations), all_dirs)
    if len(dataset.fixations) == 0:
        raise ValidationError("fixation file contains no fixations")

    spec = _kde_spec(args)
    config = ReportConfig(
        sigma_emp=args.sigma_emp,
        kde=spec,
        crossvalidate_cb=args.crossvalidate_cb,
        gold_loo=not args.gold_pooled,
        include_per_image=not args.no_per_image,
    )
    baseline = (
        dataset.model_densities(baseline_dir[0]) if baseline_dir else None
    )

    if args.metric == "all":
        # the baseline is reported as the center-bias row, not a model row
        model_only = {
            (m, i): g
            for (m, i), g in dataset.densities.items()
            if baseline_dir is None or m != baseline_dir[0]
        }
        table = report.full_report(
            Dataset(dataset.images, dataset.fixations, model_only), config, baseline
        )
        _write_json(table, args.out)
        if args.plot_data:
            plot_dir = Path(args.plot_data)
            plot_dir.mkdir(parents=True, exist_ok=True)
            rows = [
                [r["model"]] + [r[c] for c in table["columns"]] for r in table["rows"]
            ]
            _write_csv(plot_dir / "report.csv", ["model"] + table["columns"], rows)
            plots.report_figure(table["rows"], plot_dir / "report.png")
        return 0

    metric = METRIC_FLAGS[args.metric]
    if metric == Metric.IG and baseline is None:
        baseline, _ = report.centerbias_densities(dataset, spec, args.crossvalidate_cb)
    payload: dict = {}
    for name, _ in model_dirs:
        rep = report.evaluate_metric(
            dataset.model_densities(name),
            dataset,
            metric,
            baseline=baseline,
            sigma_emp=args.sigma_emp,
        )
        payload[name] = rep.to_json_dict()
    ig_diff = None
    if metric == Metric.IG and len(model_dirs) == 2:
        ig_diff = metrics.per_image_ig_difference(
            dataset.model_densities(model_dirs[0][0]),
            dataset.model_densities(model_dirs[1][0]),
            baseline,
            dataset.fixations,
        )
    out = payload[model_dirs[0][0]] if len(model_dirs) == 1 else payload
    if ig_diff is not None:
        out = {
            "models": payload,
            "ig_difference": {
                "a_minus_b": [model_dirs[0][0], model_dirs[1][0]],
                "per_image": {k: ig_diff.per_image[k] for k in sorted(ig_diff.per_image)},
                "mean": ig_diff.mean,
                "std": ig_diff.std,
            },
        }
    _write_json(out, args.out)
    if args.plot_data:
        plot_dir = Path(args.plot_data)
        plot_dir.mkdir(parents=True, exist_ok=True)
        for name, rep in payload.items():
            rows = [[img, val] for img, val in rep["per_image"].items()]
            _write_csv(plot_dir / f"{name}_{args.metric}.csv", ["image_id", args.metric], rows)
        if ig_diff is not None:
            rows = [[img, ig_diff.per_image[img]] for img in sorted(ig_diff.per_image)]
            _write_csv(plot_dir / "ig_difference.csv", ["image_id", "ig_difference"], rows)
            plots.ig_difference_figure(ig_diff.per_image, plot_dir / "ig_difference.png")
    return 0


# --- baseline ---------------------------------------------------------------


def cmd_baseline(args) -> int:
    fixations = io.read_fixations(Path(args.fixations).read_text(encoding="utf-8"))
    images = io.read_image_registry(Path(args.images).read_text(encoding="utf-8"))
    dataset = Dataset(images, fixations)
    spec = _kde_spec(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary: dict = {"kind": args.kind, "bandwidths": {}}
    image_ids = fixations.image_ids()
    for img in image_ids:
        hw = images[img]
        if args.kind == "centerbias":
            cb = baselines.centerbias(
                fixations, images, hw, spec,
                exclude_image=img if args.crossvalidate_cb else None,
            )
            grid, bandwidth = cb.density, cb.bandwidth
        elif args.kind == "gold":
            gold = baselines.gold_standard(fixations.points_for(img), hw, spec)
            grid, bandwidth = gold.density, gold.bandwidth
        else:
            grid = baselines.empirical_map(fixations.pixels_for(img), hw, args.sigma_emp)
            bandwidth = args.sigma_emp
        io.write_bytes_atomic(out_dir / f"{img}.fdf1", io.write_density(grid))
        summary["bandwidths"][img] = bandwidth
    io.write_text_atomic(out_dir / "summary.json", to_json(summary) + "\n")
    return 0


# --- ensemble ---------------------------------------------------------------


def cmd_ensemble(args) -> int:
    model_dirs = [_parse_named_dir(m) for m in args.model]
    baseline_dir = _parse_named_dir(args.baseline) if args.baseline else None
    all_dirs = model_dirs + ([baseline_dir] if baseline_dir else [])
    dataset = _build_dataset(Path(args.fixations) if args.fixations else None, all_dirs)

    if args.dsre:
        if not args.dsre_names:
            raise ValidationError("--dsre needs --dsre-names")
        names = args.dsre_names.split(",")
        mixed = ensemble.build_dsre(dataset, names, args.dsre)
        member_names = [f"{n}#{i}" for n in names for i in range(args.dsre)]
        mixture_name = f"dsre_x{args.dsre}"
    else:
        if not args.weights:
            raise ValidationError("provide --weights or --dsre")
        weights = [float(w) for w in args.weights.split(",")]
        member_names = [name for name, _ in model_dirs]
        if len(weights) != len(member_names):
            raise ValidationError(
                f"{len(weights)} weights for {len(member_names)} models"
            )
        spec = ensemble.MixtureSpec(tuple(zip(member_names, weights)))
        image_ids = sorted(dataset.model_densities(member_names[0]))
        mixed = {
            img: ensemble.mix(
                [dataset.density(n, img) for n in member_names], spec.weights()
            )
            for img in image_ids
        }
        mixture_name = "mixture"

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for img, grid in sorted(mixed.items()):
        io.write_bytes_atomic(out_dir / f"{img}.fdf1", io.write_density(grid))

    by_model = {n: dataset.model_densities(n) for n in member_names}
    js = {
        img: ensemble.js_divergence([by_model[n][img] for n in member_names])
        for img in sorted(mixed)
    }
    summary: dict = {
        "mixture": mixture_name,
        "members": member_names,
        "js_divergence_bits": js,
    }
    if args.fixations and baseline_dir:
        baseline = dataset.model_densities(baseline_dir[0])
        gains_before = {
            n: metrics.information_gain(by_model[n], baseline, dataset.fixations).aggregate
            for n in member_names
        }
        gain_after = metrics.information_gain(mixed, baseline, dataset.fixations).aggregate
        summary["ig_before"] = gains_before
        summary["ig_after"] = gain_after
    io.write_text_atomic(out_dir / "summary.json", to_json(summary) + "\n")
    return 0


# --- calibrate ----------------------------------------------------------------


def cmd_calibrate(args) -> int:
    name, path = _parse_named_dir(args.model)
    dataset = _build_dataset(Path(args.fixations), [(name, path)])
    hist = calibration.calibration_histogram(
        dataset.model_densities(name), dataset.fixations, args.quantiles
    )
    out_path = Path(args.out)
    _write_json(hist.to_json_dict(), args.out)
    csv_path = out_path.with_name(out_path.stem + "_bins.csv")
    rows = [
        [i, hist.bins[i], hist.bin_masses[i], hist.expected[i]]
        for i in range(len(hist.bins))
    ]
    _write_csv(csv_path, ["bin", "count", "mass", "expected"], rows)
    plots.calibration_figure(hist, out_path.with_suffix(".png"))
    return 0


# --- disagree -----------------------------------------------------------------


def cmd_disagree(args) -> int:
    model_dirs = [_parse_named_dir(m) for m in args.model]
    if len(model_dirs) < 2:
        raise ValidationError("disagreement ranking needs at least two --model")
    dataset = _build_dataset(None, model_dirs)
    ranking = ensemble.disagreement_ranking(
        {name: dataset.model_densities(name) for name, _ in model_dirs}
    )
    payload = [{"image_id": img, "js_bits": js} for img, js in ranking]
    _write_json({"models": [n for n, _ in model_dirs], "ranking": payload}, args.out)
    if args.plot_data:
        plot_dir = Path(args.plot_data)
        plot_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(
            plot_dir / "disagreement.csv",
            ["rank", "image_id", "js_bits"],
            [[i + 1, img, js] for i, (img, js) in enumerate(ranking)],
        )
        plots.disagreement_figure(ranking, plot_dir / "disagreement.png")
    return 0


# --- sweep --------------------------------------------------------------------


def cmd_sweep(args) -> int:
    model_dirs = [_parse_named_dir(m) for m in args.model]
    if len(model_dirs) != 2:
        raise ValidationError("sweep needs exactly two --model")
    baseline_dir = _parse_named_dir(args.baseline) if args.baseline else None
    all_dirs = model_dirs + ([baseline_dir] if baseline_dir else [])
    dataset = _build_dataset(Path(args.fixations), all_dirs)
    if baseline_dir:
        baseline = dataset.model_densities(baseline_dir[0])
    else:
        baseline, _ = report.centerbias_densities(dataset, _kde_spec(args))
    curve = ensemble.weight_sweep(
        dataset.model_densities(model_dirs[0][0]),
        dataset.model_densities(model_dirs[1][0]),
        baseline,
        dataset.fixations,
        args.steps,
    )
    payload = {
        "first": model_dirs[0][0],
        "second": model_dirs[1][0],
        "curve": [{"weight": w, "ig": ig} for w, ig in curve],
    }
    _write_json(payload, args.out)
    if args.plot_data:
        plot_dir = Path(args.plot_data)
        plot_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(
            plot_dir / "sweep.csv",
            ["weight", "ig"],
            [[w, ig] for w, ig in curve],
        )
        plots.sweep_figure(curve, plot_dir / "sweep.png")
    return 0


# --- train --------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    features_dir = Path(cfg["features_dir"])
    fixations = io.read_fixations(
        Path(cfg["fixations"]).read_text(encoding="utf-8")
    )
    volumes = {}
    for file in sorted(features_dir.glob("*.ffv1")):
        volumes[file.stem] = io.read_features(file.read_bytes())
    if not volumes:
        raise ValidationError(f"no .ffv1 files in {features_dir}")
    shapes = {v.shape for v in volumes.values()}
    if len({s[1:] for s in shapes}) != 1 or len({s[0] for s in shapes}) != 1:
        raise ValidationError("training expects equal feature shapes across images")
    channels, h, w = next(iter(shapes))
    images = {img: (h, w) for img in volumes}
    dataset = Dataset(images, fixations)  # validates bounds

    spec = KdeSpec(
        bandwidth=cfg.get("kde_bandwidth", 2.0),
        bandwidth_grid=tuple(cfg.get("kde_grid", baselines.DEFAULT_BANDWIDTH_GRID)),
        regularizer_eps=cfg.get("kde_eps", 1e-4),
    )
    if "centerbias" in cfg:
        cb_grid = io.read_density(Path(cfg["centerbias"]).read_bytes())
    else:
        cb_grid = baselines.centerbias(fixations, images, (h, w), spec).density

    model = ReadoutModel.initialize(
        channels,
        cb_grid,
        hidden=tuple(cfg.get("hidden", (16, 32, 2))),
        seed=cfg.get("seed", 0),
        blur_sigma=cfg.get("init_blur_sigma", 2.0),
        alpha=cfg.get("init_alpha", 1.0),
    )
    train_cfg = TrainConfig(
        initial_lr=cfg.get("initial_lr", 0.001),
        decay_factor=cfg.get("decay_factor", 10.0),
        milestones=tuple(cfg.get("milestones", ())),
        epochs=cfg.get("epochs", 100),
        batch_size=cfg.get("batch_size", 1),
        seed=cfg.get("seed", 0),
        momentum=cfg.get("momentum", 0.9),
    )
    items = [
        (volumes[img], fixations.pixels_for(img))
        for img in sorted(volumes)
        if len(fixations.for_image(img)) > 0
    ]
    result = train(model, items, train_cfg)

    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "seed": train_cfg.seed,
        "schedule": {
            "initial_lr": train_cfg.initial_lr,
            "decay_factor": train_cfg.decay_factor,
            "milestones": list(train_cfg.milestones),
            "epochs": train_cfg.epochs,
            "batch_size": train_cfg.batch_size,
            "momentum": train_cfg.momentum,
        },
    }
    io.write_bytes_atomic(out_dir / "checkpoint.gzk", write_checkpoint(result.model, meta))
    io.write_bytes_atomic(out_dir / "centerbias.fdf1", io.write_density(cb_grid))
    _write_csv(
        out_dir / "loss_trace.csv",
        ["epoch", "nll_bits", "lr"],
        [[s.epoch, repr(s.nll_bits), repr(s.lr)] for s in result.trace],
    )
    if cfg.get("write_densities", False):
        dens_dir = out_dir / "densities"
        dens_dir.mkdir(exist_ok=True)
        for img in sorted(volumes):
            grid = forward(result.model, volumes[img])
            io.write_bytes_atomic(dens_dir / f"{img}.fdf1", io.write_density(grid))
    summary = {
        "epochs": len(result.trace),
        "final_nll_bits": result.trace[-1].nll_bits if result.trace else None,
        "blur_sigma": result.model.blur_sigma,
        "alpha": result.model.alpha,
    }
    io.write_text_atomic(out_dir / "train_summary.json", to_json(summary) + "\n")
    return 0


# --- folds --------------------------------------------------------------------


def cmd_folds(args) -> int:
    if args.images:
        ids = sorted(
            io.read_image_registry(Path(args.images).read_text(encoding="utf-8"))
        )
    elif args.fixations:
        fixations = io.read_fixations(Path(args.fixations).read_text(encoding="utf-8"))
        ids = fixations.image_ids()
    else:
        raise ValidationError("folds needs --images or --fixations")
    splits = make_folds(ids, folds=args.folds, seed=args.seed)
    payload = [
        {
            "rotation": s.rotation,
            "train": list(s.train),
            "val": list(s.val),
            "test": list(s.test),
        }
        for s in splits
    ]
    _write_json(payload, args.out)
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> Parser:
    parser = Parser(prog="gazekit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("evaluate", help="score model densities against fixations")
    p.add_argument("--fixations", required=True)
    p.add_argument("--model", action="append", required=True, metavar="NAME=DIR")
    p.add_argument("--baseline", metavar="NAME=DIR")
    p.add_argument("--metric", choices=list(METRIC_FLAGS) + ["all"], default="all")
    p.add_argument("--sigma-emp", type=float, default=2.0,
                   help="Gaussian width for empirical maps (pixels)")
    p.add_argument("--crossvalidate-cb", action="store_true",
                   help="fit the center bias leaving out the evaluated image")
    p.add_argument("--gold-pooled", action="store_true",
                   help="score the gold standard without leave-one-out")
    p.add_argument("--no-per-image", action="store_true")
    p.add_argument("--out", default=None)
    p.add_argument("--plot-data", default=None, metavar="DIR")
    _add_kde_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="emit center-bias/gold/empirical densities")
    p.add_argument("--fixations", required=True)
    p.add_argument("--images", required=True, help="CSV registry image_id,height,width")
    p.add_argument("--kind", choices=["centerbias", "gold", "empirical"],
                   default="centerbias")
    p.add_argument("--sigma-emp", type=float, default=2.0)
    p.add_argument("--crossvalidate-cb", action="store_true")
    p.add_argument("--out-dir", required=True)
    _add_kde_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("ensemble", help="mix model densities")
    p.add_argument("--model", action="append", required=True, metavar="NAME=DIR")
    p.add_argument("--weights", help="comma-separated, one per model")
    p.add_argument("--dsre", type=int, default=0, metavar="K",
                   help="equal-weight mixture of K instances per named model")
    p.add_argument("--dsre-names", help="comma-separated base model names")
    p.add_argument("--fixations")
    p.add_argument("--baseline", metavar="NAME=DIR")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("calibrate", help="quantile calibration histogram")
    p.add_argument("--fixations", required=True)
    p.add_argument("--model", required=True, metavar="NAME=DIR")
    p.add_argument("-k", "--quantiles", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("disagree", help="rank images by model disagreement")
    p.add_argument("--model", action="append", required=True, metavar="NAME=DIR")
    p.add_argument("--out", default=None)
    p.add_argument("--plot-data", default=None, metavar="DIR")
    p.set_defaults(func=cmd_disagree)

    p = sub.add_parser("sweep", help="IG of two-model mixtures over weights")
    p.add_argument("--fixations", required=True)
    p.add_argument("--model", action="append", required=True, metavar="NAME=DIR")
    p.add_argument("--baseline", metavar="NAME=DIR")
    p.add_argument("--steps", type=int, default=11)
    p.add_argument("--out", default=None)
    p.add_argument("--plot-data", default=None, metavar="DIR")
    _add_kde_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train the readout head from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("folds", help="deterministic cross-validation splits")
    p.add_argument("--images")
    p.add_argument("--fixations")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_folds)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (FormatError, OSError) as exc:
        print(f"gazekit: {exc}", file=sys.stderr)
        return 2
    except GazekitError as exc:
        print(f"gazekit: {exc}", file=sys.stderr)
        return 1
    except (json.JSONDecodeError, KeyError) as exc:
        print(f"gazekit: bad config: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
