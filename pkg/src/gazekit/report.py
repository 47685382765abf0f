"""Dataset-level evaluation and the full metric table.

Every metric is scored on the saliency map with highest expected value
under the predicted density (for IG/LL that is the density itself), so
probabilistic models are compared the way the benchmark intends. The
table carries gold-standard and center-bias rows plus a percentage
column relative to the gold standard's information gain.

JSON emitted here is deterministic: keys are ordered, floats carry 17
significant digits, and per-image reductions run in sorted image order
regardless of thread count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import baselines, metrics
from .baselines import KdeSpec
from .errors import BadValue, MissingDensity
from .grids import LN2, Dataset, DensityGrid, FixationSet
from .metrics import Metric, MetricReport
from .parallel import parallel_map

TABLE_COLUMNS = (
    Metric.IG,
    Metric.AUC,
    Metric.SAUC,
    Metric.NSS,
    Metric.CC,
    Metric.KLDIV,
    Metric.SIM,
)

CENTERBIAS_ROW = "centerbias"
GOLD_ROW = "gold_standard"


# --- deterministic JSON ----------------------------------------------------


def _format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("reports must not contain NaN or infinite values")
    text = format(x, ".17g")
    if "." not in text and "e" not in text and "E" not in text:
        text += ".0"
    return text


def to_json(obj, indent: int = 0) -> str:
    """Serialize with 17-significant-digit floats and stable ordering."""
    pad = " " * indent
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, str):
        out = ['"']
        for ch in obj:
            if ch in ('"', "\\"):
                out.append("\\" + ch)
            elif ord(ch) < 0x20:
                out.append(f"\\u{ord(ch):04x}")
            else:
                out.append(ch)
        out.append('"')
        return "".join(out)
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _format_float(float(obj))
    if isinstance(obj, (list, tuple)):
        inner = [to_json(v, indent + 2) for v in obj]
        if not inner:
            return "[]"
        sep = ",\n" + pad + "  "
        return "[\n" + pad + "  " + sep.join(inner) + "\n" + pad + "]"
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        items = [
            f"{to_json(str(k))}: {to_json(v, indent + 2)}" for k, v in obj.items()
        ]
        sep = ",\n" + pad + "  "
        return "{\n" + pad + "  " + sep.join(items) + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# --- per-metric evaluation --------------------------------------------------


def _weighted_report(metric: Metric, rows: list[tuple[str, int, float]]) -> MetricReport:
    per_image = {img: value for img, _, value in rows}
    n = sum(cnt for _, cnt, _ in rows)
    aggregate = sum(cnt * value for _, cnt, value in rows) / n
    return MetricReport(metric, aggregate, per_image, n)


def _image_mean_report(metric: Metric, rows: list[tuple[str, int, float]]) -> MetricReport:
    per_image = {img: value for img, _, value in rows}
    n = sum(cnt for _, cnt, _ in rows)
    aggregate = sum(value for _, _, value in rows) / len(rows)
    return MetricReport(metric, aggregate, per_image, n)


def nonfixation_pools(dataset: Dataset) -> dict[str, np.ndarray]:
    """Per image: fixation pixels of all other images, mapped onto it."""
    fixations = dataset.fixations
    image_ids = fixations.image_ids()
    pixel_sets = {img: fixations.pixels_for(img) for img in image_ids}
    pools = {}
    for img in image_ids:
        parts = [
            metrics.map_pixels(pixel_sets[other], dataset.images[other], dataset.images[img])
            for other in image_ids
            if other != img
        ]
        pools[img] = (
            np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64)
        )
    return pools


def empirical_maps(dataset: Dataset, sigma_emp: float) -> dict[str, DensityGrid]:
    fixations = dataset.fixations
    image_ids = fixations.image_ids()
    built = parallel_map(
        lambda img: baselines.empirical_map(
            fixations.pixels_for(img), dataset.images[img], sigma_emp
        ),
        image_ids,
    )
    return dict(zip(image_ids, built))


def evaluate_metric(
    densities: Mapping[str, DensityGrid],
    dataset: Dataset,
    metric: Metric,
    *,
    baseline: Mapping[str, DensityGrid] | None = None,
    sigma_emp: float = 2.0,
    pools: Mapping[str, np.ndarray] | None = None,
    empirical: Mapping[str, DensityGrid] | None = None,
) -> MetricReport:
    """Score one model's densities on one metric over the whole dataset."""
    fixations = dataset.fixations
    if metric == Metric.LL:
        return metrics.log_likelihood(densities, fixations)
    if metric == Metric.IG:
        if baseline is None:
            raise BadValue("information gain needs a baseline model")
        return metrics.information_gain(densities, baseline, fixations)

    image_ids = fixations.image_ids()
    for img in image_ids:
        if img not in densities:
            raise MissingDensity(img)
    maps = metrics.optimal_saliency_maps(
        {img: densities[img] for img in image_ids}, metric, sigma_emp
    )
    if metric == Metric.SAUC and pools is None:
        pools = nonfixation_pools(dataset)
    if metric in metrics.IMAGE_AVERAGED and empirical is None:
        empirical = empirical_maps(dataset, sigma_emp)

    def score(img: str) -> tuple[str, int, float]:
        pixels = fixations.pixels_for(img)
        if metric == Metric.AUC:
            value = metrics.auc(maps[img], pixels)
        elif metric == Metric.SAUC:
            value = metrics.sauc(maps[img], pixels, pools[img])
        elif metric == Metric.NSS:
            value = metrics.nss(maps[img], pixels)
        elif metric == Metric.CC:
            value = metrics.cc(maps[img], empirical[img])
        elif metric == Metric.KLDIV:
            value = metrics.kldiv(maps[img], empirical[img])
        elif metric == Metric.SIM:
            value = metrics.sim(maps[img], empirical[img])
        else:
            raise BadValue(f"unknown metric {metric}")
        return (img, len(pixels), value)

    rows = parallel_map(score, image_ids)
    if metric in metrics.FIXATION_WEIGHTED:
        return _weighted_report(metric, rows)
    return _image_mean_report(metric, rows)


# --- baseline construction ---------------------------------------------------


@dataclass(frozen=True)
class ReportConfig:
    metrics: tuple[Metric, ...] = TABLE_COLUMNS
    sigma_emp: float = 2.0
    kde: KdeSpec = field(default_factory=KdeSpec)
    crossvalidate_cb: bool = False
    gold_loo: bool = True
    include_per_image: bool = True


def centerbias_densities(
    dataset: Dataset, spec: KdeSpec, crossvalidate: bool = False
) -> tuple[dict[str, DensityGrid], dict[str, float]]:
    """Center-bias density per fixated image, plus chosen bandwidths.

    With crossvalidation the bias for an image is trained on all other
    images' fixations; otherwise one estimate per image shape is reused.
    """
    fixations = dataset.fixations
    image_ids = fixations.image_ids()
    densities: dict[str, DensityGrid] = {}
    bandwidths: dict[str, float] = {}
    cache: dict[tuple[int, int], baselines.CenterBias] = {}
    for img in image_ids:
        hw = tuple(dataset.images[img])
        if crossvalidate:
            cb = baselines.centerbias(
                fixations, dataset.images, hw, spec, exclude_image=img
            )
        elif hw in cache:
            cb = cache[hw]
        else:
            cb = baselines.centerbias(fixations, dataset.images, hw, spec)
            cache[hw] = cb
        densities[img] = cb.density
        bandwidths[img] = cb.bandwidth
    return densities, bandwidths


def gold_standards(
    dataset: Dataset, spec: KdeSpec
) -> dict[str, baselines.GoldStandard]:
    fixations = dataset.fixations
    image_ids = fixations.image_ids()
    built = parallel_map(
        lambda img: baselines.gold_standard(
            fixations.points_for(img), dataset.images[img], spec
        ),
        image_ids,
    )
    return dict(zip(image_ids, built))


def gold_information_gain(
    golds: Mapping[str, baselines.GoldStandard],
    baseline: Mapping[str, DensityGrid],
    fixations: FixationSet,
    leave_one_out: bool = True,
) -> MetricReport:
    """Gold-standard IG; with leave_one_out each fixation is scored with
    its own kernel removed, avoiding self-inflation."""
    rows = []
    for img in fixations.image_ids():
        pixels = fixations.pixels_for(img)
        if leave_one_out:
            gold_log2 = golds[img].loo_log2
        else:
            gold_log2 = golds[img].density.log_p[pixels[:, 0], pixels[:, 1]] / LN2
        base_log2 = baseline[img].log_p[pixels[:, 0], pixels[:, 1]] / LN2
        rows.append((img, len(pixels), float((gold_log2 - base_log2).mean())))
    return _weighted_report(Metric.IG, rows)


# --- the full table -----------------------------------------------------------


def full_report(
    dataset: Dataset,
    config: ReportConfig | None = None,
    baseline: Mapping[str, DensityGrid] | None = None,
) -> dict:
    """Metric table over all models plus center-bias and gold rows.

    A caller-supplied baseline replaces the fitted center bias as both
    the IG reference and the center-bias row.
    """
    config = config or ReportConfig()
    fixations = dataset.fixations
    if len(fixations) == 0:
        raise BadValue("full report needs fixations")
    if baseline is not None:
        cb_densities, cb_bandwidths = dict(baseline), {}
    else:
        cb_densities, cb_bandwidths = centerbias_densities(
            dataset, config.kde, config.crossvalidate_cb
        )
    golds = gold_standards(dataset, config.kde)
    gold_densities = {img: g.density for img, g in golds.items()}

    pools = nonfixation_pools(dataset)
    empirical = empirical_maps(dataset, config.sigma_emp)

    candidates: dict[str, Mapping[str, DensityGrid]] = {
        name: dataset.model_densities(name) for name in dataset.model_names()
    }
    candidates[CENTERBIAS_ROW] = cb_densities
    candidates[GOLD_ROW] = gold_densities

    reports: dict[str, dict[str, MetricReport]] = {}
    for name, densities in candidates.items():
        row: dict[str, MetricReport] = {}
        for metric in config.metrics:
            if metric == Metric.IG and name == GOLD_ROW and config.gold_loo:
                row[metric.value] = gold_information_gain(
                    golds, cb_densities, fixations, leave_one_out=True
                )
            else:
                row[metric.value] = evaluate_metric(
                    densities,
                    dataset,
                    metric,
                    baseline=cb_densities,
                    sigma_emp=config.sigma_emp,
                    pools=pools,
                    empirical=empirical,
                )
        reports[name] = row

    ig_gold = (
        reports[GOLD_ROW][Metric.IG.value].aggregate
        if Metric.IG in config.metrics
        else None
    )
    order = sorted(
        reports,
        key=lambda name: (
            -(reports[name][Metric.IG.value].aggregate if Metric.IG in config.metrics else 0.0),
            name,
        ),
    )
    rows = []
    for name in order:
        row: dict = {"model": name}
        for metric in config.metrics:
            row[metric.value] = reports[name][metric.value].aggregate
        if ig_gold is not None:
            row["relative_pct"] = baselines.relative_score(
                reports[name][Metric.IG.value].aggregate, ig_gold
            )
        rows.append(row)

    out: dict = {
        "columns": [m.value for m in config.metrics],
        "rows": rows,
        "n_fixations": len(fixations),
        "centerbias_bandwidths": {k: cb_bandwidths[k] for k in sorted(cb_bandwidths)},
        "gold_bandwidths": {img: golds[img].bandwidth for img in sorted(golds)},
    }
    if config.include_per_image:
        out["per_image"] = {
            name: {m: r.per_image for m, r in sorted(reports[name].items())}
            for name in order
        }
    return out
