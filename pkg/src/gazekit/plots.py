"""Figure rendering for report outputs.

Each function writes a PNG next to the delimited plot data the CLI
emits. Figures are a convenience view; the CSV/JSON files stay the
canonical, deterministic outputs.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .calibration import CalibrationHistogram


def _save(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def calibration_figure(hist: CalibrationHistogram, path: str | Path) -> None:
    k = len(hist.bins)
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.bar(range(k), hist.bins, color="#4878a8", label="observed")
    ax.plot(range(k), hist.expected, "k--", marker="o", ms=4, label="expected")
    ax.set_xlabel("probability quantile (low to high)")
    ax.set_ylabel("fixations")
    ax.set_xticks(range(k))
    ax.set_title(f"{hist.verdict} (chi2 = {hist.chi_square:.1f})")
    ax.legend(frameon=False)
    _save(fig, path)


def sweep_figure(curve: list[tuple[float, float]], path: str | Path) -> None:
    weights = [w for w, _ in curve]
    gains = [g for _, g in curve]
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(weights, gains, marker="o", ms=4, color="#4878a8")
    best = max(range(len(curve)), key=lambda i: gains[i])
    ax.axvline(weights[best], color="#a84848", ls=":", lw=1)
    ax.set_xlabel("weight of second model")
    ax.set_ylabel("information gain (bits/fix)")
    _save(fig, path)


def disagreement_figure(
    ranking: list[tuple[str, float]], path: str | Path, top: int = 20
) -> None:
    rows = ranking[:top][::-1]
    fig, ax = plt.subplots(figsize=(5, 0.35 * max(len(rows), 4) + 1))
    ax.barh([r[0] for r in rows], [r[1] for r in rows], color="#4878a8")
    ax.set_xlabel("JS divergence (bits)")
    _save(fig, path)


def report_figure(rows: list[dict], path: str | Path) -> None:
    """Bar chart of aggregate IG per model row of a full report."""
    named = [(r["model"], r.get("IG")) for r in rows if r.get("IG") is not None]
    fig, ax = plt.subplots(figsize=(5, 0.4 * max(len(named), 4) + 1))
    ax.barh([n for n, _ in named][::-1], [v for _, v in named][::-1], color="#4878a8")
    ax.set_xlabel("information gain (bits/fix)")
    _save(fig, path)


def ig_difference_figure(per_image: dict[str, float], path: str | Path) -> None:
    items = sorted(per_image.items(), key=lambda kv: kv[1])
    fig, ax = plt.subplots(figsize=(6, 3.4))
    values = [v for _, v in items]
    ax.bar(range(len(items)), values, color=["#a84848" if v < 0 else "#4878a8" for v in values])
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("image (sorted by difference)")
    ax.set_ylabel("IG difference (bits/fix)")
    _save(fig, path)
