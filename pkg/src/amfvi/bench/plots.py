"""SVG figures: per-dataset sample scatter rows and the learned-weight bar chart."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..targets import seed_stream  # noqa: E402
from .config import EXPERT_ORDER, MODELS, RunConfig  # noqa: E402
from .pipeline import collect_weights, load_model, split_data  # noqa: E402

PANEL_ORDER = ("truth", "realnvp", "maf", "rbig", "amf_vi")
TITLES = {"truth": "true data", "realnvp": "RealNVP", "maf": "MAF", "rbig": "RBIG",
          "amf_vi": "AMF-VI"}


def _savefig(fig, path):
    # fixed hash salt and no date stamp keep SVG bytes stable across runs
    with plt.rc_context({"svg.hashsalt": "amfvi", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_samples(cfg: RunConfig, dataset: str, path) -> int:
    seed = cfg.plot.seed
    n = cfg.plot.n_points
    lim = cfg.plot.limit
    fig, axes = plt.subplots(1, len(PANEL_ORDER), figsize=(3 * len(PANEL_ORDER), 3.2))
    for ax, name in zip(axes, PANEL_ORDER):
        ax.set_xlim(-lim, lim)
        ax.set_ylim(-lim, lim)
        ax.set_aspect("equal")
        ax.set_xticks([])
        ax.set_yticks([])
        ax.set_title(TITLES[name], fontsize=10)
        try:
            if name == "truth":
                pts = split_data(dataset, "eval", seed, n)
            else:
                model = load_model(cfg.out, dataset, name, seed)
                pts = model.sample(n, seed_stream(seed, dataset, "plot", MODELS.index(name)))
            ax.scatter(pts[:, 0], pts[:, 1], s=1.5, alpha=0.5, linewidths=0, rasterized=False)
        except Exception:
            ax.text(0.5, 0.5, "unavailable", ha="center", va="center", transform=ax.transAxes)
    fig.suptitle(dataset, fontsize=11)
    fig.tight_layout()
    _savefig(fig, path)
    return len(PANEL_ORDER)


def plot_weights(cfg: RunConfig, path) -> dict:
    """Grouped bars of final weights per dataset (plot seed); returns the heights."""
    weights = collect_weights(cfg)
    heights = {d: weights[(d, cfg.plot.seed)]["weights"] for d in cfg.datasets
               if (d, cfg.plot.seed) in weights}
    fig, ax = plt.subplots(figsize=(8, 3.5))
    x = np.arange(len(heights))
    width = 0.8 / len(EXPERT_ORDER)
    for k, name in enumerate(EXPERT_ORDER):
        ax.bar(x + (k - 1) * width, [h[k] for h in heights.values()], width, label=TITLES[name])
    ax.set_xticks(x)
    ax.set_xticklabels(list(heights))
    ax.set_ylabel("mixture weight")
    ax.set_ylim(0, 1)
    ax.legend(frameon=False)
    fig.tight_layout()
    _savefig(fig, path)
    return heights


def cmd_plot(cfg: RunConfig) -> dict:
    out = Path(cfg.out) / "plots"
    out.mkdir(parents=True, exist_ok=True)
    panels = 0
    files = []
    for dataset in cfg.datasets:
        p = out / f"{dataset}_samples.svg"
        panels += plot_samples(cfg, dataset, p)
        files.append(p)
    heights = plot_weights(cfg, out / "weights.svg")
    files.append(out / "weights.svg")
    return {"panels": panels, "files": [str(f) for f in files], "weights": heights}
