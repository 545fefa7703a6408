"""Benchmark stages: generate, train, eval, plot and aggregation.

Every unit of work owns its seed streams and writes only under its own
directory, so results do not depend on worker count or execution order.

Layout::

    out/data/<dataset>/<split>_seed<seed>.csv, out/data/manifest.json
    out/<dataset>/<model>/<seed>/model.bin, metrics.json, samples.csv
    out/<dataset>/amf_vi/<seed>/weights_trajectory.csv
    out/per_seed.csv, out/aggregate.csv, out/weights.csv, out/report.json
    out/plots/<dataset>_samples.svg, out/plots/weights.svg
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..flows import fit_expert, load_expert, save_expert
from ..metrics import REPORT_FIELDS, KernelConfig, MetricReport, kl_mc, mmd, nll, w2
from ..mixture import load_mixture, save_mixture, stage2_adapt, trajectory_csv
from ..targets import SPLIT_SIZES, make_target, seed_stream, write_samples_csv
from .config import EXPERT_ORDER, MODELS, RunConfig

log = logging.getLogger(__name__)

METRICS = ("nll", "kl", "w2", "mmd_u", "mmd_b")


@dataclass
class BenchReport:
    reports: list[MetricReport] = field(default_factory=list)
    failed: list[dict] = field(default_factory=list)
    weights: dict = field(default_factory=dict)
    aggregate: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed


def cell_dir(out, dataset, model, seed) -> Path:
    return Path(out) / dataset / model / str(seed)


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def split_data(dataset: str, split: str, seed: int, n: int) -> np.ndarray:
    return make_target(dataset).sample(n, seed, split).data


# --------------------------------------------------------------------- generate

def cmd_generate(cfg: RunConfig) -> dict:
    root = Path(cfg.out) / "data"
    manifest = {"seeds": cfg.seeds, "files": []}
    sizes = {"train": cfg.train_size, "eval": cfg.metrics.n_eval}
    for dataset in cfg.datasets:
        (root / dataset).mkdir(parents=True, exist_ok=True)
        for seed in cfg.seeds:
            for split, n in sizes.items():
                path = root / dataset / f"{split}_seed{seed}.csv"
                write_samples_csv(path, split_data(dataset, split, seed, n))
                manifest["files"].append({"dataset": dataset, "split": split, "seed": seed,
                                          "n": n, "path": str(path.relative_to(root))})
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


# ------------------------------------------------------------------------ train

def _train_unit(args) -> dict:
    cfg_dict, dataset, seed = args
    cfg = RunConfig.from_dict(cfg_dict)
    status = {"dataset": dataset, "seed": seed, "ok": True, "error": None, "flags": {}}
    try:
        train = make_target(dataset).sample(cfg.train_size, seed, "train")
        experts = []
        for kind in cfg.experts_needed:
            expert = fit_expert(kind, train, cfg.flow_config_for(kind), seed)
            d = cell_dir(cfg.out, dataset, kind, seed)
            d.mkdir(parents=True, exist_ok=True)
            save_expert(expert, d / "model.bin")
            status["flags"][kind] = sorted(expert.flags)
            experts.append(expert)
        if "amf_vi" in cfg.models:
            mix = stage2_adapt(experts, cfg.stage2, make_target(dataset), seed,
                               names=list(EXPERT_ORDER))
            d = cell_dir(cfg.out, dataset, "amf_vi", seed)
            d.mkdir(parents=True, exist_ok=True)
            save_mixture(mix, d / "model.bin")
            (d / "weights_trajectory.csv").write_text(trajectory_csv(mix))
            (d / "weights.json").write_text(json.dumps(
                {"names": mix.names, "weights": mix.weights.tolist(), "n_eff": mix.n_eff}) + "\n")
    except Exception as exc:  # a failed unit must never abort the grid
        log.error("training %s seed %s failed: %s", dataset, seed, exc)
        status.update(ok=False, error=f"{type(exc).__name__}: {exc}",
                      traceback=traceback.format_exc())
    return status


def cmd_train(cfg: RunConfig) -> list[dict]:
    units = [(cfg.to_dict(), d, s) for d in cfg.datasets for s in cfg.seeds]
    return _map(_train_unit, units, cfg.workers)


# ------------------------------------------------------------------------- eval

def load_model(out, dataset, model, seed):
    path = cell_dir(out, dataset, model, seed) / "model.bin"
    if not path.is_file():
        raise FileNotFoundError(f"missing artifact {path}")
    return load_mixture(path) if model == "amf_vi" else load_expert(path)


def evaluate_model(model, dataset: str, model_name: str, seed: int, mcfg) -> tuple[MetricReport, dict, np.ndarray]:
    """All five metrics for one model on one dataset/seed, plus diagnostics."""
    t0 = time.perf_counter()
    target = make_target(dataset)
    evalset = split_data(dataset, "eval", seed, mcfg.n_eval)
    nll_est = nll(model.log_prob, evalset)
    kl_est = kl_mc(target, model.log_prob, mcfg.n_kl, seed_stream(seed, dataset, "kl"))
    h, h_se = target.entropy_mc(mcfg.n_entropy, seed_stream(seed, dataset, "entropy"))
    n = mcfg.n_transport
    rng = seed_stream(seed, dataset, "samples", MODELS.index(model_name)
                      if model_name in MODELS else 99)
    samples = model.sample(n, rng)
    truth = evalset[:n]
    if np.all(np.isfinite(samples)):
        w2_val = w2(truth, samples)
        mmd_u, mmd_b = mmd(truth, samples, KernelConfig(mcfg.bandwidth))
    else:
        w2_val = mmd_u = mmd_b = float("inf")
    report = MetricReport(dataset, model_name, nll_est.value, kl_est.value, w2_val, mmd_u,
                          mmd_b, len(evalset), seed, time.perf_counter() - t0)
    diag = {"nll_se": nll_est.se, "kl_se": kl_est.se, "entropy": h, "entropy_se": h_se}
    return report, diag, samples


def _eval_cell(args) -> dict:
    cfg_dict, dataset, model_name, seed = args
    cfg = RunConfig.from_dict(cfg_dict)
    d = cell_dir(cfg.out, dataset, model_name, seed)
    try:
        model = load_model(cfg.out, dataset, model_name, seed)
        report, diag, samples = evaluate_model(model, dataset, model_name, seed, cfg.metrics)
        d.mkdir(parents=True, exist_ok=True)
        (d / "metrics.json").write_text(json.dumps(
            {"report": report.to_dict(), "diagnostics": diag}, indent=2) + "\n")
        write_samples_csv(d / "samples.csv", samples)
        return {"ok": True, "report": report.to_dict(), "diagnostics": diag}
    except Exception as exc:
        log.error("eval %s/%s/%s failed: %s", dataset, model_name, seed, exc)
        return {"ok": False, "dataset": dataset, "model": model_name, "seed": seed,
                "error": f"{type(exc).__name__}: {exc}"}


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def rank_flags(values: dict, decimals: int = 3) -> dict:
    """Best/second-best flags by dense rank of rounded values (lower is better).

    Ties at display precision share a flag; non-finite values are never flagged.
    """
    finite = {m: round(v, decimals) for m, v in values.items() if np.isfinite(v)}
    levels = sorted(set(finite.values()))
    flags = {m: "" for m in values}
    for m, v in finite.items():
        if v == levels[0]:
            flags[m] = "best"
        elif len(levels) > 1 and v == levels[1]:
            flags[m] = "second"
    return flags


def aggregate(reports: list[MetricReport], datasets, models) -> list[dict]:
    rows = []
    for dataset in datasets:
        for metric in METRICS:
            means = {}
            counts = {}
            for model in models:
                vals = [getattr(r, metric) for r in reports
                        if r.dataset == dataset and r.model == model]
                counts[model] = len(vals)
                means[model] = float(np.mean(vals)) if vals else float("nan")
            flags = rank_flags({m: v for m, v in means.items() if counts[m]})
            for model in models:
                rows.append({"dataset": dataset, "metric": metric, "model": model,
                             "mean": means[model], "n_seeds": counts[model],
                             "flag": flags.get(model, "") if counts[model] else "failed"})
    return rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])


def table_markdown(rows: list[dict], models) -> str:
    """Table-2 style layout: bold best, underlined (<u>) second best."""
    lines = ["| dataset | metric | " + " | ".join(models) + " |",
             "|---|---|" + "---|" * len(models)]
    by_key = {(r["dataset"], r["metric"], r["model"]): r for r in rows}
    for dataset in dict.fromkeys(r["dataset"] for r in rows):
        for metric in METRICS:
            cells = []
            for model in models:
                r = by_key[(dataset, metric, model)]
                v = r["mean"]
                txt = "failed" if r["flag"] == "failed" else ("∞" if v == np.inf else f"{v:.3f}")
                if r["flag"] == "best":
                    txt = f"**{txt}**"
                elif r["flag"] == "second":
                    txt = f"<u>{txt}</u>"
                cells.append(txt)
            lines.append(f"| {dataset} | {metric} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def collect_weights(cfg: RunConfig) -> dict:
    weights = {}
    for dataset in cfg.datasets:
        for seed in cfg.seeds:
            p = cell_dir(cfg.out, dataset, "amf_vi", seed) / "weights.json"
            if p.is_file():
                weights[(dataset, seed)] = json.loads(p.read_text())
    return weights


def cmd_eval(cfg: RunConfig) -> BenchReport:
    cells = [(cfg.to_dict(), d, m, s) for d in cfg.datasets for m in cfg.models for s in cfg.seeds]
    results = _map(_eval_cell, cells, cfg.workers)
    bench = BenchReport()
    diags = []
    for res in results:
        if res["ok"]:
            bench.reports.append(MetricReport(**res["report"]))
            diags.append({**{k: res["report"][k] for k in ("dataset", "model", "seed")},
                          **res["diagnostics"]})
        else:
            bench.failed.append(res)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    per_seed = [r.to_dict() for r in bench.reports]
    per_seed += [{**{k: f.get(k) for k in ("dataset", "model", "seed")},
                  **{k: float("nan") for k in REPORT_FIELDS if k not in ("dataset", "model", "seed")},
                  "n_eval": 0} for f in bench.failed]
    per_seed.sort(key=lambda r: (cfg.datasets.index(r["dataset"]), cfg.models.index(r["model"]),
                                 r["seed"]))
    _write_csv(out / "per_seed.csv", list(REPORT_FIELDS), per_seed)
    (out / "per_seed.json").write_text(json.dumps(per_seed, indent=2) + "\n")
    _write_csv(out / "diagnostics.csv",
               ["dataset", "model", "seed", "nll_se", "kl_se", "entropy", "entropy_se"],
               sorted(diags, key=lambda r: (r["dataset"], r["model"], r["seed"])))
    bench.aggregate = aggregate(bench.reports, cfg.datasets, cfg.models)
    _write_csv(out / "aggregate.csv", ["dataset", "metric", "model", "mean", "n_seeds", "flag"],
               bench.aggregate)
    (out / "table.md").write_text(table_markdown(bench.aggregate, cfg.models))
    weights = collect_weights(cfg)
    bench.weights = weights
    rows = [{"dataset": d, "seed": s, **{f"pi_{n}": w for n, w in zip(v["names"], v["weights"])},
             "n_eff": v["n_eff"]} for (d, s), v in sorted(
                 weights.items(), key=lambda kv: (cfg.datasets.index(kv[0][0]), kv[0][1]))]
    _write_csv(out / "weights.csv",
               ["dataset", "seed", *[f"pi_{n}" for n in EXPERT_ORDER], "n_eff"], rows)
    (out / "report.json").write_text(json.dumps({
        "aggregate": bench.aggregate,
        "failed": bench.failed,
        "weights": [{"dataset": d, "seed": s, **v} for (d, s), v in weights.items()],
        "mean_n_eff": {d: float(np.mean([v["n_eff"] for (dd, _), v in weights.items() if dd == d]))
                       for d in cfg.datasets if any(dd == d for dd, _ in weights)},
    }, indent=2, default=_fmt) + "\n")
    return bench


__all__ = ["BenchReport", "METRICS", "SPLIT_SIZES", "aggregate", "cell_dir", "cmd_eval",
           "cmd_generate", "cmd_train", "evaluate_model", "load_model", "rank_flags",
           "split_data", "table_markdown"]
