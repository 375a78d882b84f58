"""Desk-scale experiment runners and their report format.

A report is a list of flat row dicts plus provenance (seeds and hashes of every
config involved). ``save`` writes ``<name>.jsonl`` (one row per line, the
provenance first), a fixed-width text table and, where it makes sense, a PNG.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, is_dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .controller import ControllerConfig, init_quality_map, run_pipeline, select_best
from .codec import compress_and_measure, get_backend
from .imagedata import crop_region
from .metrics import SSIM_WINDOW, finite_mean, psnr, ssim
from .stiqa import StiqaConfig, evaluate, train, validation_set
from .stiqa.losses import LOSS_KINDS

TABLE3_LAMBDAS = (0.1, 1.0, 5.0, 10.0, 100.0)
TABLE3_ITERATIONS = (3, 10)
LOSS_EPSILONS = (0.10, 0.15, 0.20)
ABLATION_VARIANTS = ("full", "prob_transformer", "prob")


def config_hash(cfg) -> str:
    d = asdict(cfg) if is_dataclass(cfg) else cfg
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, (np.floating, np.integer)):
        return _clean(v.item())
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    return v


@dataclass
class ExperimentReport:
    name: str
    rows: List[Dict] = field(default_factory=list)
    provenance: Dict = field(default_factory=dict)
    columns: Optional[List[str]] = None

    def to_jsonl(self) -> str:
        lines = [json.dumps({"provenance": _clean(self.provenance)}, sort_keys=True)]
        lines += [json.dumps(_clean(r), sort_keys=True) for r in self.rows]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, name: str, text: str) -> "ExperimentReport":
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
        prov = records[0].get("provenance", {}) if records else {}
        return cls(name, records[1:], prov)

    def summary(self) -> str:
        cols = self.columns or sorted({k for r in self.rows for k in r})
        fmt = lambda v: f"{v:.4f}" if isinstance(v, float) else str(v)
        table = [cols] + [[fmt(r.get(c, "")) for c in cols] for r in self.rows]
        widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
        out = [self.name]
        for j, row in enumerate(table):
            out.append("  ".join(s.rjust(w) for s, w in zip(row, widths)))
            if j == 0:
                out.append("  ".join("-" * w for w in widths))
        return "\n".join(out) + "\n"

    def save(self, outdir, plot: bool = True) -> List[Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = [outdir / f"{self.name}.jsonl", outdir / f"{self.name}.txt"]
        paths[0].write_text(self.to_jsonl())
        paths[1].write_text(self.summary())
        if plot:
            png = plot_report(self, outdir / f"{self.name}.png")
            if png is not None:
                paths.append(png)
        return paths


def plot_report(report: ExperimentReport, path) -> Optional[Path]:
    """Rate/score plot for sweeps, bar chart of Spearman for ablations."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = report.rows
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if rows and "lam" in rows[0]:
        for it in sorted({r["iterations"] for r in rows}):
            sel = sorted((r for r in rows if r["iterations"] == it), key=lambda r: r["lam"])
            ax.plot([r["bpp"] for r in sel], [r["mean_score"] for r in sel], "o-", label=f"{it} rounds")
        ax.set_xlabel("bpp")
        ax.set_ylabel("mean region score")
        ax.legend()
    elif rows and "spearman" in rows[0]:
        keys = [r.get("variant", r.get("loss", "")) + (f" e={r['epsilon']}" if "epsilon" in r else "")
                + f" s{r.get('seed', '')}" for r in rows]
        ax.bar(range(len(rows)), [r["spearman"] for r in rows])
        ax.set_xticks(range(len(rows)), keys, rotation=60, ha="right", fontsize=7)
        ax.set_ylabel("held-out Spearman")
    else:
        plt.close(fig)
        return None
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


# -- image metrics -------------------------------------------------------------

def text_region_metrics(original, recon, regions):
    """PSNR and SSIM per region box (no resize). SSIM skips boxes smaller
    than the window."""
    ps, ss = [], []
    for r in regions:
        a, b = crop_region(original, r), crop_region(recon, r)
        ps.append(psnr(a, b))
        if min(a.shape) >= SSIM_WINDOW:
            ss.append(ssim(a, b))
    return ps, ss


def image_metrics(original, recon, regions, bpp: float) -> Dict:
    ps, ss = text_region_metrics(original, recon, regions)
    region_psnr, n_inf = finite_mean(ps)
    return {
        "bpp": bpp,
        "psnr": psnr(original, recon),
        "ssim": ssim(original, recon),
        "text_psnr": region_psnr,
        "text_psnr_excluded": n_inf,
        "text_ssim": float(np.mean(ss)) if ss else float("nan"),
    }


def average_rows(rows: Sequence[Dict], keys: Iterable[str]) -> Dict:
    """Mean over scenes; infinite PSNRs are left out and counted."""
    out = {}
    for k in keys:
        mean, excluded = finite_mean([r[k] for r in rows])
        out[k] = mean
        if excluded:
            out[f"{k}_excluded"] = excluded
    return out


# -- pipeline experiments ------------------------------------------------------

def evaluate_pipeline(scenes, model, backend="deterministic", config: Optional[ControllerConfig] = None) -> ExperimentReport:
    """Init map vs selected round vs last round, per scene."""
    config = config or ControllerConfig()
    impl = get_backend(backend)
    rows = []
    for i, scene in enumerate(scenes):
        best, trace = run_pipeline(scene.image, scene.regions, model, impl, config)
        first, last, chosen = trace[0], trace[-1], select_best(trace)
        row = {"scene": i, "regions": len(scene.regions), "selected_round": chosen.round}
        for tag, rec in (("init", first), ("final", last), ("best", chosen)):
            m = image_metrics(scene.image, rec.result.reconstruction, scene.regions, rec.result.bpp)
            row.update({f"{tag}_{k}": v for k, v in m.items() if not k.endswith("excluded")})
            row[f"{tag}_score"] = rec.mean_score
        rows.append(row)
    return ExperimentReport("pipeline", rows, {"controller": asdict(config), "controller_hash": config_hash(config),
                                               "backend": impl.name})


def run_table3_sweep(scenes, model, lambdas: Sequence[float] = TABLE3_LAMBDAS,
                     iteration_grid: Sequence[int] = TABLE3_ITERATIONS, backend="deterministic",
                     config: Optional[ControllerConfig] = None) -> ExperimentReport:
    """Mean bpp and mean selected-round score over ``scenes`` per (lambda,
    iterations). The loop is deterministic, so shorter runs are prefixes of
    the longest one and are read off its trace."""
    base = config or ControllerConfig()
    impl = get_backend(backend)
    longest = max(iteration_grid)
    rows = []
    for lam in lambdas:
        cfg = replace(base, lam=float(lam), iterations=longest)
        traces = [run_pipeline(s.image, s.regions, model, impl, cfg)[1] for s in scenes]
        for it in iteration_grid:
            picks = [select_best(t[:it]) for t in traces]
            rows.append({
                "lam": float(lam),
                "iterations": int(it),
                "bpp": float(np.mean([p.result.bpp for p in picks])),
                "mean_score": float(np.nanmean([p.mean_score for p in picks])),
            })
    prov = {"controller": asdict(base), "controller_hash": config_hash(base), "backend": impl.name,
            "scenes": len(scenes)}
    return ExperimentReport("table3_sweep", rows, prov, ["lam", "iterations", "bpp", "mean_score"])


def compare_fixed_maps(scenes, model, weights: Sequence[float] = (0.2, 0.5, 1.0),
                       backend="deterministic", config: Optional[ControllerConfig] = None) -> ExperimentReport:
    """Reference rows: constant-weight maps and the one-shot init map, to place
    the loop on the rate/quality plane."""
    config = config or ControllerConfig()
    impl = get_backend(backend)
    from .codec import QualityMap
    from .controller import as_assessor
    from .imagedata import prepare_region

    score_all = as_assessor(model)
    methods = [(f"constant_{w}", lambda s, w=w: QualityMap.constant(s.image.height, s.image.width, w))
               for w in weights]
    methods.append(("init_map", lambda s: init_quality_map(s.image, s.regions, config)))
    rows = []
    for name, make in methods:
        per = []
        for s in scenes:
            res = compress_and_measure(s.image, make(s), s.regions, impl)
            m = image_metrics(s.image, res.reconstruction, s.regions, res.bpp)
            crops = [prepare_region(res.reconstruction, r, config.assess_seed) for r in s.regions]
            m["score"] = float(np.mean(score_all(crops))) if crops else float("nan")
            per.append(m)
        row = {"method": name}
        row.update(average_rows(per, ["bpp", "psnr", "ssim", "text_psnr", "text_ssim", "score"]))
        rows.append(row)
    return ExperimentReport("fixed_maps", rows, {"backend": impl.name, "scenes": len(scenes)})


# -- assessor experiments ------------------------------------------------------

def _train_row(cfg: StiqaConfig, data, texts=None):
    model = train(cfg, data, texts)
    m = evaluate(model, validation_set(model, data))
    row = {"seed": cfg.seed, "mae": m.mae, "spearman": m.spearman, "pearson": m.pearson,
           "best_epoch": model.meta["best_epoch"], "config_hash": config_hash(cfg)}
    return model, row


def run_ablation(data, variants: Sequence[str] = ABLATION_VARIANTS, seeds: Sequence[int] = (0,),
                 base: Optional[StiqaConfig] = None, texts=None, trained: Optional[Dict] = None) -> ExperimentReport:
    """Train each variant on every seed with otherwise identical settings.

    ``trained`` maps ``(variant, seed)`` to already-trained models to reuse
    (they must have been trained on the same data and config); new models are
    added to it.
    """
    base = base or StiqaConfig()
    trained = {} if trained is None else trained
    rows = []
    for variant in variants:
        for seed in seeds:
            cfg = replace(base, variant=variant, seed=int(seed))
            if (variant, seed) in trained:
                model = trained[(variant, seed)]
                m = evaluate(model, validation_set(model, data))
                row = {"seed": seed, "mae": m.mae, "spearman": m.spearman, "pearson": m.pearson,
                       "best_epoch": model.meta["best_epoch"], "config_hash": config_hash(model.config)}
            else:
                model, row = _train_row(cfg, data, texts)
                trained[(variant, seed)] = model
            rows.append({"variant": variant, **row})
    prov = {"seeds": list(seeds), "stiqa": asdict(base), "stiqa_hash": config_hash(base), "regions": len(data)}
    return ExperimentReport("ablation", rows, prov, ["variant", "seed", "mae", "spearman", "pearson", "best_epoch"])


def run_loss_sweep(data, losses: Sequence[str] = LOSS_KINDS, epsilons: Sequence[float] = LOSS_EPSILONS,
                   base: Optional[StiqaConfig] = None, seed: int = 0, texts=None) -> ExperimentReport:
    base = base or StiqaConfig()
    rows = []
    for loss in losses:
        for eps in epsilons:
            cfg = replace(base, loss=loss, epsilon=float(eps), seed=seed)
            _, row = _train_row(cfg, data, texts)
            rows.append({"loss": loss, "epsilon": float(eps), **row})
    prov = {"seed": seed, "stiqa": asdict(base), "stiqa_hash": config_hash(base), "regions": len(data)}
    return ExperimentReport("loss_sweep", rows, prov, ["loss", "epsilon", "mae", "spearman", "pearson"])


def summarize_variants(report: ExperimentReport) -> Dict[str, Dict[str, float]]:
    out: Dict[str, Dict[str, float]] = {}
    for variant in dict.fromkeys(r["variant"] for r in report.rows):
        sel = [r for r in report.rows if r["variant"] == variant]
        out[variant] = {k: float(np.mean([r[k] for r in sel])) for k in ("mae", "spearman", "pearson")}
    return out
