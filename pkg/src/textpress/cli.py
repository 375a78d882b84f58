"""Command-line entry point: ``textpress <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from types import SimpleNamespace
from typing import List, Optional


from . import codec
from .codec.container import CompressedBlob, QualityMap, load_qmap, save_qmap
from .config import load_config
from .controller import ControllerConfig, run_pipeline, write_trace
from .imagedata import (
    DatasetManifest,
    ManifestEntry,
    TextRegion,
    load_image,
    load_manifest,
    prepare_region,
    save_image,
    write_manifest,
)
from .labels import ExternalRecognizer, SyntheticRecognizer, label_or_zero

log = logging.getLogger("textpress")


# -- helpers -----------------------------------------------------------------

def _add_dataclass_flags(parser, cls, prefix: str = ""):
    """One ``--name`` flag per dataclass field; unset flags keep the config
    file (or default) value."""
    group = parser.add_argument_group(f"{cls.__name__} fields")
    for f in fields(cls):
        default = f.default
        kind = type(default) if default is not None else str
        group.add_argument(f"--{prefix}{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", type=kind,
                           default=None, help=f"default {default}")


def _override(cfg, args):
    values = {f.name: getattr(args, f"cfg_{f.name}") for f in fields(cfg)
              if getattr(args, f"cfg_{f.name}", None) is not None}
    return replace(cfg, **values)


def _backend(args):
    if args.backend == "neural":
        if not args.codec_model:
            raise SystemExit("--backend neural needs --codec-model")
        return codec.get_backend("neural", args.codec_model)
    return codec.get_backend(args.backend)


def _labeled_crops(manifest: DatasetManifest, seed: int, require_labels: bool = True):
    data, texts = [], []
    idx = 0
    for entry in manifest:
        image = entry.load_image()
        for region in entry.regions:
            if region.label is None:
                if require_labels:
                    raise SystemExit(f"{entry.image_path}: region {region.box} has no label; run labelgen first")
                continue
            data.append((prepare_region(image, region, seed + idx), region.label))
            texts.append(region.transcription)
            idx += 1
    return data, texts


def _scenes(manifest: DatasetManifest):
    return [SimpleNamespace(image=e.load_image(), regions=list(e.regions)) for e in manifest]


def _load_model(path):
    from .stiqa import load_model

    return load_model(path)


# -- subcommands -------------------------------------------------------------

def cmd_synth(args, configs):
    from .synth import generate_synthetic_corpus, label_scene

    scenes, crops = generate_synthetic_corpus(args.seed, args.count)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, scene in enumerate(scenes):
        name = f"scene_{i:04d}.png"
        save_image(scene.image, out / name)
        # the last scene may hold more regions than ``count`` needs; label them all
        labels = [c.label for c in label_scene(scene, i, crop_seed=args.seed)] if args.with_labels \
            else [None] * len(scene.regions)
        regions = tuple(r.with_label(q) for r, q in zip(scene.regions, labels))
        entries.append(ManifestEntry(out / name, regions))
    write_manifest(DatasetManifest(tuple(entries)), out / "manifest.jsonl")
    n = sum(len(e.regions) for e in entries)
    print(f"wrote {len(scenes)} scenes, {n} regions to {out / 'manifest.jsonl'}")


def cmd_labelgen(args, configs):
    manifest = load_manifest(args.manifest)
    if args.recognizer == "external":
        if not args.command:
            raise SystemExit("--recognizer external needs --command")
        recognizer = ExternalRecognizer(args.command)
    else:
        recognizer = SyntheticRecognizer(args.degradation)
    entries = []
    idx = 0
    for entry in manifest:
        image = entry.load_image()
        regions = []
        for region in entry.regions:
            crop = prepare_region(image, region, args.seed + idx)
            label = label_or_zero(region.transcription, recognizer(crop, region.transcription))
            regions.append(region.with_label(label.q))
            idx += 1
        entries.append(ManifestEntry(entry.image_path, tuple(regions)))
    write_manifest(DatasetManifest(tuple(entries)), args.output)
    print(f"labelled {idx} regions -> {args.output}")


def cmd_train(args, configs):
    from .stiqa import save_model, train

    cfg = _override(replace(configs["stiqa"], seed=args.seed), args)
    data, texts = _labeled_crops(load_manifest(args.manifest), args.seed)
    model = train(cfg, data, texts)
    save_model(model, args.model)
    print(json.dumps({"best_epoch": model.meta["best_epoch"], "best_val_mae": model.meta["best_val_mae"]}))


def cmd_train_codec(args, configs):
    from .codec.neural import train_neural_codec

    cfg = replace(configs["neural"], seed=args.seed)
    backend = train_neural_codec([load_image(p) for p in args.images], cfg, log_every=50)
    backend.save(args.output)
    print(f"saved codec ({backend.fingerprint():08x}) to {args.output}")


def cmd_assess(args, configs):
    from .stiqa import assess

    model = _load_model(args.model)
    image = load_image(args.image)
    region = TextRegion(tuple(args.box), "")
    print(f"{assess(model, prepare_region(image, region, args.seed)):.6f}")


def cmd_compress(args, configs):
    image = load_image(args.image)
    if args.qmap:
        qmap = load_qmap(args.qmap)
    else:
        qmap = QualityMap.constant(image.height, image.width, args.quality)
    blob = codec.compress(image, qmap, _backend(args))
    blob.save(args.output)
    print(f"{blob.bpp:.4f} bpp, {len(blob.to_bytes())} bytes -> {args.output}")


def cmd_decompress(args, configs):
    blob = CompressedBlob.load(args.blob)
    backend = _backend(args) if blob.backend == "neural" else None
    save_image(codec.decompress(blob, backend), args.output)


def _find_entry(manifest: DatasetManifest, image_path: Path) -> ManifestEntry:
    target = image_path.resolve()
    for entry in manifest:
        if Path(entry.image_path).resolve() == target:
            return entry
    if len(manifest) == 1:
        return manifest.entries[0]
    raise SystemExit(f"{image_path} is not listed in the manifest")


def cmd_pipeline(args, configs):
    cfg = _override(configs["controller"], args)
    image = load_image(args.image)
    regions = list(_find_entry(load_manifest(args.manifest), Path(args.image)).regions)
    model = _load_model(args.model)
    best, trace = run_pipeline(image, regions, model, _backend(args), cfg)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    best.blob.save(out / "best.blob")
    save_image(best.reconstruction, out / "best.png")
    write_trace(out / "trace.jsonl", image, trace)
    chosen = next(r for r in trace if r.result is best)
    save_qmap(chosen.qmap, out / "best_qmap.png")
    print(f"selected round {chosen.round}: {best.bpp:.4f} bpp, mean score {chosen.mean_score:.4f}")


def cmd_eval(args, configs):
    from .stiqa import evaluate

    model = _load_model(args.model)
    data, _ = _labeled_crops(load_manifest(args.manifest), args.seed)
    m = evaluate(model, data)
    print(json.dumps(m._asdict()))


def cmd_sweep(args, configs):
    from .experiments import run_table3_sweep

    scenes = _scenes(load_manifest(args.manifest))
    report = run_table3_sweep(scenes, _load_model(args.model), args.lambdas, args.iterations,
                              _backend(args), configs["controller"])
    report.provenance["seed"] = args.seed
    for p in report.save(args.outdir):
        print(p)


def cmd_ablate(args, configs):
    from .experiments import run_ablation, run_loss_sweep

    base = _override(configs["stiqa"], args)
    data, texts = _labeled_crops(load_manifest(args.manifest), args.seed)
    seeds = args.seeds or [args.seed]
    reports = [run_ablation(data, args.variants, seeds, base, texts)]
    if args.loss_sweep:
        reports.append(run_loss_sweep(data, base=base, seed=seeds[0], texts=texts))
    for report in reports:
        for p in report.save(args.outdir):
            print(p)


def cmd_report(args, configs):
    from .experiments import ExperimentReport, plot_report

    paths = sorted(Path(args.outdir).glob("*.jsonl"))
    if not paths:
        raise SystemExit(f"no reports in {args.outdir}")
    for path in paths:
        report = ExperimentReport.from_jsonl(path.stem, path.read_text())
        if not report.rows or "round" in report.rows[0]:
            continue
        print(report.summary())
        if args.plots:
            plot_report(report, path.with_suffix(".png"))


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .experiments import ABLATION_VARIANTS, TABLE3_ITERATIONS, TABLE3_LAMBDAS
    from .stiqa.model import StiqaConfig, VARIANTS

    p = argparse.ArgumentParser(prog="textpress", description="Text-aware image compression toolkit.")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--backend", choices=("deterministic", "neural"), default="deterministic")
    p.add_argument("--codec-model", help="trained neural codec file (for --backend neural)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic scene-text corpus with a manifest")
    s.add_argument("outdir")
    s.add_argument("--count", type=int, default=100, help="number of text regions")
    s.add_argument("--with-labels", action="store_true", help="store labels from the graded degradations")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("labelgen", help="fill region labels in a manifest")
    s.add_argument("manifest")
    s.add_argument("output")
    s.add_argument("--recognizer", choices=("synthetic", "external"), default="synthetic")
    s.add_argument("--degradation", type=float, default=0.0, help="knob of the synthetic recognizer")
    s.add_argument("--command", help="external recognizer command line")
    s.set_defaults(func=cmd_labelgen)

    s = sub.add_parser("train", help="train the quality assessor on a labelled manifest")
    s.add_argument("manifest")
    s.add_argument("model")
    _add_dataclass_flags(s, StiqaConfig)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("train-codec", help="train the neural codec backend")
    s.add_argument("output")
    s.add_argument("images", nargs="+")
    s.set_defaults(func=cmd_train_codec)

    s = sub.add_parser("assess", help="score one text region")
    s.add_argument("model")
    s.add_argument("image")
    s.add_argument("--box", type=int, nargs=4, metavar=("X", "Y", "W", "H"), required=True)
    s.set_defaults(func=cmd_assess)

    s = sub.add_parser("compress", help="compress an image with a quality map")
    s.add_argument("image")
    s.add_argument("output")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--qmap", help="PGM/PNG (value/255) or .npy quality map")
    g.add_argument("--quality", type=float, default=0.5, help="constant map value")
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("decompress", help="decode a blob to an image")
    s.add_argument("blob")
    s.add_argument("output")
    s.set_defaults(func=cmd_decompress)

    s = sub.add_parser("pipeline", help="iterative text-aware compression of one image")
    s.add_argument("image")
    s.add_argument("--manifest", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--outdir", required=True)
    _add_dataclass_flags(s, ControllerConfig)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("eval", help="regression metrics of a model on a labelled manifest")
    s.add_argument("model")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="lambda x iterations sweep of the pipeline")
    s.add_argument("manifest")
    s.add_argument("model")
    s.add_argument("outdir")
    s.add_argument("--lambdas", type=float, nargs="+", default=list(TABLE3_LAMBDAS))
    s.add_argument("--iterations", type=int, nargs="+", default=list(TABLE3_ITERATIONS))
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("ablate", help="train assessor variants on shared seeds")
    s.add_argument("manifest")
    s.add_argument("outdir")
    s.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(ABLATION_VARIANTS))
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--loss-sweep", action="store_true", help="also run the loss x epsilon grid")
    _add_dataclass_flags(s, StiqaConfig, prefix="stiqa-")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("report", help="print summaries of saved reports")
    s.add_argument("outdir")
    s.add_argument("--plots", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    configs = load_config(args.config)
    try:
        args.func(args, configs)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
