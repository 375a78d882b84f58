import json

import numpy as np
import pytest

from textpress.cli import main
from textpress.codec.container import CompressedBlob
from textpress.imagedata import load_image, load_manifest

TINY = ["--embed-dim", "16", "--num-heads", "2", "--ff-dim", "32", "--encoder-layers", "1",
        "--decoder-layers", "1", "--epochs", "2", "--batch-size", "8"]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", str(root / "data"), "--count", "20", "--with-labels"]) == 0
    assert main(["train", str(root / "data" / "manifest.jsonl"), str(root / "model.pt"), *TINY]) == 0
    return root


def test_synth_writes_labelled_manifest(work):
    manifest = load_manifest(work / "data" / "manifest.jsonl")
    regions = [r for e in manifest for r in e.regions]
    assert len(regions) >= 20 and all(r.label is not None for r in regions)


def test_labelgen_fills_labels(work, capsys):
    out = work / "relabel.jsonl"
    assert main(["synth", str(work / "raw"), "--count", "5"]) == 0
    assert main(["labelgen", str(work / "raw" / "manifest.jsonl"), str(out), "--degradation", "0.0"]) == 0
    labels = [r.label for e in load_manifest(out) for r in e.regions]
    assert labels and all(q == pytest.approx(1.0) for q in labels)
    # unlabelled manifests cannot be trained on
    with pytest.raises(SystemExit):
        main(["train", str(work / "raw" / "manifest.jsonl"), str(work / "x.pt"), *TINY])


def test_assess_and_eval(work, capsys):
    scene = next(iter(load_manifest(work / "data" / "manifest.jsonl")))
    box = [str(v) for v in scene.regions[0].box]
    capsys.readouterr()
    assert main(["assess", str(work / "model.pt"), str(scene.image_path), "--box", *box]) == 0
    assert 0.0 < float(capsys.readouterr().out) < 1.0
    assert main(["eval", str(work / "model.pt"), str(work / "data" / "manifest.jsonl")]) == 0
    assert set(json.loads(capsys.readouterr().out)) == {"mae", "spearman", "pearson"}


def test_compress_roundtrip(work):
    image = work / "data" / "scene_0000.png"
    blob = work / "img.blob"
    assert main(["compress", str(image), str(blob), "--quality", "1.0"]) == 0
    assert main(["decompress", str(blob), str(work / "back.png")]) == 0
    a, b = load_image(image), load_image(work / "back.png")
    assert a.shape == b.shape and np.abs(a.pixels - b.pixels).max() <= 1 / 128 + 1 / 255
    assert CompressedBlob.load(blob).backend == "deterministic"


def test_compress_with_qmap_file(work):
    image = load_image(work / "data" / "scene_0000.png")
    np.save(work / "q.npy", np.full(image.shape, 0.3))
    assert main(["compress", str(work / "data" / "scene_0000.png"), str(work / "q.blob"), "--qmap", str(work / "q.npy")]) == 0


def test_pipeline_outputs(work, capsys):
    out = work / "pipe"
    assert main(["pipeline", str(work / "data" / "scene_0000.png"), "--manifest", str(work / "data" / "manifest.jsonl"),
                 "--model", str(work / "model.pt"), "--outdir", str(out), "--iterations", "3"]) == 0
    assert {p.name for p in out.iterdir()} == {"best.blob", "best.png", "trace.jsonl", "best_qmap.png"}
    assert len((out / "trace.jsonl").read_text().splitlines()) == 3
    assert "selected round" in capsys.readouterr().out


def test_sweep_ablate_report(work, capsys):
    manifest = str(work / "data" / "manifest.jsonl")
    out = work / "reports"
    assert main(["sweep", manifest, str(work / "model.pt"), str(out), "--lambdas", "1", "5", "--iterations", "1", "2"]) == 0
    stiqa = [a.replace("--", "--stiqa-", 1) if a.startswith("--") else a for a in TINY]
    assert main(["ablate", manifest, str(out), "--variants", "prob", "--seeds", "0", *stiqa]) == 0
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "table3_sweep" in text and "ablation" in text


def test_errors_return_nonzero(work, tmp_path):
    assert main(["decompress", str(tmp_path / "missing.blob"), str(tmp_path / "o.png")]) == 2
    with pytest.raises(SystemExit):
        main(["report", str(tmp_path)])
    with pytest.raises(SystemExit):
        main(["--backend", "neural", "compress", str(work / "data" / "scene_0000.png"), str(tmp_path / "b.blob")])


def test_config_file_is_applied(work, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("controller.iterations = 2\n")
    out = tmp_path / "pipe"
    assert main(["--config", str(cfg), "pipeline", str(work / "data" / "scene_0000.png"),
                 "--manifest", str(work / "data" / "manifest.jsonl"), "--model", str(work / "model.pt"),
                 "--outdir", str(out)]) == 0
    assert len((out / "trace.jsonl").read_text().splitlines()) == 2
