import csv
import json
import os

import numpy as np
import pytest

from sdfn import pipeline
from sdfn.cli import EXIT_CONFIG, EXIT_MISSING, run
from sdfn.data_synth import read_manifest, read_pgm
from sdfn.labels import PATHOLOGIES
from sdfn.lrg import read_boxes_csv
from sdfn.networks import load_weights
from sdfn.verify import SMOKE_CONFIG, artifact_digests, run_pipeline


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    run_pipeline(str(root), seed=0)
    return root


def _write_config(tmp_path, text=None):
    p = tmp_path / "pipeline.ini"
    p.write_text(SMOKE_CONFIG.format(seed=0) if text is None else text)
    return str(p)


def test_smoke_run_produces_every_artifact(smoke):
    for name in ("segmenter", "extractor_global", "extractor_local", "fusion"):
        assert (smoke / "weights" / f"{name}.sdfnw").exists()
    rows = read_manifest(smoke / "corpus" / "manifest.csv")
    assert len(rows) == 60
    boxes = read_boxes_csv(smoke / "corpus" / "lrg_boxes.csv")
    assert set(boxes) == {r.image_id for r in rows}
    for image_id, (box, status) in boxes.items():
        crop = read_pgm(smoke / "corpus" / "crops" / f"{image_id}.pgm")
        assert crop.shape == (box.height, box.width) and box.within(64, 64)
    report = json.loads((smoke / "reports" / "eval_report.json").read_text())
    assert report["models"] == ["global-only", "local-only", "sdfn"]
    assert report["pathologies"] == list(PATHOLOGIES)
    assert [c["b"] for c in report["comparisons"]] == ["global-only", "local-only"]
    test_ids = {k for k, v in report["folds"].items() if v == "test"}
    assert 0 < len(test_ids) < 60
    header = next(csv.reader(open(smoke / "reports" / "eval_report.csv")))
    assert header == ["pathology", "global-only", "local-only", "sdfn"]


def test_smoke_heatmaps_and_scores(smoke):
    cam_dir = smoke / "reports" / "cam"
    for image_id in ("img00000", "img00003"):
        for name in ("nodule", "emphysema"):
            h = read_pgm(cam_dir / f"{image_id}_{name}.pgm")
            assert h.shape == (64, 64)
            assert h.min() == 0.0 and h.max() == 1.0
            assert (cam_dir / f"{image_id}_{name}.ppm").exists()
    rows = list(csv.DictReader(open(cam_dir / "scores.csv")))
    assert len(rows) == 2 * len(PATHOLOGIES)
    for r in rows:
        z, p = float(r["logit"]), float(r["probability"])
        assert abs(p - 1 / (1 + np.exp(-z))) < 1e-12


def test_fusion_file_records_unchanged_checksums(smoke):
    cfg = pipeline.load_config(str(smoke / "pipeline.ini"))
    _, extra = load_weights(smoke / "weights" / "fusion.sdfnw", "fusion")
    sums = extra["freeze_checksums"]
    assert sums["global"][0] == sums["global"][1] and sums["local"][0] == sums["local"][1]
    model = pipeline.load_sdfn(cfg)
    assert model.extractor_checksums() == (sums["global"][1], sums["local"][1])


def test_tampered_extractor_is_refused(smoke, tmp_path):
    import shutil
    copy = tmp_path / "run"
    shutil.copytree(smoke, copy)
    cfg = pipeline.load_config(str(copy / "pipeline.ini"))
    g, _ = load_weights(copy / "weights" / "extractor_global.sdfnw", "densenet", cfg.extractor_global)
    g.layers["fc"].params["bias"].data[0] += 1.0
    from sdfn.networks import save_weights
    save_weights(copy / "weights" / "extractor_global.sdfnw", g)
    assert run(["evaluate", "--config", str(copy / "pipeline.ini")]) == EXIT_CONFIG


def test_evaluate_without_fusion_names_the_missing_stage(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    assert run(["gen-data", "--config", cfg]) == 0
    capsys.readouterr()
    assert run(["evaluate", "--config", cfg]) == EXIT_MISSING
    err = capsys.readouterr().err
    assert "train-fusion" in err


def test_run_lrg_without_segmenter(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    run(["gen-data", "--config", cfg])
    assert run(["run-lrg", "--config", cfg]) == EXIT_MISSING
    assert "train-seg" in capsys.readouterr().err


@pytest.mark.parametrize("text", [
    "[pipeline]\nseed = x\n",
    "[bogus]\na = 1\n",
    "[segmenter]\ninput_size = 30\ndepth = 3\n",
    "[phantom]\nextent = many\n",
    "[extractor_train]\nlearning_rat = 0.1\n",
    "[pipeline]\nfolds = 3\ntest_fold = 3\n",
    "not an ini file",
])
def test_bad_config_exits_2(tmp_path, text, capsys):
    assert run(["gen-data", "--config", _write_config(tmp_path, text)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_and_view(tmp_path):
    assert run(["gen-data", "--config", str(tmp_path / "nope.ini")]) == EXIT_CONFIG
    assert run(["gen-data"]) == EXIT_CONFIG
    assert run(["train-extractor", "--config", _write_config(tmp_path)]) == EXIT_CONFIG


def test_unknown_cam_class(smoke):
    code = run(["cam", "--config", str(smoke / "pipeline.ini"), "--classes", "flu"])
    assert code == EXIT_CONFIG


def test_config_text_round_trip(tmp_path):
    cfg = pipeline.load_config(_write_config(tmp_path))
    back = pipeline.parse_config(pipeline.format_config(cfg), root=cfg.root)
    assert back == cfg
    assert cfg.segmenter_train.learning_rate == 0.01 and cfg.phantom.extent == 64


def test_seed_override_reaches_corpus_and_training(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for d, seed in ((a, None), (b, "7")):
        d.mkdir()
        cfg = _write_config(d)
        run(["gen-data", "--config", cfg] + (["--seed", seed] if seed else []))
    assert (a / "corpus/images/img00000.pgm").read_bytes() != (b / "corpus/images/img00000.pgm").read_bytes()
    cfg = pipeline.load_config(str(b / "pipeline.ini"), seed=7)
    assert cfg.extractor_train.seed == 7 and cfg.fusion_train.seed == 7


def test_gen_data_is_byte_stable(tmp_path):
    digests = []
    for name in ("x", "y"):
        d = tmp_path / name
        d.mkdir()
        run(["gen-data", "--config", _write_config(d)])
        digests.append({k: v for k, v in _tree(d / "corpus").items()})
    assert digests[0] == digests[1]


def _tree(base):
    import hashlib
    out = {}
    for dirpath, _, files in os.walk(base):
        for f in files:
            p = os.path.join(dirpath, f)
            out[os.path.relpath(p, base)] = hashlib.sha256(open(p, "rb").read()).hexdigest()
    return out


def test_artifact_digests_cover_weights_and_reports(smoke):
    d = artifact_digests(str(smoke))
    assert any(k.startswith("weights") for k in d) and any(k.startswith("reports") for k in d)
