"""Batch stages behind the command line: corpus, segmenter, crops, extractors, fusion, reports."""
import configparser
import csv
import json
import os
from dataclasses import dataclass, field, fields

import numpy as np

from .data_synth import (ManifestRow, PhantomSpec, make_record, read_manifest, read_pgm,
                         resize_bilinear, resize_mask, write_manifest, write_pgm)
from .data_synth.manifest import label_matrix
from .data_synth.phantom import _coerce, format_phantom_spec, parse_phantom_spec
from .fusion_cam import (SdfnModel, cam, export_cam, fuse_and_rescale, sdfn_logits,
                         train_fusion, write_scores_csv)
from .labels import PATHOLOGIES, class_index
from .lrg import generate_lung_region, read_boxes_csv, write_boxes_csv
from .metrics import EvalReport, kfold_split, paired_t_test, per_class_auc, roc_curve, write_roc_csv
from .networks import (Dataset, FusionConfig, MiniDenseNetConfig, MiniUNetConfig, TrainConfig,
                       load_weights, predict, save_weights, train_classifier, train_segmenter)
from .networks.persist import WeightFileError

VIEWS = ("global", "local")
MODELS = ("global-only", "local-only", "sdfn")


class PipelineConfigError(ValueError):
    pass


class MissingPrerequisite(RuntimeError):
    def __init__(self, stage, path):
        super().__init__(f"missing {path}; run the '{stage}' stage first")
        self.stage = stage
        self.path = path


@dataclass
class PipelineConfig:
    root: str = "."
    corpus: str = "corpus"
    weights: str = "weights"
    reports: str = "reports"
    seed: int = 0
    folds: int = 5
    test_fold: int = 0
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    segmenter: MiniUNetConfig = field(default_factory=MiniUNetConfig)
    extractor_global: MiniDenseNetConfig = field(default_factory=MiniDenseNetConfig)
    extractor_local: MiniDenseNetConfig = field(default_factory=MiniDenseNetConfig)
    segmenter_train: TrainConfig = field(default_factory=TrainConfig.segmentation)
    extractor_train: TrainConfig = field(default_factory=TrainConfig.classification)
    fusion_train: TrainConfig = field(default_factory=TrainConfig.classification)

    def path(self, *parts):
        return os.path.join(self.root, *parts)

    @property
    def corpus_dir(self):
        return self.path(self.corpus)

    @property
    def weights_dir(self):
        return self.path(self.weights)

    @property
    def reports_dir(self):
        return self.path(self.reports)

    def with_seed(self, seed):
        self.seed = seed
        for name in ("segmenter_train", "extractor_train", "fusion_train"):
            setattr(self, name, getattr(self, name).replace(seed=seed))
        return self


def _section_dataclass(cls, section, base=None):
    base = base if base is not None else cls()
    known = {f.name for f in fields(cls)}
    values = {}
    for key, text in section.items():
        if key not in known:
            raise PipelineConfigError(f"[{section.name}] unknown key {key!r}")
        try:
            values[key] = _coerce(getattr(base, key), text)
        except ValueError as err:
            raise PipelineConfigError(f"[{section.name}] {key}: {err}") from None
    merged = {f.name: getattr(base, f.name) for f in fields(cls)}
    merged.update(values)
    try:
        return cls(**merged)
    except (TypeError, ValueError) as err:
        raise PipelineConfigError(f"[{section.name}] {err}") from None


def parse_config(text, root="."):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise PipelineConfigError(str(err)) from None
    cfg = PipelineConfig(root=root)
    allowed = {"paths", "pipeline", "phantom", "segmenter", "extractor_global", "extractor_local",
               "segmenter_train", "extractor_train", "fusion_train"}
    for name in cp.sections():
        if name not in allowed:
            raise PipelineConfigError(f"unknown section [{name}]")
    if cp.has_section("paths"):
        for key, val in cp["paths"].items():
            if key not in ("corpus", "weights", "reports"):
                raise PipelineConfigError(f"[paths] unknown key {key!r}")
            setattr(cfg, key, val)
    if cp.has_section("pipeline"):
        for key, val in cp["pipeline"].items():
            if key not in ("seed", "folds", "test_fold"):
                raise PipelineConfigError(f"[pipeline] unknown key {key!r}")
            try:
                setattr(cfg, key, int(val))
            except ValueError:
                raise PipelineConfigError(f"[pipeline] {key} must be an integer") from None
    if cp.has_section("phantom"):
        lines = "\n".join(f"{k} = {v}" for k, v in cp["phantom"].items())
        try:
            cfg.phantom = parse_phantom_spec(lines)
        except ValueError as err:
            raise PipelineConfigError(f"[phantom] {err}") from None
    if cp.has_section("segmenter"):
        cfg.segmenter = _section_dataclass(MiniUNetConfig, cp["segmenter"])
    for view in VIEWS:
        name = f"extractor_{view}"
        if cp.has_section(name):
            setattr(cfg, name, _section_dataclass(MiniDenseNetConfig, cp[name]))
    for name in ("segmenter_train", "extractor_train", "fusion_train"):
        if cp.has_section(name):
            setattr(cfg, name, _section_dataclass(TrainConfig, cp[name], getattr(cfg, name)))
    if not 0 <= cfg.test_fold < cfg.folds or cfg.folds < 2:
        raise PipelineConfigError("need folds >= 2 and 0 <= test_fold < folds")
    return cfg.with_seed(cfg.seed)


def load_config(path, seed=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise PipelineConfigError(f"cannot read config {path}: {err}") from None
    cfg = parse_config(text, root=os.path.dirname(os.path.abspath(path)))
    return cfg.with_seed(seed) if seed is not None else cfg


def format_config(cfg):
    """INI text that parses back to ``cfg`` (paths relative to the file)."""
    out = ["[paths]", f"corpus = {cfg.corpus}", f"weights = {cfg.weights}",
           f"reports = {cfg.reports}", "", "[pipeline]", f"seed = {cfg.seed}",
           f"folds = {cfg.folds}", f"test_fold = {cfg.test_fold}", "", "[phantom]",
           format_phantom_spec(cfg.phantom).strip()]

    def section(name, obj):
        out.extend(["", f"[{name}]"])
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            out.append(f"{f.name} = {v}")

    section("segmenter", cfg.segmenter)
    section("extractor_global", cfg.extractor_global)
    section("extractor_local", cfg.extractor_local)
    section("segmenter_train", cfg.segmenter_train)
    section("extractor_train", cfg.extractor_train)
    section("fusion_train", cfg.fusion_train)
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def _require(path, stage):
    if not os.path.exists(path):
        raise MissingPrerequisite(stage, path)
    return path


def manifest_path(cfg):
    return os.path.join(cfg.corpus_dir, "manifest.csv")


def splits_path(cfg):
    return os.path.join(cfg.corpus_dir, "splits.csv")


def boxes_path(cfg):
    return os.path.join(cfg.corpus_dir, "lrg_boxes.csv")


def weights_path(cfg, name):
    return os.path.join(cfg.weights_dir, f"{name}.sdfnw")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_splits(cfg):
    with open(_require(splits_path(cfg), "gen-data"), newline="") as fh:
        return {r["image_id"]: r["split"] for r in csv.DictReader(fh)}


def load_corpus(cfg):
    rows = read_manifest(_require(manifest_path(cfg), "gen-data"))
    return rows, read_splits(cfg)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def gen_data(cfg):
    spec = cfg.phantom
    root = cfg.corpus_dir
    for sub in ("images", "masks"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    rows = []
    for i in range(spec.count):
        rec = make_record(spec, cfg.seed, i)
        img_rel = f"images/{rec.image_id}.pgm"
        mask_rel = f"masks/{rec.image_id}.pgm"
        write_pgm(os.path.join(root, img_rel), rec.image)
        write_pgm(os.path.join(root, mask_rel), rec.lung_mask.astype(np.float64))
        rows.append(ManifestRow(rec.image_id, rec.patient_id, img_rel, mask_rel, rec.labels,
                                rec.lesion_boxes))
    write_manifest(manifest_path(cfg), rows)
    folds = kfold_split([r.image_id for r in rows], [r.patient_id for r in rows], cfg.folds, cfg.seed)
    test = set(folds[cfg.test_fold])
    with open(splits_path(cfg), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "split"])
        for r in rows:
            w.writerow([r.image_id, "test" if r.image_id in test else "train"])
    with open(os.path.join(root, "phantom.cfg"), "w") as fh:
        fh.write(format_phantom_spec(spec))
    return rows


def _load_images(cfg, rows, size, rel_attr="image_path", threshold=False):
    out = np.empty((len(rows), 1, size, size))
    for i, r in enumerate(rows):
        img = read_pgm(_require(os.path.join(cfg.corpus_dir, getattr(r, rel_attr)), "gen-data"))
        out[i, 0] = resize_mask(img >= 0.5, size, size) if threshold else resize_bilinear(img, size, size)
    return out


def _load_crops(cfg, rows, size):
    out = np.empty((len(rows), 1, size, size))
    for i, r in enumerate(rows):
        p = _require(os.path.join(cfg.corpus_dir, "crops", f"{r.image_id}.pgm"), "run-lrg")
        out[i, 0] = resize_bilinear(read_pgm(p), size, size)
    return out


def _split_rows(rows, splits, which):
    return [r for r in rows if splits[r.image_id] == which]


def train_seg(cfg, log=None):
    rows, splits = load_corpus(cfg)
    train = _split_rows(rows, splits, "train")
    s = cfg.segmenter.input_size
    data = Dataset(_load_images(cfg, train, s), _load_images(cfg, train, s, "mask_path", True),
                   [r.patient_id for r in train], [r.image_id for r in train])
    tm = train_segmenter(data, cfg.segmenter_train, cfg.segmenter, log=log)
    os.makedirs(cfg.weights_dir, exist_ok=True)
    save_weights(weights_path(cfg, "segmenter"), tm.model, {"best_epoch": tm.best_epoch})
    _write_json(os.path.join(cfg.weights_dir, "segmenter_history.json"), tm.history)
    return tm


def run_lrg(cfg):
    rows, _ = load_corpus(cfg)
    model, _ = load_weights(_require(weights_path(cfg, "segmenter"), "train-seg"), "unet", cfg.segmenter)
    s = cfg.segmenter.input_size
    os.makedirs(os.path.join(cfg.corpus_dir, "crops"), exist_ok=True)
    out = []
    for lo in range(0, len(rows), 64):
        chunk = rows[lo:lo + 64]
        full = [read_pgm(os.path.join(cfg.corpus_dir, r.image_path)) for r in chunk]
        small = np.stack([resize_bilinear(im, s, s) for im in full])[:, None]
        probs = predict(model, small)
        for r, im, p in zip(chunk, full, probs):
            h, w = im.shape
            mask = resize_mask(p[0] >= 0.5, w, h)
            region = generate_lung_region(im, mask)
            write_pgm(os.path.join(cfg.corpus_dir, "crops", f"{r.image_id}.pgm"), region.crop)
            out.append((r.image_id, region.box, region.status))
    write_boxes_csv(boxes_path(cfg), out)
    return out


def _view_images(cfg, rows, view):
    size = getattr(cfg, f"extractor_{view}").input_size
    return _load_images(cfg, rows, size) if view == "global" else _load_crops(cfg, rows, size)


def train_extractor(cfg, view, log=None):
    if view not in VIEWS:
        raise PipelineConfigError(f"--view must be one of {VIEWS}, got {view!r}")
    rows, splits = load_corpus(cfg)
    if view == "local":
        _require(boxes_path(cfg), "run-lrg")
    train = _split_rows(rows, splits, "train")
    data = Dataset(_view_images(cfg, train, view), label_matrix(train),
                   [r.patient_id for r in train], [r.image_id for r in train])
    tm = train_classifier(data, cfg.extractor_train, getattr(cfg, f"extractor_{view}"), log=log)
    os.makedirs(cfg.weights_dir, exist_ok=True)
    save_weights(weights_path(cfg, f"extractor_{view}"), tm.model, {"best_epoch": tm.best_epoch})
    _write_json(os.path.join(cfg.weights_dir, f"extractor_{view}_history.json"), tm.history)
    return tm


def load_extractors(cfg):
    nets = []
    for view in VIEWS:
        p = _require(weights_path(cfg, f"extractor_{view}"), f"train-extractor --view={view}")
        nets.append(load_weights(p, "densenet", getattr(cfg, f"extractor_{view}"))[0])
    return nets


def train_fusion_stage(cfg, log=None):
    rows, splits = load_corpus(cfg)
    g, l = load_extractors(cfg)
    _require(boxes_path(cfg), "run-lrg")
    model = SdfnModel(g, l)
    train = _split_rows(rows, splits, "train")
    model = train_fusion(model, _view_images(cfg, train, "global"), _view_images(cfg, train, "local"),
                         label_matrix(train), [r.patient_id for r in train], cfg.fusion_train, log)
    save_weights(weights_path(cfg, "fusion"), model.head,
                 {"best_epoch": model.best_epoch, "freeze_checksums": model.freeze_checksums})
    _write_json(os.path.join(cfg.weights_dir, "fusion_history.json"), model.history)
    return model


def load_sdfn(cfg):
    p = _require(weights_path(cfg, "fusion"), "train-fusion")
    g, l = load_extractors(cfg)
    head, extra = load_weights(p, "fusion", FusionConfig(cfg.extractor_global.feature_dim,
                                                           cfg.extractor_local.feature_dim))
    model = SdfnModel(g, l, head)
    recorded = extra.get("freeze_checksums", {})
    now = model.extractor_checksums()
    if recorded and (recorded["global"][1], recorded["local"][1]) != now:
        raise WeightFileError("extractor checkpoints changed after fusion training")
    return model


def evaluate(cfg):
    rows, splits = load_corpus(cfg)
    model = load_sdfn(cfg)
    _require(boxes_path(cfg), "run-lrg")
    test = _split_rows(rows, splits, "test")
    y = label_matrix(test)
    xg = _view_images(cfg, test, "global")
    xl = _view_images(cfg, test, "local")
    probs = {
        "global-only": predict(model.global_net, xg),
        "local-only": predict(model.local_net, xl),
        "sdfn": 1.0 / (1.0 + np.exp(-np.concatenate(
            [np.atleast_2d(sdfn_logits(model, xg[i:i + 64], xl[i:i + 64]))
             for i in range(0, len(test), 64)]))),
    }
    per = {m: list(per_class_auc(probs[m], y, skip_undefined=True)) for m in MODELS}
    report = EvalReport(list(MODELS), per, folds=dict(sorted(splits.items())))
    ok = report.defined
    for other in ("global-only", "local-only"):
        r = paired_t_test([per["sdfn"][c] for c in ok], [per[other][c] for c in ok]) \
            if len(ok) >= 2 else None
        report.comparisons.append({"a": "sdfn", "b": other, "classes": len(ok),
                                   "t": None if r is None else r.t, "p": None if r is None else r.p,
                                   "degenerate": r is None or r.degenerate})
    os.makedirs(cfg.reports_dir, exist_ok=True)
    report.to_csv(os.path.join(cfg.reports_dir, "eval_report.csv"))
    report.to_json(os.path.join(cfg.reports_dir, "eval_report.json"))
    curves = {PATHOLOGIES[c]: roc_curve(probs["sdfn"][:, c], y[:, c]) for c in ok}
    write_roc_csv(os.path.join(cfg.reports_dir, "roc_sdfn.csv"), curves)
    return report


def cam_stage(cfg, ids=None, classes=None):
    rows, _ = load_corpus(cfg)
    model = load_sdfn(cfg)
    boxes = read_boxes_csv(_require(boxes_path(cfg), "run-lrg"))
    by_id = {r.image_id: r for r in rows}
    ids = ids or [rows[0].image_id]
    unknown = [i for i in ids if i not in by_id]
    if unknown:
        raise PipelineConfigError(f"unknown image ids: {', '.join(unknown)}")
    try:
        cls = [class_index(c) for c in (classes or PATHOLOGIES)]
    except (KeyError, ValueError, IndexError) as err:
        raise PipelineConfigError(f"bad --classes value: {err}") from None
    out_dir = os.path.join(cfg.reports_dir, "cam")
    os.makedirs(out_dir, exist_ok=True)
    written, scores = [], []
    for image_id in ids:
        r = by_id[image_id]
        full = read_pgm(os.path.join(cfg.corpus_dir, r.image_path))
        h, w = full.shape
        xg = _view_images(cfg, [r], "global")
        xl = _view_images(cfg, [r], "local")
        logits = sdfn_logits(model, xg, xl)[0]
        scores.append((image_id, logits, 1.0 / (1.0 + np.exp(-logits))))
        box = boxes[image_id][0]
        for c in cls:
            h1, h2 = cam(model, xg, xl, c)
            fused = fuse_and_rescale(h1, h2, box, w, h)
            prefix = os.path.join(out_dir, f"{image_id}_{PATHOLOGIES[c]}")
            export_cam(prefix, full, fused)
            written.append(prefix)
    write_scores_csv(os.path.join(out_dir, "scores.csv"), scores)
    return written
