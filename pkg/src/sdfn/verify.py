"""Acceptance checks, shared by ``sdfn verify`` and the test suite.

Each criterion returns ``(passed, detail)``; :func:`run_suite` times them and
prints one line per criterion.
"""
import math
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import lrg, oracles
from .data_synth import PhantomSpec, make_record, resize_bilinear
from .fusion_cam import SdfnModel, cam, sdfn_logits, train_fusion
from .labels import EMPHYSEMA, NODULE, NUM_CLASSES
from .metrics import (auc_score, dice, iou, kfold_split, mean_auc, paired_t_test)
from .networks import (Dataset, MiniDenseNet, MiniDenseNetConfig, MiniUNet, MiniUNetConfig,
                       TrainConfig, checksum, predict, train_classifier, train_segmenter)
from .tensor_core import (LayerSpec, Tensor, bce_loss, grad_check, layer_forward, make_layer,
                          pixelwise_ce, sigmoid_array)
from .tensor_core.layers import bn, conv, fc

TABLE_SDFN = (0.781, 0.885, 0.832, 0.700, 0.815, 0.765, 0.719, 0.866, 0.743, 0.842,
              0.921, 0.835, 0.791, 0.911)


@dataclass
class Result:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} [{self.number:2d}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


# ---------------------------------------------------------------------------
# 1. gradients
# ---------------------------------------------------------------------------

def _projected(layer, shape, rng, arity=1, away_from_zero=False):
    xs = []
    for _ in range(arity):
        x = rng.standard_normal(shape)
        if away_from_zero:
            x = np.sign(x) * (0.1 + np.abs(x))
        xs.append(Tensor(x, requires_grad=True))
    out = layer_forward(layer, *xs, training=True)
    proj = rng.standard_normal(out.shape)

    def loss(_):
        return (layer_forward(layer, *xs, training=True) * proj).sum()

    params = [t for t in layer.params.values()] if hasattr(layer, "params") else []
    return loss, params + xs


def layer_gradient_errors(seed=0):
    rng = np.random.default_rng(seed)
    cases = {
        "conv2d": (make_layer(conv(3, 4, 3, 2, 1), rng), (2, 3, 7, 6), 1, False),
        "conv2d_1x1": (make_layer(conv(3, 2, 1), rng), (2, 3, 4, 4), 1, False),
        "batch_norm": (make_layer(bn(3), rng), (4, 3, 3, 3), 1, False),
        "relu": (LayerSpec("relu"), (2, 3, 4, 4), 1, True),
        "avg_pool2d": (LayerSpec("avg_pool2d", window=2), (2, 2, 5, 4), 1, False),
        "global_avg_pool": (LayerSpec("global_avg_pool"), (2, 3, 3, 4), 1, False),
        "fully_connected": (make_layer(fc(5, 4), rng), (3, 5), 1, False),
        "concat": (LayerSpec("concat"), (2, 2, 3, 3), 2, False),
        "sigmoid": (LayerSpec("sigmoid"), (2, 3, 2, 2), 1, False),
        "upsample2x": (LayerSpec("upsample2x"), (1, 2, 3, 3), 1, False),
    }
    errors = {}
    for name, (layer, shape, arity, nz) in cases.items():
        if name == "batch_norm":
            layer.params["gamma"].data[:] = rng.uniform(0.5, 1.5, 3)
            layer.params["beta"].data[:] = rng.standard_normal(3)
        loss, params = _projected(layer, shape, rng, arity, nz)
        errors[name] = grad_check(loss, None, params=params)
    return errors


def composite_gradient_errors(seed=0):
    rng = np.random.default_rng(seed)
    cfg = MiniDenseNetConfig(input_size=8, growth_rate=2, blocks=(1, 1), init_channels=3)
    net = MiniDenseNet(cfg, seed=seed)
    x = rng.random((2, 1, 8, 8))
    y = (rng.random((2, NUM_CLASSES)) < 0.5).astype(float)
    e_cls = grad_check(lambda inp: bce_loss(y, net.forward(inp, training=True)[3]), x,
                       params=net.parameters())
    unet = MiniUNet(MiniUNetConfig(input_size=4, depth=1, base_channels=2), seed=seed)
    xs = rng.random((2, 1, 4, 4))
    m = (rng.random((2, 1, 4, 4)) < 0.5).astype(float)
    e_seg = grad_check(lambda inp: pixelwise_ce(m, unet.forward(inp, training=True)), xs,
                       params=unet.parameters())
    return {"classifier": e_cls, "segmenter": e_seg}


def criterion_gradients():
    iso = layer_gradient_errors()
    comp = composite_gradient_errors()
    worst_iso = max(iso, key=iso.get)
    ok = max(iso.values()) < 1e-6 and max(comp.values()) < 1e-4
    return ok, (f"isolated max {iso[worst_iso]:.1e} ({worst_iso}); "
                f"composite classifier {comp['classifier']:.1e}, segmenter {comp['segmenter']:.1e}")


# ---------------------------------------------------------------------------
# 2. LRG oracle
# ---------------------------------------------------------------------------

def criterion_lrg(count=1200, seed=2024):
    masks = oracles.random_lrg_masks(count, seed)
    mismatches = 0
    buckets = {"0": 0, "1": 0, "2": 0, "3+": 0}
    for m in masks:
        n = len(oracles.flood_fill_regions(m.tolist()))
        buckets["0" if n == 0 else "1" if n == 1 else "2" if n == 2 else "3+"] += 1
        box, status = lrg.lung_box(m)
        if box.as_tuple() + (status,) != oracles.lrg_box(m):
            mismatches += 1
    ok = mismatches == 0 and min(buckets.values()) > 0 and count >= 1000
    return ok, f"{mismatches} mismatches on {count} masks, components {buckets}"


# ---------------------------------------------------------------------------
# 3. closed forms
# ---------------------------------------------------------------------------

def criterion_closed_forms(pairs=1000, seed=3):
    checks = []
    x = np.zeros(400, bool)
    y = np.zeros(400, bool)
    x[:100] = True
    y[50:150] = True
    checks.append(dice(x, y) == 0.5)
    checks.append(abs(iou(x, y) - 1 / 3) < 1e-12)
    checks.append(dice(x, x) == 1.0 and iou(x, x) == 1.0)
    z = np.zeros(400, bool)
    z[300:] = True
    checks.append(dice(x, z) == 0.0)
    checks.append(dice(np.zeros(4, bool), np.zeros(4, bool)) == 1.0)
    checks.append(sigmoid_array(np.array([0.0]))[0] == 0.5)
    checks.append(abs(sigmoid_array(np.array([math.log(3)]))[0] - 0.75) < 1e-12)
    s40 = sigmoid_array(np.array([-40.0]))[0]
    checks.append(0 < s40 <= 1e-15)
    yv = (np.random.default_rng(0).random(14) < 0.5).astype(float)
    checks.append(abs(bce_loss(yv, Tensor(np.full(14, 0.5))).item() - math.log(2)) < 1e-12)
    checks.append(bce_loss(yv, Tensor(yv)).item() <= -math.log(1 - 1e-7) + 1e-15)
    mask = np.random.default_rng(1).random((16, 16)) < 0.5
    checks.append(abs(pixelwise_ce(mask, Tensor(np.full((16, 16), 0.5))).item() - math.log(2)) < 1e-12)
    checks.append(pixelwise_ce(mask, Tensor(mask.astype(float))).item() <= -math.log(1 - 1e-7) + 1e-15)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        shape = tuple(int(v) for v in rng.integers(1, 40, size=2))
        a = rng.random(shape) < rng.random()
        b = rng.random(shape) < rng.random()
        j = iou(a, b)
        worst = max(worst, abs(dice(a, b) - 2 * j / (1 + j)))
    ok = all(checks) and worst < 1e-12
    return ok, f"{sum(checks)}/{len(checks)} closed forms exact, DSC-IoU max gap {worst:.1e}"


# ---------------------------------------------------------------------------
# 4. AUC
# ---------------------------------------------------------------------------

def criterion_auc(sets=100, seed=4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(sets):
        n = int(rng.integers(2, 201))
        scores = np.round(rng.random(n), int(rng.integers(1, 3)))  # coarse grid forces ties
        labels = rng.integers(0, 2, n)
        labels[rng.choice(n, 2, replace=False)] = (0, 1)
        worst = max(worst, abs(auc_score(scores, labels) - oracles.pair_count_auc(scores, labels)))
    table = mean_auc(TABLE_SDFN)
    ok = worst < 1e-9 and abs(table - 0.815) <= 0.0005
    return ok, f"max gap to pair counting {worst:.1e}; table column mean {table:.4f}"


# ---------------------------------------------------------------------------
# 5. t-test
# ---------------------------------------------------------------------------

def criterion_ttest(seed=5, per_n=10):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (5, 14, 30):
        for _ in range(per_n):
            a = rng.random(n)
            b = a + rng.normal(rng.normal(0, 0.05), 0.1, n)
            t, p = paired_t_test(a, b)
            worst = max(worst, abs(p - oracles.t_two_tailed_quadrature(t, n - 1)))
    return worst < 1e-8, f"max |p - quadrature| {worst:.1e} over n in (5, 14, 30)"


# ---------------------------------------------------------------------------
# 6. CAM
# ---------------------------------------------------------------------------

def _random_sdfn(rng, seed):
    cg = MiniDenseNetConfig(input_size=16, growth_rate=int(rng.integers(2, 5)), blocks=(1, 1),
                            init_channels=int(rng.integers(2, 6)))
    cl = MiniDenseNetConfig(input_size=12, growth_rate=int(rng.integers(2, 5)), blocks=(1,),
                            init_channels=int(rng.integers(2, 6)))
    g, l = MiniDenseNet(cg, seed), MiniDenseNet(cl, seed + 1)
    for net in (g, l):
        for _, a in net.buffers():
            a[...] = rng.uniform(0.2, 1.5, a.shape) if a.min() >= 1.0 else rng.normal(0, 0.1, a.shape)
    model = SdfnModel(g, l)
    model.head.weight.data[...] = rng.standard_normal(model.head.weight.shape)
    model.head.bias.data[...] = rng.standard_normal(NUM_CLASSES)
    return model, rng.random((1, 1, 16, 16)), rng.random((1, 1, 12, 12))


def criterion_cam(models=100, seed=6):
    rng = np.random.default_rng(seed)
    worst_cam, worst_gap = 0.0, 0.0
    for i in range(models):
        model, xg, xl = _random_sdfn(rng, seed * 1000 + i)
        logits = sdfn_logits(model, xg, xl)[0]
        with_features = model.global_net.forward(xg)[0].data[0], model.local_net.forward(xl)[0].data[0]
        for c in range(NUM_CLASSES):
            h1, h2 = cam(model, xg, xl, c)
            o1, o2 = oracles.cam_double_loop(model.weight[c], *with_features)
            worst_cam = max(worst_cam, np.max(np.abs(h1.values - o1)), np.max(np.abs(h2.values - o2)))
            gap = h1.values.mean() + h2.values.mean() + model.bias[c]
            worst_gap = max(worst_gap, abs(gap - logits[c]))
    ok = worst_cam < 1e-12 and worst_gap < 1e-10
    return ok, f"CAM vs loop oracle {worst_cam:.1e}; exchange identity gap {worst_gap:.1e} on {models} models"


# ---------------------------------------------------------------------------
# shared phantom views
# ---------------------------------------------------------------------------

def phantom_views(spec, seed, global_size, local_size, mask_fn=None):
    """Whole-image and lung-crop arrays plus labels and patient ids."""
    g, l, y, pid = [], [], [], []
    for i in range(spec.count):
        r = make_record(spec, seed, i)
        g.append(resize_bilinear(r.image, global_size, global_size))
        mask = r.lung_mask if mask_fn is None else mask_fn(r)
        crop = lrg.generate_lung_region(r.image, mask).crop
        l.append(resize_bilinear(crop, local_size, local_size))
        y.append(r.labels)
        pid.append(r.patient_id)
    return (np.stack(g)[:, None], np.stack(l)[:, None], np.array(y, dtype=np.float64), pid)


# ---------------------------------------------------------------------------
# 7. freeze invariant
# ---------------------------------------------------------------------------

def criterion_freeze(seed=7):
    spec = PhantomSpec(extent=128, patients=50, images_per_patient=2)
    xg, xl, y, pid = phantom_views(spec, seed, 32, 32)
    cfg = MiniDenseNetConfig(input_size=32)
    model = SdfnModel(MiniDenseNet(cfg, seed), MiniDenseNet(cfg, seed + 1))
    before = model.extractor_checksums()
    head_before = checksum(model.head)
    train_fusion(model, xg, xl, y, pid, TrainConfig.classification(max_epochs=5, seed=seed))
    after = model.extractor_checksums()
    moved = checksum(model.head) != head_before
    ok = before == after and moved and len(model.history) == 5
    return ok, (f"extractor checksums {'unchanged' if before == after else 'CHANGED'} after "
                f"{len(model.history)} epochs on {spec.count} phantoms; head updated: {moved}")


# ---------------------------------------------------------------------------
# 8. segmenter capability
# ---------------------------------------------------------------------------

SEG_EPOCHS = 20


def criterion_segmenter(seed=8, epochs=SEG_EPOCHS, log=None):
    spec = PhantomSpec(extent=64, patients=250, images_per_patient=2)
    recs = [make_record(spec, seed, i) for i in range(spec.count)]
    x = np.stack([r.image for r in recs])[:, None]
    m = np.stack([r.lung_mask for r in recs])[:, None].astype(np.float64)
    pid = [r.patient_id for r in recs]
    # 400 training phantoms, the last 50 patients (100 images) held out
    train = Dataset(x[:400], m[:400], pid[:400])
    start = time.time()
    tm = train_segmenter(train, TrainConfig.segmentation(max_epochs=epochs, seed=seed),
                         MiniUNetConfig(input_size=64, depth=3, base_channels=8), log=log)
    elapsed = time.time() - start
    pred = predict(tm.model, x[400:]) >= 0.5
    score = float(np.mean([dice(p[0], t[0] >= 0.5) for p, t in zip(pred, m[400:])]))
    ok = score >= 0.95 and epochs <= 50 and elapsed < 600
    return ok, f"held-out DSC {score:.4f} after {epochs} epochs (best {tm.best_epoch}), train {elapsed:.0f}s"


# ---------------------------------------------------------------------------
# 9. directional two-view claim
# ---------------------------------------------------------------------------

DIRECTIONAL_EPOCHS = 10
DIRECTIONAL_LR = 3e-3


def directional_run(seed, images=2000, epochs=DIRECTIONAL_EPOCHS, lr=DIRECTIONAL_LR, log=None):
    """One seed: per-class test AUCs for global-only, local-only and SDFN."""
    spec = PhantomSpec(extent=256, patients=images // 2, images_per_patient=2)
    xg, xl, y, pid = phantom_views(spec, seed, 64, 64)
    ids = list(range(len(pid)))
    folds = kfold_split(ids, pid, 5, seed)
    test = np.array(sorted(folds[0]))
    train = np.array(sorted(i for f in folds[1:] for i in f))
    cfg = TrainConfig.classification(max_epochs=epochs, learning_rate=lr, seed=seed)
    tp = [pid[i] for i in train]
    g = train_classifier(Dataset(xg[train], y[train], tp), cfg, log=log)
    l = train_classifier(Dataset(xl[train], y[train], tp), cfg, log=log)
    model = SdfnModel(g, l)
    train_fusion(model, xg[train], xl[train], y[train], tp, cfg, log=log)
    yt = y[test]
    probs = {
        "global-only": predict(g.model, xg[test]),
        "local-only": predict(l.model, xl[test]),
        "sdfn": 1.0 / (1.0 + np.exp(-sdfn_logits(model, xg[test], xl[test]))),
    }
    return {k: np.array([auc_score(p[:, c], yt[:, c]) for c in range(NUM_CLASSES)])
            for k, p in probs.items()}


def criterion_directional(seeds=(0, 1, 2, 3, 4), images=2000, log=None):
    start = time.time()
    runs = [directional_run(s, images, log=log) for s in seeds]
    elapsed = time.time() - start
    med = {k: np.median([r[k] for r in runs], axis=0) for k in runs[0]}
    mean = {k: float(np.median([r[k].mean() for r in runs])) for k in runs[0]}
    a = med["local-only"][NODULE] - med["global-only"][NODULE]
    b = med["global-only"][EMPHYSEMA] - med["local-only"][EMPHYSEMA]
    c = mean["sdfn"] - max(mean["global-only"], mean["local-only"])
    ok = a >= 0.03 and b > 0 and c >= -0.005 and elapsed <= 3600
    return ok, (f"median over {len(seeds)} seeds: nodule local-global {a:+.3f}; "
                f"emphysema global-local {b:+.3f}; SDFN mean {mean['sdfn']:.3f} vs best view "
                f"{max(mean['global-only'], mean['local-only']):.3f} ({c:+.3f}); {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 10. end-to-end determinism
# ---------------------------------------------------------------------------

SMOKE_CONFIG = """\
[pipeline]
seed = {seed}
folds = 5
test_fold = 0

[phantom]
extent = 64
patients = 30
images_per_patient = 2

[segmenter]
input_size = 32
depth = 2
base_channels = 8

[extractor_global]
input_size = 32

[extractor_local]
input_size = 32

[segmenter_train]
max_epochs = 10
learning_rate = 0.01

[extractor_train]
max_epochs = 2
learning_rate = 0.002

[fusion_train]
max_epochs = 3
learning_rate = 0.002
"""

PIPELINE_STEPS = (["gen-data"], ["train-seg"], ["run-lrg"], ["train-extractor", "--view", "global"],
                  ["train-extractor", "--view", "local"], ["train-fusion"], ["evaluate"],
                  ["cam", "--ids", "img00000,img00003", "--classes", "nodule,emphysema"])


def run_pipeline(workdir, seed=0, config_text=SMOKE_CONFIG):
    from .cli import run
    path = os.path.join(workdir, "pipeline.ini")
    with open(path, "w") as fh:
        fh.write(config_text.format(seed=seed))
    for step in PIPELINE_STEPS:
        code = run(step + ["--config", path, "--quiet"])
        if code != 0:
            raise AssertionError(f"step {' '.join(step)} exited with {code}")


def artifact_digests(workdir):
    import hashlib
    out = {}
    for sub in ("weights", "reports"):
        base = os.path.join(workdir, sub)
        for dirpath, _, files in os.walk(base):
            for f in sorted(files):
                p = os.path.join(dirpath, f)
                with open(p, "rb") as fh:
                    out[os.path.relpath(p, workdir)] = hashlib.sha256(fh.read()).hexdigest()
    return out


def criterion_determinism(seed=10):
    dirs = [tempfile.mkdtemp(prefix="sdfn-run") for _ in range(2)]
    try:
        digests = []
        for d in dirs:
            run_pipeline(d, seed)
            digests.append(artifact_digests(d))
    finally:
        for d in dirs:
            shutil.rmtree(d, ignore_errors=True)
    a, b = digests
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    heatmaps = sum(1 for k in a if k.endswith(".pgm"))
    ok = not differing and heatmaps > 0 and any(k.endswith(".sdfnw") for k in a)
    return ok, (f"{len(a)} artifacts ({heatmaps} heatmaps) identical across two runs"
                if ok else f"differing artifacts: {differing[:5]}")


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------

CRITERIA = (
    (1, "gradient correctness", criterion_gradients, False),
    (2, "LRG oracle equivalence", criterion_lrg, False),
    (3, "closed-form metric values", criterion_closed_forms, False),
    (4, "AUC oracle equivalence", criterion_auc, False),
    (5, "t-test oracle", criterion_ttest, False),
    (6, "CAM correctness", criterion_cam, False),
    (7, "freeze invariant", criterion_freeze, False),
    (8, "segmenter capability", criterion_segmenter, True),
    (9, "directional two-view claim", criterion_directional, True),
    (10, "end-to-end determinism", criterion_determinism, True),
)


def run_criterion(number):
    for n, name, fn, _ in CRITERIA:
        if n == number:
            start = time.time()
            try:
                ok, detail = fn()
            except Exception as err:  # a crash is a failure, reported not raised
                ok, detail = False, f"{type(err).__name__}: {err}"
            return Result(n, name, bool(ok), detail, time.time() - start)
    raise KeyError(number)


def run_suite(quick=False, stream=sys.stdout, only=None):
    results = []
    for n, _, _, slow in CRITERIA:
        if (only is not None and n not in only) or (quick and slow):
            continue
        r = run_criterion(n)
        results.append(r)
        print(r.line(), file=stream, flush=True)
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed", file=stream, flush=True)
    return passed == len(results)
