"""Overlap metrics, ROC/AUC, paired t-tests, grouped k-fold splits, reports."""
import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .labels import NUM_CLASSES, PATHOLOGIES


class UndefinedAUCError(ValueError):
    """AUC requested on labels containing a single class."""


def _pair(x, y):
    x = np.asarray(x, dtype=bool)
    y = np.asarray(y, dtype=bool)
    if x.shape != y.shape:
        raise ValueError(f"mask extents differ: {x.shape} vs {y.shape}")
    return x, y


def dice(x, y):
    """2|X and Y| / (|X| + |Y|); 1.0 when both masks are empty."""
    x, y = _pair(x, y)
    total = int(x.sum()) + int(y.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((x & y).sum()) / total


def iou(x, y):
    """|X and Y| / |X or Y|; 1.0 when both masks are empty."""
    x, y = _pair(x, y)
    union = int((x | y).sum())
    if union == 0:
        return 1.0
    return int((x & y).sum()) / union


# ---------------------------------------------------------------------------
# ROC / AUC
# ---------------------------------------------------------------------------

@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def trapezoid_area(self):
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0/1")
    y = y.astype(bool)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise UndefinedAUCError("AUC needs at least one positive and one negative label")
    return s, y, n_pos, y.size - n_pos


def auc_score(scores, labels):
    """Mann-Whitney AUC with midranks for tied scores."""
    s, y, n_pos, n_neg = _check_binary(scores, labels)
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels):
    s, y, n_pos, n_neg = _check_binary(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s_sorted)), s_sorted.size - 1]
    tp = np.cumsum(y_sorted)[last]
    fp = (last + 1) - tp
    thresholds = np.r_[np.inf, s_sorted[last]]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return RocCurve(thresholds, fpr, tpr)


def roc_auc(scores, labels):
    """Return ``(RocCurve, auc)``; the curve's trapezoid area equals the rank AUC."""
    return roc_curve(scores, labels), auc_score(scores, labels)


def mean_auc(per_class):
    vals = np.asarray(per_class, dtype=np.float64)
    if vals.shape != (NUM_CLASSES,):
        raise ValueError(f"mean_auc expects {NUM_CLASSES} values, got shape {vals.shape}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("per-class AUCs must be finite")
    return float(vals.sum() / NUM_CLASSES)


def per_class_auc(probs, labels, skip_undefined=False):
    """AUC per column; undefined columns raise, or become NaN with ``skip_undefined``."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    out = np.empty(probs.shape[1])
    for c in range(probs.shape[1]):
        try:
            out[c] = auc_score(probs[:, c], labels[:, c])
        except UndefinedAUCError:
            if not skip_undefined:
                raise UndefinedAUCError(f"AUC undefined for class {PATHOLOGIES[c]!r}") from None
            out[c] = np.nan
    return out


# ---------------------------------------------------------------------------
# paired t-test
# ---------------------------------------------------------------------------

def _betacf(a, b, x, tol=1e-15, max_iter=500):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a, b, x):
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_tailed(t, df):
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return betainc_regularized(df / 2.0, 0.5, df / (df + t * t))


@dataclass
class TTestResult:
    t: float
    p: float
    n: int
    degenerate: bool = False

    def __iter__(self):
        return iter((self.t, self.p))


def paired_t_test(a, b):
    """Two-tailed paired t-test on ``a - b``.

    Zero spread with zero mean gives ``t = 0, p = 1``; zero spread with a
    nonzero mean gives ``p = 0`` and ``degenerate = True``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {a.size} vs {b.size}")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, n)
        return TTestResult(math.copysign(math.inf, mean), 0.0, n, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(float(t), student_t_two_tailed(t, n - 1), n)


# ---------------------------------------------------------------------------
# grouped k-fold
# ---------------------------------------------------------------------------

def kfold_split(item_ids, groups, k, seed):
    """Partition items into ``k`` folds with no group split across folds.

    Groups are shuffled by ``seed``, then placed largest-first into the
    currently smallest fold (ties to the lowest fold index), which keeps fold
    sizes within one group size of each other.
    """
    item_ids = list(item_ids)
    groups = list(groups)
    if len(item_ids) != len(groups):
        raise ValueError("item_ids and groups differ in length")
    if k < 2:
        raise ValueError("k must be at least 2")
    members = {}
    for item, g in zip(item_ids, groups):
        members.setdefault(g, []).append(item)
    if len(members) < k:
        raise ValueError(f"{len(members)} groups cannot fill {k} folds")
    keys = list(members)
    perm = np.random.default_rng(seed).permutation(len(keys))
    shuffled = [keys[i] for i in perm]
    ordered = sorted(range(len(shuffled)), key=lambda i: (-len(members[shuffled[i]]), i))
    folds = [[] for _ in range(k)]
    for i in ordered:
        target = min(range(k), key=lambda f: (len(folds[f]), f))
        folds[target].extend(members[shuffled[i]])
    return folds


def grouped_holdout(item_ids, groups, fraction, seed):
    """Split off roughly ``fraction`` of the items, whole groups only.

    Returns ``(kept, held_out)`` index arrays into ``item_ids``.
    """
    groups = list(groups)
    keys = sorted(set(groups))
    if len(keys) < 2:
        raise ValueError("need at least two groups for a holdout split")
    perm = np.random.default_rng(seed).permutation(len(keys))
    target = max(1, int(round(fraction * len(groups))))
    held_groups = set()
    count = 0
    sizes = {}
    for g in groups:
        sizes[g] = sizes.get(g, 0) + 1
    for i in perm:
        if count >= target or len(held_groups) == len(keys) - 1:
            break
        held_groups.add(keys[i])
        count += sizes[keys[i]]
    held = np.array([g in held_groups for g in groups])
    return np.flatnonzero(~held), np.flatnonzero(held)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    models: list
    per_class: dict                  # model -> list of 14 AUCs (canonical order)
    mean: dict = field(default_factory=dict)
    comparisons: list = field(default_factory=list)   # dicts: a, b, t, p, degenerate
    folds: dict = field(default_factory=dict)         # image_id -> split name

    def __post_init__(self):
        # classes whose AUC is undefined for any model drop out of every mean
        self.defined = [c for c in range(NUM_CLASSES)
                        if all(np.isfinite(self.per_class[m][c]) for m in self.models)]
        for m in self.models:
            if len(self.defined) == NUM_CLASSES:
                self.mean.setdefault(m, mean_auc(self.per_class[m]))
            elif self.defined:
                self.mean.setdefault(m, float(np.mean([self.per_class[m][c] for c in self.defined])))
            else:
                raise UndefinedAUCError("no class has a defined AUC on this split")

    @property
    def undefined(self):
        return [PATHOLOGIES[c] for c in range(NUM_CLASSES) if c not in self.defined]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pathology"] + list(self.models))
            for c, name in enumerate(PATHOLOGIES):
                w.writerow([name] + [f"{self.per_class[m][c]:.6f}" if c in self.defined else "undefined"
                                     for m in self.models])
            w.writerow(["mean"] + [f"{self.mean[m]:.6f}" for m in self.models])

    def to_dict(self):
        return {
            "models": list(self.models),
            "pathologies": list(PATHOLOGIES),
            "per_class_auc": {m: [float(v) if math.isfinite(v) else None for v in self.per_class[m]]
                              for m in self.models},
            "undefined_classes": self.undefined,
            "mean_auc": {m: float(self.mean[m]) for m in self.models},
            "comparisons": self.comparisons,
            "folds": self.folds,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def write_roc_csv(path, curves):
    """``curves`` maps a class name to a RocCurve; one row per curve point."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pathology", "threshold", "fpr", "tpr"])
        for name, curve in curves.items():
            for thr, f, t in zip(curve.thresholds, curve.fpr, curve.tpr):
                w.writerow([name, repr(float(thr)), repr(float(f)), repr(float(t))])


__all__ = [
    "EvalReport", "RocCurve", "TTestResult", "UndefinedAUCError", "auc_score",
    "betainc_regularized", "dice", "grouped_holdout", "iou", "kfold_split", "mean_auc",
    "paired_t_test", "per_class_auc", "roc_auc", "roc_curve", "student_t_two_tailed",
    "write_roc_csv",
]
