"""Slow, obviously-correct reference implementations used by the verify suite.

Nothing here shares code with the production paths: loops instead of
vectorisation, integer arithmetic where the fast path uses floats.
"""
import math
from collections import deque

import numpy as np


def flood_fill_regions(mask):
    """4-connected components in raster order of first pixel: (area, cx, cy, x0, y0, x1, y1)."""
    h, w = len(mask), len(mask[0]) if len(mask) else 0
    seen = [[False] * w for _ in range(h)]
    regions = []
    for y in range(h):
        for x in range(w):
            if not mask[y][x] or seen[y][x]:
                continue
            seen[y][x] = True
            queue = deque([(x, y)])
            pts = []
            while queue:
                px, py = queue.popleft()
                pts.append((px, py))
                for nx, ny in ((px + 1, py), (px - 1, py), (px, py + 1), (px, py - 1)):
                    if 0 <= nx < w and 0 <= ny < h and mask[ny][nx] and not seen[ny][nx]:
                        seen[ny][nx] = True
                        queue.append((nx, ny))
            area = len(pts)
            sx = sum(p[0] for p in pts)
            sy = sum(p[1] for p in pts)
            regions.append((area, sx / area, sy / area,
                            min(p[0] for p in pts), min(p[1] for p in pts),
                            max(p[0] for p in pts), max(p[1] for p in pts)))
    return regions


def lrg_box(mask):
    """Straight transcription of the lung-box rules; returns (x0, y0, x1, y1, status)."""
    mask = np.asarray(mask, dtype=bool).tolist()
    h = len(mask)
    w = len(mask[0])
    regions = flood_fill_regions(mask)
    if not regions:
        return (0, 0, w - 1, h - 1, "fallback")
    labelled = [(i + 1,) + r for i, r in enumerate(regions)]
    fired = []
    if len(labelled) > 2:
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        ranked = sorted(labelled, key=lambda r: ((r[2] - cx) ** 2 + (r[3] - cy) ** 2, -r[1], r[0]))
        labelled = sorted(ranked[:2])
        fired.append("fp-removed")
    if len(labelled) == 2:
        a, b = labelled
        if a[1] * 3 < b[1]:
            labelled = [b]
        elif b[1] * 3 < a[1]:
            labelled = [a]
    if len(labelled) == 1:
        fired.append("mirrored")
        _, _, _, _, x0, y0, x1, y1 = labelled[0]
        box = [min(x0, w - 1 - x1), y0, max(x1, w - 1 - x0), y1]
    else:
        box = [min(labelled[0][4], labelled[1][4]), min(labelled[0][5], labelled[1][5]),
               max(labelled[0][6], labelled[1][6]), max(labelled[0][7], labelled[1][7])]
    # 15/15/15/20 px at 1024, nearest integer with halves rounding up
    left = (15 * w + 512) // 1024
    right = (15 * w + 512) // 1024
    top = (15 * h + 512) // 1024
    bottom = (20 * h + 512) // 1024
    box = (max(0, box[0] - left), max(0, box[1] - top),
           min(w - 1, box[2] + right), min(h - 1, box[3] + bottom))
    return box + ("+".join(fired) if fired else "clean",)


def random_lrg_masks(count, seed):
    """Seeded masks cycling through 0, 1, 2 and 3+ component layouts."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        h = int(rng.integers(16, 97))
        w = int(rng.integers(16, 97))
        m = np.zeros((h, w), dtype=bool)
        kind = i % 5
        if kind == 0 and i % 10 == 0:
            pass
        elif kind == 4:
            m = rng.random((h, w)) < rng.uniform(0.05, 0.5)
        else:
            blobs = {0: int(rng.integers(1, 3)), 1: 1, 2: 2, 3: int(rng.integers(3, 8))}[kind]
            for _ in range(blobs):
                bw = int(rng.integers(1, max(2, w // 2)))
                bh = int(rng.integers(1, max(2, h // 2)))
                x0 = int(rng.integers(0, w - bw + 1))
                y0 = int(rng.integers(0, h - bh + 1))
                if rng.random() < 0.5:
                    m[y0:y0 + bh, x0:x0 + bw] = True
                else:
                    yy, xx = np.mgrid[0:bh, 0:bw]
                    ell = ((xx - (bw - 1) / 2) / (bw / 2)) ** 2 + ((yy - (bh - 1) / 2) / (bh / 2)) ** 2 <= 1
                    m[y0:y0 + bh, x0:x0 + bw] |= ell
        out.append(m)
    return out


def pair_count_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    num = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                num += 1.0
            elif p == n:
                num += 0.5
    return num / (len(pos) * len(neg))


def t_pdf(x, df):
    log_c = math.lgamma((df + 1) / 2.0) - math.lgamma(df / 2.0) - 0.5 * math.log(df * math.pi)
    return math.exp(log_c - (df + 1) / 2.0 * math.log1p(x * x / df))


def t_two_tailed_quadrature(t, df):
    from scipy.integrate import quad
    tail, _ = quad(t_pdf, abs(t), math.inf, args=(df,), epsabs=1e-14, epsrel=1e-13, limit=200)
    return 2.0 * tail


def cam_double_loop(weights_row, features_global, features_local):
    """Weighted sums over channels by explicit loops; features are (K, h, w)."""
    kg, h, w = features_global.shape
    kl, h2, w2 = features_local.shape
    h1 = [[0.0] * w for _ in range(h)]
    hh = [[0.0] * w2 for _ in range(h2)]
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for j in range(kg):
                acc += float(weights_row[j]) * float(features_global[j, y, x])
            h1[y][x] = acc
    for y in range(h2):
        for x in range(w2):
            acc = 0.0
            for j in range(kl):
                acc += float(weights_row[kg + j]) * float(features_local[j, y, x])
            hh[y][x] = acc
    return np.array(h1), np.array(hh)


def bilinear_point(img, y, x):
    """Bilinear sample of ``img`` at real coordinates (y, x) by explicit corner weights."""
    h, w = img.shape
    y0 = min(int(math.floor(y)), h - 1)
    x0 = min(int(math.floor(x)), w - 1)
    y1 = min(y0 + 1, h - 1)
    x1 = min(x0 + 1, w - 1)
    fy = y - y0
    fx = x - x0
    return ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x1]
            + fy * (1 - fx) * img[y1, x0] + fy * fx * img[y1, x1])


def bilinear_resize(img, out_h, out_w):
    h, w = img.shape
    out = np.empty((out_h, out_w))
    for i in range(out_h):
        y = (h - 1) / 2.0 if out_h == 1 else i * (h - 1) / (out_h - 1)
        for j in range(out_w):
            x = (w - 1) / 2.0 if out_w == 1 else j * (w - 1) / (out_w - 1)
            out[i, j] = bilinear_point(img, y, x)
    return out
