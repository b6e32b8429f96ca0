"""Hot loops: im2col/col2im, 4-connected labeling, bilinear resampling.

Every kernel has a numba body (``*_nb``) and a numpy body (``*_np``). Both
accumulate in the same order, so they agree bitwise; the public names dispatch
on :data:`sdfn._accel.USE_NUMBA`.
"""
import numpy as np
from scipy import ndimage

from ._accel import USE_NUMBA, njit

__all__ = ["im2col", "col2im", "label4", "resize_bilinear", "backend"]


def backend():
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# im2col / col2im
#
# Column layout is (C*kh*kw, N*Ho*Wo) so a convolution is one GEMM.
# ---------------------------------------------------------------------------

def _im2col_np(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[0], xp.shape[1]
    cols = np.empty((c, kh, kw, n, ho, wo))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * ho * wo)


# The numba twins fill buffers allocated by the caller: allocating large arrays
# inside compiled code is several times slower than numpy's allocator.
@njit(cache=True)
def _im2col_nb(xp, kh, kw, stride, ho, wo, cols):
    n, c, hp, wp = xp.shape
    src = xp.ravel()
    o = 0
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                for b in range(n):
                    base = (b * c + ci) * hp * wp + j
                    for y in range(ho):
                        row = base + (y * stride + i) * wp
                        for x in range(wo):
                            cols[o + x] = src[row + x * stride]
                        o += wo


def _col2im_np(cols, n, c, hp, wp, kh, kw, stride, ho, wo):
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    out = np.zeros((n, c, hp, wp))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                cols[:, i, j].transpose(1, 0, 2, 3))
    return out


@njit(cache=True)
def _col2im_nb(cols, n, c, hp, wp, kh, kw, stride, ho, wo, out):
    src = cols.ravel()
    # (i, j) outermost per output element, matching the numpy accumulation order
    for i in range(kh):
        for j in range(kw):
            for ci in range(c):
                o = ((ci * kh + i) * kw + j) * n * ho * wo
                for b in range(n):
                    base = (b * c + ci) * hp * wp + j
                    for y in range(ho):
                        row = base + (y * stride + i) * wp
                        for x in range(wo):
                            out[row + x * stride] += src[o + x]
                        o += wo


def im2col(xp, kh, kw, stride, ho, wo):
    """Unfold a padded (N, C, Hp, Wp) batch into (C*kh*kw, N*Ho*Wo) columns."""
    xp = np.ascontiguousarray(xp, dtype=np.float64)
    if USE_NUMBA:
        n, c = xp.shape[0], xp.shape[1]
        cols = np.empty(c * kh * kw * n * ho * wo)
        _im2col_nb(xp, kh, kw, stride, ho, wo, cols)
        return cols.reshape(c * kh * kw, n * ho * wo)
    return _im2col_np(xp, kh, kw, stride, ho, wo)


def col2im(cols, padded_shape, kh, kw, stride, ho, wo):
    """Adjoint of :func:`im2col`: scatter-add columns back onto the padded grid."""
    n, c, hp, wp = padded_shape
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    if USE_NUMBA:
        out = np.zeros(n * c * hp * wp)
        _col2im_nb(cols, n, c, hp, wp, kh, kw, stride, ho, wo, out)
        return out.reshape(n, c, hp, wp)
    return _col2im_np(cols, n, c, hp, wp, kh, kw, stride, ho, wo)


# ---------------------------------------------------------------------------
# 4-connected component labeling, labels numbered in raster order of the
# first pixel of each component (row-major).
# ---------------------------------------------------------------------------

_FOUR = ndimage.generate_binary_structure(2, 1)


def _label4_np(mask):
    labels, count = ndimage.label(mask, structure=_FOUR)
    if count == 0:
        return labels.astype(np.int32), 0
    flat = labels.ravel()
    nz = np.flatnonzero(flat)
    _, first = np.unique(flat[nz], return_index=True)
    order = np.argsort(nz[first], kind="stable")
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, count + 1, dtype=np.int32)
    return remap[labels], int(count)


@njit(cache=True)
def _label4_nb(mask):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    stack = np.empty(h * w, dtype=np.int64)
    count = 0
    for y0 in range(h):
        for x0 in range(w):
            if not mask[y0, x0] or labels[y0, x0] != 0:
                continue
            count += 1
            labels[y0, x0] = count
            top = 0
            stack[top] = y0 * w + x0
            top += 1
            while top > 0:
                top -= 1
                p = stack[top]
                y = p // w
                x = p - y * w
                if y > 0 and mask[y - 1, x] and labels[y - 1, x] == 0:
                    labels[y - 1, x] = count
                    stack[top] = p - w
                    top += 1
                if y < h - 1 and mask[y + 1, x] and labels[y + 1, x] == 0:
                    labels[y + 1, x] = count
                    stack[top] = p + w
                    top += 1
                if x > 0 and mask[y, x - 1] and labels[y, x - 1] == 0:
                    labels[y, x - 1] = count
                    stack[top] = p - 1
                    top += 1
                if x < w - 1 and mask[y, x + 1] and labels[y, x + 1] == 0:
                    labels[y, x + 1] = count
                    stack[top] = p + 1
                    top += 1
    return labels, count


def label4(mask):
    """Label 4-connected foreground components.

    Returns ``(labels, count)``; ``labels`` is int32 with 0 for background and
    1..count numbered by first appearance in row-major scan.
    """
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if USE_NUMBA:
        labels, count = _label4_nb(mask)
        return labels, int(count)
    return _label4_np(mask)


# ---------------------------------------------------------------------------
# Bilinear resize, corner-aligned sampling, no prefilter.
# ---------------------------------------------------------------------------

def _sample_axis(n_in, n_out):
    if n_out == 1:
        src = np.array([(n_in - 1) / 2.0])
    else:
        # integer product first keeps grid-aligned positions exact
        src = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
    i0 = np.floor(src).astype(np.int64)
    i0 = np.minimum(i0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    wt = src - i0
    return i0, i1, wt


def _resize_np(img, out_h, out_w):
    y0, y1, wy = _sample_axis(img.shape[0], out_h)
    x0, x1, wx = _sample_axis(img.shape[1], out_w)
    r0 = img[y0]
    r1 = img[y1]
    top = r0[:, x0] * (1.0 - wx) + r0[:, x1] * wx
    bot = r1[:, x0] * (1.0 - wx) + r1[:, x1] * wx
    return top * (1.0 - wy)[:, None] + bot * wy[:, None]


@njit(cache=True)
def _resize_nb(img, y0, y1, wy, x0, x1, wx):
    out_h = y0.shape[0]
    out_w = x0.shape[0]
    out = np.empty((out_h, out_w))
    for i in range(out_h):
        a = y0[i]
        b = y1[i]
        fy = wy[i]
        for j in range(out_w):
            fx = wx[j]
            top = img[a, x0[j]] * (1.0 - fx) + img[a, x1[j]] * fx
            bot = img[b, x0[j]] * (1.0 - fx) + img[b, x1[j]] * fx
            out[i, j] = top * (1.0 - fy) + bot * fy
    return out


def resize_bilinear(img, out_h, out_w):
    """Resize a 2-D array to (out_h, out_w) by corner-aligned bilinear sampling."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    if out_h < 1 or out_w < 1 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"zero extent: {img.shape} -> ({out_h}, {out_w})")
    if USE_NUMBA:
        y0, y1, wy = _sample_axis(img.shape[0], out_h)
        x0, x1, wx = _sample_axis(img.shape[1], out_w)
        return _resize_nb(img, y0, y1, wy, x0, x1, wx)
    return _resize_np(img, out_h, out_w)
