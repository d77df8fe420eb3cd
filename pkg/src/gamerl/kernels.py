"""Hot numeric kernels: triangle rasterization, 3x3 convolution unfolding, Adam.

Each kernel has a numba implementation (``*_nb``) and a pure-numpy one
(``*_np``). The public names dispatch on :data:`gamerl._jit.USE_NUMBA`.
Rasterization and unfolding are bit-identical across paths; Adam agrees to
rounding.
"""

import math

import numpy as np

from ._jit import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# rasterization
#
# Screen coordinates are centred on the image with y pointing up. Pixel
# (col i, row j) has its centre at (i + 0.5 - N/2, N/2 - j - 0.5). A pixel is
# covered when all three edge functions are >= 0 after the triangle has been
# wound counter-clockwise. Larger z is closer to the viewer; depth ties keep
# the earlier triangle.
# ---------------------------------------------------------------------------


@njit
def _rasterize_nb(sx, sy, sz, colors, size, background):
    half = size / 2.0
    img = np.empty((size, size, 3), dtype=np.uint8)
    for j in range(size):
        for i in range(size):
            img[j, i, 0] = background[0]
            img[j, i, 1] = background[1]
            img[j, i, 2] = background[2]
    depth = np.full((size, size), -np.inf)

    for t in range(sx.shape[0]):
        ax = sx[t, 0]
        ay = sy[t, 0]
        az = sz[t, 0]
        bx = sx[t, 1]
        by = sy[t, 1]
        bz = sz[t, 1]
        cx = sx[t, 2]
        cy = sy[t, 2]
        cz = sz[t, 2]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0 or not np.isfinite(area):
            continue
        if area < 0.0:
            bx, cx = cx, bx
            by, cy = cy, by
            bz, cz = cz, bz
            area = -area

        minx = min(ax, bx, cx)
        maxx = max(ax, bx, cx)
        miny = min(ay, by, cy)
        maxy = max(ay, by, cy)
        i0 = max(0, int(math.floor(minx + half - 0.5)) - 1)
        i1 = min(size - 1, int(math.ceil(maxx + half - 0.5)) + 1)
        j0 = max(0, int(math.floor(half - 0.5 - maxy)) - 1)
        j1 = min(size - 1, int(math.ceil(half - 0.5 - miny)) + 1)

        for j in range(j0, j1 + 1):
            py = half - j - 0.5
            for i in range(i0, i1 + 1):
                px = i + 0.5 - half
                w0 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                if w0 < 0.0:
                    continue
                w1 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                if w1 < 0.0:
                    continue
                w2 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                if w2 < 0.0:
                    continue
                z = (w0 * az + w1 * bz + w2 * cz) / area
                if z > depth[j, i]:
                    depth[j, i] = z
                    img[j, i, 0] = colors[t, 0]
                    img[j, i, 1] = colors[t, 1]
                    img[j, i, 2] = colors[t, 2]
    return img


def _rasterize_np(sx, sy, sz, colors, size, background):
    half = size / 2.0
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:, :] = background
    depth = np.full((size, size), -np.inf)

    for t in range(sx.shape[0]):
        ax, bx, cx = sx[t]
        ay, by, cy = sy[t]
        az, bz, cz = sz[t]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0 or not np.isfinite(area):
            continue
        if area < 0.0:
            bx, cx = cx, bx
            by, cy = cy, by
            bz, cz = cz, bz
            area = -area

        i0 = max(0, int(math.floor(min(ax, bx, cx) + half - 0.5)) - 1)
        i1 = min(size - 1, int(math.ceil(max(ax, bx, cx) + half - 0.5)) + 1)
        j0 = max(0, int(math.floor(half - 0.5 - max(ay, by, cy))) - 1)
        j1 = min(size - 1, int(math.ceil(half - 0.5 - min(ay, by, cy))) + 1)
        if i0 > i1 or j0 > j1:
            continue

        px = (np.arange(i0, i1 + 1) + 0.5 - half)[None, :]
        py = (half - np.arange(j0, j1 + 1) - 0.5)[:, None]
        w0 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
        w1 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
        w2 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not inside.any():
            continue
        z = (w0 * az + w1 * bz + w2 * cz) / area
        sub = depth[j0 : j1 + 1, i0 : i1 + 1]
        hit = inside & (z > sub)
        sub[hit] = z[hit]
        img[j0 : j1 + 1, i0 : i1 + 1][hit] = colors[t]
    return img


def rasterize(sx, sy, sz, colors, size, background, backend=None):
    """Z-buffered flat-color rasterization of ``T`` triangles.

    ``sx, sy, sz`` are ``(T, 3)`` float64 screen-space vertex coordinates,
    ``colors`` is ``(T, 3)`` uint8. Returns a ``(size, size, 3)`` uint8 image.
    """
    sx = np.ascontiguousarray(sx, dtype=np.float64)
    sy = np.ascontiguousarray(sy, dtype=np.float64)
    sz = np.ascontiguousarray(sz, dtype=np.float64)
    colors = np.ascontiguousarray(colors, dtype=np.uint8)
    background = np.asarray(background, dtype=np.uint8)
    if _pick(backend):
        return _rasterize_nb(sx, sy, sz, colors, int(size), background)
    return _rasterize_np(sx, sy, sz, colors, int(size), background)


# ---------------------------------------------------------------------------
# same-padding, stride-1 convolution unfolding on channels-last maps
#
# x has shape (B, H, W, C); cols has shape (B*H*W, C*k*k) with row index
# b*H*W + y*W + x and column index c*k*k + ky*k + kx.
# ---------------------------------------------------------------------------


@njit
def _im2col_nb(x, k):
    B, H, W, C = x.shape
    pad = k // 2
    xp = np.zeros((B, H + 2 * pad, W + 2 * pad, C), dtype=x.dtype)
    xp[:, pad : pad + H, pad : pad + W, :] = x
    cols = np.empty((B * H * W, C * k * k), dtype=x.dtype)
    for b in range(B):
        for y in range(H):
            for xx in range(W):
                row = (b * H + y) * W + xx
                for c in range(C):
                    for ky in range(k):
                        for kx in range(k):
                            cols[row, (c * k + ky) * k + kx] = xp[b, y + ky, xx + kx, c]
    return cols


@njit
def _col2im_nb(cols, shape, k):
    B, H, W, C = shape
    pad = k // 2
    out = np.zeros((B, H + 2 * pad, W + 2 * pad, C), dtype=cols.dtype)
    # (ky, kx) outermost so accumulation order matches the numpy path
    for ky in range(k):
        for kx in range(k):
            for b in range(B):
                for y in range(H):
                    for xx in range(W):
                        row = (b * H + y) * W + xx
                        for c in range(C):
                            out[b, y + ky, xx + kx, c] += cols[row, (c * k + ky) * k + kx]
    return np.ascontiguousarray(out[:, pad : pad + H, pad : pad + W, :])


def _im2col_np(x, k):
    B, H, W, C = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((B, H, W, C, k, k), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            cols[..., ky, kx] = xp[:, ky : ky + H, kx : kx + W, :]
    return cols.reshape(B * H * W, C * k * k)


def _col2im_np(cols, shape, k):
    B, H, W, C = shape
    pad = k // 2
    c6 = cols.reshape(B, H, W, C, k, k)
    out = np.zeros((B, H + 2 * pad, W + 2 * pad, C), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            out[:, ky : ky + H, kx : kx + W, :] += c6[..., ky, kx]
    return np.ascontiguousarray(out[:, pad : pad + H, pad : pad + W, :])


def im2col(x, k=3, backend=None):
    """Unfold a ``(B, H, W, C)`` map into 3x3 (``k``x``k``) patches, zero padded."""
    x = np.ascontiguousarray(x)
    if _pick(backend):
        return _im2col_nb(x, k)
    return _im2col_np(x, k)


def col2im(cols, shape, k=3, backend=None):
    """Adjoint of :func:`im2col`: scatter-add patch columns back to ``shape`` (B, H, W, C)."""
    cols = np.ascontiguousarray(cols)
    if _pick(backend):
        return _col2im_nb(cols, tuple(int(s) for s in shape), k)
    return _col2im_np(cols, tuple(int(s) for s in shape), k)


def _pick(backend):
    if backend is None:
        return USE_NUMBA
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend == "numba"


# ---------------------------------------------------------------------------
# fused Adam update
#
# Moments whose magnitude drops below ``tiny`` are flushed to zero. Without
# this, dead units drive the first moment into subnormal range after a few
# hundred steps and every later update runs several times slower.
# ---------------------------------------------------------------------------

ADAM_TINY = 1e-30


@njit(fastmath=True)
def _adam_nb(p, g, m, v, b1, b2, ob1, ob2, lr, c1, c2, eps, tiny, zero):
    pf, gf, mf, vf = p.ravel(), g.ravel(), m.ravel(), v.ravel()
    for i in range(pf.shape[0]):
        gi = gf[i]
        mi = mf[i] * b1 + ob1 * gi
        vi = vf[i] * b2 + ob2 * (gi * gi)
        mi = mi if abs(mi) >= tiny else zero
        vi = vi if vi >= tiny else zero
        mf[i] = mi
        vf[i] = vi
        pf[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)


def _adam_np(p, g, m, v, b1, b2, ob1, ob2, lr, c1, c2, eps, tiny, zero):
    m *= b1
    m += ob1 * g
    v *= b2
    v += ob2 * (g * g)
    m[np.abs(m) < tiny] = zero
    v[v < tiny] = zero
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def adam_update(p, g, m, v, beta1, beta2, lr, t, eps, backend=None):
    """In-place bias-corrected Adam step on contiguous arrays of one dtype.

    The compiled loop is built with fastmath (the update is memory bound and
    this lets it vectorize), so the two paths agree to rounding, not bitwise.
    """
    dt = p.dtype.type
    g = np.ascontiguousarray(g, dtype=p.dtype)
    args = (
        dt(beta1),
        dt(beta2),
        dt(1.0 - beta1),
        dt(1.0 - beta2),
        dt(lr),
        dt(1.0 - beta1**t),
        dt(1.0 - beta2**t),
        dt(eps),
        dt(ADAM_TINY),
        dt(0.0),
    )
    if _pick(backend):
        _adam_nb(p, g, m, v, *args)
    else:
        _adam_np(p, g, m, v, *args)
