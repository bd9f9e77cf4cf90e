"""Pure-numpy fallback for the compiled kernels.

Same contracts as ``_fast``: used when the extension is unavailable or when
``VESSELSEG_BACKEND=numpy`` forces it.  Correctness first, speed second; the
benchmark in ``benchmarks/bench_kernels.py`` quantifies the gap.
"""

from __future__ import annotations

import numpy as np


def conv3d_fwd(x, w, b, stride=1):
    """Cross-correlate (N,Cin,D,H,W) with (Cout,Cin,k,k,k), 'same' padding
    at stride 1, accumulating one kernel offset at a time."""
    n, cin, d, h, wd = x.shape
    cout, _, k = w.shape[:3]
    p = (k - 1) // 2
    s = stride
    do = (d + 2 * p - k) // s + 1
    ho = (h + 2 * p - k) // s + 1
    wo = (wd + 2 * p - k) // s + 1
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    acc = np.zeros((cout, n, do, ho, wo), dtype=x.dtype)
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                xs = xp[:, :, kd:kd + s * do:s, kh:kh + s * ho:s, kw:kw + s * wo:s]
                acc += np.tensordot(w[:, :, kd, kh, kw], xs, axes=([1], [1]))
    y = np.ascontiguousarray(np.moveaxis(acc, 0, 1))
    y += b.reshape(1, cout, 1, 1, 1)
    return y


def conv3d_bwd(x, w, gy, stride=1):
    """Input and weight gradients of conv3d_fwd; returns (gx, gw)."""
    n, cin, d, h, wd = x.shape
    cout, _, k = w.shape[:3]
    do, ho, wo = gy.shape[2:]
    p = (k - 1) // 2
    s = stride
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    gw = np.zeros_like(w)
    gxp = np.zeros_like(xp)
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                sl = (slice(None), slice(None),
                      slice(kd, kd + s * do, s),
                      slice(kh, kh + s * ho, s),
                      slice(kw, kw + s * wo, s))
                gw[:, :, kd, kh, kw] = np.tensordot(
                    gy, xp[sl], axes=([0, 2, 3, 4], [0, 2, 3, 4]))
                t = np.tensordot(w[:, :, kd, kh, kw], gy, axes=([0], [1]))
                gxp[sl] += np.moveaxis(t, 0, 1)
    gx = gxp[:, :, p:p + d, p:p + h, p:p + wd].copy() if p else gxp
    return gx, gw


def maxpool3_fwd(x):
    """3x3x3 max pool, stride 1, pad 1.  Returns (pooled, code) where code
    is the uint8 offset kd*9+kh*3+kw of the selected element; numpy argmax
    takes the first occurrence, i.e. the lowest code on ties."""
    n, c, d, h, w = x.shape
    pad_val = -np.inf
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)),
                constant_values=pad_val)
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3, 3), axis=(2, 3, 4))
    flat = win.reshape(n, c, d, h, w, 27)
    code = flat.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(flat, code[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(y), code


def maxpool3_bwd(code, gy):
    """Scatter upstream gradients to the elements selected by maxpool3_fwd."""
    n, c, d, h, w = gy.shape
    gx = np.zeros_like(gy)
    kd = code // 9
    kh = (code // 3) % 3
    kw = code % 3
    ni, ci, di, hi, wi = np.indices((n, c, d, h, w), sparse=False)
    np.add.at(gx, (ni, ci, di + kd - 1, hi + kh - 1, wi + kw - 1), gy)
    return gx


_N26 = [(dz, dy, dx)
        for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
        if (dz, dy, dx) != (0, 0, 0)]
_CELLS = [(dz, dy, dx)
          for dz in (0, 1, 2) for dy in (0, 1, 2) for dx in (0, 1, 2)]


def _is_simple(img, z, y, x):
    # Bertrand/Malandain test for (26, 6) adjacency: one 26-component of
    # foreground in the punctured neighborhood and one 6-component of
    # background in the 18-neighborhood touching a face.
    nb = img[z - 1:z + 2, y - 1:y + 2, x - 1:x + 2]

    fg = [c for c in _CELLS if c != (1, 1, 1) and nb[c]]
    if not fg:
        return False
    seen = set()
    comps = 0
    for start in fg:
        if start in seen:
            continue
        comps += 1
        if comps > 1:
            return False
        stack = [start]
        seen.add(start)
        while stack:
            cz, cy, cx = stack.pop()
            for oz, oy, ox in fg:
                if (oz, oy, ox) not in seen and abs(oz - cz) <= 1 \
                        and abs(oy - cy) <= 1 and abs(ox - cx) <= 1:
                    seen.add((oz, oy, ox))
                    stack.append((oz, oy, ox))

    bg18 = [c for c in _CELLS
            if c != (1, 1, 1) and not nb[c]
            and abs(c[0] - 1) + abs(c[1] - 1) + abs(c[2] - 1) <= 2]
    seen = set()
    face_comps = 0
    for start in bg18:
        if start in seen:
            continue
        stack = [start]
        seen.add(start)
        has_face = abs(start[0] - 1) + abs(start[1] - 1) + abs(start[2] - 1) == 1
        while stack:
            cz, cy, cx = stack.pop()
            for oz, oy, ox in bg18:
                if (oz, oy, ox) not in seen and \
                        abs(oz - cz) + abs(oy - cy) + abs(ox - cx) == 1:
                    seen.add((oz, oy, ox))
                    stack.append((oz, oy, ox))
                    if abs(oz - 1) + abs(oy - 1) + abs(ox - 1) == 1:
                        has_face = True
        if has_face:
            face_comps += 1
            if face_comps > 1:
                return False
    return face_comps == 1


def thin_subiter(img, cand):
    """One border-direction thinning subiteration on the 1-padded image;
    mirrors _fast.thin_subiter (two-phase with sequential recheck)."""
    hp, wp = img.shape[1], img.shape[2]
    keep = []
    for idx in cand:
        z, rem = divmod(int(idx), hp * wp)
        y, x = divmod(rem, wp)
        nb = img[z - 1:z + 2, y - 1:y + 2, x - 1:x + 2]
        if int(nb.sum()) - 1 < 2:  # endpoint or isolated
            continue
        if _is_simple(img, z, y, x):
            keep.append((z, y, x))
    removed = 0
    for z, y, x in keep:
        if _is_simple(img, z, y, x):
            img[z, y, x] = 0
            removed += 1
    return removed
