# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: 3x3x3 convolution forward/backward, the
shape-preserving 3x3x3 max pool, and the sequential simple-point sweep used
by 3D thinning.  The numpy backend mirrors this module's API."""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.stdlib cimport free, malloc

cdef extern from "conv_planes.h":
    void plane_corr3_s1_f32(float* acc, const float* r0, const float* r1,
                            const float* r2, const float* w9, Py_ssize_t n) nogil
    void plane_corr3_s1_f64(double* acc, const double* r0, const double* r1,
                            const double* r2, const double* w9, Py_ssize_t n) nogil
    void plane_corr3_f32(float* acc, const float* r0, const float* r1,
                         const float* r2, const float* w9, Py_ssize_t n,
                         Py_ssize_t stride) nogil
    void plane_corr3_f64(double* acc, const double* r0, const double* r1,
                         const double* r2, const double* w9, Py_ssize_t n,
                         Py_ssize_t stride) nogil
    void panel_dw_f32(float* gw, const float* panel, const float* gy,
                      Py_ssize_t K, Py_ssize_t Cout, Py_ssize_t P) nogil
    void panel_dw_f64(double* gw, const double* panel, const double* gy,
                      Py_ssize_t K, Py_ssize_t Cout, Py_ssize_t P) nogil
    void panel_dx_f32(float* gpanel, const float* wmat, const float* gy,
                      Py_ssize_t K, Py_ssize_t Cout, Py_ssize_t P) nogil
    void panel_dx_f64(double* gpanel, const double* wmat, const double* gy,
                      Py_ssize_t K, Py_ssize_t Cout, Py_ssize_t P) nogil

ctypedef fused floating:
    float
    double


def conv3d_fwd_k3(floating[:, :, :, :, ::1] xp, floating[:, :, :, :, ::1] w,
                  floating[::1] b, Py_ssize_t stride,
                  Py_ssize_t Do, Py_ssize_t Ho, Py_ssize_t Wo):
    """Cross-correlate a pre-padded (N,Cin,D+2,H+2,W+2) input with a
    (Cout,Cin,3,3,3) kernel.  Deterministic for any thread count: every
    output element is written by exactly one thread with a fixed
    accumulation order."""
    cdef Py_ssize_t N = xp.shape[0], Cin = xp.shape[1]
    cdef Py_ssize_t Cout = w.shape[0]
    dt = np.float32 if floating is float else np.float64
    y_np = np.empty((N, Cout, Do, Ho, Wo), dtype=dt)
    cdef floating[:, :, :, :, ::1] y = y_np
    cdef Py_ssize_t n, co, ci, od, oh, ow, kd
    cdef floating bv
    cdef floating* acc
    with nogil:
        for co in prange(Cout, schedule='static'):
            acc = <floating*>malloc(Wo * sizeof(floating))
            for n in range(N):
                for od in range(Do):
                    for oh in range(Ho):
                        bv = b[co]
                        for ow in range(Wo):
                            acc[ow] = bv
                        for ci in range(Cin):
                            for kd in range(3):
                                if floating is float:
                                    if stride == 1:
                                        plane_corr3_s1_f32(acc,
                                            &xp[n, ci, od + kd, oh, 0],
                                            &xp[n, ci, od + kd, oh + 1, 0],
                                            &xp[n, ci, od + kd, oh + 2, 0],
                                            &w[co, ci, kd, 0, 0], Wo)
                                    else:
                                        plane_corr3_f32(acc,
                                            &xp[n, ci, od * stride + kd, oh * stride, 0],
                                            &xp[n, ci, od * stride + kd, oh * stride + 1, 0],
                                            &xp[n, ci, od * stride + kd, oh * stride + 2, 0],
                                            &w[co, ci, kd, 0, 0], Wo, stride)
                                else:
                                    if stride == 1:
                                        plane_corr3_s1_f64(acc,
                                            &xp[n, ci, od + kd, oh, 0],
                                            &xp[n, ci, od + kd, oh + 1, 0],
                                            &xp[n, ci, od + kd, oh + 2, 0],
                                            &w[co, ci, kd, 0, 0], Wo)
                                    else:
                                        plane_corr3_f64(acc,
                                            &xp[n, ci, od * stride + kd, oh * stride, 0],
                                            &xp[n, ci, od * stride + kd, oh * stride + 1, 0],
                                            &xp[n, ci, od * stride + kd, oh * stride + 2, 0],
                                            &w[co, ci, kd, 0, 0], Wo, stride)
                        for ow in range(Wo):
                            y[n, co, od, oh, ow] = acc[ow]
            free(acc)
    return y_np


def conv3d_bwd_k3(floating[:, :, :, :, ::1] xp, floating[:, :, :, :, ::1] w,
                  floating[:, :, :, :, ::1] gy, Py_ssize_t stride,
                  Py_ssize_t D, Py_ssize_t H, Py_ssize_t W):
    """Input and weight gradients of conv3d_fwd_k3.

    Processes one (n, od) slab at a time: a small L2-resident im2col panel
    feeds two GEMMs (weight gradient accumulation and the input-gradient
    columns), followed by a col2im scatter into the padded input gradient.
    Returns (gx, gw) in the input dtype; the bias gradient is a plain sum
    handled by the caller.
    """
    cdef Py_ssize_t N = xp.shape[0], Cin = xp.shape[1]
    cdef Py_ssize_t Cout = w.shape[0]
    cdef Py_ssize_t Do = gy.shape[2], Ho = gy.shape[3], Wo = gy.shape[4]
    cdef Py_ssize_t K = Cin * 27
    cdef Py_ssize_t P = Ho * Wo  # panel column count
    cdef Py_ssize_t s = stride
    dt = np.float32 if floating is float else np.float64
    # per-sample weight-gradient buffers, reduced in fixed order below
    gwn_np = np.zeros((N, Cout, Cin, 3, 3, 3), dtype=dt)
    gxp_np = np.zeros((N, Cin, xp.shape[2], xp.shape[3], xp.shape[4]), dtype=dt)
    cdef floating[:, :, :, :, :, ::1] gwn = gwn_np
    cdef floating[:, :, :, :, ::1] gxp = gxp_np
    cdef floating* panel
    cdef floating* gpanel
    cdef floating* gy_panel
    cdef Py_ssize_t n, od, oh, ow, ci, co, kd, kh, kw, row
    cdef const floating* src
    cdef floating* dst
    with nogil:
        # samples are independent: each thread owns gxp[n] and gwn[n]
        for n in prange(N, schedule='static'):
            panel = <floating*>malloc(K * P * sizeof(floating))
            gpanel = <floating*>malloc(K * P * sizeof(floating))
            gy_panel = <floating*>malloc(Cout * P * sizeof(floating))
            for od in range(Do):
                for co in range(Cout):
                    src = &gy[n, co, od, 0, 0]
                    dst = gy_panel + co * P
                    for ow in range(P):
                        dst[ow] = src[ow]
                for ci in range(Cin):
                    for kd in range(3):
                        for kh in range(3):
                            for kw in range(3):
                                row = ((ci * 3 + kd) * 3 + kh) * 3 + kw
                                for oh in range(Ho):
                                    src = &xp[n, ci, od * s + kd, oh * s + kh, kw]
                                    dst = panel + row * P + oh * Wo
                                    for ow in range(Wo):
                                        dst[ow] = src[ow * s]
                if floating is float:
                    panel_dw_f32(<float*>&gwn[n, 0, 0, 0, 0, 0],
                                 <float*>panel, <float*>gy_panel, K, Cout, P)
                    panel_dx_f32(<float*>gpanel, <float*>&w[0, 0, 0, 0, 0],
                                 <float*>gy_panel, K, Cout, P)
                else:
                    panel_dw_f64(<double*>&gwn[n, 0, 0, 0, 0, 0],
                                 <double*>panel, <double*>gy_panel, K, Cout, P)
                    panel_dx_f64(<double*>gpanel, <double*>&w[0, 0, 0, 0, 0],
                                 <double*>gy_panel, K, Cout, P)
                for ci in range(Cin):
                    for kd in range(3):
                        for kh in range(3):
                            for kw in range(3):
                                row = ((ci * 3 + kd) * 3 + kh) * 3 + kw
                                for oh in range(Ho):
                                    src = gpanel + row * P + oh * Wo
                                    dst = &gxp[n, ci, od * s + kd, oh * s + kh, kw]
                                    for ow in range(Wo):
                                        dst[ow * s] += src[ow]
            free(panel)
            free(gpanel)
            free(gy_panel)
    gw = gwn_np[0]
    for n in range(1, N):
        gw = gw + gwn_np[n]
    gx = gxp_np[:, :, 1:1 + D, 1:1 + H, 1:1 + W].copy()
    return gx, gw


def maxpool3_fwd(floating[:, :, :, :, ::1] x):
    """3x3x3 max pool, stride 1, pad 1 (shape preserving).  Returns the
    pooled tensor and a uint8 code kd*9+kh*3+kw of the selected element;
    ties go to the lowest code, i.e. the lowest linear source index."""
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t D = x.shape[2], H = x.shape[3], W = x.shape[4]
    dt = np.float32 if floating is float else np.float64
    y_np = np.empty((N, C, D, H, W), dtype=dt)
    code_np = np.empty((N, C, D, H, W), dtype=np.uint8)
    cdef floating[:, :, :, :, ::1] y = y_np
    cdef unsigned char[:, :, :, :, ::1] code = code_np
    cdef Py_ssize_t nc, n, c, d, h, w, kd, kh, kw, id_, ih, iw
    cdef floating best, v
    cdef unsigned char bc
    with nogil:
        for nc in prange(N * C, schedule='static'):
            n = nc // C
            c = nc % C
            for d in range(D):
                for h in range(H):
                    for w in range(W):
                        best = x[n, c, d, h, w]
                        bc = 13  # center code (1,1,1)
                        for kd in range(3):
                            id_ = d + kd - 1
                            if id_ < 0 or id_ >= D:
                                continue
                            for kh in range(3):
                                ih = h + kh - 1
                                if ih < 0 or ih >= H:
                                    continue
                                for kw in range(3):
                                    iw = w + kw - 1
                                    if iw < 0 or iw >= W:
                                        continue
                                    v = x[n, c, id_, ih, iw]
                                    if v > best or (v == best and kd * 9 + kh * 3 + kw < bc):
                                        best = v
                                        bc = <unsigned char>(kd * 9 + kh * 3 + kw)
                        y[n, c, d, h, w] = best
                        code[n, c, d, h, w] = bc
    return y_np, code_np


def maxpool3_bwd(unsigned char[:, :, :, :, ::1] code,
                 floating[:, :, :, :, ::1] gy):
    """Scatter upstream gradients to the elements selected by maxpool3_fwd."""
    cdef Py_ssize_t N = gy.shape[0], C = gy.shape[1]
    cdef Py_ssize_t D = gy.shape[2], H = gy.shape[3], W = gy.shape[4]
    dt = np.float32 if floating is float else np.float64
    gx_np = np.zeros((N, C, D, H, W), dtype=dt)
    cdef floating[:, :, :, :, ::1] gx = gx_np
    cdef Py_ssize_t nc, n, c, d, h, w
    cdef unsigned char bc
    with nogil:
        for nc in prange(N * C, schedule='static'):
            n = nc // C
            c = nc % C
            for d in range(D):
                for h in range(H):
                    for w in range(W):
                        bc = code[n, c, d, h, w]
                        gx[n, c, d + bc // 9 - 1, h + (bc // 3) % 3 - 1,
                           w + bc % 3 - 1] += gy[n, c, d, h, w]
    return gx_np


cdef int _count_fg_components26(const unsigned char* nb) noexcept nogil:
    # connected components of foreground cells in the 3x3x3 neighborhood,
    # center excluded, 26-adjacency
    cdef int seen[27]
    cdef int queue[27]
    cdef int i, j, qh, qt, comps, di, dj
    cdef int zi, yi, xi, zj, yj, xj
    for i in range(27):
        seen[i] = 0
    comps = 0
    for i in range(27):
        if i == 13 or not nb[i] or seen[i]:
            continue
        comps += 1
        qh = 0
        qt = 0
        queue[qt] = i
        qt += 1
        seen[i] = 1
        while qh < qt:
            j = queue[qh]
            qh += 1
            zj = j // 9; yj = (j // 3) % 3; xj = j % 3
            for di in range(27):
                if di == 13 or seen[di] or not nb[di]:
                    continue
                zi = di // 9; yi = (di // 3) % 3; xi = di % 3
                dj = zi - zj
                if dj < -1 or dj > 1:
                    continue
                dj = yi - yj
                if dj < -1 or dj > 1:
                    continue
                dj = xi - xj
                if dj < -1 or dj > 1:
                    continue
                seen[di] = 1
                queue[qt] = di
                qt = qt + 1
    return comps


cdef int _count_bg_components6(const unsigned char* nb) noexcept nogil:
    # 6-connected components of background cells within the 18-neighborhood
    # that contain a face cell (6-adjacent to the center)
    cdef int seen[27]
    cdef int queue[27]
    cdef int i, j, qh, qt, comps, di, l1i, l1j, dz, dy, dx
    cdef int zi, yi, xi, zj, yj, xj, has_face
    for i in range(27):
        seen[i] = 0
    comps = 0
    for i in range(27):
        if i == 13 or nb[i] or seen[i]:
            continue
        zi = i // 9; yi = (i // 3) % 3; xi = i % 3
        l1i = (zi - 1 if zi >= 1 else 1 - zi) + (yi - 1 if yi >= 1 else 1 - yi) \
            + (xi - 1 if xi >= 1 else 1 - xi)
        if l1i > 2:
            continue  # corners are outside the 18-neighborhood
        qh = 0
        qt = 0
        queue[qt] = i
        qt += 1
        seen[i] = 1
        has_face = 1 if l1i == 1 else 0
        while qh < qt:
            j = queue[qh]
            qh += 1
            zj = j // 9; yj = (j // 3) % 3; xj = j % 3
            for di in range(27):
                if di == 13 or nb[di] or seen[di]:
                    continue
                zi = di // 9; yi = (di // 3) % 3; xi = di % 3
                l1j = (zi - 1 if zi >= 1 else 1 - zi) + (yi - 1 if yi >= 1 else 1 - yi) \
                    + (xi - 1 if xi >= 1 else 1 - xi)
                if l1j > 2:
                    continue
                dz = zi - zj
                dy = yi - yj
                dx = xi - xj
                if dz < 0:
                    dz = -dz
                if dy < 0:
                    dy = -dy
                if dx < 0:
                    dx = -dx
                if dz + dy + dx != 1:
                    continue
                seen[di] = 1
                if l1j == 1:
                    has_face = 1
                queue[qt] = di
                qt = qt + 1
        if has_face:
            comps += 1
    return comps


cdef int _neighbor_count(const unsigned char* img, Py_ssize_t idx,
                         Py_ssize_t Hp, Py_ssize_t Wp) noexcept nogil:
    cdef int cnt = 0
    cdef Py_ssize_t dz, dy, dx
    for dz in range(-1, 2):
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                if dz == 0 and dy == 0 and dx == 0:
                    continue
                if img[idx + (dz * Hp + dy) * Wp + dx]:
                    cnt += 1
    return cnt


cdef int _is_simple(const unsigned char* img, Py_ssize_t idx,
                    Py_ssize_t Hp, Py_ssize_t Wp) noexcept nogil:
    # Bertrand/Malandain characterization for (26, 6) adjacency:
    # simple iff exactly one 26-component of foreground in the punctured
    # neighborhood and exactly one 6-component of background in the
    # 18-neighborhood touching a face.
    cdef unsigned char nb[27]
    cdef Py_ssize_t dz, dy, dx
    cdef int i = 0
    for dz in range(-1, 2):
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                nb[i] = img[idx + (dz * Hp + dy) * Wp + dx]
                i += 1
    if _count_fg_components26(nb) != 1:
        return 0
    if _count_bg_components6(nb) != 1:
        return 0
    return 1


def thin_subiter(unsigned char[:, :, ::1] img, cnp.int64_t[::1] cand):
    """One border-direction subiteration of topology-preserving thinning.

    img is the 1-padded working image (modified in place); cand holds flat
    candidate indices in ascending order (border points of the current
    direction).  Candidates that are non-endpoints and simple are collected
    first, then deleted sequentially with a simplicity recheck so earlier
    deletions cannot break topology.  Returns the number of removed voxels.
    """
    cdef Py_ssize_t Hp = img.shape[1], Wp = img.shape[2]
    cdef unsigned char* p = &img[0, 0, 0]
    cdef Py_ssize_t m = cand.shape[0]
    cdef Py_ssize_t i, idx, kept, removed
    cdef cnp.int64_t* keep = <cnp.int64_t*>malloc(m * sizeof(cnp.int64_t))
    kept = 0
    removed = 0
    with nogil:
        for i in range(m):
            idx = cand[i]
            if _neighbor_count(p, idx, Hp, Wp) < 2:
                continue  # endpoints and isolated voxels are preserved
            if _is_simple(p, idx, Hp, Wp):
                keep[kept] = idx
                kept += 1
        for i in range(kept):
            idx = keep[i]
            if _is_simple(p, idx, Hp, Wp):
                p[idx] = 0
                removed += 1
    free(keep)
    return removed
