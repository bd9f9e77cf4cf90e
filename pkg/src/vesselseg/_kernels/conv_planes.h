#ifndef VESSELSEG_CONV_PLANES_H
#define VESSELSEG_CONV_PLANES_H

#include <stddef.h>

/* Row-stencil primitives for 3x3x3 cross-correlation.  Each call applies one
 * (kh, kw) 3x3 plane of the kernel to one output row of length n, reading
 * three consecutive padded input rows r0..r2.  w9 holds the plane weights in
 * (kh, kw) order. */

void plane_corr3_s1_f32(float *acc, const float *r0, const float *r1,
                        const float *r2, const float *w9, ptrdiff_t n);
void plane_corr3_s1_f64(double *acc, const double *r0, const double *r1,
                        const double *r2, const double *w9, ptrdiff_t n);
void plane_corr3_f32(float *acc, const float *r0, const float *r1,
                     const float *r2, const float *w9, ptrdiff_t n,
                     ptrdiff_t stride);
void plane_corr3_f64(double *acc, const double *r0, const double *r1,
                     const double *r2, const double *w9, ptrdiff_t n,
                     ptrdiff_t stride);

/* Lock-free micro-GEMMs for the backward pass panels (safe to call from
 * concurrent threads, unlike pooled-buffer BLAS implementations).
 * Shapes: gw (Cout,K) += gy (Cout,P) @ panel (K,P)^T and
 *         gpanel (K,P) = wmat (Cout,K)^T-broadcast combination of gy rows. */

void panel_dw_f32(float *gw, const float *panel, const float *gy,
                  ptrdiff_t K, ptrdiff_t Cout, ptrdiff_t P);
void panel_dw_f64(double *gw, const double *panel, const double *gy,
                  ptrdiff_t K, ptrdiff_t Cout, ptrdiff_t P);
void panel_dx_f32(float *gpanel, const float *wmat, const float *gy,
                  ptrdiff_t K, ptrdiff_t Cout, ptrdiff_t P);
void panel_dx_f64(double *gpanel, const double *wmat, const double *gy,
                  ptrdiff_t K, ptrdiff_t Cout, ptrdiff_t P);

#endif
