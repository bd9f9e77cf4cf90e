#include "conv_planes.h"

/* restrict-qualified inner loops so the compiler can vectorize; the callers
 * in _fast.pyx guarantee acc never aliases the input rows. */

void plane_corr3_s1_f32(float *restrict acc, const float *restrict r0,
                        const float *restrict r1, const float *restrict r2,
                        const float *restrict w9, ptrdiff_t n) {
    const float w00 = w9[0], w01 = w9[1], w02 = w9[2];
    const float w10 = w9[3], w11 = w9[4], w12 = w9[5];
    const float w20 = w9[6], w21 = w9[7], w22 = w9[8];
    for (ptrdiff_t i = 0; i < n; i++) {
        acc[i] += w00 * r0[i] + w01 * r0[i + 1] + w02 * r0[i + 2]
                + w10 * r1[i] + w11 * r1[i + 1] + w12 * r1[i + 2]
                + w20 * r2[i] + w21 * r2[i + 1] + w22 * r2[i + 2];
    }
}

void plane_corr3_s1_f64(double *restrict acc, const double *restrict r0,
                        const double *restrict r1, const double *restrict r2,
                        const double *restrict w9, ptrdiff_t n) {
    const double w00 = w9[0], w01 = w9[1], w02 = w9[2];
    const double w10 = w9[3], w11 = w9[4], w12 = w9[5];
    const double w20 = w9[6], w21 = w9[7], w22 = w9[8];
    for (ptrdiff_t i = 0; i < n; i++) {
        acc[i] += w00 * r0[i] + w01 * r0[i + 1] + w02 * r0[i + 2]
                + w10 * r1[i] + w11 * r1[i + 1] + w12 * r1[i + 2]
                + w20 * r2[i] + w21 * r2[i + 1] + w22 * r2[i + 2];
    }
}

void plane_corr3_f32(float *restrict acc, const float *restrict r0,
                     const float *restrict r1, const float *restrict r2,
                     const float *restrict w9, ptrdiff_t n, ptrdiff_t stride) {
    const float w00 = w9[0], w01 = w9[1], w02 = w9[2];
    const float w10 = w9[3], w11 = w9[4], w12 = w9[5];
    const float w20 = w9[6], w21 = w9[7], w22 = w9[8];
    for (ptrdiff_t i = 0; i < n; i++) {
        const ptrdiff_t j = i * stride;
        acc[i] += w00 * r0[j] + w01 * r0[j + 1] + w02 * r0[j + 2]
                + w10 * r1[j] + w11 * r1[j + 1] + w12 * r1[j + 2]
                + w20 * r2[j] + w21 * r2[j + 1] + w22 * r2[j + 2];
    }
}

void plane_corr3_f64(double *restrict acc, const double *restrict r0,
                     const double *restrict r1, const double *restrict r2,
                     const double *restrict w9, ptrdiff_t n, ptrdiff_t stride) {
    const double w00 = w9[0], w01 = w9[1], w02 = w9[2];
    const double w10 = w9[3], w11 = w9[4], w12 = w9[5];
    const double w20 = w9[6], w21 = w9[7], w22 = w9[8];
    for (ptrdiff_t i = 0; i < n; i++) {
        const ptrdiff_t j = i * stride;
        acc[i] += w00 * r0[j] + w01 * r0[j + 1] + w02 * r0[j + 2]
                + w10 * r1[j] + w11 * r1[j + 1] + w12 * r1[j + 2]
                + w20 * r2[j] + w21 * r2[j + 1] + w22 * r2[j + 2];
    }
}

void panel_dw_f32(float *restrict gw, const float *restrict panel,
                  const float *restrict gy, ptrdiff_t K, ptrdiff_t Cout,
                  ptrdiff_t P) {
    for (ptrdiff_t kk = 0; kk < K; kk++) {
        const float *pr = panel + kk * P;
        for (ptrdiff_t co = 0; co < Cout; co++) {
            const float *g = gy + co * P;
            float acc = 0.0f;
            #pragma omp simd reduction(+ : acc)
            for (ptrdiff_t i = 0; i < P; i++) {
                acc += g[i] * pr[i];
            }
            gw[co * K + kk] += acc;
        }
    }
}

void panel_dw_f64(double *restrict gw, const double *restrict panel,
                  const double *restrict gy, ptrdiff_t K, ptrdiff_t Cout,
                  ptrdiff_t P) {
    for (ptrdiff_t kk = 0; kk < K; kk++) {
        const double *pr = panel + kk * P;
        for (ptrdiff_t co = 0; co < Cout; co++) {
            const double *g = gy + co * P;
            double acc = 0.0;
            #pragma omp simd reduction(+ : acc)
            for (ptrdiff_t i = 0; i < P; i++) {
                acc += g[i] * pr[i];
            }
            gw[co * K + kk] += acc;
        }
    }
}

void panel_dx_f32(float *restrict gpanel, const float *restrict wmat,
                  const float *restrict gy, ptrdiff_t K, ptrdiff_t Cout,
                  ptrdiff_t P) {
    for (ptrdiff_t kk = 0; kk < K; kk++) {
        float *gp = gpanel + kk * P;
        const float w0 = wmat[kk];
        const float *g0 = gy;
        for (ptrdiff_t i = 0; i < P; i++) {
            gp[i] = w0 * g0[i];
        }
        for (ptrdiff_t co = 1; co < Cout; co++) {
            const float wv = wmat[co * K + kk];
            const float *g = gy + co * P;
            for (ptrdiff_t i = 0; i < P; i++) {
                gp[i] += wv * g[i];
            }
        }
    }
}

void panel_dx_f64(double *restrict gpanel, const double *restrict wmat,
                  const double *restrict gy, ptrdiff_t K, ptrdiff_t Cout,
                  ptrdiff_t P) {
    for (ptrdiff_t kk = 0; kk < K; kk++) {
        double *gp = gpanel + kk * P;
        const double w0 = wmat[kk];
        const double *g0 = gy;
        for (ptrdiff_t i = 0; i < P; i++) {
            gp[i] = w0 * g0[i];
        }
        for (ptrdiff_t co = 1; co < Cout; co++) {
            const double wv = wmat[co * K + kk];
            const double *g = gy + co * P;
            for (ptrdiff_t i = 0; i < P; i++) {
                gp[i] += wv * g[i];
            }
        }
    }
}
