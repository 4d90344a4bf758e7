/* Register-tiled inner loops for the conv2d kernels.
 * Layout: NHWC activations (input already zero-padded), HWIO weights.
 * Written with GCC/Clang vector extensions. */
#ifndef ADANAS_CONV_TILES_H
#define ADANAS_CONV_TILES_H

#include <stddef.h>

#define ADN_JB 3
#define ADN_CB 8
#define ADN_IB 4

typedef double adn_v4 __attribute__((vector_size(32), aligned(8)));

static inline __attribute__((always_inline)) void
adn_forward_tile(const double *restrict xp, ptrdiff_t xrow_stride, ptrdiff_t cin,
                 const double *restrict w, ptrdiff_t k, ptrdiff_t cout, const double *restrict bias,
                 double *restrict out, ptrdiff_t j, ptrdiff_t co, const int jn)
{
    adn_v4 acc[ADN_JB][2];
    for (int a = 0; a < jn; a++) {
        acc[a][0] = *(const adn_v4 *)(bias + co);
        acc[a][1] = *(const adn_v4 *)(bias + co + 4);
    }
    for (ptrdiff_t di = 0; di < k; di++)
        for (ptrdiff_t dj = 0; dj < k; dj++) {
            const double *xr = xp + di * xrow_stride + (j + dj) * cin;
            const double *wr = w + (di * k + dj) * cin * cout + co;
            for (ptrdiff_t ci = 0; ci < cin; ci++, wr += cout) {
                adn_v4 w0 = *(const adn_v4 *)wr, w1 = *(const adn_v4 *)(wr + 4);
                for (int a = 0; a < jn; a++) {
                    double xv = xr[a * cin + ci];
                    acc[a][0] += xv * w0;
                    acc[a][1] += xv * w1;
                }
            }
        }
    for (int a = 0; a < jn; a++) {
        *(adn_v4 *)(out + (j + a) * cout + co) = acc[a][0];
        *(adn_v4 *)(out + (j + a) * cout + co + 4) = acc[a][1];
    }
}

static inline double adn_dot(const double *restrict x, const double *restrict y, ptrdiff_t m)
{
    adn_v4 s0 = {0}, s1 = {0};
    ptrdiff_t t = 0;
    for (; t + 8 <= m; t += 8) {
        s0 += *(const adn_v4 *)(x + t) * *(const adn_v4 *)(y + t);
        s1 += *(const adn_v4 *)(x + t + 4) * *(const adn_v4 *)(y + t + 4);
    }
    s0 += s1;
    double r = (s0[0] + s0[1]) + (s0[2] + s0[3]);
    for (; t < m; t++)
        r += x[t] * y[t];
    return r;
}

/* One output row: out[j, co] for every column j and channel co.
 * Channels are done in vector tiles of ADN_CB; the last cout % ADN_CB
 * channels use dot products against wt, the weights laid out as
 * [cout][k][k * cin], since a padded input row slice of k pixels is
 * contiguous. */
static void adn_forward_row(const double *restrict xp, ptrdiff_t xrow_stride, ptrdiff_t cin,
                            const double *restrict w, const double *restrict wt, ptrdiff_t k,
                            ptrdiff_t cout, const double *restrict bias, double *restrict out,
                            ptrdiff_t wd)
{
    ptrdiff_t cfull = cout - cout % ADN_CB, span = k * cin;
    for (ptrdiff_t co = 0; co < cfull; co += ADN_CB) {
        ptrdiff_t j = 0;
        for (; j + ADN_JB <= wd; j += ADN_JB)
            adn_forward_tile(xp, xrow_stride, cin, w, k, cout, bias, out, j, co, ADN_JB);
        switch (wd - j) {
        case 2: adn_forward_tile(xp, xrow_stride, cin, w, k, cout, bias, out, j, co, 2); break;
        case 1: adn_forward_tile(xp, xrow_stride, cin, w, k, cout, bias, out, j, co, 1); break;
        default: break;
        }
    }
    for (ptrdiff_t co = cfull; co < cout; co++) {
        const double *wc = wt + co * k * span;
        for (ptrdiff_t j = 0; j < wd; j++) {
            double acc = bias[co];
            for (ptrdiff_t di = 0; di < k; di++)
                acc += adn_dot(xp + di * xrow_stride + j * cin, wc + di * span, span);
            out[j * cout + co] = acc;
        }
    }
}

/* Accumulate one output row's contribution to one tap of the weight gradient:
 * gw[ci, co] += sum_j xr[j*cin + ci] * gr[j*cout + co].
 * xr is the tap-shifted padded input row, gr the output-gradient row. */
static void adn_weight_row(const double *restrict xr, ptrdiff_t cin,
                           const double *restrict gr, ptrdiff_t wd, ptrdiff_t cout,
                           double *restrict gw)
{
    for (ptrdiff_t ci = 0; ci < cin; ci += ADN_IB) {
        ptrdiff_t cn = cin - ci < ADN_IB ? cin - ci : ADN_IB;
        for (ptrdiff_t co = 0; co < cout; co += ADN_CB) {
            ptrdiff_t con = cout - co < ADN_CB ? cout - co : ADN_CB;
            double *out = gw + ci * cout + co;
            if (cn == ADN_IB && con == ADN_CB) {
                adn_v4 acc[ADN_IB][2];
                for (int a = 0; a < ADN_IB; a++) {
                    acc[a][0] = *(const adn_v4 *)(out + a * cout);
                    acc[a][1] = *(const adn_v4 *)(out + a * cout + 4);
                }
                const double *x = xr + ci, *g = gr + co;
                for (ptrdiff_t j = 0; j < wd; j++, x += cin, g += cout) {
                    adn_v4 g0 = *(const adn_v4 *)g, g1 = *(const adn_v4 *)(g + 4);
                    for (int a = 0; a < ADN_IB; a++) {
                        acc[a][0] += x[a] * g0;
                        acc[a][1] += x[a] * g1;
                    }
                }
                for (int a = 0; a < ADN_IB; a++) {
                    *(adn_v4 *)(out + a * cout) = acc[a][0];
                    *(adn_v4 *)(out + a * cout + 4) = acc[a][1];
                }
                continue;
            }
            const double *x = xr + ci, *g = gr + co;
            for (ptrdiff_t j = 0; j < wd; j++, x += cin, g += cout)
                for (ptrdiff_t a = 0; a < cn; a++)
                    for (ptrdiff_t t = 0; t < con; t++)
                        out[a * cout + t] += x[a] * g[t];
        }
    }
}

#endif
