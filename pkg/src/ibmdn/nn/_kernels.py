"""Compiled inner loops for the per-pixel operators.

Each kernel walks padded inputs row by row with a fixed summation order,
so results are bit-reproducible run to run.
"""
import numba


@numba.njit(cache=True)
def depthwise_forward(xp, taps, k, out):
    n_, c_, h_, w_ = out.shape
    for n in range(n_):
        for c in range(c_):
            for h in range(h_):
                orow = out[n, c, h]
                for dy in range(k):
                    xrow = xp[n, c, h + dy]
                    for dx in range(k):
                        wv = taps[c, dy * k + dx]
                        for x in range(w_):
                            orow[x] += wv * xrow[x + dx]


@numba.njit(cache=True)
def depthwise_backward(xp, taps, g, k, gxp, gw):
    n_, c_, h_, w_ = g.shape
    for n in range(n_):
        for c in range(c_):
            for h in range(h_):
                grow = g[n, c, h]
                for dy in range(k):
                    xrow = xp[n, c, h + dy]
                    gxrow = gxp[n, c, h + dy]
                    for dx in range(k):
                        j = dy * k + dx
                        wv = taps[c, j]
                        acc = 0.0
                        for x in range(w_):
                            gxrow[x + dx] += wv * grow[x]
                            acc += grow[x] * xrow[x + dx]
                        gw[c, j] += acc


@numba.njit(cache=True)
def involution_forward(xp, kr, k, out):
    # xp: (N, G, Cg, Hp, Wp); kr: (N, G, k*k, H, W); out: (N, G, Cg, H, W)
    n_, g_, cg_, h_, w_ = out.shape
    for n in range(n_):
        for g in range(g_):
            for c in range(cg_):
                for h in range(h_):
                    orow = out[n, g, c, h]
                    for dy in range(k):
                        xrow = xp[n, g, c, h + dy]
                        for dx in range(k):
                            krow = kr[n, g, dy * k + dx, h]
                            for x in range(w_):
                                orow[x] += krow[x] * xrow[x + dx]


@numba.njit(cache=True)
def involution_backward(xp, kr, gout, k, gxp, gk):
    n_, g_, cg_, h_, w_ = gout.shape
    for n in range(n_):
        for g in range(g_):
            for c in range(cg_):
                for h in range(h_):
                    grow = gout[n, g, c, h]
                    for dy in range(k):
                        xrow = xp[n, g, c, h + dy]
                        gxrow = gxp[n, g, c, h + dy]
                        for dx in range(k):
                            j = dy * k + dx
                            krow = kr[n, g, j, h]
                            gkrow = gk[n, g, j, h]
                            for x in range(w_):
                                gxrow[x + dx] += krow[x] * grow[x]
                                gkrow[x] += grow[x] * xrow[x + dx]
