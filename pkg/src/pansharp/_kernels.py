"""Numba kernels for the convolution and normalization hot paths.

All kernels are deterministic under parallel execution: every output
element is written by exactly one thread with a fixed accumulation
order, so repeated runs on the same machine produce identical bits.
"""

import numba as nb
import numpy as np


@nb.njit(parallel=True, fastmath=True, cache=True)
def conv2d_forward(xp, w, b, out, stride):
    """Valid convolution of pre-padded input xp (N,C,Hp,Wp) with w (O,C,k,k)."""
    n_batch, n_in, _, _ = xp.shape
    n_out = w.shape[0]
    k = w.shape[2]
    h_out, w_out = out.shape[2], out.shape[3]
    for job in nb.prange(n_batch * n_out):
        n = job // n_out
        o = job % n_out
        for y in range(h_out):
            row = np.full(w_out, b[o], dtype=xp.dtype)
            for c in range(n_in):
                for dy in range(k):
                    xrow = xp[n, c, y * stride + dy]
                    for dx in range(k):
                        wv = w[o, c, dy, dx]
                        for x in range(w_out):
                            row[x] += wv * xrow[x * stride + dx]
            out[n, o, y] = row


@nb.njit(parallel=True, fastmath=True, cache=True)
def conv2d_grad_w(xp, g, gw, stride):
    """gw[o,c,dy,dx] = sum_nyx g[n,o,y,x] * xp[n,c,y*s+dy,x*s+dx]."""
    n_batch, n_in, _, _ = xp.shape
    n_out = g.shape[1]
    k = gw.shape[2]
    h_out, w_out = g.shape[2], g.shape[3]
    for job in nb.prange(n_out * n_in):
        o = job // n_in
        c = job % n_in
        for dy in range(k):
            for dx in range(k):
                acc = xp.dtype.type(0.0)
                for n in range(n_batch):
                    for y in range(h_out):
                        grow = g[n, o, y]
                        xrow = xp[n, c, y * stride + dy]
                        s = xp.dtype.type(0.0)
                        for x in range(w_out):
                            s += grow[x] * xrow[x * stride + dx]
                        acc += s
                gw[o, c, dy, dx] = acc


@nb.njit(parallel=True, fastmath=True, cache=True)
def conv2d_grad_x(g, w, gxp, stride):
    """Scatter g (N,O,Ho,Wo) back through w into the padded-input grad."""
    n_batch = g.shape[0]
    n_out, n_in, k, _ = w.shape
    h_out, w_out = g.shape[2], g.shape[3]
    for job in nb.prange(n_batch * n_in):
        n = job // n_in
        c = job % n_in
        for o in range(n_out):
            for y in range(h_out):
                grow = g[n, o, y]
                for dy in range(k):
                    prow = gxp[n, c, y * stride + dy]
                    for dx in range(k):
                        wv = w[o, c, dy, dx]
                        for x in range(w_out):
                            prow[x * stride + dx] += wv * grow[x]


@nb.njit(parallel=True, fastmath=True, cache=True)
def filter2d_forward(xp, kern, out):
    """Depthwise valid correlation: one 2-D kernel applied to every channel."""
    n_batch, n_ch, _, _ = xp.shape
    k = kern.shape[0]
    h_out, w_out = out.shape[2], out.shape[3]
    for job in nb.prange(n_batch * n_ch):
        n = job // n_ch
        c = job % n_ch
        for y in range(h_out):
            row = np.zeros(w_out, dtype=xp.dtype)
            for dy in range(k):
                xrow = xp[n, c, y + dy]
                for dx in range(k):
                    kv = kern[dy, dx]
                    for x in range(w_out):
                        row[x] += kv * xrow[x + dx]
            out[n, c, y] = row


@nb.njit(parallel=True, fastmath=True, cache=True)
def instance_norm_forward(x, out, mean, inv_std, eps):
    """Two-pass per-(sample,channel) normalization; no learned affine."""
    n_batch, n_ch, h, w = x.shape
    count = h * w
    for job in nb.prange(n_batch * n_ch):
        n = job // n_ch
        c = job % n_ch
        s = x.dtype.type(0.0)
        for y in range(h):
            for xx in range(w):
                s += x[n, c, y, xx]
        m = s / count
        s2 = x.dtype.type(0.0)
        for y in range(h):
            for xx in range(w):
                d = x[n, c, y, xx] - m
                s2 += d * d
        inv = x.dtype.type(1.0) / np.sqrt(s2 / count + eps)
        mean[n, c] = m
        inv_std[n, c] = inv
        for y in range(h):
            for xx in range(w):
                out[n, c, y, xx] = (x[n, c, y, xx] - m) * inv


@nb.njit(parallel=True, fastmath=True, cache=True)
def instance_norm_backward(g, y_out, inv_std, gx):
    """gx = inv * (g - mean(g) - y * mean(g*y)) per (sample, channel)."""
    n_batch, n_ch, h, w = g.shape
    count = h * w
    for job in nb.prange(n_batch * n_ch):
        n = job // n_ch
        c = job % n_ch
        mg = g.dtype.type(0.0)
        mgy = g.dtype.type(0.0)
        for yy in range(h):
            for xx in range(w):
                mg += g[n, c, yy, xx]
                mgy += g[n, c, yy, xx] * y_out[n, c, yy, xx]
        mg /= count
        mgy /= count
        inv = inv_std[n, c]
        for yy in range(h):
            for xx in range(w):
                gx[n, c, yy, xx] = inv * (
                    g[n, c, yy, xx] - mg - y_out[n, c, yy, xx] * mgy
                )
