"""Scalar brute-force twins of the quality metrics.

These loop over pixels, windows, and blocks directly and exist solely
to cross-check the vectorized implementations in `metrics`; they share
nothing with those code paths beyond the metric definitions themselves.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateInputError


def sam_naive(reference: np.ndarray, fused: np.ndarray) -> float:
    r = np.asarray(reference, dtype=np.float64)
    f = np.asarray(fused, dtype=np.float64)
    bands, h, w = r.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            dot = nr = nf = 0.0
            for b in range(bands):
                rv, fv = r[b, y, x], f[b, y, x]
                dot += rv * fv
                nr += rv * rv
                nf += fv * fv
            if nr > 0 and nf > 0:
                cos = dot / math.sqrt(nr * nf)
                total += math.acos(min(1.0, max(-1.0, cos)))
    return math.degrees(total / (h * w))


def ergas_naive(reference: np.ndarray, fused: np.ndarray, ratio: float = 0.25) -> float:
    r = np.asarray(reference, dtype=np.float64)
    f = np.asarray(fused, dtype=np.float64)
    bands, h, w = r.shape
    acc = 0.0
    for b in range(bands):
        se = 0.0
        mean = 0.0
        for y in range(h):
            for x in range(w):
                se += (f[b, y, x] - r[b, y, x]) ** 2
                mean += r[b, y, x]
        mean /= h * w
        if mean == 0:
            raise DegenerateInputError("ergas: a reference band has zero mean")
        rmse = math.sqrt(se / (h * w))
        acc += (rmse / mean) ** 2
    return 100.0 * ratio * math.sqrt(acc / bands)


def ssim_naive(reference: np.ndarray, fused: np.ndarray, dynamic_range: float,
               window: int = 11, sigma: float = 1.5) -> float:
    r = np.asarray(reference, dtype=np.float64)
    f = np.asarray(fused, dtype=np.float64)
    if r.ndim == 2:
        r, f = r[None], f[None]
    half = window // 2
    weights = np.empty((window, window))
    for dy in range(window):
        for dx in range(window):
            weights[dy, dx] = math.exp(
                -0.5 * (((dy - half) / sigma) ** 2 + ((dx - half) / sigma) ** 2)
            )
    weights /= weights.sum()
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    band_means = []
    for rb, fb in zip(r, f):
        h, w = rb.shape
        total = 0.0
        count = 0
        for y in range(h - window + 1):
            for x in range(w - window + 1):
                rw = rb[y:y + window, x:x + window]
                fw = fb[y:y + window, x:x + window]
                mu_r = float((weights * rw).sum())
                mu_f = float((weights * fw).sum())
                var_r = float((weights * (rw - mu_r) ** 2).sum())
                var_f = float((weights * (fw - mu_f) ** 2).sum())
                cov = float((weights * (rw - mu_r) * (fw - mu_f)).sum())
                num = (2 * mu_r * mu_f + c1) * (2 * cov + c2)
                den = (mu_r ** 2 + mu_f ** 2 + c1) * (var_r + var_f + c2)
                total += num / den
                count += 1
        band_means.append(total / count)
    return float(np.mean(band_means))


def q_index_naive(x: np.ndarray, y: np.ndarray, block: int = 32) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h, w = x.shape
    b = min(block, h, w)
    values = []
    for by in range(h // b):
        for bx in range(w // b):
            xs = x[by * b:(by + 1) * b, bx * b:(bx + 1) * b]
            ys = y[by * b:(by + 1) * b, bx * b:(bx + 1) * b]
            n = b * b
            mx = float(xs.sum()) / n
            my = float(ys.sum()) / n
            vx = vy = cov = 0.0
            for i in range(b):
                for j in range(b):
                    dx = xs[i, j] - mx
                    dy = ys[i, j] - my
                    vx += dx * dx
                    vy += dy * dy
                    cov += dx * dy
            vx /= n
            vy /= n
            cov /= n
            lum_den = mx * mx + my * my
            con_den = vx + vy
            if lum_den != 0 and con_den != 0:
                values.append(4.0 * cov * mx * my / (lum_den * con_den))
            elif con_den == 0 and lum_den != 0:
                values.append(2.0 * mx * my / lum_den)
            elif lum_den == 0 and con_den != 0:
                values.append(2.0 * cov / con_den)
            # both degenerate: block skipped
    if not values:
        raise DegenerateInputError("q_index: every block is degenerate")
    return float(np.mean(values))


def d_lambda_naive(fused: np.ndarray, lrms: np.ndarray, block: int = 32) -> float:
    nb = fused.shape[0]
    diffs = []
    for i in range(nb):
        for j in range(nb):
            if i == j:
                continue
            diffs.append(abs(q_index_naive(fused[i], fused[j], block)
                             - q_index_naive(lrms[i], lrms[j], block)))
    return float(np.mean(diffs))


def d_s_naive(fused: np.ndarray, lrms: np.ndarray, pan: np.ndarray,
              pan_lr: np.ndarray, block: int = 32) -> float:
    nb = fused.shape[0]
    diffs = [
        abs(q_index_naive(fused[i], pan, block)
            - q_index_naive(lrms[i], pan_lr, block))
        for i in range(nb)
    ]
    return float(np.mean(diffs))


def qnr_naive(pan: np.ndarray, lrms: np.ndarray, fused: np.ndarray,
              pan_lr: np.ndarray, block: int = 32) -> float:
    dl = d_lambda_naive(fused, lrms, block)
    ds = d_s_naive(fused, lrms, pan, pan_lr, block)
    return (1.0 - dl) * (1.0 - ds)
