"""Fusion quality metrics.

Reference metrics (SAM, ERGAS, SSIM) compare a fused product against
ground truth; non-reference metrics (Q-index, spectral and spatial
distortion, QNR) need only the inputs. Each has a scalar brute-force
twin in `metrics_naive` used for verification, and QNR additionally has
a differentiable tensor path that backs the non-reference loss term.

Array arguments are numpy (C,H,W) for multi-band images and (H,W) for
single bands, float or integer; RasterImage inputs are converted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from . import imaging
from .errors import DegenerateInputError

Q_BLOCK = 32
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

IDEAL_VALUES = {
    "d_lambda": 0.0,
    "d_s": 0.0,
    "qnr": 1.0,
    "sam_deg": 0.0,
    "ergas": 0.0,
    "ssim": 1.0,
}


def _bands(x) -> np.ndarray:
    if isinstance(x, imaging.RasterImage):
        return x.to_float()
    if isinstance(x, ad.Tensor):
        x = x.data
    arr = np.asarray(x, dtype=np.float64)
    return arr


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# reference metrics


def sam(reference, fused) -> float:
    """Mean per-pixel spectral angle in degrees; zero vectors contribute 0."""
    r = _bands(reference)
    f = _bands(fused)
    _check_same_shape(r, f, "sam")
    if r.ndim != 3:
        raise ValueError(f"sam expects (bands, H, W) inputs, got {r.ndim}-D")
    dot = (r * f).sum(axis=0)
    nr2 = (r * r).sum(axis=0)
    nf2 = (f * f).sum(axis=0)
    valid = (nr2 > 0) & (nf2 > 0)
    angles = np.zeros_like(dot)
    # sqrt of the product keeps cos == 1 exact when fused == reference
    cos = np.clip(dot[valid] / np.sqrt(nr2[valid] * nf2[valid]), -1.0, 1.0)
    angles[valid] = np.arccos(cos)
    return float(np.degrees(angles.mean()))


def ergas(reference, fused, ratio: float = 0.25) -> float:
    """Relative global synthesis error, 100 * ratio * RMS of per-band RMSE/mean."""
    r = _bands(reference)
    f = _bands(fused)
    _check_same_shape(r, f, "ergas")
    if r.ndim != 3:
        raise ValueError(f"ergas expects (bands, H, W) inputs, got {r.ndim}-D")
    means = r.mean(axis=(1, 2))
    if np.any(means == 0):
        raise DegenerateInputError("ergas: a reference band has zero mean")
    rmse = np.sqrt(((f - r) ** 2).mean(axis=(1, 2)))
    return float(100.0 * ratio * np.sqrt(((rmse / means) ** 2).mean()))


def _ssim_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    t = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / SSIM_SIGMA) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(reference, fused, dynamic_range: float) -> float:
    """Mean structural similarity over 11x11 gaussian windows and bands."""
    r = _bands(reference)
    f = _bands(fused)
    _check_same_shape(r, f, "ssim")
    if r.ndim == 2:
        r, f = r[None], f[None]
    if r.shape[1] < SSIM_WINDOW or r.shape[2] < SSIM_WINDOW:
        raise ValueError(
            f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, "
            f"got {r.shape[1]}x{r.shape[2]}"
        )
    w = _ssim_window()
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    values = []
    for rb, fb in zip(r, f):
        rv = sliding_window_view(rb, (SSIM_WINDOW, SSIM_WINDOW))
        fv = sliding_window_view(fb, (SSIM_WINDOW, SSIM_WINDOW))
        mu_r = np.tensordot(rv, w, axes=([2, 3], [0, 1]))
        mu_f = np.tensordot(fv, w, axes=([2, 3], [0, 1]))
        rr = np.tensordot(rv * rv, w, axes=([2, 3], [0, 1])) - mu_r * mu_r
        ff = np.tensordot(fv * fv, w, axes=([2, 3], [0, 1])) - mu_f * mu_f
        rf = np.tensordot(rv * fv, w, axes=([2, 3], [0, 1])) - mu_r * mu_f
        num = (2 * mu_r * mu_f + c1) * (2 * rf + c2)
        den = (mu_r * mu_r + mu_f * mu_f + c1) * (rr + ff + c2)
        values.append((num / den).mean())
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# Q-index and the non-reference suite


def _block_stats(x: np.ndarray, y: np.ndarray, block: int):
    """Per-block means, centered variances and covariance; remainders dropped."""
    h, w = x.shape
    b = min(block, h, w)
    nh, nw = h // b, w // b
    xb = x[: nh * b, : nw * b].reshape(nh, b, nw, b)
    yb = y[: nh * b, : nw * b].reshape(nh, b, nw, b)
    mx = xb.mean(axis=(1, 3))
    my = yb.mean(axis=(1, 3))
    xc = xb - mx[:, None, :, None]
    yc = yb - my[:, None, :, None]
    vx = (xc * xc).mean(axis=(1, 3))
    vy = (yc * yc).mean(axis=(1, 3))
    cov = (xc * yc).mean(axis=(1, 3))
    return mx, my, vx, vy, cov


def _q_blocks(mx, my, vx, vy, cov):
    """Per-block Q with the classic degenerate-case split.

    Zero contrast denominator keeps only the luminance term, zero
    luminance denominator keeps only the correlation/contrast term,
    and blocks with both degenerate are masked out entirely.
    """
    lum_den = mx * mx + my * my
    con_den = vx + vy
    valid = ~((lum_den == 0) & (con_den == 0))
    q = np.zeros_like(mx)
    full = (lum_den != 0) & (con_den != 0)
    q[full] = 4.0 * cov[full] * mx[full] * my[full] / (lum_den[full] * con_den[full])
    lum_only = (con_den == 0) & (lum_den != 0)
    q[lum_only] = 2.0 * mx[lum_only] * my[lum_only] / lum_den[lum_only]
    cor_only = (lum_den == 0) & (con_den != 0)
    q[cor_only] = 2.0 * cov[cor_only] / con_den[cor_only]
    return q, valid


def q_index(x, y, block: int = Q_BLOCK) -> float:
    """Universal image quality index on non-overlapping blocks.

    Blocks larger than the image clamp to its size; zero-variance and
    zero-mean blocks are skipped.
    """
    xa = _bands(x)
    ya = _bands(y)
    _check_same_shape(xa, ya, "q_index")
    if xa.ndim != 2:
        raise ValueError(f"q_index expects single-band (H, W) inputs, got {xa.ndim}-D")
    q, valid = _q_blocks(*_block_stats(xa, ya, block))
    if not valid.any():
        raise DegenerateInputError("q_index: every block is degenerate")
    return float(q[valid].mean())


def d_lambda(fused, lrms, block: int = Q_BLOCK) -> float:
    """Spectral distortion: inter-band Q relations of fused vs LR MS."""
    f = _bands(fused)
    m = _bands(lrms)
    if f.ndim != 3 or m.ndim != 3 or f.shape[0] != m.shape[0]:
        raise ValueError(
            f"d_lambda expects matching band counts, got {f.shape} vs {m.shape}"
        )
    nb = f.shape[0]
    diffs = []
    for i in range(nb):
        for j in range(i + 1, nb):
            diffs.append(abs(q_index(f[i], f[j], block) - q_index(m[i], m[j], block)))
    # ordered pairs double the unordered set, so the p=1 mean is unchanged
    return float(np.mean(diffs))


def degrade_pan_float(pan: np.ndarray, spec: imaging.FilterSpec = imaging.WALD_FILTER,
                      factor: int = 4) -> np.ndarray:
    """Protocol-style degraded PAN kept in float (no re-quantization)."""
    blurred = imaging._filter_raster(pan[None].astype(np.float64), spec.kernel())[0]
    wr = imaging.bicubic_matrix(pan.shape[0], 1.0 / factor)
    wc = imaging.bicubic_matrix(pan.shape[1], 1.0 / factor)
    return wr @ blurred @ wc.T


def d_s(fused, lrms, pan, pan_lr=None, block: int = Q_BLOCK) -> float:
    """Spatial distortion: band-to-PAN Q at full scale vs degraded scale."""
    f = _bands(fused)
    m = _bands(lrms)
    p = _bands(pan)
    if p.ndim == 3:
        p = p[0]
    if f.ndim != 3 or m.ndim != 3 or f.shape[0] != m.shape[0]:
        raise ValueError(
            f"d_s expects matching band counts, got {f.shape} vs {m.shape}"
        )
    if pan_lr is None:
        pan_lr = degrade_pan_float(p)
    else:
        pan_lr = _bands(pan_lr)
        if pan_lr.ndim == 3:
            pan_lr = pan_lr[0]
    diffs = [
        abs(q_index(f[i], p, block) - q_index(m[i], pan_lr, block))
        for i in range(f.shape[0])
    ]
    return float(np.mean(diffs))


def qnr(pan, lrms, fused, pan_lr=None, block: int = Q_BLOCK) -> float:
    """Quality with no reference: (1 - d_lambda) * (1 - d_s), ideal 1."""
    dl = d_lambda(fused, lrms, block)
    ds = d_s(fused, lrms, pan, pan_lr, block)
    return float((1.0 - dl) * (1.0 - ds))


def non_reference_metrics(pan, lrms, fused, pan_lr=None,
                          block: int = Q_BLOCK) -> dict[str, float]:
    dl = d_lambda(fused, lrms, block)
    ds = d_s(fused, lrms, pan, pan_lr, block)
    return {"d_lambda": dl, "d_s": ds, "qnr": (1.0 - dl) * (1.0 - ds)}


# ---------------------------------------------------------------------------
# differentiable QNR (backs the non-reference loss term)


def _expand_blocks(t: ad.Tensor, block: int, out_h: int, out_w: int) -> ad.Tensor:
    nh, nw = t.shape[2], t.shape[3]
    rh = np.zeros((out_h, nh))
    rh[np.arange(out_h), np.arange(out_h) // block] = 1.0
    rw = np.zeros((out_w, nw))
    rw[np.arange(out_w), np.arange(out_w) // block] = 1.0
    return ad.separable_map(t, rh, rw)


def _q_tensor(x: ad.Tensor, y: ad.Tensor, block: int) -> tuple[ad.Tensor, np.ndarray]:
    """Per-block Q map (1,1,nh,nw) plus the valid-block mask (constant)."""
    h, w = x.shape[2], x.shape[3]
    b = min(block, h, w)
    hc, wc = (h // b) * b, (w // b) * b
    if hc != h or wc != w:
        x = ad.spatial_crop(x, hc, wc)
        y = ad.spatial_crop(y, hc, wc)
    mx = ad.block_mean(x, b, b)
    my = ad.block_mean(y, b, b)
    xc = ad.sub(x, _expand_blocks(mx, b, hc, wc))
    yc = ad.sub(y, _expand_blocks(my, b, hc, wc))
    vx = ad.block_mean(ad.mul(xc, xc), b, b)
    vy = ad.block_mean(ad.mul(yc, yc), b, b)
    cov = ad.block_mean(ad.mul(xc, yc), b, b)
    lum_den = ad.add(ad.mul(mx, mx), ad.mul(my, my))
    con_den = ad.add(vx, vy)
    # the case masks are data-dependent constants, as in the plain path
    lum_zero = lum_den.data == 0
    con_zero = con_den.data == 0
    full = (~lum_zero) & (~con_zero)
    lum_only = con_zero & ~lum_zero
    cor_only = lum_zero & ~con_zero
    valid = ~(lum_zero & con_zero)

    def masked(expr_num, expr_den, mask):
        m = mask.astype(expr_den.dtype)
        safe = ad.add(expr_den, ad.tensor(1.0 - m))
        return ad.mul(ad.div(expr_num, safe), ad.tensor(m))

    q = masked(ad.mul(ad.mul(cov, 4.0), ad.mul(mx, my)),
               ad.mul(lum_den, con_den), full)
    if lum_only.any():
        q = ad.add(q, masked(ad.mul(ad.mul(mx, my), 2.0), lum_den, lum_only))
    if cor_only.any():
        q = ad.add(q, masked(ad.mul(cov, 2.0), con_den, cor_only))
    return q, valid.astype(np.float64)


def _q_tensor_mean(x: ad.Tensor, y: ad.Tensor, block: int) -> ad.Tensor:
    q, mask = _q_tensor(x, y, block)
    count = mask.sum()
    if count == 0:
        raise DegenerateInputError("q_index: every block is degenerate")
    return ad.mul(ad.sum_all(q), 1.0 / float(count))


def qnr_tensor(pan: ad.Tensor, lrms: ad.Tensor, fused: ad.Tensor,
               block: int = Q_BLOCK) -> ad.Tensor:
    """QNR of a single (pan, lrms, fused) item with gradients w.r.t. fused.

    The LR-side Q values and the degraded PAN carry no gradients and are
    computed with the plain metric path.
    """
    if fused.shape[0] != 1:
        raise ValueError(f"qnr_tensor expects a single item, got batch {fused.shape[0]}")
    nb = fused.shape[1]
    m = lrms.data[0].astype(np.float64)
    p = pan.data[0, 0].astype(np.float64)
    pan_lr = degrade_pan_float(p)

    # spectral side: fused inter-band Q (tensor) vs LR MS inter-band Q (constant)
    diffs = []
    for i in range(nb):
        for j in range(i + 1, nb):
            qf = _q_tensor_mean(
                ad.channel_slice(fused, i, i + 1), ad.channel_slice(fused, j, j + 1), block
            )
            qm = q_index(m[i], m[j], block)
            diffs.append(ad.absolute(ad.sub(qf, qm)))
    dl = diffs[0]
    for d in diffs[1:]:
        dl = ad.add(dl, d)
    dl = ad.mul(dl, 1.0 / len(diffs))

    # spatial side: band-to-PAN Q (tensor) vs LR-band-to-degraded-PAN Q (constant)
    pan_const = ad.tensor(pan.data.astype(fused.dtype))
    diffs = []
    for i in range(nb):
        qf = _q_tensor_mean(ad.channel_slice(fused, i, i + 1), pan_const, block)
        qm = q_index(m[i], pan_lr, block)
        diffs.append(ad.absolute(ad.sub(qf, qm)))
    ds = diffs[0]
    for d in diffs[1:]:
        ds = ad.add(ds, d)
    ds = ad.mul(ds, 1.0 / len(diffs))

    return ad.mul(ad.sub(1.0, dl), ad.sub(1.0, ds))


# ---------------------------------------------------------------------------
# report assembly


@dataclass
class PairMetrics:
    """Per-pair metric values; reference metrics stay None in full-scale mode."""

    pair_id: str
    d_lambda: float
    d_s: float
    qnr: float
    sam_deg: float | None = None
    ergas: float | None = None
    ssim: float | None = None

    def as_dict(self) -> dict:
        out = {"id": self.pair_id, "d_lambda": self.d_lambda,
               "d_s": self.d_s, "qnr": self.qnr}
        for key in ("sam_deg", "ergas", "ssim"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out


@dataclass
class MetricReport:
    """Collection of per-pair metrics with mean +/- std aggregation."""

    pairs: list[PairMetrics] = field(default_factory=list)

    def summary(self) -> dict:
        out = {}
        for key in ("d_lambda", "d_s", "qnr", "sam_deg", "ergas", "ssim"):
            values = [getattr(p, key) for p in self.pairs if getattr(p, key) is not None]
            if values:
                arr = np.asarray(values, dtype=np.float64)
                out[key] = {"mean": float(arr.mean()), "std": float(arr.std())}
        return out

    def as_dict(self) -> dict:
        return {
            "ideal_values": dict(IDEAL_VALUES),
            "pairs": [p.as_dict() for p in self.pairs],
            "summary": self.summary(),
        }
