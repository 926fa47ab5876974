"""Raster images at native bit depth and the fixed image-domain operators.

Covers the MSR container, bicubic resampling (cubic-convolution kernel,
a = -0.5, clamp-edge sampling), box/gaussian low-pass and the matching
high-pass, channel replication, and the Wald-protocol degradation that
turns a full-scale pair into a reduced pair with ground truth.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import autodiff as ad
from .errors import FormatError, ValidationError

MSR_MAGIC = b"MSR1"
_HEADER = struct.Struct("<4sIIHH")

VALID_BANDS = (1, 4)
VALID_BIT_DEPTHS = (10, 11)


def quantize(arr: np.ndarray, bit_depth: int) -> np.ndarray:
    """Round half away from zero, clamp to [0, 2^bit_depth - 1], cast u16."""
    limit = (1 << bit_depth) - 1
    rounded = np.sign(arr) * np.floor(np.abs(arr) + 0.5)
    return np.clip(rounded, 0, limit).astype(np.uint16)


class RasterImage:
    """Multi-band unsigned integer image at a declared sensor bit depth.

    Pixels are stored band-sequential as a (bands, height, width) uint16
    array; every value must be below 2^bit_depth.
    """

    __slots__ = ("pixels", "bit_depth")

    def __init__(self, pixels: np.ndarray, bit_depth: int):
        pixels = np.asarray(pixels)
        if pixels.ndim != 3:
            raise ValidationError(
                f"pixels must be (bands, height, width), got {pixels.ndim}-D"
            )
        if pixels.dtype != np.uint16:
            raise ValidationError(f"pixels must be uint16, got {pixels.dtype}")
        if pixels.shape[0] not in VALID_BANDS:
            raise ValidationError(
                f"band count must be one of {VALID_BANDS}, got {pixels.shape[0]}"
            )
        if bit_depth not in VALID_BIT_DEPTHS:
            raise ValidationError(
                f"bit depth must be one of {VALID_BIT_DEPTHS}, got {bit_depth}"
            )
        if pixels.size and int(pixels.max()) >= (1 << bit_depth):
            raise ValidationError(
                f"pixel value {int(pixels.max())} exceeds {bit_depth}-bit range"
            )
        self.pixels = pixels
        self.bit_depth = int(bit_depth)

    @property
    def bands(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    @property
    def max_value(self) -> int:
        return (1 << self.bit_depth) - 1

    @classmethod
    def from_float(cls, arr: np.ndarray, bit_depth: int) -> "RasterImage":
        return cls(quantize(np.asarray(arr, dtype=np.float64), bit_depth), bit_depth)

    def to_float(self) -> np.ndarray:
        return self.pixels.astype(np.float64)

    def to_tensor(self, dtype=np.float32) -> ad.Tensor:
        return ad.tensor(self.pixels[None].astype(dtype))

    def crop(self, x0: int, y0: int, width: int, height: int) -> "RasterImage":
        if x0 < 0 or y0 < 0 or x0 + width > self.width or y0 + height > self.height:
            raise ValueError(
                f"crop [{x0}:{x0+width}, {y0}:{y0+height}] exceeds "
                f"{self.width}x{self.height} raster"
            )
        return RasterImage(
            np.ascontiguousarray(self.pixels[:, y0:y0 + height, x0:x0 + width]),
            self.bit_depth,
        )

    def __eq__(self, other):
        return (
            isinstance(other, RasterImage)
            and self.bit_depth == other.bit_depth
            and np.array_equal(self.pixels, other.pixels)
        )


@dataclass(frozen=True)
class FilterSpec:
    """A normalized smoothing kernel: box or gaussian, odd size >= 3."""

    kind: str = "box"
    size: int = 5
    sigma: float | None = None

    def __post_init__(self):
        if self.kind not in ("box", "gaussian"):
            raise ValueError(f"filter kind must be box or gaussian, got {self.kind!r}")
        if self.size % 2 == 0 or self.size < 3:
            raise ValueError(f"filter size must be odd and >= 3, got {self.size}")
        if self.kind == "gaussian" and (self.sigma is None or self.sigma <= 0):
            raise ValueError("gaussian filter requires a positive sigma")

    def kernel(self) -> np.ndarray:
        if self.kind == "box":
            return np.full((self.size, self.size), 1.0 / self.size ** 2)
        half = self.size // 2
        t = np.arange(-half, half + 1, dtype=np.float64)
        g = np.exp(-0.5 * (t / self.sigma) ** 2)
        k = np.outer(g, g)
        return k / k.sum()


# default choices for the pipeline: 5x5 box for the detail split,
# gaussian 7 / sigma 2.0 for the ratio-4 protocol degradation
DETAIL_FILTER = FilterSpec("box", 5)
WALD_FILTER = FilterSpec("gaussian", 7, 2.0)


# ---------------------------------------------------------------------------
# bicubic resampling


def _keys_weight(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    w = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    w[near] = (a + 2.0) * t[near] ** 3 - (a + 3.0) * t[near] ** 2 + 1.0
    w[far] = a * t[far] ** 3 - 5.0 * a * t[far] ** 2 + 8.0 * a * t[far] - 4.0 * a
    return w


_matrix_cache: dict = {}


def bicubic_matrix(n_in: int, scale: float) -> np.ndarray:
    """Dense (n_out, n_in) resampling matrix; edge taps clamp to the border."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    key = (n_in, float(scale))
    cached = _matrix_cache.get(key)
    if cached is not None:
        return cached
    n_out = int(round(n_in * scale))
    if n_out < 1:
        raise ValueError(f"scale {scale} collapses a size-{n_in} axis to nothing")
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        src = (i + 0.5) / scale - 0.5
        base = int(np.floor(src))
        taps = np.arange(base - 1, base + 3)
        weights = _keys_weight(src - taps)
        for tap, w in zip(taps, weights):
            mat[i, min(max(tap, 0), n_in - 1)] += w
    _matrix_cache[key] = mat
    return mat


def bicubic_resize(img, scale: float):
    """Resample by `scale` in both axes; accepts RasterImage or Tensor.

    The tensor path is a fixed linear operator and differentiable; the
    raster path rounds back to the image's bit depth.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if isinstance(img, RasterImage):
        wr = bicubic_matrix(img.height, scale)
        wc = bicubic_matrix(img.width, scale)
        out = np.einsum("oh,bhw,pw->bop", wr, img.to_float(), wc, optimize=True)
        return RasterImage.from_float(out, img.bit_depth)
    if isinstance(img, ad.Tensor):
        wr = bicubic_matrix(img.shape[2], scale)
        wc = bicubic_matrix(img.shape[3], scale)
        return ad.separable_map(img, wr, wc)
    raise TypeError(f"bicubic_resize expects RasterImage or Tensor, got {type(img)}")


# ---------------------------------------------------------------------------
# fixed pipeline operators (tensor domain)


def replicate_pan(pan: ad.Tensor, bands: int = 4) -> ad.Tensor:
    """Replicate a single-band image along the channel axis."""
    if pan.shape[1] != 1:
        raise ValueError(
            f"replicate_pan expects a single-channel input, got {pan.shape[1]}"
        )
    return ad.repeat_channels(pan, bands)


def low_pass(img: ad.Tensor, spec: FilterSpec = DETAIL_FILTER) -> ad.Tensor:
    """Normalized smoothing with clamp-edge padding; linear and differentiable."""
    return ad.filter2d_replicate(img, spec.kernel())


def high_pass(img: ad.Tensor, spec: FilterSpec = DETAIL_FILTER) -> ad.Tensor:
    """img minus its low-pass content."""
    return ad.sub(img, low_pass(img, spec))


# ---------------------------------------------------------------------------
# Wald-protocol degradation (raster domain)


def _filter_raster(arr: np.ndarray, kern: np.ndarray) -> np.ndarray:
    """Depthwise replicate-padded correlation on a (bands, H, W) float array."""
    q = kern.shape[0] // 2
    xp = np.pad(arr[None], ((0, 0), (0, 0), (q, q), (q, q)), mode="edge")
    out = np.empty_like(arr[None])
    _kernels.filter2d_forward(
        np.ascontiguousarray(xp), np.ascontiguousarray(kern), out
    )
    return out[0]


def degrade_raster(img: RasterImage, spec: FilterSpec = WALD_FILTER,
                   factor: int = 4) -> RasterImage:
    """Blur then bicubic-downsample by `factor`, rounding to bit depth."""
    if img.height % factor or img.width % factor:
        raise ValueError(
            f"raster {img.width}x{img.height} not divisible by factor {factor}"
        )
    blurred = _filter_raster(img.to_float(), spec.kernel())
    wr = bicubic_matrix(img.height, 1.0 / factor)
    wc = bicubic_matrix(img.width, 1.0 / factor)
    out = np.einsum("oh,bhw,pw->bop", wr, blurred, wc, optimize=True)
    return RasterImage.from_float(out, img.bit_depth)


def wald_degrade(pan: RasterImage, ms: RasterImage,
                 spec: FilterSpec = WALD_FILTER) -> tuple[RasterImage, RasterImage]:
    """Reduce a full-scale (pan, ms) pair by 4x so the input ms becomes truth."""
    if pan.height % 16 or pan.width % 16:
        raise ValueError(
            f"pan {pan.width}x{pan.height} must be divisible by 16"
        )
    if ms.height % 4 or ms.width % 4:
        raise ValueError(f"ms {ms.width}x{ms.height} must be divisible by 4")
    if pan.height != 4 * ms.height or pan.width != 4 * ms.width:
        raise ValueError(
            f"pan {pan.width}x{pan.height} is not 4x the ms "
            f"{ms.width}x{ms.height}"
        )
    return degrade_raster(pan, spec), degrade_raster(ms, spec)


# ---------------------------------------------------------------------------
# MSR container


def save_raster(img: RasterImage, path) -> None:
    header = _HEADER.pack(MSR_MAGIC, img.width, img.height, img.bands, img.bit_depth)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.pixels.astype("<u2").tobytes())


def load_raster(path) -> RasterImage:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, width, height, bands, bit_depth = _HEADER.unpack_from(raw)
    if magic != MSR_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = width * height * bands * 2
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    pixels = np.frombuffer(payload, dtype="<u2").astype(np.uint16)
    pixels = pixels.reshape(bands, height, width)
    try:
        return RasterImage(pixels, bit_depth)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def export_rgb_png(img: RasterImage, path, stretch: tuple[float, float] = (2.0, 98.0)) -> None:
    """Write an 8-bit preview: MS bands (3,2,1) or replicated PAN, percentile-stretched."""
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.image as mpimg

    data = img.to_float()
    if img.bands == 4:
        rgb = data[[2, 1, 0]]
    else:
        rgb = np.repeat(data, 3, axis=0)
    out = np.empty_like(rgb)
    for i, band in enumerate(rgb):
        lo, hi = np.percentile(band, stretch)
        if hi > lo:
            out[i] = np.clip((band - lo) / (hi - lo), 0.0, 1.0)
        else:
            out[i] = 0.5
    arr = np.clip(np.floor(out * 255.0 + 0.5), 0, 255).astype(np.uint8)
    mpimg.imsave(path, arr.transpose(1, 2, 0))
