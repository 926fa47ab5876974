import numpy as np
import pytest

from pansharp import autodiff as ad
from pansharp import imaging
from pansharp.errors import FormatError, ValidationError
from pansharp.gradcheck import check_gradient
from pansharp.imaging import FilterSpec, RasterImage

from oracles import bicubic_1d_loop, bicubic_2d_loop, filter_replicate_loop


def make_raster(rng, bands=4, h=16, w=16, bit_depth=10):
    limit = (1 << bit_depth) - 1
    px = rng.integers(0, limit + 1, size=(bands, h, w)).astype(np.uint16)
    return RasterImage(px, bit_depth)


# ---------------------------------------------------------------------------
# RasterImage / quantize


def test_raster_validation(rng):
    with pytest.raises(ValidationError, match="band count"):
        RasterImage(np.zeros((2, 4, 4), dtype=np.uint16), 10)
    with pytest.raises(ValidationError, match="bit depth"):
        RasterImage(np.zeros((1, 4, 4), dtype=np.uint16), 8)
    bad = np.zeros((1, 4, 4), dtype=np.uint16)
    bad[0, 0, 0] = 1024
    with pytest.raises(ValidationError, match="exceeds 10-bit"):
        RasterImage(bad, 10)
    RasterImage(bad, 11)  # fits 11-bit


def test_quantize_rounds_half_away_and_clamps():
    arr = np.array([-3.0, -0.6, -0.5, 0.4, 0.5, 2.5, 1022.5, 5000.0])
    out = imaging.quantize(arr, 10)
    assert out.tolist() == [0, 0, 0, 0, 1, 3, 1023, 1023]


# ---------------------------------------------------------------------------
# bicubic


def test_bicubic_constant_preserved(rng):
    img = RasterImage(np.full((4, 8, 8), 700, dtype=np.uint16), 10)
    for scale in (4, 0.25, 2):
        out = imaging.bicubic_resize(img, scale)
        assert np.all(out.pixels == 700)


def test_bicubic_scale_one_identity(rng):
    img = make_raster(rng)
    out = imaging.bicubic_resize(img, 1.0)
    assert np.array_equal(out.pixels, img.pixels)
    t = ad.tensor(rng.normal(size=(1, 2, 6, 6)))
    assert np.array_equal(imaging.bicubic_resize(t, 1.0).data, t.data)


def test_bicubic_ramp_matches_scalar_kernel_oracle():
    ramp = np.add.outer(np.arange(8.0), np.arange(8.0))
    t = ad.tensor(ramp[None, None], dtype=np.float64)
    got = imaging.bicubic_resize(t, 0.25).data[0, 0]
    want = bicubic_2d_loop(ramp, 0.25)
    assert got.shape == (2, 2)
    assert np.max(np.abs(got - want)) < 1e-5


@pytest.mark.parametrize("scale", [4.0, 0.25, 0.5, 3.0])
def test_bicubic_matrix_rows_match_oracle(scale):
    n_in = 8
    mat = imaging.bicubic_matrix(n_in, scale)
    for probe in range(n_in):
        sig = np.zeros(n_in)
        sig[probe] = 1.0
        assert np.max(np.abs(mat @ sig - bicubic_1d_loop(sig, scale))) < 1e-12


def test_bicubic_rejects_bad_scale(rng):
    with pytest.raises(ValueError, match="positive"):
        imaging.bicubic_resize(make_raster(rng), 0)
    with pytest.raises(ValueError, match="positive"):
        imaging.bicubic_resize(make_raster(rng), -2)


def test_bicubic_tensor_gradient(rng):
    x = ad.tensor(rng.normal(size=(1, 2, 8, 8)), requires_grad=True, dtype=np.float64)
    err = check_gradient(lambda: ad.sq_mean(imaging.bicubic_resize(x, 0.25), 0.2), [x])
    assert err < 1e-4


# ---------------------------------------------------------------------------
# replicate / low / high pass


def test_replicate_pan(rng):
    pan = ad.tensor(rng.normal(size=(2, 1, 16, 16)))
    out = imaging.replicate_pan(pan)
    assert out.shape == (2, 4, 16, 16)
    for c in range(4):
        assert np.array_equal(out.data[:, c], pan.data[:, 0])
    assert np.array_equal(ad.channel_max(out).data, pan.data)
    with pytest.raises(ValueError, match="single-channel"):
        imaging.replicate_pan(out)


def test_low_pass_constant_and_impulse():
    const = ad.tensor(np.full((1, 1, 7, 7), 3.25))
    spec = FilterSpec("box", 3)
    assert np.allclose(imaging.low_pass(const, spec).data, 3.25)

    imp = np.zeros((1, 1, 7, 7))
    imp[0, 0, 3, 3] = 1.0
    out = imaging.low_pass(ad.tensor(imp, dtype=np.float64), spec).data[0, 0]
    assert out[3, 3] == pytest.approx(1 / 9)
    assert out[2, 2] == pytest.approx(1 / 9)
    assert out[1, 1] == 0.0

    hp = imaging.high_pass(ad.tensor(imp, dtype=np.float64), spec).data[0, 0]
    assert hp[3, 3] == pytest.approx(8 / 9)
    assert hp[3, 2] == pytest.approx(-1 / 9)


def test_low_pass_matches_loop_oracle(rng):
    x = rng.normal(size=(1, 1, 16, 16))
    for spec in (FilterSpec("box", 5), FilterSpec("gaussian", 7, 2.0)):
        got = imaging.low_pass(ad.tensor(x, dtype=np.float64), spec).data
        want = filter_replicate_loop(x, spec.kernel())
        assert np.max(np.abs(got - want)) < 1e-6


def test_high_plus_low_is_identity(rng):
    x = ad.tensor(rng.normal(size=(2, 4, 12, 12)), dtype=np.float64)
    spec = FilterSpec("box", 5)
    lp = imaging.low_pass(x, spec)
    hp = imaging.high_pass(x, spec)
    # hp is x - lp by definition; the round trip reconstructs x to the ulp
    assert np.array_equal(hp.data, x.data - lp.data)
    recon = ad.add(hp, lp).data
    assert np.max(np.abs(recon - x.data)) <= 4 * np.finfo(np.float64).eps * np.max(np.abs(x.data))
    assert np.allclose(imaging.high_pass(ad.tensor(np.full((1, 1, 8, 8), 5.0))).data, 0.0)


def test_filter_spec_validation():
    with pytest.raises(ValueError, match="odd"):
        FilterSpec("box", 4)
    with pytest.raises(ValueError, match="sigma"):
        FilterSpec("gaussian", 5)
    spec = FilterSpec("gaussian", 7, 2.0)
    assert spec.kernel().sum() == pytest.approx(1.0)


def test_image_operators_are_linear(rng):
    spec = FilterSpec("box", 5)
    x = ad.tensor(rng.normal(size=(1, 2, 8, 8)), dtype=np.float64)
    y = ad.tensor(rng.normal(size=(1, 2, 8, 8)), dtype=np.float64)
    a, b = 2.5, -1.25
    for op in (
        lambda t: imaging.low_pass(t, spec),
        lambda t: imaging.high_pass(t, spec),
        lambda t: imaging.bicubic_resize(t, 0.25),
        lambda t: imaging.bicubic_resize(t, 4),
    ):
        mixed = op(ad.add(ad.mul(x, a), ad.mul(y, b))).data
        split = a * op(x).data + b * op(y).data
        assert np.max(np.abs(mixed - split)) < 1e-5


# ---------------------------------------------------------------------------
# wald degradation


def test_wald_degrade_geometry(rng):
    pan = make_raster(rng, bands=1, h=256, w=256)
    ms = make_raster(rng, bands=4, h=64, w=64)
    pan_lr, ms_lr = imaging.wald_degrade(pan, ms)
    assert (pan_lr.height, pan_lr.width) == (64, 64)
    assert (ms_lr.height, ms_lr.width) == (16, 16)
    assert pan_lr.bands == 1 and ms_lr.bands == 4


def test_wald_degrade_constant_pair():
    pan = RasterImage(np.full((1, 64, 64), 512, dtype=np.uint16), 10)
    ms = RasterImage(np.full((4, 16, 16), 300, dtype=np.uint16), 10)
    pan_lr, ms_lr = imaging.wald_degrade(pan, ms)
    assert np.all(pan_lr.pixels == 512)
    assert np.all(ms_lr.pixels == 300)


def test_wald_degrade_matches_composition(rng):
    ramp = np.add.outer(np.arange(32.0), np.arange(32.0)) * 8.0
    img = RasterImage.from_float(ramp[None], 10)
    got = imaging.degrade_raster(img)
    spec = imaging.WALD_FILTER
    blurred = filter_replicate_loop(img.to_float()[None], spec.kernel())[0]
    resampled = np.stack([bicubic_2d_loop(b, 0.25) for b in blurred])
    assert np.array_equal(got.pixels, imaging.quantize(resampled, 10))


def test_wald_degrade_rejects_misaligned(rng):
    pan = make_raster(rng, bands=1, h=64, w=64)
    with pytest.raises(ValueError, match="not 4x"):
        imaging.wald_degrade(pan, make_raster(rng, bands=4, h=32, w=32))
    with pytest.raises(ValueError, match="divisible by 16"):
        imaging.wald_degrade(make_raster(rng, bands=1, h=68, w=68),
                             make_raster(rng, bands=4, h=17, w=17))


# ---------------------------------------------------------------------------
# MSR container + PNG export


def test_msr_round_trip(tmp_path, rng):
    img = make_raster(rng, bands=4, h=10, w=13, bit_depth=11)
    path = tmp_path / "scene.msr"
    imaging.save_raster(img, path)
    back = imaging.load_raster(path)
    assert back == img


def test_msr_bad_magic(tmp_path):
    path = tmp_path / "bad.msr"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(FormatError, match="bad magic"):
        imaging.load_raster(path)


def test_msr_truncated(tmp_path, rng):
    img = make_raster(rng, bands=1, h=8, w=8)
    path = tmp_path / "trunc.msr"
    imaging.save_raster(img, path)
    data = path.read_bytes()
    path.write_bytes(data[:-7])
    with pytest.raises(FormatError, match="payload"):
        imaging.load_raster(path)


def test_msr_out_of_range_value(tmp_path):
    import struct
    px = np.zeros((1, 2, 2), dtype=np.uint16)
    px[0, 0, 0] = 1024
    header = struct.pack("<4sIIHH", b"MSR1", 2, 2, 1, 10)
    path = tmp_path / "range.msr"
    path.write_bytes(header + px.astype("<u2").tobytes())
    with pytest.raises(ValidationError, match="exceeds 10-bit"):
        imaging.load_raster(path)


def test_png_export_constant_is_uniform(tmp_path):
    img = RasterImage(np.full((4, 8, 8), 321, dtype=np.uint16), 10)
    path = tmp_path / "flat.png"
    imaging.export_rgb_png(img, path)
    import matplotlib.image as mpimg
    arr = mpimg.imread(path)
    rgb = arr[..., :3]
    assert rgb.min() == rgb.max()
