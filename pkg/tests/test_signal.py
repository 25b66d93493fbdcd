import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose
from PIL import Image
from scipy import ndimage

from salvit import signal
from salvit.errors import FormatError, NumericalConsistencyError, ParameterError, ShapeError


def _rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


finite_images = arrays(
    np.float64,
    st.tuples(st.integers(4, 24), st.integers(4, 24)),
    elements=st.floats(-10, 10, allow_nan=False, allow_infinity=False, width=64),
)


class TestLoadImage:
    def test_white_pixel_scales_to_one(self, tmp_path):
        f = tmp_path / "w.png"
        Image.fromarray(np.full((1, 1, 3), 255, dtype=np.uint8), "RGB").save(f)
        img = signal.load_image(f)
        assert img.shape == (1, 1, 3)
        assert_allclose(img, 1.0)

    def test_black_pixel_scales_to_zero(self, tmp_path):
        f = tmp_path / "b.png"
        Image.fromarray(np.zeros((1, 1, 3), dtype=np.uint8), "RGB").save(f)
        assert_allclose(signal.load_image(f), 0.0)

    def test_gray_value_128(self, tmp_path):
        # byte-value oracle: 128 / 255
        f = tmp_path / "g.png"
        Image.fromarray(np.full((2, 2), 128, dtype=np.uint8), "L").save(f)
        img = signal.load_image(f)
        assert img.shape == (2, 2, 3)
        assert_allclose(img, 128 / 255)

    def test_gray_replicated_to_three_channels(self, tmp_path):
        f = tmp_path / "g.png"
        Image.fromarray((_rng().random((5, 4)) * 255).astype(np.uint8), "L").save(f)
        img = signal.load_image(f)
        assert_allclose(img[:, :, 0], img[:, :, 1])
        assert_allclose(img[:, :, 0], img[:, :, 2])

    def test_missing_file_raises_io_error(self, tmp_path):
        with pytest.raises(OSError):
            signal.load_image(tmp_path / "nope.png")

    def test_sixteen_bit_png_rejected(self, tmp_path):
        f = tmp_path / "deep.png"
        Image.fromarray(np.full((2, 2), 1000, dtype=np.uint16)).save(f)
        with pytest.raises(FormatError):
            signal.load_image(f)

    def test_rgba_rejected(self, tmp_path):
        f = tmp_path / "a.png"
        Image.fromarray(np.zeros((2, 2, 4), dtype=np.uint8), "RGBA").save(f)
        with pytest.raises(FormatError):
            signal.load_image(f)

    def test_non_png_rejected(self, tmp_path):
        f = tmp_path / "img.bmp"
        Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8), "RGB").save(f, format="BMP")
        with pytest.raises(FormatError):
            signal.load_image(f)

    def test_garbage_bytes_rejected(self, tmp_path):
        f = tmp_path / "junk.png"
        f.write_bytes(b"not an image at all")
        with pytest.raises(FormatError):
            signal.load_image(f)

    def test_rgb8_roundtrip(self, tmp_path):
        img = _rng(3).random((6, 7, 3))
        f = tmp_path / "rt.png"
        signal.write_rgb8_png(f, img)
        back = signal.load_image(f)
        assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12

    def test_gray16_roundtrip_exact(self, tmp_path):
        values = _rng(4).integers(0, 65536, size=(9, 5)).astype(np.uint16)
        f = tmp_path / "deep.png"
        signal.write_gray16_png(f, values)
        assert np.array_equal(signal.read_gray16_png(f), values)


class TestToLuminance:
    def test_white_is_one(self):
        assert_allclose(signal.to_luminance(np.ones((2, 2, 3))), 1.0)

    def test_pure_red_weight(self):
        img = np.zeros((1, 1, 3))
        img[0, 0, 0] = 1.0
        assert_allclose(signal.to_luminance(img), 0.299)

    def test_matches_scalar_loop_oracle(self):
        img = _rng(1).random((4, 4, 3))
        lum = signal.to_luminance(img)
        for i in range(4):
            for j in range(4):
                r, g, b = img[i, j]
                assert lum[i, j] == pytest.approx(0.299 * r + 0.587 * g + 0.114 * b, abs=1e-15)

    def test_rejects_two_channels(self):
        with pytest.raises(ShapeError):
            signal.to_luminance(np.zeros((3, 3, 2)))


class TestFft:
    def test_constant_image_is_dc_only(self):
        img = np.full((8, 8), 0.5)
        spec = signal.fft2(img)
        center = (4, 4)
        assert spec[center] == pytest.approx(0.5 * 64)
        off = np.abs(spec).copy()
        off[center] = 0
        assert off.max() < 1e-12

    def test_impulse_has_flat_magnitude(self):
        img = np.zeros((8, 8))
        img[3, 5] = 1.0
        mag = np.abs(signal.fft2(img))
        assert_allclose(mag, 1.0, atol=1e-12)

    def test_round_trip_identity(self):
        img = _rng(2).random((16, 16))
        assert np.max(np.abs(signal.ifft2_real(signal.fft2(img)) - img)) < 1e-10

    @settings(max_examples=25, deadline=None)
    @given(finite_images)
    def test_round_trip_identity_property(self, img):
        back = signal.ifft2_real(signal.fft2(img))
        assert np.max(np.abs(back - img)) < 1e-10

    def test_round_trip_large(self):
        img = _rng(5).random((256, 256))
        assert np.max(np.abs(signal.ifft2_real(signal.fft2(img)) - img)) < 1e-10

    def test_non_symmetric_filter_raises(self):
        spec = signal.fft2(_rng(6).random((8, 8)))
        spec[2, 3] *= 2.0  # breaks conjugate symmetry
        with pytest.raises(NumericalConsistencyError):
            signal.ifft2_real(spec)

    def test_residue_floor_suppresses_rounding_noise(self):
        # a filter that zeroes everything: residue and output are both ~0
        spec = signal.fft2(np.full((8, 8), 0.7)) * 0.0
        out = signal.ifft2_real(spec, residue_scale=1.0)
        assert_allclose(out, 0.0, atol=1e-15)


class TestGaussianBlur:
    def test_constant_maps_to_itself(self):
        img = np.full((20, 20), 0.7)
        assert_allclose(signal.gaussian_blur(img, 3.0), 0.7, atol=1e-12)

    def test_impulse_matches_sampled_gaussian(self):
        # spatial-convolution oracle: blur of a central impulse is the
        # sampled kernel, away from boundary effects
        img = np.zeros((64, 64))
        img[32, 32] = 1.0
        out = signal.gaussian_blur(img, 2.0)
        yy, xx = np.mgrid[-16:17, -16:17].astype(np.float64)
        kernel = np.exp(-(xx**2 + yy**2) / 8.0) / (8.0 * np.pi)
        window = out[16:49, 16:49]
        assert np.max(np.abs(window - kernel)) < 1e-9

    def test_impulse_sigma_one_band_limit_gap(self):
        # The transfer exp(-2 pi^2 sigma^2 r^2) is cut off at Nyquist, so
        # for sigma = 1 the response differs from the sampled spatial
        # Gaussian by the out-of-band mass, about 5e-4 at the peak.  The
        # gap shrinks below 1e-6 for sigma above roughly 1.7.
        img = np.zeros((64, 64))
        img[32, 32] = 1.0
        out = signal.gaussian_blur(img, 1.0)
        yy, xx = np.mgrid[-8:9, -8:9].astype(np.float64)
        kernel = np.exp(-(xx**2 + yy**2) / 2.0) / (2.0 * np.pi)
        gap = np.max(np.abs(out[24:41, 24:41] - kernel))
        assert 1e-5 < gap < 1e-3

    def test_matches_scipy_spatial_oracle(self):
        img = _rng(7).random((32, 32))
        ours = signal.gaussian_blur(img, 2.0)
        ref = ndimage.gaussian_filter(img, 2.0, mode="reflect", truncate=8.0)
        assert np.max(np.abs(ours - ref)) < 1e-9

    def test_large_sigma_approaches_mean(self):
        img = _rng(8).random((24, 24))
        out = signal.gaussian_blur(img, 200.0)
        assert np.max(np.abs(out - img.mean())) < 0.02

    def test_linearity(self):
        a, b = 1.7, -0.4
        x = _rng(9).random((20, 20))
        y = _rng(10).random((20, 20))
        lhs = signal.gaussian_blur(a * x + b * y, 1.5)
        rhs = a * signal.gaussian_blur(x, 1.5) + b * signal.gaussian_blur(y, 1.5)
        assert np.max(np.abs(lhs - rhs)) < 1e-10

    @settings(max_examples=20, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(16, 32), st.integers(16, 32)),
                  elements=st.floats(0, 1, allow_nan=False, width=64)))
    def test_preserves_mean_property(self, img):
        out = signal.gaussian_blur(img, 2.5)
        assert out.mean() == pytest.approx(img.mean(), abs=1e-10)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ParameterError):
            signal.gaussian_blur(np.zeros((16, 16)), 0.0)
        with pytest.raises(ParameterError):
            signal.gaussian_blur(np.zeros((16, 16)), -1.0)

    def test_nan_rejected(self):
        img = np.zeros((16, 16))
        img[3, 3] = np.nan
        with pytest.raises(ParameterError):
            signal.gaussian_blur(img, 1.0)


class TestPolarGrid:
    def test_center_is_zero(self):
        g = signal.polar_grid(16, 16)
        assert g.r[8, 8] == 0.0

    def test_one_bin_right_of_center(self):
        g = signal.polar_grid(16, 16)
        assert g.r[8, 9] == pytest.approx(1 / 16)
        assert g.phi[8, 9] == pytest.approx(0.0)

    def test_matches_double_loop_oracle(self):
        g = signal.polar_grid(8, 8)
        fy = np.fft.fftshift(np.fft.fftfreq(8))
        fx = np.fft.fftshift(np.fft.fftfreq(8))
        for i in range(8):
            for j in range(8):
                assert g.r[i, j] == pytest.approx(np.hypot(fx[j], fy[i]), abs=1e-15)
                assert g.phi[i, j] == pytest.approx(np.arctan2(fy[i], fx[j]), abs=1e-15)

    def test_r_bounded_by_nyquist_diagonal(self):
        g = signal.polar_grid(11, 17)
        assert g.r.min() >= 0
        assert g.r.max() <= np.sqrt(2) * 0.5 + 1e-15

    def test_r_symmetric_phi_antisymmetric(self):
        # odd sizes pair every nonzero bin with a distinct negated bin;
        # on even sizes the Nyquist row/col is its own negation mod N
        g = signal.polar_grid(13, 13)
        r_flip = np.flip(g.r)
        assert_allclose(g.r, r_flip, atol=1e-15)
        phi_flip = np.flip(g.phi)
        nonzero = g.r > 0
        diff = np.abs(np.abs(g.phi - phi_flip)[nonzero] - np.pi)
        assert diff.max() < 1e-12

    def test_tiny_grid_rejected(self):
        with pytest.raises(ParameterError):
            signal.polar_grid(1, 8)


class TestPadding:
    def test_reflect_pad_roundtrip(self):
        img = _rng(11).random((16, 16))
        assert np.array_equal(signal.crop_pad(signal.reflect_pad(img)), img)

    def test_min_size_enforced(self):
        with pytest.raises(ShapeError):
            signal.reflect_pad(np.zeros((15, 20)))

    def test_sixteen_square_is_processable(self):
        out = signal.reflect_pad(np.zeros((16, 16)))
        assert out.shape == (48, 48)
