"""Image I/O and frequency-domain primitives.

Conventions used throughout the package:

* images are float64 arrays, luminance ``(H, W)`` or RGB ``(H, W, 3)``,
  with pixel values nominally in [0, 1];
* spectra are complex128 arrays with the zero-frequency bin shifted to the
  array center;
* frequency coordinates are in cycles/pixel, so the Nyquist rate is 0.5
  regardless of image size;
* every FFT-based filter reflect-pads the image by ``PAD`` pixels per side
  and crops after the inverse transform, to keep periodic wraparound from
  leaking across image borders.
"""

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import FormatError, NumericalConsistencyError, ParameterError, ShapeError

# Border padding (pixels per side) applied before any FFT filtering.
PAD = 16

# Smallest image the saliency chain accepts; PAD-sized symmetric padding
# needs at least PAD rows/cols to reflect.
MIN_IMAGE_SIDE = 16


def validate_luminance(img: np.ndarray, min_side: int = 2) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"expected a 2D luminance array, got shape {img.shape}")
    if img.shape[0] < min_side or img.shape[1] < min_side:
        raise ShapeError(f"image {img.shape} smaller than {min_side}x{min_side}")
    if not np.all(np.isfinite(img)):
        raise ParameterError("luminance image contains NaN or Inf")
    return img


def validate_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) RGB array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ParameterError("RGB image contains NaN or Inf")
    return img


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG as an (H, W, 3) float64 array scaled to [0, 1].

    Grayscale files are replicated across the three channels.  Anything
    other than an 8-bit gray or RGB PNG raises FormatError.
    """
    with open(path, "rb") as fh:
        try:
            pil = Image.open(fh)
            pil.load()
        except Exception as exc:
            raise FormatError(f"{path}: not a readable image ({exc})") from exc
    if pil.format != "PNG":
        raise FormatError(f"{path}: unsupported format {pil.format!r}, only PNG is supported")
    if pil.mode not in ("L", "RGB"):
        raise FormatError(
            f"{path}: unsupported PNG mode {pil.mode!r} (8-bit gray or RGB required)"
        )
    arr = np.asarray(pil, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return arr


def write_rgb8_png(path, img: np.ndarray) -> None:
    """Write an [0, 1] RGB array as an 8-bit PNG."""
    img = validate_rgb(img)
    u8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def write_gray16_png(path, values: np.ndarray) -> None:
    """Write a uint16 array as a 16-bit grayscale PNG."""
    values = np.asarray(values)
    if values.dtype != np.uint16 or values.ndim != 2:
        raise ParameterError("write_gray16_png expects a 2D uint16 array")
    Image.fromarray(values).save(path, format="PNG")


def read_gray16_png(path) -> np.ndarray:
    pil = Image.open(path)
    arr = np.asarray(pil)
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected a single-channel PNG")
    return arr.astype(np.uint16)


def to_luminance(img: np.ndarray) -> np.ndarray:
    """Rec. 601 luma: 0.299 R + 0.587 G + 0.114 B."""
    img = validate_rgb(img)
    return img[:, :, 0] * 0.299 + img[:, :, 1] * 0.587 + img[:, :, 2] * 0.114


def fft2(img: np.ndarray) -> np.ndarray:
    """2D FFT with the zero-frequency bin shifted to the array center."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"fft2 expects a 2D array, got shape {img.shape}")
    return np.fft.fftshift(np.fft.fft2(img))


def ifft2_real(spec: np.ndarray, residue_scale: float | None = None) -> np.ndarray:
    """Inverse of :func:`fft2`, returning the real part.

    The spectrum must come from a real image, possibly multiplied by
    conjugate-symmetric transfer functions, so the inverse is real up to
    rounding.  The discarded imaginary residue is asserted to be at most
    1e-8 times the max-abs of the real part; a breach signals a
    non-symmetric filter bug.  ``residue_scale``, when given, acts as a
    floor on that reference scale so that filters with (near-)zero output
    on a large input are not flagged for rounding noise.
    """
    spec = np.asarray(spec)
    if spec.ndim != 2:
        raise ShapeError(f"ifft2_real expects a 2D spectrum, got shape {spec.shape}")
    out = np.fft.ifft2(np.fft.ifftshift(spec))
    real = out.real
    scale = float(np.max(np.abs(real)))
    if residue_scale is not None:
        scale = max(scale, float(residue_scale))
    residue = float(np.max(np.abs(out.imag)))
    if residue > 1e-8 * scale:
        raise NumericalConsistencyError(
            f"imaginary residue {residue:.3e} exceeds 1e-8 * {scale:.3e}; "
            "the applied filter is not conjugate-symmetric"
        )
    return real


def reflect_pad(img: np.ndarray, pad: int = PAD) -> np.ndarray:
    """Pad by mirroring about the border (edge sample included)."""
    if img.shape[0] < pad or img.shape[1] < pad:
        raise ShapeError(f"image {img.shape} too small for {pad}-pixel reflective padding")
    return np.pad(img, pad, mode="symmetric")


def crop_pad(img: np.ndarray, pad: int = PAD) -> np.ndarray:
    return img[pad:-pad, pad:-pad]


@dataclass(frozen=True)
class PolarFreqGrid:
    """Centered polar frequency coordinates in cycles/pixel.

    ``r`` is the radial magnitude (0 at the center bin, at most sqrt(2)/2);
    ``phi`` the angle from atan2 in (-pi, pi].
    """

    r: np.ndarray
    phi: np.ndarray

    @property
    def shape(self):
        return self.r.shape


def polar_grid(height: int, width: int) -> PolarFreqGrid:
    """Polar coordinates of the centered DFT frequency grid."""
    if height < 2 or width < 2:
        raise ParameterError(f"polar_grid needs height, width >= 2, got {height}x{width}")
    fy = np.fft.fftshift(np.fft.fftfreq(height))[:, None]
    fx = np.fft.fftshift(np.fft.fftfreq(width))[None, :]
    fy = np.broadcast_to(fy, (height, width))
    fx = np.broadcast_to(fx, (height, width))
    r = np.hypot(fx, fy)
    phi = np.arctan2(fy, fx)
    return PolarFreqGrid(r=r, phi=phi)


def gaussian_transfer(grid: PolarFreqGrid, sigma: float) -> np.ndarray:
    """Frequency response exp(-2 pi^2 sigma^2 r^2) of the unit-gain Gaussian."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return np.exp(-2.0 * np.pi**2 * sigma**2 * grid.r**2)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur with unit DC gain, computed in the frequency domain.

    Equivalent to convolving with the spatial kernel
    ``(1 / (2 pi sigma^2)) exp(-(x^2 + y^2) / (2 sigma^2))``; constant
    images map to themselves exactly.
    """
    img = validate_luminance(img)
    padded = reflect_pad(img)
    tf = gaussian_transfer(polar_grid(*padded.shape), sigma)
    blurred = ifft2_real(fft2(padded) * tf)
    return crop_pad(blurred)
