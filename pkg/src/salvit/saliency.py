"""Curvature-based saliency maps.

The operator scores each pixel by how two-dimensionally structured its
neighborhood is: corners, junctions, and curved contours score high, while
flat regions and straight edges score (near) zero.  The chain is

1. ratio-of-Gaussians contrast: a fine-scale blur divided by a coarse-scale
   blur plus a stabilizer, removing global luminance scale;
2. a polar-separable frequency-domain filter bank: an isotropic radial
   bandpass plus a quadrature pair of orientation-selective filters;
3. curvature ``D = laplace^2 - (C^2 + S^2)``, whose absolute value is the
   saliency score.

For a single plane wave the orientation pair captures the full bandpass
energy, so D vanishes identically; this suppression of straight-edge
signals is the property the tests pin down.  A spatial-domain detector
based on the Hessian determinant is provided as an independent
cross-check; it shares no code with the frequency path.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import signal
from .errors import DivisionDegeneracyError, ParameterError, ShapeError

# i**n for integer n, computed by lookup: complex exponentiation leaves an
# eps-sized imaginary residue on i**2 that the exactness tests would see.
_I_POWER = (1.0 + 0.0j, 1.0j, -1.0 + 0.0j, -1.0j)


@dataclass(frozen=True)
class RogParams:
    """Ratio-of-Gaussians contrast parameters.

    ``sigma_center`` and ``sigma_surround`` are the fine and coarse blur
    widths in pixels; ``tau`` stabilizes the division.  With ``tau = 0``
    the output is invariant to rescaling the input luminance.
    """

    sigma_center: float = 1.0
    sigma_surround: float = 2.0
    tau: float = 0.01

    def __post_init__(self):
        if not (0 < self.sigma_center < self.sigma_surround):
            raise ParameterError(
                f"need 0 < sigma_center < sigma_surround, got "
                f"{self.sigma_center}, {self.sigma_surround}"
            )
        if self.tau < 0:
            raise ParameterError(f"tau must be >= 0, got {self.tau}")


@dataclass(frozen=True)
class CurvatureParams:
    """Filter bank parameters: angular oscillation count and radial bandwidth.

    ``sigma_r`` is chosen so the radial envelope g(r) peaks at sigma_r/sqrt(pi)
    cycles/pixel; the default puts the peak at 0.125.
    """

    n: int = 2
    sigma_r: float = 0.125 * float(np.sqrt(np.pi))

    def __post_init__(self):
        if self.n < 1 or int(self.n) != self.n:
            raise ParameterError(f"n must be a positive integer, got {self.n}")
        if self.sigma_r <= 0:
            raise ParameterError(f"sigma_r must be positive, got {self.sigma_r}")


@dataclass(frozen=True)
class FilterBank:
    """Centered frequency-domain transfer functions of the curvature bank.

    ``laplace_tf`` is the real isotropic envelope g(r); ``cos_tf`` and
    ``sin_tf`` are i^n cos(n phi) g(r) and i^n sin(n phi) g(r).  All three
    vanish at the zero-frequency bin, so responses have no DC component.
    """

    laplace_tf: np.ndarray
    cos_tf: np.ndarray
    sin_tf: np.ndarray

    @property
    def shape(self):
        return self.laplace_tf.shape


@dataclass(frozen=True)
class SaliencyMap:
    """Nonnegative per-pixel saliency with the parameters that produced it."""

    values: np.ndarray
    rog: RogParams
    curvature: CurvatureParams


def rog_contrast(img: np.ndarray, params: RogParams = RogParams()) -> np.ndarray:
    """Fine-scale blur divided by coarse-scale blur plus tau.

    Contrast rather than luminance: multiplying the input by a positive
    constant leaves the output unchanged when tau is 0 (up to rounding),
    and nearly so for small tau.
    """
    img = signal.validate_luminance(img, min_side=signal.MIN_IMAGE_SIDE)
    center = signal.gaussian_blur(img, params.sigma_center)
    surround = signal.gaussian_blur(img, params.sigma_surround)
    denom = surround + params.tau
    if params.tau == 0 and np.any(denom == 0):
        raise DivisionDegeneracyError(
            "tau = 0 and the surround blur has zero values; the contrast "
            "ratio is undefined for this image"
        )
    return center / denom


def build_filter_bank(grid: signal.PolarFreqGrid, params: CurvatureParams) -> FilterBank:
    """Construct the three transfer functions on a polar frequency grid.

    The radial envelope is g(r) = (2 pi r)^2 exp(-pi r^2 / sigma_r^2); the
    angular factors are cos(n phi) and sin(n phi) with an i^n prefactor
    that keeps spatial responses real.  g(0) = 0 exactly, so the undefined
    angle at the origin is harmless.
    """
    r, phi = grid.r, grid.phi
    g = (2.0 * np.pi * r) ** 2 * np.exp(-np.pi * r**2 / params.sigma_r**2)
    i_n = _I_POWER[params.n % 4]
    cos_tf = i_n * np.cos(params.n * phi) * g
    sin_tf = i_n * np.sin(params.n * phi) * g
    # On even-sized grids the Nyquist row/column bins are their own
    # conjugate partners, so the odd angular factor must vanish there or
    # real inputs would produce complex responses (same convention as
    # analytic-signal construction).  The even factors already satisfy
    # the symmetry.
    h, w = r.shape
    if h % 2 == 0:
        sin_tf[0, :] = 0.0
    if w % 2 == 0:
        sin_tf[:, 0] = 0.0
    return FilterBank(laplace_tf=g, cos_tf=cos_tf, sin_tf=sin_tf)


@lru_cache(maxsize=32)
def _cached_bank(height: int, width: int, n: int, sigma_r: float) -> FilterBank:
    grid = signal.polar_grid(height, width)
    return build_filter_bank(grid, CurvatureParams(n=n, sigma_r=sigma_r))


def filter_bank_for_shape(shape, params: CurvatureParams) -> FilterBank:
    """Bank for a given (height, width), cached: banks are reused across images."""
    h, w = int(shape[0]), int(shape[1])
    return _cached_bank(h, w, params.n, params.sigma_r)


def apply_filter_bank(contrast: np.ndarray, fb: FilterBank):
    """Filter an image with the bank; returns (laplace, c_resp, s_resp).

    Each response is the real part of the inverse transform of the
    spectrum times the transfer function.  The caller is responsible for
    any boundary padding; this function works on the array as given.
    """
    contrast = signal.validate_luminance(contrast)
    if contrast.shape != fb.shape:
        raise ParameterError(
            f"image shape {contrast.shape} does not match filter bank {fb.shape}"
        )
    spectrum = signal.fft2(contrast)
    # Residue floor: an input-magnitude scale for near-zero responses,
    # e.g. a constant image through these zero-DC filters.
    floor = float(np.max(np.abs(spectrum))) / spectrum.size
    responses = tuple(
        signal.ifft2_real(spectrum * tf, residue_scale=floor)
        for tf in (fb.laplace_tf, fb.cos_tf, fb.sin_tf)
    )
    return responses


def eccentricity(c_resp: np.ndarray, s_resp: np.ndarray) -> np.ndarray:
    """Elementwise norm of the orientation-pair responses."""
    if c_resp.shape != s_resp.shape:
        raise ShapeError(f"response shapes differ: {c_resp.shape} vs {s_resp.shape}")
    return np.hypot(c_resp, s_resp)


def curvature(laplace: np.ndarray, ecc: np.ndarray) -> np.ndarray:
    """D = laplace^2 - ecc^2; zero for locally one-dimensional signals."""
    if laplace.shape != ecc.shape:
        raise ShapeError(f"response shapes differ: {laplace.shape} vs {ecc.shape}")
    return laplace**2 - ecc**2


def curvature_abs(
    d: np.ndarray,
    rog: RogParams = RogParams(),
    curvature_params: CurvatureParams = CurvatureParams(),
) -> SaliencyMap:
    return SaliencyMap(values=np.abs(d), rog=rog, curvature=curvature_params)


def saliency_map(
    img: np.ndarray,
    rog: RogParams = RogParams(),
    curvature_params: CurvatureParams = CurvatureParams(),
) -> SaliencyMap:
    """Full chain: contrast, filter bank, eccentricity, absolute curvature.

    The contrast map is reflect-padded before the bank is applied and the
    responses are cropped back, so the output has the input's shape.
    """
    contrast = rog_contrast(img, rog)
    padded = signal.reflect_pad(contrast)
    fb = filter_bank_for_shape(padded.shape, curvature_params)
    laplace, c_resp, s_resp = apply_filter_bank(padded, fb)
    laplace = signal.crop_pad(laplace)
    c_resp = signal.crop_pad(c_resp)
    s_resp = signal.crop_pad(s_resp)
    d = curvature(laplace, eccentricity(c_resp, s_resp))
    return curvature_abs(d, rog, curvature_params)


def hessian_curvature_oracle(img: np.ndarray, pre_sigma: float = 2.0) -> np.ndarray:
    """Spatial-domain i2D detector: det of the Hessian, l_xx l_yy - l_xy^2.

    Central finite differences on an optionally pre-smoothed image.  Kept
    free of the frequency-domain filter code on purpose: it cross-checks
    the saliency operator's patch rankings in the tests.
    """
    img = signal.validate_luminance(img)
    if pre_sigma < 0:
        raise ParameterError(f"pre_sigma must be >= 0, got {pre_sigma}")
    smooth = signal.gaussian_blur(img, pre_sigma) if pre_sigma > 0 else img
    p = np.pad(smooth, 1, mode="symmetric")
    lxx = p[1:-1, 2:] - 2.0 * p[1:-1, 1:-1] + p[1:-1, :-2]
    lyy = p[2:, 1:-1] - 2.0 * p[1:-1, 1:-1] + p[:-2, 1:-1]
    lxy = (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2]) / 4.0
    return lxx * lyy - lxy**2
