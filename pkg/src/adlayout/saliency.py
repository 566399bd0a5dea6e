"""Saliency maps for background images.

The built-in backend is the spectral-residual method of Hou & Zhang; maps
shipped with a dataset can be loaded instead and take precedence.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import EmptyImage, EmptyRegion, UnreadableImage, UnsupportedFormat
from .layout import Rect

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
DEFAULT_THRESHOLD = Fraction(1, 2)
WORKING_WIDTH = 64
BLUR_SIGMA = 2.5
BLUR_RADIUS = 4
AMPLITUDE_FLOOR = 1e-3

PathLike = Union[str, Path]


def _as_grid(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D grid, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Luminance in [0, 1], indexed ``values[y, x]``."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.clip(_as_grid(self.values, "GrayImage"), 0.0, 1.0)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_pil(cls, image: Image.Image) -> "GrayImage":
        return cls(luminance(image))


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    values: np.ndarray

    def __post_init__(self):
        arr = _as_grid(self.values, "SaliencyMap")
        if not np.all(np.isfinite(arr)):
            raise ValueError("saliency map contains NaN or Inf")
        arr = np.clip(arr, 0.0, 1.0)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"BinaryMask must be 2-D, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


def luminance(image: Image.Image) -> np.ndarray:
    if image.mode == "L":
        return np.asarray(image, dtype=np.float64) / 255.0
    rgb = np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0
    r, g, b = LUMA_WEIGHTS
    return rgb[..., 0] * r + rgb[..., 1] * g + rgb[..., 2] * b


# -- resampling --------------------------------------------------------------


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages input cells overlapping output cell i (box filter)."""
    scale = n_in / n_out
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(np.floor(lo)), min(int(np.ceil(hi)), n_in)
        for j in range(j0, j1):
            m[i, j] = min(hi, j + 1) - max(lo, j)
    return m / m.sum(axis=1, keepdims=True)


def resize_area(grid: np.ndarray, width: int, height: int) -> np.ndarray:
    return _area_matrix(grid.shape[0], height) @ grid @ _area_matrix(grid.shape[1], width).T


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    # pixel centres aligned (half-pixel convention), edges clamped
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = (i + 0.5) * n_in / n_out - 0.5
        src = min(max(src, 0.0), n_in - 1)
        j0 = int(np.floor(src))
        j1 = min(j0 + 1, n_in - 1)
        t = src - j0
        m[i, j0] += 1.0 - t
        m[i, j1] += t
    return m


def resize_bilinear(grid: np.ndarray, width: int, height: int) -> np.ndarray:
    return _bilinear_matrix(grid.shape[0], height) @ grid @ _bilinear_matrix(grid.shape[1], width).T


# -- spectral residual -------------------------------------------------------


def _box3_wrap(a: np.ndarray) -> np.ndarray:
    acc = np.zeros_like(a)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            acc += np.roll(np.roll(a, dy, axis=0), dx, axis=1)
    return acc / 9.0


def gaussian_kernel(sigma: float = BLUR_SIGMA, radius: int = BLUR_RADIUS) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(a: np.ndarray, sigma: float = BLUR_SIGMA, radius: int = BLUR_RADIUS) -> np.ndarray:
    k = gaussian_kernel(sigma, radius)
    padded = np.pad(a, ((radius, radius), (0, 0)), mode="reflect" if a.shape[0] > radius else "edge")
    a = sum(k[i] * padded[i:i + a.shape[0], :] for i in range(len(k)))
    padded = np.pad(a, ((0, 0), (radius, radius)), mode="reflect" if a.shape[1] > radius else "edge")
    return sum(k[i] * padded[:, i:i + a.shape[1]] for i in range(len(k)))


def _normalize(a: np.ndarray) -> np.ndarray:
    lo, hi = float(a.min()), float(a.max())
    if not np.isfinite(hi - lo) or hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def spectral_residual(image: GrayImage, working_width: int = WORKING_WIDTH) -> SaliencyMap:
    if image.width == 0 or image.height == 0:
        raise EmptyImage("cannot compute saliency of an empty image")
    work_h = max(1, int(round(image.height * working_width / image.width)))
    small = resize_area(image.values, working_width, work_h)
    if np.ptp(small) <= 1e-12:
        # constant input carries no spectral anomaly
        return SaliencyMap(np.zeros((image.height, image.width)))
    spectrum = np.fft.fft2(small)
    amplitude = np.abs(spectrum)
    ac = amplitude.copy()
    ac[0, 0] = 0.0
    # exact spectral zeros (pixel-aligned shapes) would send log() to -inf
    floor = AMPLITUDE_FLOOR * ac.max()
    log_amp = np.log(np.maximum(amplitude, floor))
    residual = log_amp - _box3_wrap(log_amp)
    recon_spectrum = np.exp(residual + 1j * np.angle(spectrum))
    # the DC term only adds a uniform offset, which would make the map
    # depend on the sign of the contrast
    recon_spectrum[0, 0] = 0.0
    recon = np.fft.ifft2(recon_spectrum)
    sal = gaussian_blur(np.abs(recon) ** 2)
    sal = _normalize(sal)
    full = resize_bilinear(sal, image.width, image.height)
    return SaliencyMap(_normalize(full) if full.max() > 0 else full)


# -- file io -----------------------------------------------------------------

_ACCEPTED_MAP_FORMATS = {"PNG", "PPM"}


def _open_raster(path: PathLike, formats) -> Image.Image:
    try:
        image = Image.open(path)
        image.load()
    except FileNotFoundError:
        raise UnreadableImage(f"no such file: {path}") from None
    except UnidentifiedImageError:
        raise UnreadableImage(f"not a recognisable image: {path}") from None
    except OSError as exc:
        raise UnreadableImage(f"cannot decode {path}: {exc}") from None
    if image.format not in formats:
        raise UnsupportedFormat(f"{path}: {image.format} is not one of {sorted(formats)}")
    return image


def load_saliency_map(path: PathLike, target_w: int, target_h: int) -> SaliencyMap:
    image = _open_raster(path, _ACCEPTED_MAP_FORMATS)
    if image.mode == "L":
        grid = np.asarray(image, dtype=np.float64) / 255.0
    elif image.mode in ("RGB", "RGBA"):
        grid = luminance(image)
    else:
        raise UnsupportedFormat(f"{path}: pixel mode {image.mode} is not 8-bit grayscale")
    if grid.shape != (target_h, target_w):
        grid = resize_bilinear(grid, target_w, target_h)
    return SaliencyMap(grid)


def load_gray_image(path: PathLike) -> GrayImage:
    return GrayImage(luminance(_open_raster(path, {"PNG", "JPEG", "PPM"})))


def write_pgm(saliency: SaliencyMap, path: PathLike) -> None:
    data = np.floor(saliency.values * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{saliency.width} {saliency.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


# -- masks and regions -------------------------------------------------------


def threshold_mask(saliency: SaliencyMap, theta=DEFAULT_THRESHOLD) -> BinaryMask:
    theta = Fraction(theta)
    if not 0 <= theta <= 1:
        raise ValueError(f"threshold must lie in [0, 1], got {theta}")
    return BinaryMask(saliency.values >= float(theta))


def region_mean(saliency: SaliencyMap, r: Rect) -> float:
    x0, y0 = max(r.x, 0), max(r.y, 0)
    x1, y1 = min(r.right, saliency.width), min(r.bottom, saliency.height)
    if x1 <= x0 or y1 <= y0:
        raise EmptyRegion(f"{r} does not intersect the {saliency.width}x{saliency.height} map")
    return float(saliency.values[y0:y1, x0:x1].mean())
