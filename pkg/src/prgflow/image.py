"""Image buffers, bilinear warping with validity masks, and preprocessing.

Images are H x W x C float64 arrays of unit-interval intensities with a
per-pixel validity mask.  Warping is backward: the output at pixel x is
the source sampled at w^-1 x, so output grids are dense and boundary
effects show up as cleared mask bits instead of zero fill.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DegeneracyError
from .warps import (
    PixelWarp,
    WarpParams,
    normalized_matrix,
    normalized_basis,
    normalization_matrix,
    params_to_pixel_warp,
)


@dataclass
class ImagePlane:
    """H x W x C unit-interval image plus validity mask."""

    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, float)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError("image data must be HxW or HxWxC with C in {1,3}")
        self.data = data
        self.mask = np.asarray(self.mask, bool)
        if self.mask.shape != data.shape[:2]:
            raise ValueError("mask shape must match image")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_array(cls, data) -> "ImagePlane":
        data = np.asarray(data, float)
        if data.ndim == 2:
            data = data[:, :, None]
        return cls(np.clip(data, 0.0, 1.0), np.ones(data.shape[:2], bool))

    @classmethod
    def constant(cls, value: float, width: int, height: int, channels: int = 1) -> "ImagePlane":
        return cls.from_array(np.full((height, width, channels), value))

    @classmethod
    def load(cls, path) -> "ImagePlane":
        img = Image.open(path)
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        return cls.from_array(np.asarray(img, float) / 255.0)

    def save(self, path) -> None:
        arr = np.clip(np.round(self.data * 255.0), 0, 255).astype(np.uint8)
        if arr.shape[2] == 1:
            arr = arr[:, :, 0]
        Image.fromarray(arr).save(path)

    def crop(self, x0: int, y0: int, w: int, h: int) -> "ImagePlane":
        return ImagePlane(self.data[y0 : y0 + h, x0 : x0 + w], self.mask[y0 : y0 + h, x0 : x0 + w])

    def center_crop(self, w: int, h: int) -> "ImagePlane":
        x0 = (self.width - w) // 2
        y0 = (self.height - h) // 2
        return self.crop(x0, y0, w, h)


def _pixel_grid(width: int, height: int):
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    return xs, ys


def _bilinear_gather(data: np.ndarray, mask: np.ndarray, ux: np.ndarray, uy: np.ndarray):
    """Sample data at float coords; returns (values, ddx, ddy, valid).

    Out-of-range coordinates (outside [0, W-1] x [0, H-1]) are invalid;
    ddx/ddy are the exact in-cell slopes of the bilinear interpolant.
    """
    h, w = data.shape[:2]
    valid = (ux >= 0) & (ux <= w - 1) & (uy >= 0) & (uy <= h - 1)
    x0 = np.clip(np.floor(ux), 0, w - 2).astype(int) if w > 1 else np.zeros_like(ux, int)
    y0 = np.clip(np.floor(uy), 0, h - 2).astype(int) if h > 1 else np.zeros_like(uy, int)
    x1, y1 = x0 + 1, y0 + 1
    fx = np.clip(ux - x0, 0.0, 1.0)
    fy = np.clip(uy - y0, 0.0, 1.0)

    v00 = data[y0, x0]
    v01 = data[y0, x1]
    v10 = data[y1, x0]
    v11 = data[y1, x1]
    fx_ = fx[..., None] if data.ndim == 3 else fx
    fy_ = fy[..., None] if data.ndim == 3 else fy
    top = v00 + fx_ * (v01 - v00)
    bot = v10 + fx_ * (v11 - v10)
    val = top + fy_ * (bot - top)
    ddx = (1 - fy_) * (v01 - v00) + fy_ * (v11 - v10)
    ddy = bot - top
    tap_ok = mask[y0, x0] & mask[y0, x1] & mask[y1, x0] & mask[y1, x1]
    return val, ddx, ddy, valid & tap_ok


def sample_bilinear(src: ImagePlane, w: PixelWarp) -> ImagePlane:
    """Backward-warp: out(x) = bilinear(src, w^-1 x), mask cleared off-source."""
    minv = np.linalg.inv(w.m)
    xs, ys = _pixel_grid(src.width, src.height)
    ux = minv[0, 0] * xs + minv[0, 1] * ys + minv[0, 2]
    uy = minv[1, 0] * xs + minv[1, 1] * ys + minv[1, 2]
    val, _, _, ok = _bilinear_gather(src.data, src.mask, ux, uy)
    return ImagePlane(np.clip(val, 0.0, 1.0), ok)


def warped_with_jacobian(src: ImagePlane, h: WarpParams, pre: np.ndarray | None = None):
    """Warp src by h (optionally after a fixed pre-warp matrix) with d/dh.

    The output at pixel x is src sampled at w(h)^-1 A^-1 x where A is the
    optional pre-warp (identity if None).  Returns (warped ImagePlane,
    J of shape (H, W, C, dof)) where J holds the exact derivative of the
    sampled intensities with respect to the active coordinates of h.
    """
    W, H = src.width, src.height
    m = params_to_pixel_warp(h, W, H).m
    a = np.eye(3) if pre is None else np.asarray(pre, float)
    minv = np.linalg.inv(m)
    total_inv = minv @ np.linalg.inv(a)
    xs, ys = _pixel_grid(W, H)
    ux = total_inv[0, 0] * xs + total_inv[0, 1] * ys + total_inv[0, 2]
    uy = total_inv[1, 0] * xs + total_inv[1, 1] * ys + total_inv[1, 2]
    val, ddx, ddy, ok = _bilinear_gather(src.data, src.mask, ux, uy)
    warped = ImagePlane(np.clip(val, 0.0, 1.0), ok)

    # du/dh_i = -w^-1 (dw/dh_i) u  (in homogeneous coords, affine rows only)
    from .warps import pixel_warp_basis

    basis = pixel_warp_basis(h, W, H)
    jac = np.zeros((H, W, src.channels, len(basis)))
    for i, db in enumerate(basis):
        d = -minv @ db
        dux = d[0, 0] * ux + d[0, 1] * uy + d[0, 2]
        duy = d[1, 0] * ux + d[1, 1] * uy + d[1, 2]
        jac[:, :, :, i] = ddx * dux[:, :, None] + ddy * duy[:, :, None]
    jac[~ok] = 0.0
    return warped, jac


def warp_image(src: ImagePlane, h: WarpParams) -> ImagePlane:
    """Warp src by the normalized params h (any channel count)."""
    return sample_bilinear(src, params_to_pixel_warp(h, src.width, src.height))


def warp_jacobian(src: ImagePlane, h: WarpParams) -> np.ndarray:
    """Per-pixel rows of d src(W(x; h)) / dh for the forward warp map.

    Uses the exact derivative of the bilinear interpolant so that central
    finite differences over h match to high precision away from the
    interpolation-cell boundaries.
    """
    if src.channels != 1:
        raise ValueError("warp_jacobian requires a grayscale image")
    W, H = src.width, src.height
    m = params_to_pixel_warp(h, W, H).m
    xs, ys = _pixel_grid(W, H)
    ux = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    uy = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    _, ddx, ddy, ok = _bilinear_gather(src.data, src.mask, ux, uy)
    from .warps import pixel_warp_basis

    basis = pixel_warp_basis(h, W, H)
    jac = np.zeros((H, W, len(basis)))
    gx, gy = ddx[:, :, 0], ddy[:, :, 0]
    for i, db in enumerate(basis):
        dux = db[0, 0] * xs + db[0, 1] * ys + db[0, 2]
        duy = db[1, 0] * xs + db[1, 1] * ys + db[1, 2]
        jac[:, :, i] = gx * dux + gy * duy
    jac[~ok] = 0.0
    return jac


_LUMA = np.array([0.299, 0.587, 0.114])


def to_gray(src: ImagePlane) -> ImagePlane:
    if src.channels == 1:
        return src
    return ImagePlane((src.data @ _LUMA)[:, :, None], src.mask.copy())


def preprocess(src: ImagePlane, mode: str) -> ImagePlane:
    """Derived single-channel views: gray, highpass (sigma=2), corner.

    highpass is gray minus its Gaussian blur, offset by +0.5 to stay in
    [0,1].  corner is the Harris response (k=0.04, gradient smoothing
    sigma=1.5) min-max normalized; a constant image yields all zeros.
    """
    if mode == "raw":
        return src
    g = to_gray(src)
    if mode == "gray":
        return g
    plane = g.data[:, :, 0]
    if mode == "highpass":
        blur = ndimage.gaussian_filter(plane, sigma=2.0, mode="reflect")
        return ImagePlane(np.clip(plane - blur + 0.5, 0.0, 1.0)[:, :, None], g.mask.copy())
    if mode == "corner":
        gx = ndimage.sobel(plane, axis=1, mode="reflect") / 8.0
        gy = ndimage.sobel(plane, axis=0, mode="reflect") / 8.0
        sxx = ndimage.gaussian_filter(gx * gx, sigma=1.5, mode="reflect")
        syy = ndimage.gaussian_filter(gy * gy, sigma=1.5, mode="reflect")
        sxy = ndimage.gaussian_filter(gx * gy, sigma=1.5, mode="reflect")
        resp = sxx * syy - sxy**2 - 0.04 * (sxx + syy) ** 2
        lo, hi = resp.min(), resp.max()
        if hi - lo < 1e-12:
            resp = np.zeros_like(resp)
        else:
            resp = (resp - lo) / (hi - lo)
        return ImagePlane(resp[:, :, None], g.mask.copy())
    raise ValueError(f"unknown preprocess mode {mode!r}")


PREPROCESS_MODES = ("raw", "gray", "highpass", "corner")


@dataclass(frozen=True)
class AugmentParams:
    """Photometric augmentation: contrast about 0.5, then brightness, then
    hue/saturation (3-channel only), then seeded Gaussian noise."""

    brightness: float = 0.0
    contrast: float = 1.0
    hue: float = 0.0
    saturation: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (-0.2 <= self.brightness <= 0.2):
            raise ValueError("brightness out of range [-0.2, 0.2]")
        if not (0.8 <= self.contrast <= 1.2):
            raise ValueError("contrast out of range [0.8, 1.2]")
        if not (-0.1 <= self.hue <= 0.1):
            raise ValueError("hue out of range [-0.1, 0.1]")
        if not (0.8 <= self.saturation <= 1.2):
            raise ValueError("saturation out of range [0.8, 1.2]")
        if not (0.0 <= self.noise_sigma <= 0.05):
            raise ValueError("noise_sigma out of range [0, 0.05]")

    @classmethod
    def random(cls, rng: np.random.Generator) -> "AugmentParams":
        return cls(
            brightness=rng.uniform(-0.2, 0.2),
            contrast=rng.uniform(0.8, 1.2),
            hue=rng.uniform(-0.1, 0.1),
            saturation=rng.uniform(0.8, 1.2),
            noise_sigma=rng.uniform(0.0, 0.05),
            seed=int(rng.integers(0, 2**31)),
        )


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    d = mx - mn
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    safe = np.where(d > 0, d, 1.0)
    h = np.zeros_like(mx)
    h = np.where(mx == r, ((g - b) / safe) % 6.0, h)
    h = np.where((mx == g) & (mx != r), (b - r) / safe + 2.0, h)
    h = np.where((mx == b) & (mx != r) & (mx != g), (r - g) / safe + 4.0, h)
    h = np.where(d > 0, h / 6.0, 0.0)
    s = np.where(mx > 0, d / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - f * s)
    t = v * (1 - (1 - f) * s)
    choices = [
        np.stack([v, t, p], -1),
        np.stack([q, v, p], -1),
        np.stack([p, v, t], -1),
        np.stack([p, q, v], -1),
        np.stack([t, p, v], -1),
        np.stack([v, p, q], -1),
    ]
    out = np.zeros(hsv.shape)
    for k in range(6):
        out[i == k] = choices[k][i == k]
    return out


def augment(src: ImagePlane, p: AugmentParams) -> ImagePlane:
    """Deterministic photometric augmentation; see AugmentParams order."""
    out = 0.5 + p.contrast * (src.data - 0.5)
    out = out + p.brightness
    if src.channels == 3 and (p.hue != 0.0 or p.saturation != 1.0):
        hsv = _rgb_to_hsv(np.clip(out, 0.0, 1.0))
        hsv[..., 0] = (hsv[..., 0] + p.hue / (2 * math.pi)) % 1.0
        hsv[..., 1] = np.clip(hsv[..., 1] * p.saturation, 0.0, 1.0)
        out = _hsv_to_rgb(hsv)
    if p.noise_sigma > 0.0:
        rng = np.random.default_rng(p.seed)
        out = out + rng.normal(0.0, p.noise_sigma, out.shape)
    return ImagePlane(np.clip(out, 0.0, 1.0), src.mask.copy())


# --- SSIM -----------------------------------------------------------------

_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = size // 2
    x = np.arange(-r, r + 1, dtype=float)
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


_SSIM_K = _gaussian_kernel()


def _win(x: np.ndarray) -> np.ndarray:
    """Separable zero-padded 11x11 Gaussian windowing (unnormalized)."""
    y = ndimage.correlate1d(x, _SSIM_K, axis=0, mode="constant", cval=0.0)
    return ndimage.correlate1d(y, _SSIM_K, axis=1, mode="constant", cval=0.0)


def _ssim_stats(a: np.ndarray, b: np.ndarray, weight: np.ndarray):
    """Mask-weighted local moments with zero-padded Gaussian windows."""
    m = _win(weight)
    m = np.where(m > 1e-12, m, np.inf)
    mu_a = _win(weight * a) / m
    mu_b = _win(weight * b) / m
    var_a = _win(weight * a * a) / m - mu_a**2
    var_b = _win(weight * b * b) / m - mu_b**2
    cov = _win(weight * a * b) / m - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov, m


def ssim_map(a: ImagePlane, b: ImagePlane) -> np.ndarray:
    """Per-pixel SSIM (11x11 Gaussian window, sigma=1.5) on unit range.

    Local moments are weighted by the joint validity mask so masked-out
    pixels do not pollute neighboring windows.  Returns an H x W array
    of values in [-1, 1].
    """
    if a.data.shape != b.data.shape:
        raise ValueError("ssim_map requires equally shaped images")
    if a.channels != 1:
        raise ValueError("ssim_map requires grayscale images")
    weight = (a.mask & b.mask).astype(float)
    mu_a, mu_b, var_a, var_b, cov, _ = _ssim_stats(a.data[:, :, 0], b.data[:, :, 0], weight)
    num = (2 * mu_a * mu_b + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_a**2 + mu_b**2 + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    return num / den


def ssim_mean_and_grad(a: ImagePlane, b: ImagePlane):
    """Mean SSIM over valid pixels and its exact gradient w.r.t. a.data.

    The gradient accounts for the Gaussian windowing adjoint (the window
    is symmetric, so the adjoint of the zero-padded correlation is the
    same operation).
    """
    if a.data.shape != b.data.shape:
        raise ValueError("shape mismatch")
    weight = (a.mask & b.mask).astype(float)
    n = weight.sum()
    if n == 0:
        raise DegeneracyError("empty valid-pixel set")
    x = a.data[:, :, 0]
    y = b.data[:, :, 0]
    mu_a, mu_b, var_a, var_b, cov, m = _ssim_stats(x, y, weight)
    a1 = 2 * mu_a * mu_b + _SSIM_C1
    a2 = 2 * cov + _SSIM_C2
    b1 = mu_a**2 + mu_b**2 + _SSIM_C1
    b2 = var_a + var_b + _SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    mean = float((s * weight).sum() / n)

    g = weight / n  # dL/dS per pixel
    ds_da1 = a2 / (b1 * b2)
    ds_da2 = a1 / (b1 * b2)
    ds_db1 = -s / b1
    ds_db2 = -s / b2
    # Coefficients on the windowed moments.
    c_mu = g * (2 * mu_b * ds_da1 + 2 * mu_a * ds_db1)
    c_var = g * ds_db2
    c_cov = g * 2 * ds_da2
    # mu_a = win(w x)/m ; var_a = win(w x^2)/m - mu_a^2 ; cov = win(w x y)/m - mu_a mu_b
    t_mu = (c_mu - 2 * c_var * mu_a - c_cov * mu_b) / m
    t_sq = c_var / m
    t_xy = c_cov / m
    grad = weight * (_win(t_mu) + 2 * x * _win(t_sq) + y * _win(t_xy))
    return mean, grad[:, :, None]


def multi_octave_texture(size: int, seed: int = 0, octaves=(32, 16, 8, 4, 2)) -> ImagePlane:
    """Procedural grayscale texture: sum of smoothed noise octaves.

    The mix of coarse and fine structure gives a non-flat spectrum, so
    alignment (photometric and spectral) is well conditioned; used as the
    simulator ground plane and as a built-in benchmark corpus.
    """
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size))
    for sigma in octaves:
        layer = ndimage.gaussian_filter(rng.uniform(-1.0, 1.0, (size, size)), sigma)
        peak = np.abs(layer).max()
        if peak > 0:
            layer = layer / peak
        img += layer / sigma**0.3
    img -= img.min()
    rng_max = img.max()
    if rng_max > 0:
        img /= rng_max
    return ImagePlane.from_array(img)
