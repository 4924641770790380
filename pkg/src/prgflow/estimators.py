"""Frame-pair warp estimators behind a common cascade runner.

Three estimator families are provided: direct Gauss-Newton photometric
alignment (coarse-to-fine), FFT phase correlation (translation, and a
log-polar extension for scale), and the convolutional regressor defined
in the network module.  The cascade runner chains per-model blocks; each
block predicts an incremental warp that is composed onto the running
estimate on the right (the increment acts on points before the
accumulated warp).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError
from .image import ImagePlane, sample_bilinear, to_gray, warped_with_jacobian
from .warps import (
    PixelWarp,
    WarpModel,
    WarpParams,
    compose,
    invert,
    params_to_pixel_warp,
)


@dataclass(frozen=True)
class CascadeConfig:
    """Ordered warp-block models, e.g. T,T,S,S for the Tx2,Sx2 cascade."""

    blocks: tuple = (WarpModel.PSEUDO_SIMILARITY,)

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("cascade must have at least one block")
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @classmethod
    def parse(cls, text: str) -> "CascadeConfig":
        """Parse e.g. ``Tx2,Sx2`` or ``PSx1`` or ``PS``."""
        blocks = []
        for part in text.split(","):
            part = part.strip()
            if "x" in part.lower():
                idx = part.lower().rindex("x")
                tag, count = part[:idx], int(part[idx + 1 :])
            else:
                tag, count = part, 1
            blocks.extend([WarpModel.from_tag(tag)] * count)
        return cls(tuple(blocks))

    def describe(self) -> str:
        return ",".join(m.value for m in self.blocks)


@dataclass
class LkOptions:
    iterations: int = 50
    pyramid_levels: int = 5
    tol: float = 1e-6
    huber_delta: float = 0.05  # None/0 disables robust weighting (plain SSD)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class LkResult:
    params: WarpParams
    converged: bool
    residual: float
    degenerate: bool = False


def _downsample(img: ImagePlane) -> ImagePlane:
    h2, w2 = img.height // 2, img.width // 2
    d = img.data[: 2 * h2, : 2 * w2]
    m = img.mask[: 2 * h2, : 2 * w2]
    d = 0.25 * (d[0::2, 0::2] + d[1::2, 0::2] + d[0::2, 1::2] + d[1::2, 1::2])
    m = m[0::2, 0::2] & m[1::2, 0::2] & m[0::2, 1::2] & m[1::2, 1::2]
    return ImagePlane(d, m)


def _pyramid(img: ImagePlane, levels: int):
    pyr = [img]
    for _ in range(levels - 1):
        if min(pyr[-1].height, pyr[-1].width) < 16:
            break
        pyr.append(_downsample(pyr[-1]))
    return pyr[::-1]  # coarse to fine


def _gn_level(p1: ImagePlane, p2: ImagePlane, h: WarpParams, opts: LkOptions,
              pre: np.ndarray | None):
    """Gauss-Newton iterations at a single pyramid level."""
    best = None
    degenerate = False
    converged = False
    for _ in range(opts.iterations):
        warped, jac = warped_with_jacobian(p1, h, pre=pre)
        mask = warped.mask & p2.mask
        n = int(mask.sum())
        if n < h.model.dof + 1:
            return h, False, math.inf, True
        r = (warped.data[:, :, 0] - p2.data[:, :, 0])[mask]
        j = jac[:, :, 0, :][mask]
        if opts.huber_delta:
            w = np.minimum(1.0, opts.huber_delta / np.maximum(np.abs(r), 1e-12))
        else:
            w = np.ones_like(r)
        cost = float(np.sum(w * r**2) / n)
        if best is None or cost < best[1]:
            best = (h, cost)
        jtj = (j * w[:, None]).T @ j
        jtr = (j * w[:, None]).T @ r
        if np.linalg.cond(jtj) > 1e10:
            degenerate = True
            break
        step = -np.linalg.solve(jtj, jtr)
        vec = h.vector() + step
        # Guard invertibility of the scale coordinate.
        if h.model in (WarpModel.SCALE, WarpModel.PSEUDO_SIMILARITY, WarpModel.SIMILARITY):
            vec[0] = max(vec[0], -0.95)
        h = WarpParams.from_vector(vec, h.model)
        if np.linalg.norm(step) < opts.tol:
            converged = True
            break
    warped, _ = warped_with_jacobian(p1, h, pre=pre)
    mask = warped.mask & p2.mask
    if mask.sum() > 0:
        r = (warped.data[:, :, 0] - p2.data[:, :, 0])[mask]
        cost = float(np.mean(r**2))
        if best is None or cost < best[1]:
            best = (h, cost)
    return best[0], converged, best[1], degenerate


def lk_refine(p1: ImagePlane, p2: ImagePlane, h0: WarpParams,
              opts: LkOptions | None = None, pre: np.ndarray | None = None) -> LkResult:
    """Coarse-to-fine Gauss-Newton photometric alignment from h0.

    Normalized warp parameters are resolution independent, so the same
    vector is refined across pyramid levels.  The optional pre-warp
    matrix is applied (at full resolution) before the estimated warp;
    it is rescaled per level.
    """
    opts = opts or LkOptions()
    p1, p2 = to_gray(p1), to_gray(p2)
    if p1.data.shape != p2.data.shape:
        raise ValueError("frame pair must share a shape")
    pyr1 = _pyramid(p1, opts.pyramid_levels)
    pyr2 = _pyramid(p2, opts.pyramid_levels)
    h = h0
    converged = False
    residual = math.inf
    degenerate = False
    for li, (l1, l2) in enumerate(zip(pyr1, pyr2)):
        pre_l = _rescale_matrix(pre, p1.width, l1.width) if pre is not None else None
        if li == 0 and h.model is not WarpModel.TRANSLATION:
            # Scale has a narrow photometric basin; multi-start at the
            # coarsest level and keep the lowest-cost branch.
            best = None
            for s_seed in (0.0, 0.18, -0.18):
                try:
                    seed = WarpParams.from_vector(
                        h.vector() + s_seed * np.eye(h.model.dof)[0], h.model)
                except Exception:
                    continue
                cand = _gn_level(l1, l2, seed, opts, pre_l)
                if not cand[3] and (best is None or cand[2] < best[2]):
                    best = cand
            if best is None:
                degenerate = True
                break
            h, converged, residual, degenerate = best
        else:
            h, converged, residual, degenerate = _gn_level(l1, l2, h, opts, pre_l)
        if degenerate:
            break
    if degenerate:
        return LkResult(h0, False, residual, True)
    return LkResult(h, converged, residual, False)


def _rescale_matrix(m: np.ndarray, full: int, level: int) -> np.ndarray:
    k = level / full
    s = np.diag([k, k, 1.0])
    return s @ m @ np.linalg.inv(s)


# --- FFT baselines ----------------------------------------------------------


def _hann2d(h: int, w: int) -> np.ndarray:
    return np.outer(np.hanning(h), np.hanning(w))


def _pad_pow2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    h2 = 1 << (h - 1).bit_length()
    w2 = 1 << (w - 1).bit_length()
    if (h2, w2) == (h, w):
        return x
    out = np.zeros((h2, w2))
    out[:h, :w] = x
    return out


def _parabolic(ym: float, y0: float, yp: float) -> float:
    den = ym - 2 * y0 + yp
    if abs(den) < 1e-12:
        return 0.0
    off = 0.5 * (ym - yp) / den
    return float(np.clip(off, -0.5, 0.5))


def fft_translation(p1: ImagePlane, p2: ImagePlane, window: bool = True):
    """Phase correlation translation: returns (tx_px, ty_px, confidence).

    The returned shift is the displacement of p2's content relative to
    p1 (features in p1 appear at +shift in p2).  Integer peak plus
    parabolic sub-pixel refinement; confidence is the correlation peak
    height, near zero for flat spectra.
    """
    a = to_gray(p1).data[:, :, 0]
    b = to_gray(p2).data[:, :, 0]
    if a.shape != b.shape:
        raise ValueError("frame pair must share a shape")
    a = a - a.mean()
    b = b - b.mean()
    if window:
        win = _hann2d(*a.shape)
        aw, bw = a * win, b * win
    else:
        aw, bw = a, b
    a, b = _pad_pow2(a), _pad_pow2(b)
    aw, bw = _pad_pow2(aw), _pad_pow2(bw)
    cross = np.conj(np.fft.fft2(aw)) * np.fft.fft2(bw)
    mag = np.maximum(np.abs(cross), 1e-12)
    # Square-root magnitude normalization: full phase normalization
    # amplifies spectral bands with no signal (bad on smooth frames),
    # while the raw correlation peak is dominated by the window envelope;
    # the square root balances the two.
    r = np.fft.ifft2(cross / np.sqrt(mag)).real
    h, w = r.shape
    # The unwindowed phase correlation is an exact delta for periodic
    # (circular) shifts; when that delta is present, locating and refining
    # on it is exact, whereas any windowed fit would bias the answer.
    cross_u = np.conj(np.fft.fft2(a)) * np.fft.fft2(b)
    ru = np.fft.ifft2(cross_u / np.maximum(np.abs(cross_u), 1e-12)).real
    if ru.max() > 0.9:
        rp = ru
        iy, ix = np.unravel_index(np.argmax(ru), ru.shape)
        peak = float(ru[iy, ix])
    else:
        rp = r
        iy, ix = np.unravel_index(np.argmax(r), r.shape)
        peak = float(np.fft.ifft2(cross / mag).real[iy, ix])
    dx = ix + _parabolic(rp[iy, (ix - 1) % w], rp[iy, ix], rp[iy, (ix + 1) % w])
    dy = iy + _parabolic(rp[(iy - 1) % h, ix], rp[iy, ix], rp[(iy + 1) % h, ix])
    if dx > w / 2:
        dx -= w
    if dy > h / 2:
        dy -= h
    # ifft peak at index d means b(x) = a(x - d): content moved by +d.
    return dx, dy, peak


_LOW_CONFIDENCE = 0.03


def _log_polar_magnitude(img: np.ndarray, n_r: int = 256, n_theta: int = 128):
    """Log-polar resampling of the high-pass log-magnitude spectrum.

    Returns an (n_theta, n_r) array over theta in [0, pi) and log-radius,
    plus the log-radius bin width.  The radial high-pass emphasis
    suppresses the scale-invariant spectral envelope that would otherwise
    dominate the correlation.
    """
    win = _hann2d(*img.shape)
    f = np.abs(np.fft.fftshift(np.fft.fft2((img - img.mean()) * win)))
    h, w = f.shape
    xx = np.linspace(-0.5, 0.5, w, endpoint=False)[None, :]
    yy = np.linspace(-0.5, 0.5, h, endpoint=False)[:, None]
    cc = np.cos(np.pi * xx) * np.cos(np.pi * yy)
    f = np.log1p(f * (1.0 - cc) * (2.0 - cc))
    cy, cx = h / 2.0, w / 2.0
    logr = np.linspace(math.log(2.0), math.log(min(h, w) / 2.0 * 0.9), n_r)
    radii = np.exp(logr)
    thetas = np.linspace(0.0, math.pi, n_theta, endpoint=False)
    xs = cx + radii[None, :] * np.cos(thetas)[:, None]
    ys = cy + radii[None, :] * np.sin(thetas)[:, None]
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    fx = xs - x0
    fy = ys - y0
    v = (
        f[y0, x0] * (1 - fx) * (1 - fy)
        + f[y0, x0 + 1] * fx * (1 - fy)
        + f[y0 + 1, x0] * (1 - fx) * fy
        + f[y0 + 1, x0 + 1] * fx * fy
    )
    dlog = (logr[-1] - logr[0]) / (n_r - 1)
    return v, dlog


def fft_scale_translation(p1: ImagePlane, p2: ImagePlane) -> WarpParams:
    """Scale + translation via log-polar spectra then phase correlation.

    Scale comes from phase correlation of the log-polar magnitude
    spectra along the log-radius axis (search limited to s in
    [-0.5, 1.0]); translation from phase correlation of the descaled
    pair.  Returns normalized PS params.
    """
    g1, g2 = to_gray(p1), to_gray(p2)
    a = _pad_pow2(g1.data[:, :, 0])
    b = _pad_pow2(g2.data[:, :, 0])
    lp1, dlog = _log_polar_magnitude(a)
    lp2, _ = _log_polar_magnitude(b)
    f1 = np.fft.fft2(lp1 - lp1.mean())
    f2 = np.fft.fft2(lp2 - lp2.mean())
    cross = f1 * np.conj(f2)
    corr = np.fft.ifft2(cross / np.maximum(np.abs(cross), 1e-12)).real
    n = corr.shape[1]
    lags = np.arange(n)
    lags[lags > n // 2] -= n
    # Zoom-in by (1+s) shrinks the spectrum: lp2(l) = lp1(l + log(1+s)),
    # so the correlation peaks at radial lag = log(1+s)/dlog.
    ok = (lags * dlog >= math.log(0.5)) & (lags * dlog <= math.log(2.0))
    it, k = np.unravel_index(np.argmax(np.where(ok[None, :], corr, -np.inf)), corr.shape)
    off = _parabolic(corr[it, (k - 1) % n], corr[it, k], corr[it, (k + 1) % n])
    lag = lags[k] + off
    s = math.exp(lag * dlog) - 1.0
    s = float(np.clip(s, -0.5, 1.0))

    # Undo the scale about the image center, then phase-correlate.
    descale = invert(WarpParams(s=s, model=WarpModel.SCALE)).lift(WarpModel.PSEUDO_SIMILARITY)
    w = params_to_pixel_warp(descale, g2.width, g2.height)
    p2d = sample_bilinear(g2, w)
    dx, dy, conf = fft_translation(g1, p2d)
    tx_px = dx * (1.0 + s)
    ty_px = dy * (1.0 + s)
    return WarpParams(
        s=s,
        tx=tx_px / (g1.width / 2.0),
        ty=ty_px / (g1.height / 2.0),
        model=WarpModel.PSEUDO_SIMILARITY,
    )


# --- cascade ----------------------------------------------------------------


class BlockEstimator:
    """Interface: estimate the incremental warp of one cascade block."""

    def block_increment(self, p1: ImagePlane, p2: ImagePlane, acc: np.ndarray,
                        model: WarpModel, index: int) -> WarpParams:
        raise NotImplementedError


class LucasKanadeEstimator(BlockEstimator):
    def __init__(self, opts: LkOptions | None = None):
        self.opts = opts or LkOptions()

    def block_increment(self, p1, p2, acc, model, index):
        res = lk_refine(p1, p2, WarpParams.identity(model), opts=self.opts, pre=acc)
        if res.degenerate:
            return WarpParams.identity(model)
        return res.params


class CnnEstimator(BlockEstimator):
    """Wraps trained weights; blocks see the re-warped stacked pair."""

    def __init__(self, weights):
        self.weights = weights

    def block_increment(self, p1, p2, acc, model, index):
        from .network import cnn_forward

        q1 = sample_bilinear(p1, PixelWarp(acc, p1.width, p1.height))
        stack = np.concatenate([q1.data, p2.data], axis=2)
        vec = cnn_forward(self.weights.blocks[index], stack)
        return WarpParams.from_vector(vec, model)


def cascade_estimate(p1: ImagePlane, p2: ImagePlane, cfg: CascadeConfig,
                     est: BlockEstimator, h0: WarpParams | None = None) -> WarpParams:
    """Run the warp-block cascade; returns the accumulated PS-domain warp.

    Each block estimates an increment in its own model on the pair
    (warp(p1, h_acc), p2); the increment is lifted to PS and composed
    onto the accumulated estimate.  A degenerate block contributes the
    identity.  h0 optionally seeds the accumulated warp (e.g. from a
    phase-correlation pre-alignment) so the blocks only refine.
    """
    p1, p2 = to_gray(p1), to_gray(p2)
    target = WarpModel.PSEUDO_SIMILARITY
    if any(m is WarpModel.SIMILARITY for m in cfg.blocks):
        target = WarpModel.SIMILARITY
    h_acc = WarpParams.identity(target) if h0 is None else h0.lift(target)
    for i, model in enumerate(cfg.blocks):
        acc_m = params_to_pixel_warp(h_acc, p1.width, p1.height).m
        inc = est.block_increment(p1, p2, acc_m, model, i)
        h_acc = compose(h_acc, inc.lift(target))
    return h_acc
