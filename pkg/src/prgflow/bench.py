"""Synthetic warp benchmark: pair generation, error metrics, accuracy and
identity baselines, plus the benchmark runner that produces CSV reports.

Pairs follow the table-top protocol: a random 300x300 crop of a source
image is warped by a truth vector drawn uniformly per coordinate, and
the center 128x128 patches of both become the frame pair.  Errors are
medians of per-pair pixel errors, and accuracy is measured against the
identity predictor.
"""

from __future__ import annotations

import csv
import io
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegeneracyError
from .image import ImagePlane, multi_octave_texture, to_gray, warp_image
from .warps import WarpModel, WarpParams

CROP = 300
PATCH = 128

GAMMA_PRESETS = {
    "gamma1": (0.25, 0.20, 0.20),
    "gamma2": (0.50, 0.40, 0.40),
}


@dataclass(frozen=True)
class WarpRange:
    """Per-coordinate half-ranges (|s|max, |tx|max, |ty|max)."""

    s: float = 0.25
    tx: float = 0.20
    ty: float = 0.20

    def __post_init__(self):
        if min(self.s, self.tx, self.ty) < 0:
            raise ValueError("warp ranges must be nonnegative")

    @classmethod
    def preset(cls, name: str) -> "WarpRange":
        if name not in GAMMA_PRESETS:
            raise ValueError(f"unknown warp range preset {name!r}")
        return cls(*GAMMA_PRESETS[name])

    def sample(self, rng: np.random.Generator) -> WarpParams:
        """Uniform per-coordinate truth, normalized at the output patch."""
        return WarpParams(
            s=rng.uniform(-self.s, self.s),
            tx=rng.uniform(-self.tx, self.tx),
            ty=rng.uniform(-self.ty, self.ty),
        )


@dataclass
class BenchRecord:
    estimator: str
    gamma: str
    e_scale: float
    e_trans: float
    accuracy: float
    n: int
    params: int
    flops: int
    ms_per_pair: float
    failures: int


def gen_pair(src: ImagePlane, rng_range: WarpRange, seed: int):
    """Synthesize one frame pair: (p1, p2, truth) with truth at 128 scale.

    A random 300x300 crop is warped about its center; both center 128
    patches share that center, so the truth vector (normalized at the
    patch) maps p1 onto p2.  The warp applied to the crop carries the
    same s with translation rescaled by the half-size ratio.
    """
    if src.width < CROP or src.height < CROP:
        raise ValueError(f"source must be at least {CROP}x{CROP}, got {src.width}x{src.height}")
    rng = np.random.default_rng(seed)
    x0 = int(rng.integers(0, src.width - CROP + 1))
    y0 = int(rng.integers(0, src.height - CROP + 1))
    truth = rng_range.sample(rng)
    crop = src.crop(x0, y0, CROP, CROP)
    k = (PATCH / 2.0) / (CROP / 2.0)
    h_crop = WarpParams(s=truth.s, tx=truth.tx * k, ty=truth.ty * k)
    warped = warp_image(crop, h_crop)
    p1 = crop.center_crop(PATCH, PATCH)
    p2 = warped.center_crop(PATCH, PATCH)
    return p1, p2, truth


def metric_errors(preds, truths, width: int = PATCH, height: int = PATCH):
    """Median pixel errors (e_scale, e_trans) of predictions vs truths."""
    if len(preds) != len(truths) or not preds:
        raise ValueError("prediction/truth lists must be equal-length and nonempty")
    k_scale = np.sqrt((width**2 + height**2) / 2.0)
    es, et = [], []
    for p, t in zip(preds, truths):
        es.append(k_scale * abs(p.s - t.s))
        et.append(np.hypot(width * (p.tx - t.tx), height * (p.ty - t.ty)) / 2.0)
    return float(np.median(es)), float(np.median(et))


def accuracy(e_scale: float, e_trans: float, id_scale: float, id_trans: float) -> float:
    """Percent accuracy vs the identity baseline; negative when worse."""
    denom = id_scale + id_trans
    if denom <= 0:
        raise ValueError("identity baseline errors must be positive")
    return (1.0 - (e_scale + e_trans) / denom) * 100.0


def identity_baseline(rng_range: WarpRange, width: int = PATCH, height: int = PATCH,
                      n: int = 100_000, seed: int = 0):
    """Monte-Carlo metric_errors of the all-zero predictor."""
    rng = np.random.default_rng(seed)
    k_scale = np.sqrt((width**2 + height**2) / 2.0)
    s = rng.uniform(-rng_range.s, rng_range.s, n)
    tx = rng.uniform(-rng_range.tx, rng_range.tx, n)
    ty = rng.uniform(-rng_range.ty, rng_range.ty, n)
    e_scale = float(np.median(k_scale * np.abs(s)))
    e_trans = float(np.median(np.hypot(width * tx, height * ty) / 2.0))
    return e_scale, e_trans


# --- corpus -----------------------------------------------------------------

_PROCEDURAL_RE = re.compile(r"^procedural:(\d+)x(\d+):(\d+)$")
_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def load_corpus(spec: str):
    """Load a benchmark corpus: an image directory or a procedural spec.

    ``procedural:<count>x<size>:<seed>`` synthesizes count multi-octave
    textures of the given size.  Directories are read in sorted order.
    """
    m = _PROCEDURAL_RE.match(spec)
    if m:
        count, size, seed = (int(g) for g in m.groups())
        if size < CROP:
            raise ConfigError(f"procedural size {size} below minimum {CROP}")
        return [multi_octave_texture(size, seed + i) for i in range(count)]
    if not os.path.isdir(spec):
        raise ConfigError(f"corpus {spec!r} is neither a directory nor a procedural spec")
    paths = sorted(
        os.path.join(spec, f)
        for f in os.listdir(spec)
        if f.lower().endswith(_IMAGE_EXTS)
    )
    if not paths:
        raise ConfigError(f"no images found in corpus directory {spec!r}")
    return [ImagePlane.load(p) for p in paths]


# --- estimator registry -------------------------------------------------------


class _IdentityEstimator:
    model = WarpModel.PSEUDO_SIMILARITY

    def __call__(self, p1, p2):
        return WarpParams.identity(self.model)


def make_estimator(spec: str):
    """Build a pair estimator callable from an id string.

    Supported: ``identity``, ``fft``, ``lk:<cascade>`` (e.g. lk:Tx2,Sx2)
    and ``cnn:<weights path>``.  Returns (callable, params, flops).
    """
    from .estimators import (
        CascadeConfig,
        CnnEstimator,
        LucasKanadeEstimator,
        cascade_estimate,
        fft_scale_translation,
    )

    if spec == "identity":
        return _IdentityEstimator(), 0, 0
    if spec == "fft":
        return (lambda p1, p2: fft_scale_translation(p1, p2)), 0, 0
    if spec.startswith("lk:"):
        cfg = CascadeConfig.parse(spec[3:])
        lk = LucasKanadeEstimator()
        return (lambda p1, p2: cascade_estimate(p1, p2, cfg, lk)), 0, 0
    if spec.startswith("cnn:"):
        from .network import count_params_flops, load_weights

        weights = load_weights(spec[4:])
        params, flops = count_params_flops(weights)
        est = CnnEstimator(weights)
        return (lambda p1, p2: cascade_estimate(p1, p2, weights.cascade, est)), params, flops
    raise ConfigError(f"unknown estimator spec {spec!r}")


# --- benchmark runner ---------------------------------------------------------


def _pair_seed(seed: int, gamma_idx: int, pair_idx: int) -> int:
    return int(np.random.SeedSequence([seed, gamma_idx, pair_idx]).generate_state(1)[0])


def run_benchmark(corpus, estimator_specs, ranges, n_pairs: int = 100, seed: int = 0,
                  threads: int = 1, timing: bool = False):
    """Evaluate estimators over shared pair sets; returns BenchRecords.

    ranges is a list of (name, WarpRange).  The identity row is always
    included per range.  Estimator failures on a pair count the pair with
    the identity prediction and are tallied.  With timing disabled the
    ms_per_pair column is 0 so reports are bit-reproducible.
    """
    if not corpus:
        raise ValueError("empty corpus")
    records = []
    for gi, (gname, rng_range) in enumerate(ranges):
        seeds = [_pair_seed(seed, gi, i) for i in range(n_pairs)]
        pairs = [
            gen_pair(corpus[i % len(corpus)], rng_range, seeds[i]) for i in range(n_pairs)
        ]
        truths = [t for _, _, t in pairs]
        id_scale, id_trans = identity_baseline(rng_range, seed=seed)
        records.append(
            BenchRecord("identity", gname, *metric_errors([WarpParams.identity()] * n_pairs,
                                                           truths),
                        0.0, n_pairs, 0, 0, 0.0, 0)
        )
        records[-1].accuracy = accuracy(records[-1].e_scale, records[-1].e_trans,
                                        id_scale, id_trans)
        for spec in estimator_specs:
            if spec == "identity":
                continue
            est, params, flops = make_estimator(spec)

            def one(pair):
                p1, p2, truth = pair
                t0 = time.perf_counter()
                try:
                    pred = est(p1, p2)
                    fail = 0
                except (DegeneracyError, ValueError):
                    pred, fail = WarpParams.identity(), 1
                return pred, fail, time.perf_counter() - t0

            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    results = list(pool.map(one, pairs))
            else:
                results = [one(p) for p in pairs]
            preds = [r[0].lift(WarpModel.PSEUDO_SIMILARITY) if r[0].model
                     is not WarpModel.PSEUDO_SIMILARITY else r[0] for r in results]
            failures = sum(r[1] for r in results)
            ms = float(np.median([r[2] for r in results]) * 1000.0) if timing else 0.0
            e_scale, e_trans = metric_errors(preds, truths)
            acc = accuracy(e_scale, e_trans, id_scale, id_trans)
            records.append(BenchRecord(spec, gname, e_scale, e_trans, acc,
                                       n_pairs, params, flops, ms, failures))
    return records


REPORT_COLUMNS = ("estimator", "gamma", "e_scale_px", "e_trans_px", "accuracy_pct",
                  "n", "params", "flops", "ms_per_pair", "failures")


def report_csv(records) -> str:
    """Render BenchRecords as the report CSV (deterministic formatting)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in records:
        w.writerow([
            r.estimator, r.gamma,
            f"{r.e_scale:.6f}", f"{r.e_trans:.6f}", f"{r.accuracy:.4f}",
            r.n, r.params, r.flops, f"{r.ms_per_pair:.3f}", r.failures,
        ])
    return buf.getvalue()
