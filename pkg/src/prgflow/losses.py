"""Scalar objectives: photometric metrics, supervised / unsupervised warp
losses, and the two teacher-student compression losses.

Every loss returns (value, gradient) with the gradient computed
analytically; the test suite checks all of them against 64-bit central
finite differences.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError
from .image import (
    ImagePlane,
    PREPROCESS_MODES,
    preprocess,
    ssim_mean_and_grad,
    warped_with_jacobian,
)
from .warps import WarpParams


@dataclass(frozen=True)
class MetricSpec:
    """Photometric distance configuration.

    alpha means different things per kind: the Charbonnier exponent, the
    L1 blend weight for SSIM, or the latent robustness parameter for the
    adaptive robust kernel (where the effective shape is
    alpha_hat = (2 - 2*eps_alpha) * sigmoid(alpha)).
    """

    kind: str = "l1"
    alpha: float = 0.0
    c: float = 0.1
    eps: float = 1e-3
    eps_alpha: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("l1", "charbonnier", "ssim", "robust"):
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @classmethod
    def default(cls, kind: str) -> "MetricSpec":
        if kind == "charbonnier":
            return cls(kind=kind, alpha=0.45)
        if kind == "ssim":
            return cls(kind=kind, alpha=0.15)
        if kind == "robust":
            return cls(kind=kind, alpha=0.0, c=0.1)
        return cls(kind=kind)


@dataclass(frozen=True)
class LossTerm:
    metric: MetricSpec
    mode: str = "raw"

    def __post_init__(self):
        if self.mode not in PREPROCESS_MODES:
            raise ValueError(f"unknown input mode {self.mode!r}")


@dataclass(frozen=True)
class LossSpec:
    """Metric term plus weighted regularizer terms, each with an input mode."""

    metric: LossTerm = field(default_factory=lambda: LossTerm(MetricSpec.default("l1"), "gray"))
    regularizers: tuple = ()  # of (lambda, LossTerm)


def _robust_consts(m: MetricSpec):
    a_hat = (2.0 - 2.0 * m.eps_alpha) * math.exp(m.alpha) / (math.exp(m.alpha) + 1.0)
    b = abs(2.0 - a_hat) + m.eps
    d = a_hat + m.eps if a_hat >= 0 else a_hat - m.eps
    return a_hat, b, d


def photometric_distance(a: ImagePlane, b: ImagePlane, m: MetricSpec):
    """Photometric distance between two planes plus d(value)/d(a.data).

    The mean is taken over jointly valid pixels only; an empty joint mask
    raises DegeneracyError.
    """
    if a.data.shape != b.data.shape:
        raise ValueError("shape mismatch")
    mask = a.mask & b.mask
    n = int(mask.sum()) * a.channels
    if n == 0:
        raise DegeneracyError("empty valid-pixel set")
    w = mask[:, :, None].astype(float)
    r = (a.data - b.data) * w

    if m.kind == "l1":
        value = float(np.abs(r).sum() / n)
        grad = np.sign(r) * w / n
        return value, grad
    if m.kind == "charbonnier":
        q = r**2 + m.eps**2
        value = float((w * q**m.alpha).sum() / n)
        grad = w * (m.alpha * q ** (m.alpha - 1.0) * 2.0 * r) / n
        return value, grad
    if m.kind == "robust":
        _, bb, dd = _robust_consts(m)
        z = (r / m.c) ** 2 / bb + 1.0
        value = float((w * (bb / dd) * (z ** (dd / 2.0) - 1.0)).sum() / n)
        grad = w * (z ** (dd / 2.0 - 1.0) * r / m.c**2) / n
        return value, grad
    # ssim: (1 - SSIM)/2 blended with alpha * L1
    s_mean, s_grad = ssim_mean_and_grad(a, b)
    l1 = float(np.abs(r).sum() / n)
    value = (1.0 - s_mean) / 2.0 + m.alpha * l1
    grad = -0.5 * s_grad + m.alpha * np.sign(r) * w / n
    return value, grad


def loss_supervised(preds, truths):
    """Mean l2 norm of parameter differences over a batch.

    Accepts single WarpParams or equal-length lists.  Returns the value
    and the per-sample gradients w.r.t. the predicted vectors.
    """
    if isinstance(preds, WarpParams):
        preds, truths = [preds], [truths]
    if len(preds) != len(truths) or not preds:
        raise ValueError("batch size mismatch or empty batch")
    nb = len(preds)
    value = 0.0
    grads = []
    for p, t in zip(preds, truths):
        if p.model is not t.model:
            raise ValueError("prediction/truth model mismatch")
        d = p.vector() - t.vector()
        nrm = float(np.linalg.norm(d))
        value += nrm / nb
        grads.append(d / (nrm * nb) if nrm > 0 else np.zeros_like(d))
    return value, grads


def loss_unsupervised(p1: ImagePlane, p2: ImagePlane, h: WarpParams, spec: LossSpec,
                      pre: np.ndarray | None = None):
    """Photometric loss of warping p1 onto p2 by h, with d(value)/dh.

    Each term warps the preprocessed p1 through h (optionally after a
    fixed pre-warp matrix) and compares against the equally preprocessed
    p2 on the joint valid mask; gradients chain through the sampler.
    """
    terms = [(1.0, spec.metric)] + [(lam, t) for lam, t in spec.regularizers]
    value = 0.0
    grad = np.zeros(h.model.dof)
    for lam, term in terms:
        if lam == 0.0:
            continue
        f1 = preprocess(p1, term.mode)
        f2 = preprocess(p2, term.mode)
        if term.metric.kind == "ssim" and f1.channels != 1:
            from .image import to_gray

            f1, f2 = to_gray(f1), to_gray(f2)
        warped, jac = warped_with_jacobian(f1, h, pre=pre)
        v, g = photometric_distance(warped, f2, term.metric)
        value += lam * v
        grad += lam * np.einsum("ijc,ijck->k", g, jac)
    return value, grad


def loss_projection(truth: WarpParams, teacher_pred: WarpParams, student_pred: WarpParams,
                    lambdas=(1.0, 1.0, 0.1)):
    """Joint teacher/student objective: weighted sum of three l2 terms.

    Returns (value, grad_teacher, grad_student).
    """
    l1, l2, l3 = lambdas
    v1, g1 = loss_supervised(teacher_pred, truth)
    v2, g2 = loss_supervised(student_pred, truth)
    v3, g3 = loss_supervised(teacher_pred, student_pred)
    value = l1 * v1 + l2 * v2 + l3 * v3
    grad_t = l1 * g1[0] + l3 * g3[0]
    grad_s = l2 * g2[0] - l3 * g3[0]
    return value, grad_t, grad_s


def loss_distill(teacher_pred: WarpParams, student_pred: WarpParams):
    """l2 between teacher and student predictions; gradient w.r.t. student."""
    v, g = loss_supervised(student_pred, teacher_pred)
    return v, g[0]


# --- loss shorthand grammar -------------------------------------------------

_TERM_RE = re.compile(
    r"^\s*(?:(?P<lam>[0-9.eE+-]+)\s*\*\s*)?"
    r"(?P<kind>l1|charbonnier|chab|ssim|robust)\s*"
    r"\(\s*(?P<mode>raw|gray|highpass|corner)\s*\)\s*$"
)

_KIND_ALIASES = {"chab": "charbonnier"}


def parse_loss_spec(text: str) -> LossSpec:
    """Parse shorthand like ``ssim(raw) + 0.1*l1(highpass)`` into a LossSpec.

    The first term is the metric; subsequent terms are regularizers with
    their multipliers (default 1.0).
    """
    parts = [p for p in text.split("+") if p.strip()]
    if not parts:
        raise ValueError("empty loss expression")
    terms = []
    for part in parts:
        m = _TERM_RE.match(part)
        if not m:
            raise ValueError(f"cannot parse loss term {part.strip()!r}")
        kind = _KIND_ALIASES.get(m.group("kind"), m.group("kind"))
        lam = float(m.group("lam")) if m.group("lam") else 1.0
        terms.append((lam, LossTerm(MetricSpec.default(kind), m.group("mode"))))
    lam0, metric = terms[0]
    if lam0 != 1.0:
        raise ValueError("the metric (first) term cannot carry a multiplier")
    return LossSpec(metric=metric, regularizers=tuple(terms[1:]))
