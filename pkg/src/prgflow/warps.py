"""Warp parameterization and algebra for the T/S/PS/Similarity warp family.

A warp is parameterized by a normalized vector h = (s, tx, ty[, theta]):
scale offset s (dimensionless), translation (tx, ty) in units of half the
image size, and optionally an in-plane rotation theta about the image
center.  The pixel-domain 3x3 matrix is obtained by conjugating the
normalized-domain matrix with the normalization transform M that maps
[-1, 1]^2 onto [0, W] x [0, H].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from .errors import DegeneracyError, ParameterDomainError


class WarpModel(Enum):
    """Warp family tag: translation, scale, pseudo-similarity or similarity."""

    TRANSLATION = "T"
    SCALE = "S"
    PSEUDO_SIMILARITY = "PS"
    SIMILARITY = "SIM"

    @property
    def dof(self) -> int:
        return {"T": 2, "S": 1, "PS": 3, "SIM": 4}[self.value]

    @classmethod
    def from_tag(cls, tag: str) -> "WarpModel":
        tag = tag.strip().upper()
        for m in cls:
            if m.value == tag:
                return m
        raise ValueError(f"unknown warp model tag {tag!r}")


@dataclass(frozen=True)
class WarpParams:
    """Normalized warp vector with an attached model tag.

    Fields inactive for the model must be exactly zero; 1 + s must be
    positive for invertibility.
    """

    s: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    theta: float = 0.0
    model: WarpModel = WarpModel.PSEUDO_SIMILARITY

    def __post_init__(self):
        if 1.0 + self.s <= 0.0:
            raise ParameterDomainError(f"non-invertible scale: 1 + s = {1.0 + self.s}")
        active = _ACTIVE_FIELDS[self.model]
        for name in ("s", "tx", "ty", "theta"):
            if name not in active and getattr(self, name) != 0.0:
                raise ParameterDomainError(
                    f"field {name!r} must be zero for model {self.model.value}"
                )

    @classmethod
    def identity(cls, model: WarpModel = WarpModel.PSEUDO_SIMILARITY) -> "WarpParams":
        return cls(model=model)

    @classmethod
    def from_vector(cls, vec, model: WarpModel) -> "WarpParams":
        vec = [float(v) for v in vec]
        if len(vec) != model.dof:
            raise ValueError(f"expected {model.dof} values for {model.value}, got {len(vec)}")
        kw = dict(zip(_ACTIVE_FIELDS[model], vec))
        return cls(model=model, **kw)

    def vector(self) -> np.ndarray:
        """Active coordinates in canonical order (s, tx, ty, theta)."""
        return np.array([getattr(self, n) for n in _ACTIVE_FIELDS[self.model]], float)

    def lift(self, model: WarpModel) -> "WarpParams":
        """Re-tag into a larger model, zero-padding missing coordinates."""
        if not set(_ACTIVE_FIELDS[self.model]) <= set(_ACTIVE_FIELDS[model]):
            raise ValueError(f"cannot lift {self.model.value} into {model.value}")
        return WarpParams(s=self.s, tx=self.tx, ty=self.ty, theta=self.theta, model=model)


# Canonical parameter order per model.
_ACTIVE_FIELDS = {
    WarpModel.TRANSLATION: ("tx", "ty"),
    WarpModel.SCALE: ("s",),
    WarpModel.PSEUDO_SIMILARITY: ("s", "tx", "ty"),
    WarpModel.SIMILARITY: ("s", "tx", "ty", "theta"),
}


@dataclass(frozen=True)
class PixelWarp:
    """3x3 invertible matrix mapping frame-t pixel coords to frame-(t+1)."""

    m: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        m = np.asarray(self.m, float)
        object.__setattr__(self, "m", m)
        if m.shape != (3, 3):
            raise ValueError("pixel warp matrix must be 3x3")
        if abs(np.linalg.det(m)) < 1e-15:
            raise ParameterDomainError("singular pixel warp matrix")

    def inverse(self) -> "PixelWarp":
        return PixelWarp(np.linalg.inv(self.m), self.width, self.height)


def normalization_matrix(width: int, height: int) -> np.ndarray:
    """Maps normalized coords in [-1,1]^2 to pixel coords [0,W]x[0,H]."""
    return np.array(
        [[width / 2.0, 0.0, width / 2.0], [0.0, height / 2.0, height / 2.0], [0.0, 0.0, 1.0]]
    )


@lru_cache(maxsize=None)
def _norm_pair(width: int, height: int):
    """Cached (M, M^-1) normalization pair; treat the arrays as read-only."""
    m = normalization_matrix(width, height)
    return m, np.linalg.inv(m)


def normalized_matrix(h: WarpParams) -> np.ndarray:
    """Normalized-domain 3x3 matrix S(h): (1+s)R(theta) block plus translation."""
    c, si = math.cos(h.theta), math.sin(h.theta)
    k = 1.0 + h.s
    return np.array([[k * c, -k * si, h.tx], [k * si, k * c, h.ty], [0.0, 0.0, 1.0]])


def normalized_basis(h: WarpParams) -> list[np.ndarray]:
    """dS/dh_i for each active coordinate, evaluated at h."""
    c, si = math.cos(h.theta), math.sin(h.theta)
    k = 1.0 + h.s
    d = {
        "s": np.array([[c, -si, 0.0], [si, c, 0.0], [0.0, 0.0, 0.0]]),
        "tx": np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
        "ty": np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]),
        "theta": np.array([[-k * si, -k * c, 0.0], [k * c, -k * si, 0.0], [0.0, 0.0, 0.0]]),
    }
    return [d[name] for name in _ACTIVE_FIELDS[h.model]]


def params_to_pixel_warp(h: WarpParams, width: int, height: int) -> PixelWarp:
    """Pixel-domain warp M S(h) M^-1 for an image of the given size."""
    if width < 2 or height < 2:
        raise ValueError("image size must be at least 2x2")
    m, minv = _norm_pair(width, height)
    return PixelWarp(m @ normalized_matrix(h) @ minv, width, height)


def pixel_warp_basis(h: WarpParams, width: int, height: int) -> list[np.ndarray]:
    """d(pixel warp matrix)/dh_i for each active coordinate of h."""
    m, minv = _norm_pair(width, height)
    return [m @ b @ minv for b in normalized_basis(h)]


def warp_points(w: PixelWarp, pts) -> np.ndarray:
    """Map an (N,2) array of pixel coordinates through the warp."""
    pts = np.atleast_2d(np.asarray(pts, float))
    ones = np.ones((pts.shape[0], 1))
    ph = np.hstack([pts, ones]) @ w.m.T
    return ph[:, :2] / ph[:, 2:3]


def matrix_to_params(w: PixelWarp, model: WarpModel) -> WarpParams:
    """Project a pixel warp onto a warp model by corner least squares.

    Minimizes the mean squared pixel displacement between w and the model
    warp over the four image corners; exact when w lies in the subgroup.
    The similarity model is solved in the linear (a, b, tx, ty) chart with
    a + ib = (1+s) e^{i theta} and converted back afterwards.
    """
    corners, chart, pinv = _corner_system(w.width, w.height, model)
    target = warp_points(w, corners) - corners
    sol = pinv @ target.ravel()
    vals = dict(zip(chart, sol))
    if model is WarpModel.TRANSLATION:
        return WarpParams(tx=vals["tx"], ty=vals["ty"], model=model)
    if model is WarpModel.SCALE:
        return WarpParams(s=vals["a"], model=model)
    if model is WarpModel.PSEUDO_SIMILARITY:
        return WarpParams(s=vals["a"], tx=vals["tx"], ty=vals["ty"], model=model)
    a, b = 1.0 + vals["a"], vals["b"]
    return WarpParams(
        s=math.hypot(a, b) - 1.0,
        tx=vals["tx"],
        ty=vals["ty"],
        theta=math.atan2(b, a),
        model=model,
    )


# Linear chart: similarity uses (a, b, tx, ty), others subsets of it.
_CHARTS = {
    WarpModel.TRANSLATION: ("tx", "ty"),
    WarpModel.SCALE: ("a",),
    WarpModel.PSEUDO_SIMILARITY: ("a", "tx", "ty"),
    WarpModel.SIMILARITY: ("a", "b", "tx", "ty"),
}


@lru_cache(maxsize=None)
def _corner_system(width: int, height: int, model: WarpModel):
    """Cached corner points, chart names and least-squares pseudo-inverse."""
    corners = np.array([[0.0, 0.0], [width, 0.0], [0.0, height], [width, height]])
    chart = _CHARTS[model]
    base = _chart_basis(width, height)
    A = np.zeros((8, len(chart)))
    for j, name in enumerate(chart):
        ch = np.hstack([corners, np.ones((4, 1))]) @ base[name].T
        A[:, j] = ch[:, :2].ravel()
    if np.linalg.matrix_rank(A) < len(chart):
        raise DegeneracyError("rank-deficient corner system in matrix_to_params")
    return corners, chart, np.linalg.pinv(A)


def _chart_basis(width: int, height: int) -> dict[str, np.ndarray]:
    """Pixel-domain derivative matrices of the linear chart at identity."""
    m, minv = _norm_pair(width, height)
    e = {
        "a": np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 0]]),
        "b": np.array([[0, -1.0, 0], [1.0, 0, 0], [0, 0, 0]]),
        "tx": np.array([[0, 0, 1.0], [0, 0, 0], [0, 0, 0]]),
        "ty": np.array([[0, 0, 0], [0, 0, 1.0], [0, 0, 0]]),
    }
    return {k: m @ v @ minv for k, v in e.items()}


# Canonical size used when composing/inverting in the matrix domain; the
# normalized matrix is size-independent so any valid size works.
_CANON = 2


def compose(a: WarpParams, b: WarpParams) -> WarpParams:
    """Group composition: warp(compose(a,b)) == warp(a) @ warp(b)."""
    if a.model is not b.model:
        raise ValueError("cannot compose warps of different models")
    wa = params_to_pixel_warp(a, _CANON, _CANON)
    wb = params_to_pixel_warp(b, _CANON, _CANON)
    return matrix_to_params(PixelWarp(wa.m @ wb.m, _CANON, _CANON), a.model)


def invert(h: WarpParams) -> WarpParams:
    """Group inverse: compose(h, invert(h)) is the identity."""
    w = params_to_pixel_warp(h, _CANON, _CANON)
    return matrix_to_params(PixelWarp(np.linalg.inv(w.m), _CANON, _CANON), h.model)
