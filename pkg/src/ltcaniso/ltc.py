"""Linearly transformed cosines.

An LTC is the clamped-cosine density pushed through a 3x3 matrix M with the
convention omega = normalize(M @ omega_o); that fixed convention is used for
evaluation, sampling, polygon integration and serialization alike.  The
density is invariant under right-multiplication of M by z-rotations and
xy flips, which is what makes table alignment (fit module) necessary.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import (EMPTY_POLYGON, SphericalPolygon, clip_to_upper_hemisphere,
                   normalize, polygon_cosine_integral, sample_clamped_cosine)

DET_MIN = 1e-9


def invert_3x3(m: np.ndarray) -> tuple:
    """Cofactor inverse and determinant of a 3x3 matrix (closed form).

    Raises ValueError when |det| < DET_MIN instead of dividing by it.
    """
    a, b, c = m[0]
    d, e, f = m[1]
    g, h, i = m[2]
    co = np.array([
        [e * i - f * h, c * h - b * i, b * f - c * e],
        [f * g - d * i, a * i - c * g, c * d - a * f],
        [d * h - e * g, b * g - a * h, a * e - b * d],
    ])
    det = a * co[0, 0] + b * co[1, 0] + c * co[2, 0]
    if abs(det) < DET_MIN:
        raise ValueError(f"matrix is singular (det = {det:g})")
    return co / det, det


class LtcMatrix:
    """A 3x3 LTC transform with its inverse and |det(M^-1)| cached.

    The matrix must be comfortably invertible (|det| >= 1e-9) and the
    cofactor inverse is verified to reproduce the identity to 1e-5.
    """

    __slots__ = ("m", "m_inv", "det", "inv_det_abs")

    def __init__(self, m):
        m = np.array(m, dtype=np.float64).reshape(3, 3)
        m_inv, det = invert_3x3(m)
        resid = np.abs(m @ m_inv - np.eye(3)).max()
        if resid > 1e-5:
            raise ValueError(f"inverse residual {resid:g} exceeds 1e-5")
        self.m = m
        self.m_inv = m_inv
        self.det = det
        self.inv_det_abs = abs(1.0 / det)

    def __repr__(self):
        return f"LtcMatrix({self.m.tolist()!r})"


def isotropic_ltc(a: float, b: float, c: float, d: float) -> LtcMatrix:
    """The sparse five-parameter form [[a,0,b],[0,c,0],[d,0,1]] used by
    isotropic tables; provided as a constructor convenience."""
    return LtcMatrix([[a, 0.0, b], [0.0, c, 0.0], [d, 0.0, 1.0]])


@dataclass(frozen=True)
class ZRotation:
    """Rotation about +z by alpha radians."""

    alpha: float

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.alpha), math.sin(self.alpha)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class XYFlip:
    """Diagonal flip diag(sx, sy, 1) with sx, sy in {+1, -1}."""

    sx: int
    sy: int

    def __post_init__(self):
        if self.sx not in (-1, 1) or self.sy not in (-1, 1):
            raise ValueError("flip signs must be +1 or -1")

    def matrix(self) -> np.ndarray:
        return np.diag([float(self.sx), float(self.sy), 1.0])


def apply_rotation_flip(mat: LtcMatrix, r: ZRotation, f: XYFlip) -> LtcMatrix:
    """M @ R_z @ F_xy; represents the identical LTC distribution."""
    return LtcMatrix(mat.m @ r.matrix() @ f.matrix())


def ltc_eval(mat: LtcMatrix, omega):
    """LTC density D(omega) = D_o(normalize(Mi w)) |det Mi| / ||Mi w||^3.

    Broadcasts over leading axes of omega; zero where the pulled-back
    direction falls below the cosine's hemisphere.
    """
    w = np.asarray(omega, dtype=np.float64)
    wo = w @ mat.m_inv.T
    nn = np.linalg.norm(wo, axis=-1)
    safe = np.maximum(nn, 1e-12)
    coso = wo[..., 2] / safe
    val = np.maximum(coso, 0.0) / math.pi * mat.inv_det_abs / safe ** 3
    return np.where(nn < 1e-12, 0.0, val)


def ltc_sample(mat: LtcMatrix, u1, u2) -> np.ndarray:
    """Exact LTC sampling: cosine-sample omega_o, return normalize(M w_o)."""
    wo = sample_clamped_cosine(u1, u2)
    return normalize(wo @ mat.m.T)


def ltc_polygon_integral(mat: LtcMatrix, poly: SphericalPolygon) -> float:
    """Analytic LTC integral over a spherical polygon.

    Pulls the polygon back through M^-1, renormalizes the vertices, clips
    against the horizon and applies the clamped-cosine edge formula.
    """
    if poly.is_empty:
        return 0.0
    verts = normalize(poly.vertices @ mat.m_inv.T)
    clipped = clip_to_upper_hemisphere(SphericalPolygon(verts))
    return polygon_cosine_integral(clipped)
