"""Spherical geometry primitives.

Directions are unit 3-vectors in a right-handed frame with +z the surface
normal.  A spherical polygon is an ordered vertex list on the unit sphere,
wound counter-clockwise when seen from outside; the clamped-cosine integral
over such a polygon has a closed form (one arc term per edge), which is the
quantity every light integral in this package eventually reduces to.
"""

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# Vertices this close to the horizon count as on it for clipping purposes.
CLIP_EPS = 1e-9


def direction_from_angles(theta: float, phi: float) -> np.ndarray:
    """Unit vector (sin t cos p, sin t sin p, cos t)."""
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def angles_from_direction(w) -> tuple:
    """Inverse of direction_from_angles; phi is reduced to [0, 2*pi)."""
    z = min(1.0, max(-1.0, float(w[2])))
    theta = math.acos(z)
    phi = math.atan2(float(w[1]), float(w[0])) % TWO_PI
    return theta, phi


def normalize(v: np.ndarray) -> np.ndarray:
    """Normalize along the last axis."""
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def sample_clamped_cosine(u1, u2) -> np.ndarray:
    """Map uniform (u1, u2) to cosine-distributed directions on z >= 0.

    Concentric (Shirley-Chiu) disk mapping followed by projection to the
    hemisphere; exact, and low-distortion so that stratified or
    low-discrepancy inputs stay well stratified on the sphere.
    """
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    a = 2.0 * u1 - 1.0
    b = 2.0 * u2 - 1.0
    use_a = np.abs(a) > np.abs(b)
    r = np.where(use_a, a, b)
    safe = np.where(r == 0.0, 1.0, r)
    ratio = np.where(use_a, b, a) / safe
    phi = np.where(use_a, (math.pi / 4.0) * ratio,
                   (math.pi / 2.0) - (math.pi / 4.0) * ratio)
    phi = np.where(r == 0.0, 0.0, phi)
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    z = np.sqrt(np.maximum(0.0, 1.0 - x * x - y * y))
    return np.stack([x, y, z], axis=-1)


@dataclass(frozen=True)
class Frame:
    """Orthonormal shading frame; rows (tangent, bitangent, normal) map
    world vectors to local coordinates."""

    tangent: np.ndarray
    bitangent: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        m = self.matrix()
        if np.abs(m @ m.T - np.eye(3)).max() > 1e-6:
            raise ValueError("frame axes are not orthonormal")
        if abs(np.linalg.det(m) - 1.0) > 1e-6:
            raise ValueError("frame is not right-handed")

    def matrix(self) -> np.ndarray:
        return np.stack([self.tangent, self.bitangent, self.normal])

    def to_local(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v) @ self.matrix().T

    def to_world(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v) @ self.matrix()


class SphericalPolygon:
    """Ordered unit vertices, counter-clockwise from outside the sphere.

    Zero vertices represents the empty polygon (integral 0).  Non-empty
    polygons carry 3 to 8 vertices; light quads may gain vertices when
    clipped against the horizon.
    """

    __slots__ = ("vertices",)

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        if len(v) != 0:
            if not 3 <= len(v) <= 8:
                raise ValueError(f"polygon needs 3..8 vertices, got {len(v)}")
            norms = np.linalg.norm(v, axis=1)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise ValueError("polygon vertices must be unit length")
        self.vertices = v

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0

    def __len__(self):
        return len(self.vertices)


EMPTY_POLYGON = SphericalPolygon(np.zeros((0, 3)))


def _clip_z_nonneg(verts):
    """Sutherland-Hodgman against z = 0 on vertex lists of 3-tuples.

    Crossing edges are split by linear interpolation in the embedding space
    and the new point renormalized, which is exact for great-circle edges.
    """
    out = []
    n = len(verts)
    for i in range(n):
        ax, ay, az = verts[i]
        bx, by, bz = verts[(i + 1) % n]
        a_in = az >= -CLIP_EPS
        b_in = bz >= -CLIP_EPS
        if a_in:
            out.append((ax, ay, az))
        if a_in != b_in:
            t = az / (az - bz)
            cx = ax + t * (bx - ax)
            cy = ay + t * (by - ay)
            inv = 1.0 / math.sqrt(cx * cx + cy * cy)
            out.append((cx * inv, cy * inv, 0.0))
    return out


def clip_to_upper_hemisphere(poly: SphericalPolygon) -> SphericalPolygon:
    """Clip a polygon against the horizon plane z = 0.

    Degenerate results (fewer than 3 vertices) collapse to the empty
    polygon, signaling a zero integral.
    """
    if poly.is_empty:
        return EMPTY_POLYGON
    if len(poly) > 5:
        raise ValueError("pre-clip polygons are limited to 5 vertices")
    clipped = _clip_z_nonneg([tuple(v) for v in poly.vertices])
    if len(clipped) < 3:
        return EMPTY_POLYGON
    return SphericalPolygon(np.array(clipped))


def _edge_sum(verts) -> float:
    """Sum of acos(v_i . v_j) * z(normalize(v_i x v_j)) over edges."""
    total = 0.0
    n = len(verts)
    for i in range(n):
        ax, ay, az = verts[i]
        bx, by, bz = verts[(i + 1) % n]
        d = ax * bx + ay * by + az * bz
        d = min(1.0, max(-1.0, d))
        cx = ay * bz - az * by
        cy = az * bx - ax * bz
        cz = ax * by - ay * bx
        cn = math.sqrt(cx * cx + cy * cy + cz * cz)
        if cn > 1e-15:
            total += math.acos(d) * (cz / cn)
    return total


def polygon_cosine_integral(poly: SphericalPolygon) -> float:
    """Integral of the clamped cosine cos(t)/pi over an upper-hemisphere
    polygon, via the per-edge vector-irradiance arc formula; in [0, 1]."""
    if poly.is_empty:
        return 0.0
    raw = _edge_sum([tuple(v) for v in poly.vertices]) / TWO_PI
    return min(1.0, max(0.0, raw))


def quad_cosine_integral_raw(verts) -> float:
    """Clip + integrate for a plain vertex list; unclamped edge sum / 2pi.

    Fast path used by the renderer; semantics match
    polygon_cosine_integral(clip_to_upper_hemisphere(...)) up to the final
    clamp, whose raw sign is useful for winding checks.
    """
    clipped = _clip_z_nonneg(verts)
    if len(clipped) < 3:
        return 0.0
    return _edge_sum(clipped) / TWO_PI
