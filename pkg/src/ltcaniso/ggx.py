"""Anisotropic GGX microfacet BRDF: evaluation, exact cosine-weighted
sampling, and the Monte-Carlo oracles used as ground truth by the fitting
and validation code.

Conventions: directions live in the local shading frame (+z normal), the
Fresnel factor is 1 everywhere except where a Schlick weight is requested
explicitly, and all evaluation functions broadcast over leading axes of the
direction arguments.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .core import direction_from_angles

ALPHA_MIN = 1e-3
# Grazing-view clamp; the NDF and BRDF are singular at cos(theta_v) = 0.
THETA_V_MAX = 0.995 * (math.pi / 2.0)

REJECTION_ROUND_CAP = 10_000


class DegenerateConfigError(RuntimeError):
    """Raised when rejection sampling fails to accept within the round cap."""


@dataclass(frozen=True)
class GgxConfig:
    """View direction (theta_v, phi_v) and roughnesses of one GGX lobe.

    Roughness is clamped to [ALPHA_MIN, 1] and theta_v to [0, THETA_V_MAX];
    both endpoints of the nominal parameter ranges are singular.
    """

    theta_v: float
    phi_v: float
    alpha_x: float
    alpha_y: float

    def __post_init__(self):
        object.__setattr__(self, "theta_v",
                           min(max(float(self.theta_v), 0.0), THETA_V_MAX))
        object.__setattr__(self, "phi_v", float(self.phi_v) % (2.0 * math.pi))
        for name in ("alpha_x", "alpha_y"):
            a = float(getattr(self, name))
            if a > 1.0:
                raise ValueError(f"{name} must be <= 1, got {a}")
            object.__setattr__(self, name, max(a, ALPHA_MIN))

    @property
    def view(self) -> np.ndarray:
        return direction_from_angles(self.theta_v, self.phi_v)

    def key(self) -> tuple:
        return (self.theta_v, self.phi_v, self.alpha_x, self.alpha_y)


@dataclass(frozen=True)
class BrdfSample:
    direction: np.ndarray


def ndf_eval(omega, alpha_x: float, alpha_y: float):
    """GGX normal distribution D(omega); zero on the lower hemisphere."""
    w = np.asarray(omega, dtype=np.float64)
    x, y, z = w[..., 0], w[..., 1], w[..., 2]
    q = x * x / (alpha_x * alpha_x) + y * y / (alpha_y * alpha_y) + z * z
    d = 1.0 / (math.pi * alpha_x * alpha_y * q * q)
    return np.where(z > 0.0, d, 0.0)


def smith_lambda(omega, alpha_x: float, alpha_y: float):
    """Smith Lambda(omega); z is clamped to 1e-7 so grazing directions give
    a large finite value instead of infinity."""
    w = np.asarray(omega, dtype=np.float64)
    x, y = w[..., 0], w[..., 1]
    z = np.maximum(np.abs(w[..., 2]), 1e-7)
    t = (alpha_x * alpha_x * x * x + alpha_y * alpha_y * y * y) / (z * z)
    return 0.5 * (-1.0 + np.sqrt(1.0 + t))


def g2(omega_v, omega_l, alpha_x: float, alpha_y: float):
    """Height-correlated masking-shadowing 1 / (1 + L(v) + L(l))."""
    return 1.0 / (1.0 + smith_lambda(omega_v, alpha_x, alpha_y)
                  + smith_lambda(omega_l, alpha_x, alpha_y))


def brdf_cos_eval(cfg: GgxConfig, omega_l):
    """Cosine-weighted GGX BRDF, D(h) G2(v,l) / (4 cos theta_v) with F = 1.

    Zero for light directions at or below the horizon and for the
    degenerate half vector v + l ~ 0.
    """
    v = cfg.view
    l = np.asarray(omega_l, dtype=np.float64)
    h = v + l
    hn = np.linalg.norm(h, axis=-1, keepdims=True)
    ok = (l[..., 2] > 0.0) & (hn[..., 0] > 1e-12)
    h = h / np.where(hn > 1e-12, hn, 1.0)
    d = ndf_eval(h, cfg.alpha_x, cfg.alpha_y)
    lv = smith_lambda(v, cfg.alpha_x, cfg.alpha_y)
    ll = smith_lambda(l, cfg.alpha_x, cfg.alpha_y)
    val = d / ((1.0 + lv + ll) * 4.0 * v[2])
    return np.where(ok, val, 0.0)


def sample_vndf(cfg: GgxConfig, u1, u2) -> np.ndarray:
    """Sample microfacet normals from the visible-normal distribution for
    the config's view direction (Heitz's hemispherical construction)."""
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    v = cfg.view
    ax, ay = cfg.alpha_x, cfg.alpha_y
    # Stretch into the configuration where the NDF is the uniform hemisphere.
    vh = np.array([ax * v[0], ay * v[1], v[2]])
    vh = vh / np.linalg.norm(vh)
    # Orthonormal basis around the stretched view.
    lensq = vh[0] * vh[0] + vh[1] * vh[1]
    if lensq > 1e-14:
        inv = 1.0 / math.sqrt(lensq)
        t1 = np.array([-vh[1] * inv, vh[0] * inv, 0.0])
    else:
        t1 = np.array([1.0, 0.0, 0.0])
    t2 = np.cross(vh, t1)
    # Uniform disk point, warped toward the visible half.
    r = np.sqrt(u1)
    phi = (2.0 * math.pi) * u2
    p1 = r * np.cos(phi)
    p2 = r * np.sin(phi)
    s = 0.5 * (1.0 + vh[2])
    p2 = (1.0 - s) * np.sqrt(np.maximum(0.0, 1.0 - p1 * p1)) + s * p2
    p3 = np.sqrt(np.maximum(0.0, 1.0 - p1 * p1 - p2 * p2))
    nh = (p1[..., None] * t1 + p2[..., None] * t2 + p3[..., None] * vh)
    # Unstretch back to the ellipsoid configuration.
    h = np.stack([ax * nh[..., 0], ay * nh[..., 1],
                  np.maximum(nh[..., 2], 1e-9)], axis=-1)
    return h / np.linalg.norm(h, axis=-1, keepdims=True)


def _reflect(v, h):
    d = np.sum(v * h, axis=-1, keepdims=True)
    return 2.0 * d * h - v


def sample_brdf_cos_batch(cfg: GgxConfig, n: int,
                          gen: np.random.Generator) -> np.ndarray:
    """n samples exactly proportional to brdf_cos_eval, by rejection.

    Proposal: VNDF sample reflected about the view.  The proposal density is
    G1(v) D(h) / (4 cos theta_v), so accepting with probability
    (1 + L(v)) / (1 + L(v) + L(l)) = G2 / G1(v) leaves exactly the
    cosine-weighted BRDF.  Below-horizon reflections are rejections.
    """
    v = cfg.view
    lv = float(smith_lambda(v, cfg.alpha_x, cfg.alpha_y))
    out = np.empty((n, 3), dtype=np.float64)
    filled = 0
    rate = 0.75  # running acceptance estimate, refined after each round
    for _ in range(REJECTION_ROUND_CAP):
        m = max(256, int((n - filled) / rate * 1.1))
        u = gen.random((3, m))
        h = sample_vndf(cfg, u[0], u[1])
        l = _reflect(v, h)
        ll = smith_lambda(l, cfg.alpha_x, cfg.alpha_y)
        accept = (l[:, 2] > 0.0) & (u[2] < (1.0 + lv) / (1.0 + lv + ll))
        l = l[accept]
        rate = max(len(l) / m, 0.05)
        k = min(len(l), n - filled)
        out[filled:filled + k] = l[:k]
        filled += k
        if filled >= n:
            return out
    raise DegenerateConfigError(
        f"rejection sampler exceeded {REJECTION_ROUND_CAP} rounds for {cfg}")


def sample_brdf_cos(cfg: GgxConfig, gen: np.random.Generator) -> BrdfSample:
    """Single draw from the cosine-weighted BRDF (Alg.-style rejection)."""
    return BrdfSample(direction=sample_brdf_cos_batch(cfg, 1, gen)[0])


def _vndf_weights(cfg: GgxConfig, n: int, gen: np.random.Generator):
    """VNDF-sampled half vectors with their BRDF-estimator weights.

    Each sample carries weight G2/G1(v) = (1+L(v)) / (1+L(v)+L(l)); the mean
    weight is the directional albedo (F = 1).  Below-horizon reflections
    carry zero.
    """
    v = cfg.view
    lv = float(smith_lambda(v, cfg.alpha_x, cfg.alpha_y))
    u = gen.random((2, n))
    h = sample_vndf(cfg, u[0], u[1])
    l = _reflect(v, h)
    ll = smith_lambda(l, cfg.alpha_x, cfg.alpha_y)
    w = np.where(l[:, 2] > 0.0, (1.0 + lv) / (1.0 + lv + ll), 0.0)
    return h, l, w


def directional_albedo(cfg: GgxConfig, n_samples: int = 1_000_000,
                       seed: int = 0) -> float:
    """MC estimate of the hemispherical integral of brdf_cos_eval (F = 1)."""
    gen = _rng.stream(seed, "albedo", cfg.key())
    _, _, w = _vndf_weights(cfg, n_samples, gen)
    return float(w.mean())


def fresnel_weight(cfg: GgxConfig, n_samples: int = 1_000_000,
                   seed: int = 0) -> float:
    """MC estimate of the integral of brdf_cos * (1 - <v,h>)^5.

    This is the companion channel to directional_albedo under the Schlick
    split F = F0 + (1 - F0)(1 - <v,h>)^5."""
    gen = _rng.stream(seed, "fresnel", cfg.key())
    h, _, w = _vndf_weights(cfg, n_samples, gen)
    c = np.clip(np.sum(cfg.view * h, axis=-1), 0.0, 1.0)
    return float((w * (1.0 - c) ** 5).mean())


def mc_polygon_integral(cfg: GgxConfig, quad_corners, n_samples: int,
                        seed: int = 0) -> tuple:
    """Unbiased MC estimate of the BRDF-cos integral over a quad light.

    quad_corners: (4, 3) positions in the shading frame (origin at the
    shading point); the quad must be a parallelogram, sampled uniformly by
    area with the usual surface-to-solid-angle factor.  Returns
    (mean, standard_error).
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    c = np.asarray(quad_corners, dtype=np.float64)
    if c.shape != (4, 3):
        raise ValueError("quad_corners must be (4, 3)")
    e1 = c[1] - c[0]
    e2 = c[3] - c[0]
    if np.abs((c[2] - c[0]) - (e1 + e2)).max() > 1e-6 * np.abs(c).max():
        raise ValueError("light quad must be a parallelogram")
    nrm = np.cross(e1, e2)
    area = np.linalg.norm(nrm)
    nrm = nrm / area
    gen = _rng.stream(seed, "mc_polygon", cfg.key(), n_samples)
    u = gen.random((n_samples, 2))
    p = c[0] + u[:, :1] * e1 + u[:, 1:] * e2
    r2 = np.sum(p * p, axis=-1)
    r = np.sqrt(r2)
    l = p / r[:, None]
    # One-sided emitter: corner winding normal faces the lit half-space.
    cos_light = np.maximum(0.0, -np.sum(l * nrm, axis=-1))
    f = brdf_cos_eval(cfg, l) * cos_light / r2
    vals = f * area
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n_samples))
    return mean, stderr
