"""CPU validation renderer: spheres under one rectangular light.

Shading happens in a per-hit frame derived from the sphere's
latitude/longitude parameterization (tangent = d position / d phi, with a
fixed fallback tangent at the poles); the anisotropic roughness axes follow
that frame.  The light is one-sided: its corner winding normal
cross(c1 - c0, c3 - c0) faces the emitting half-space.

Two shading paths are provided: the analytic LTC path driven by a fitted
table, and a stratified area-sampling Monte-Carlo reference of the GGX BRDF
with Schlick Fresnel.  Renders are deterministic for a given seed and
independent of the thread count (per-row random streams).
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .core import Frame, quad_cosine_integral_raw
from .ggx import (ALPHA_MIN, GgxConfig, brdf_cos_eval, directional_albedo,
                  ndf_eval, smith_lambda)
from .images import Image, colormap
from .ltc import LtcMatrix, ltc_eval
from .lut import LtcTable4D, fetch_many


@dataclass(frozen=True)
class Material:
    alpha_x: float
    alpha_y: float
    f0: float = 0.04


@dataclass(frozen=True)
class LightQuad:
    corners: np.ndarray  # (4, 3) world positions, parallelogram
    radiance: float

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=np.float64).reshape(4, 3)
        e1, e2 = c[1] - c[0], c[3] - c[0]
        if np.abs((c[2] - c[0]) - (e1 + e2)).max() > 1e-6 * max(
                1.0, np.abs(c).max()):
            raise ValueError("light corners must form a parallelogram")
        object.__setattr__(self, "corners", c)

    @property
    def normal(self) -> np.ndarray:
        c = self.corners
        n = np.cross(c[1] - c[0], c[3] - c[0])
        return n / np.linalg.norm(n)

    @property
    def area(self) -> float:
        c = self.corners
        return float(np.linalg.norm(np.cross(c[1] - c[0], c[3] - c[0])))


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    fov_deg: float
    width: int
    height: int
    up: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "look_at",
                           np.asarray(self.look_at, dtype=np.float64))
        up = [0.0, 0.0, 1.0] if self.up is None else self.up
        object.__setattr__(self, "up", np.asarray(up, dtype=np.float64))
        if self.width < 16 or self.height < 16:
            raise ValueError("camera resolution must be at least 16x16")


@dataclass(frozen=True)
class Scene:
    sphere_center: np.ndarray
    sphere_radius: float
    material: Material
    light: LightQuad
    camera: Camera

    def __post_init__(self):
        object.__setattr__(self, "sphere_center",
                           np.asarray(self.sphere_center, dtype=np.float64))


def scene_from_json(path_or_dict) -> Scene:
    if isinstance(path_or_dict, dict):
        d = path_or_dict
    else:
        with open(path_or_dict) as f:
            d = json.load(f)
    cam = d["camera"]
    return Scene(
        sphere_center=d["sphere"]["center"],
        sphere_radius=float(d["sphere"]["radius"]),
        material=Material(alpha_x=float(d["material"]["alpha_x"]),
                          alpha_y=float(d["material"]["alpha_y"]),
                          f0=float(d["sphere"].get("f0", 0.04))),
        light=LightQuad(corners=d["light"]["corners"],
                        radiance=float(d["light"]["radiance"])),
        camera=Camera(position=cam["position"], look_at=cam["look_at"],
                      fov_deg=float(cam["fov_deg"]),
                      width=int(cam["width"]), height=int(cam["height"]),
                      up=cam.get("up")),
    )


def scene_to_json(scene: Scene) -> dict:
    return {
        "sphere": {"center": scene.sphere_center.tolist(),
                   "radius": scene.sphere_radius,
                   "f0": scene.material.f0},
        "material": {"alpha_x": scene.material.alpha_x,
                     "alpha_y": scene.material.alpha_y},
        "light": {"corners": scene.light.corners.tolist(),
                  "radiance": scene.light.radiance},
        "camera": {"position": scene.camera.position.tolist(),
                   "look_at": scene.camera.look_at.tolist(),
                   "up": scene.camera.up.tolist(),
                   "fov_deg": scene.camera.fov_deg,
                   "width": scene.camera.width,
                   "height": scene.camera.height},
    }


def sphere_frames(normals: np.ndarray) -> np.ndarray:
    """Per-hit (..., 3, 3) frame rows (tangent, bitangent, normal) from the
    sphere's lat/long parameterization; fixed tangent at the poles."""
    n = np.asarray(normals, dtype=np.float64)
    sin_t = np.sqrt(n[..., 0] ** 2 + n[..., 1] ** 2)
    polar = sin_t < 1e-9
    safe = np.where(polar, 1.0, sin_t)
    t = np.stack([-n[..., 1] / safe, n[..., 0] / safe,
                  np.zeros_like(safe)], axis=-1)
    t[polar] = (1.0, 0.0, 0.0)
    b = np.cross(n, t)
    return np.stack([t, b, n], axis=-2)


def local_view_angles(frames: np.ndarray, view_world: np.ndarray) -> tuple:
    v = np.einsum("...ij,...j->...i", frames, view_world)
    theta = np.arccos(np.clip(v[..., 2], -1.0, 1.0))
    phi = np.arctan2(v[..., 1], v[..., 0]) % (2.0 * math.pi)
    return theta, phi


def _fresnel_scale(mat: Material, n_d, f_d):
    return mat.f0 * n_d + (1.0 - mat.f0) * f_d


def shade_ltc(table: LtcTable4D, frame: Frame, hit_point, view_dir,
              material: Material, light: LightQuad) -> float:
    """Analytic radiance at one hit: table fetch, polygon integral of the
    fetched LTC over the light, scaled by the preintegrated Fresnel terms."""
    r = frame.matrix()
    v = r @ np.asarray(view_dir, dtype=np.float64)
    theta = math.acos(min(1.0, max(-1.0, v[2])))
    phi = math.atan2(v[1], v[0]) % (2.0 * math.pi)
    m, m_inv, n_d, f_d = fetch_many(
        table, np.array([theta]), np.array([phi]),
        material.alpha_x, material.alpha_y)
    corners = (np.asarray(light.corners, dtype=np.float64)
               - np.asarray(hit_point, dtype=np.float64)) @ r.T
    # Emitter winding (normal toward the lit side) projects to a clockwise
    # spherical polygon; reverse for the counter-clockwise edge formula.
    verts = corners[::-1] @ m_inv[0].T
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    e = min(1.0, max(0.0, quad_cosine_integral_raw(
        [tuple(p) for p in verts])))
    return light.radiance * _fresnel_scale(material, float(n_d[0]),
                                           float(f_d[0])) * e


def shade_reference(frame: Frame, hit_point, view_dir, material: Material,
                    light: LightQuad, n_samples: int, seed: int = 0) -> float:
    """Unbiased MC radiance at one hit (uniform area sampling, GGX with
    Schlick Fresnel at the half vector); deterministic per seed."""
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    r = frame.matrix()
    v = r @ np.asarray(view_dir, dtype=np.float64)
    cfg = GgxConfig(theta_v=math.acos(min(1.0, max(-1.0, v[2]))),
                    phi_v=math.atan2(v[1], v[0]),
                    alpha_x=material.alpha_x, alpha_y=material.alpha_y)
    c = (np.asarray(light.corners, dtype=np.float64)
         - np.asarray(hit_point, dtype=np.float64)) @ r.T
    e1, e2 = c[1] - c[0], c[3] - c[0]
    nrm = np.cross(e1, e2)
    area = np.linalg.norm(nrm)
    nrm = nrm / area
    gen = _rng.stream(seed, "shade_reference", cfg.key(), n_samples)
    u = gen.random((n_samples, 2))
    p = c[0] + u[:, :1] * e1 + u[:, 1:] * e2
    r2 = np.sum(p * p, axis=1)
    l = p / np.sqrt(r2)[:, None]
    cos_l = np.maximum(0.0, -l @ nrm)
    h = cfg.view + l
    h /= np.linalg.norm(h, axis=1, keepdims=True)
    fres = material.f0 + (1.0 - material.f0) * (
        1.0 - np.clip(np.sum(cfg.view * h, axis=1), 0.0, 1.0)) ** 5
    vals = brdf_cos_eval(cfg, l) * fres * cos_l / r2
    return light.radiance * area * float(vals.mean())


def _camera_rays(cam: Camera) -> np.ndarray:
    fwd = cam.look_at - cam.position
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, cam.up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise ValueError("camera up vector is parallel to view direction")
    right /= rn
    up = np.cross(right, fwd)
    tan_y = math.tan(math.radians(cam.fov_deg) * 0.5)
    tan_x = tan_y * cam.width / cam.height
    xs = (2.0 * (np.arange(cam.width) + 0.5) / cam.width - 1.0) * tan_x
    ys = (1.0 - 2.0 * (np.arange(cam.height) + 0.5) / cam.height) * tan_y
    d = (fwd[None, None]
         + xs[None, :, None] * right[None, None]
         + ys[:, None, None] * up[None, None])
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def _intersect_sphere(scene: Scene, dirs: np.ndarray) -> tuple:
    oc = scene.camera.position - scene.sphere_center
    b = dirs @ oc
    cc = oc @ oc - scene.sphere_radius ** 2
    disc = b * b - cc
    t = -b - np.sqrt(np.maximum(disc, 0.0))
    hit = (disc > 0.0) & (t > 1e-9)
    return hit, t


def _render_ltc(scene: Scene, table: LtcTable4D) -> Image:
    cam = scene.camera
    dirs = _camera_rays(cam)
    hit, t = _intersect_sphere(scene, dirs)
    img = np.zeros((cam.height, cam.width, 3), dtype=np.float32)
    if not hit.any():
        return Image(pixels=img)
    d = dirs[hit]
    points = cam.position + t[hit][:, None] * d
    normals = (points - scene.sphere_center) / scene.sphere_radius
    frames = sphere_frames(normals)
    theta, phi = local_view_angles(frames, -d)
    mat = scene.material
    _, m_inv, n_d, f_d = fetch_many(table, theta, phi,
                                    mat.alpha_x, mat.alpha_y)
    # Reversed corner order: emitter winding is clockwise on the sphere.
    corners_local = np.einsum("pij,pkj->pki", frames,
                              scene.light.corners[None, ::-1]
                              - points[:, None])
    scale = scene.light.radiance * _fresnel_scale(mat, n_d, f_d)
    vals = np.zeros(len(d))
    for k in range(len(d)):
        verts = corners_local[k] @ m_inv[k].T
        verts /= np.linalg.norm(verts, axis=1, keepdims=True)
        e = quad_cosine_integral_raw([tuple(p) for p in verts])
        vals[k] = min(1.0, max(0.0, e))
    shade = (scale * vals).astype(np.float32)
    img[hit] = shade[:, None]
    return Image(pixels=img)


def _reference_rows(scene: Scene, rows, dirs, hit, t, spp, seed, out):
    cam = scene.camera
    mat = scene.material
    light = scene.light
    # Jittered stratification when spp is a perfect square, else pure random.
    s = int(math.isqrt(spp))
    strata = None
    if s * s == spp:
        strata = np.stack([np.arange(spp) % s, np.arange(spp) // s],
                          axis=-1).astype(np.float64)
    for row in rows:
        mask = hit[row]
        if not mask.any():
            continue
        gen = _rng.stream(seed, "render_reference", row)
        u = gen.random((cam.width, spp, 2))
        if strata is not None:
            u = (strata[None] + u) / s
        u = u[mask]
        d = dirs[row][mask]
        points = cam.position + t[row][mask][:, None] * d
        normals = (points - scene.sphere_center) / scene.sphere_radius
        frames = sphere_frames(normals)
        v_local = np.einsum("pij,pj->pi", frames, -d)
        c_local = np.einsum("pij,pkj->pki", frames,
                            light.corners[None] - points[:, None])
        e1 = c_local[:, 1] - c_local[:, 0]
        e2 = c_local[:, 3] - c_local[:, 0]
        nrm = np.cross(e1, e2)
        area = np.linalg.norm(nrm, axis=1)
        nrm /= area[:, None]
        p = (c_local[:, None, 0]
             + u[..., :1] * e1[:, None] + u[..., 1:] * e2[:, None])
        r2 = np.sum(p * p, axis=-1)
        l = p / np.sqrt(r2)[..., None]
        cos_l = np.maximum(0.0, -np.einsum("psi,pi->ps", l, nrm))
        h = v_local[:, None] + l
        h /= np.linalg.norm(h, axis=-1, keepdims=True)
        # Inline anisotropic GGX over (pixel, sample) arrays.
        ax, ay = max(mat.alpha_x, ALPHA_MIN), max(mat.alpha_y, ALPHA_MIN)
        ndf = ndf_eval(h, ax, ay)
        lam_l = smith_lambda(l, ax, ay)
        lam_v = smith_lambda(v_local, ax, ay)[:, None]
        cos_v = np.maximum(v_local[:, 2], 1e-7)[:, None]
        rho_cos = np.where(l[..., 2] > 0.0,
                           ndf / ((1.0 + lam_v + lam_l) * 4.0 * cos_v), 0.0)
        fres = mat.f0 + (1.0 - mat.f0) * (
            1.0 - np.clip(np.einsum("psi,pi->ps", h, v_local), 0, 1)) ** 5
        contrib = (rho_cos * fres * cos_l / r2).mean(axis=1) * area
        out[row, mask] = (light.radiance * contrib)[:, None]


def _render_reference(scene: Scene, spp: int, seed: int,
                      threads: int | None) -> Image:
    cam = scene.camera
    dirs = _camera_rays(cam)
    hit, t = _intersect_sphere(scene, dirs)
    out = np.zeros((cam.height, cam.width, 3), dtype=np.float64)
    rows = list(range(cam.height))
    if threads and threads > 1:
        batches = [rows[i::threads] for i in range(threads)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: _reference_rows(
                scene, b, dirs, hit, t, spp, seed, out), batches))
    else:
        _reference_rows(scene, rows, dirs, hit, t, spp, seed, out)
    return Image(pixels=out.astype(np.float32))


def diff_image(a: Image, b: Image, vmax: float = 0.25) -> Image:
    """Color-ramped |a - b| (mean over channels), saturating at vmax."""
    d = np.abs(a.pixels.astype(np.float64)
               - b.pixels.astype(np.float64)).mean(axis=2)
    return Image(pixels=colormap(d, vmax))


def render(scene: Scene, mode: str, table: LtcTable4D | None = None,
           spp: int = 256, seed: int = 0,
           threads: int | None = None) -> Image:
    """Render one scene in mode 'ltc', 'reference' or 'diff'."""
    if mode == "ltc":
        if table is None:
            raise ValueError("ltc mode needs a table")
        return _render_ltc(scene, table)
    if mode == "reference":
        return _render_reference(scene, spp, seed, threads)
    if mode == "diff":
        if table is None:
            raise ValueError("diff mode needs a table")
        return diff_image(_render_ltc(scene, table),
                          _render_reference(scene, spp, seed, threads))
    raise ValueError(f"unknown render mode {mode!r}")


def plot_lobe(source, resolution: int = 256, vmax: float | None = None,
              albedo_samples: int = 200_000) -> Image:
    """Hemisphere heatmap of a normalized density on the orthographic disk.

    source is a GgxConfig (plotted as brdf_cos / albedo) or an LtcMatrix
    (plotted as the LTC density).  Intensity is log1p(d) / log1p(vmax) so
    two plots sharing vmax share their scale exactly.
    """
    xs = np.linspace(-1.0, 1.0, resolution)
    x, y = np.meshgrid(xs, -xs)
    r2 = x * x + y * y
    inside = r2 <= 1.0
    w = np.stack([x, y, np.sqrt(np.maximum(0.0, 1.0 - r2))], axis=-1)
    if isinstance(source, GgxConfig):
        dens = brdf_cos_eval(source, w) / directional_albedo(
            source, albedo_samples)
    elif isinstance(source, LtcMatrix):
        dens = ltc_eval(source, w)
    else:
        raise TypeError("source must be GgxConfig or LtcMatrix")
    dens = np.where(inside, dens, 0.0)
    if vmax is None:
        vmax = float(dens.max())
    img = np.log1p(dens) / math.log1p(max(vmax, 1e-9))
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return Image(pixels=np.repeat(img[..., None], 3, axis=2))


def plot_lobe_pair(cfg: GgxConfig, mat: LtcMatrix,
                   resolution: int = 256) -> tuple:
    """GGX and LTC lobe plots on one shared intensity scale."""
    xs = np.linspace(-1.0, 1.0, resolution)
    x, y = np.meshgrid(xs, -xs)
    r2 = x * x + y * y
    w = np.stack([x, y, np.sqrt(np.maximum(0.0, 1.0 - r2))], axis=-1)
    g = np.where(r2 <= 1.0, brdf_cos_eval(cfg, w), 0.0)
    g = g / directional_albedo(cfg, 200_000)
    l = np.where(r2 <= 1.0, ltc_eval(mat, w), 0.0)
    vmax = float(max(g.max(), l.max()))
    return (plot_lobe(cfg, resolution, vmax=vmax),
            plot_lobe(mat, resolution, vmax=vmax))
