"""Linear-float images, PPM/PFM output and error metrics.

PPM output is 8-bit sRGB-ish (plain gamma 2.2); the PFM sidecar keeps the
exact little-endian float pixels for metric computation.
"""

import struct
from dataclasses import dataclass

import numpy as np

LIT_THRESHOLD = 1e-6


@dataclass
class Image:
    """Linear RGB float32 pixels, shape (height, width, 3), row 0 at top."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float32)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError("pixels must be (h, w, 3)")
        if not np.all(np.isfinite(p)) or p.min() < 0.0:
            raise ValueError("pixels must be finite and non-negative")
        self.pixels = p

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def write_ppm(img: Image, path: str) -> None:
    """Binary P6, max value 255, gamma 2.2 encoding from linear."""
    p = np.clip(img.pixels, 0.0, 1.0) ** (1.0 / 2.2)
    data = (p * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (img.width, img.height))
        f.write(data.tobytes())


def write_pfm(img: Image, path: str) -> None:
    """Color PFM, little-endian (negative scale), bottom row first."""
    with open(path, "wb") as f:
        f.write(b"PF\n%d %d\n-1.0\n" % (img.width, img.height))
        f.write(np.ascontiguousarray(
            img.pixels[::-1], dtype="<f4").tobytes())


def read_pfm(path: str) -> Image:
    with open(path, "rb") as f:
        if f.readline().strip() != b"PF":
            raise ValueError("not a color PFM file")
        w, h = (int(t) for t in f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(w * h * 12),
                             dtype="<f4" if scale < 0 else ">f4")
        return Image(pixels=data.reshape(h, w, 3)[::-1].copy())


def image_metrics(a: Image, b: Image) -> dict:
    """mae / rmse / max_err over lit pixels (either image above 1e-6)."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError("image dimensions differ")
    pa = a.pixels.astype(np.float64)
    pb = b.pixels.astype(np.float64)
    lit = (pa.max(axis=2) > LIT_THRESHOLD) | (pb.max(axis=2) > LIT_THRESHOLD)
    if not lit.any():
        return {"mae": 0.0, "rmse": 0.0, "max_err": 0.0, "lit_pixels": 0}
    d = np.abs(pa[lit] - pb[lit])
    return {"mae": float(d.mean()),
            "rmse": float(np.sqrt((d * d).mean())),
            "max_err": float(d.max()),
            "lit_pixels": int(lit.sum())}


def mean_abs_rel_error(test: Image, reference: Image) -> float:
    """Mean |test - ref| / ref over lit reference pixels (luminance)."""
    lt = test.pixels.astype(np.float64).mean(axis=2)
    lr = reference.pixels.astype(np.float64).mean(axis=2)
    lit = lr > LIT_THRESHOLD
    if not lit.any():
        return 0.0
    return float((np.abs(lt[lit] - lr[lit]) / lr[lit]).mean())


# Fixed ramp for difference images: dark blue -> teal -> green -> yellow,
# sampled at t = 0, 1/3, 2/3, 1 and interpolated linearly.
_RAMP = np.array([
    [0.267, 0.005, 0.329],
    [0.128, 0.567, 0.551],
    [0.369, 0.789, 0.383],
    [0.993, 0.906, 0.144],
], dtype=np.float64)


def colormap(values: np.ndarray, vmax: float) -> np.ndarray:
    """Map non-negative values through the fixed ramp; vmax saturates."""
    t = np.clip(np.asarray(values, dtype=np.float64) / max(vmax, 1e-12),
                0.0, 1.0) * (len(_RAMP) - 1)
    i0 = np.minimum(t.astype(np.int64), len(_RAMP) - 2)
    w = (t - i0)[..., None]
    return ((1.0 - w) * _RAMP[i0] + w * _RAMP[i0 + 1]).astype(np.float32)
