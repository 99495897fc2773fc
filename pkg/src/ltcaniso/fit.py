"""Sliced-Wasserstein fitting of an LTC matrix to a GGX lobe, plus the
alignment step that picks a canonical representative of each fitted matrix's
rotation/flip equivalence class so that table interpolation is well defined.

The loss between the two sample clouds is the average, over random
projection directions, of the mean absolute difference between their sorted
projections.  Its gradient with respect to M flows through the LTC samples
f_j = normalize(M u_j): with the sorting permutation held fixed,

    dL/dM = (1/nd) sum_{j,w} s_{jw} (w - (f_j . w) f_j) u_j^T / ||M u_j||

where s is the sign of the paired sorted difference.  The same kernel backs
the public loss/gradient functions (float64) and the fitting loop (float32,
blocked over directions to stay cache resident).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .core import sample_clamped_cosine
from .ggx import GgxConfig, sample_brdf_cos_batch
from .ltc import LtcMatrix, XYFlip, ZRotation

_DIR_BLOCK = 4


class FitError(RuntimeError):
    """Fit diverged past the reset budget."""


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters of the SGD loop; defaults follow the reference
    procedure (10000 steps, 2048 samples, 64 projection directions)."""

    steps: int = 10_000
    samples_per_step: int = 2048
    directions_per_step: int = 64
    learning_rate: float = 5e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 2500
    seed: int = 0
    init: LtcMatrix | None = None
    ema_window: int = 100
    max_resets: int = 10

    def __post_init__(self):
        if self.steps < 1 or self.samples_per_step < 2:
            raise ValueError("need steps >= 1 and samples_per_step >= 2")
        if self.directions_per_step < 1 or self.learning_rate <= 0.0:
            raise ValueError("need directions >= 1 and learning_rate > 0")


@dataclass(frozen=True)
class AlignConfig:
    """Search resolution for the rotation/flip alignment."""

    rotation_steps: int = 360
    refine_tol: float = 1e-4
    cosine_sample_count: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.rotation_steps < 8:
            raise ValueError("need at least 8 rotation steps")


@dataclass
class FitResult:
    matrix: LtcMatrix
    best_smoothed_loss: float
    final_smoothed_loss: float
    smoothed_history: np.ndarray
    n_resets: int


def _sw_loss_grad(m: np.ndarray, cosine_samples: np.ndarray,
                  ggx_samples: np.ndarray, proj_dirs: np.ndarray,
                  block: int = _DIR_BLOCK, tie_tol: float = 0.0) -> tuple:
    """Loss and dLoss/dM for one fixed set of samples and directions.

    tie_tol treats |paired difference| <= tie_tol as an exact tie (zero
    subgradient); the float64 public gradient uses an ulp-scale value so
    that identical sample multisets yield an exactly zero gradient.
    """
    dtype = m.dtype
    n = len(cosine_samples)
    d = len(proj_dirs)
    v = cosine_samples @ m.T
    nn = np.sqrt((v * v).sum(axis=1))
    if not np.all(nn > 1e-12):
        raise FitError("matrix collapsed a cosine sample to zero length")
    f = v / nn[:, None]
    ft = np.ascontiguousarray(f.T)
    gt = np.ascontiguousarray(ggx_samples.T)
    loss = 0.0
    acc_w = np.zeros((n, 3), dtype=dtype)
    acc_p = np.zeros(n, dtype=dtype)
    scatter = np.empty((min(block, d), n), dtype=dtype)
    for k in range(0, d, block):
        wb = proj_dirs[k:k + block]
        p = wb @ ft
        q = wb @ gt
        order = np.argsort(p, axis=1)
        ps = np.take_along_axis(p, order, axis=1)
        q.sort(axis=1)
        ps -= q
        loss += float(np.abs(ps).sum())
        if tie_tol > 0.0:
            ties = np.abs(ps) <= tie_tol
            signs = np.sign(ps, out=ps)
            signs[ties] = 0.0
        else:
            signs = np.sign(ps, out=ps)
        c = scatter[:len(wb)]
        np.put_along_axis(c, order, signs, axis=1)
        acc_w += c.T @ wb
        acc_p += np.einsum("dn,dn->n", c, p)
    inv = 1.0 / (n * d)
    grad_f = (acc_w - acc_p[:, None] * f) / nn[:, None]
    return loss * inv, (grad_f.T @ cosine_samples) * inv


def sw_loss(f_samples, g_samples, proj_dirs) -> float:
    """Sliced-Wasserstein estimate between two equally-sized sample sets:
    mean over directions of mean |sorted(f.w) - sorted(g.w)|."""
    f = np.asarray(f_samples, dtype=np.float64)
    g = np.asarray(g_samples, dtype=np.float64)
    w = np.asarray(proj_dirs, dtype=np.float64)
    if f.shape != g.shape:
        raise ValueError("sample sets must have identical shapes")
    pf = np.sort(w @ f.T, axis=1)
    pg = np.sort(w @ g.T, axis=1)
    return float(np.abs(pf - pg).mean())


def sw_loss_gradient(mat: LtcMatrix, cosine_samples, ggx_samples,
                     proj_dirs) -> np.ndarray:
    """Gradient of sw_loss(normalize(M @ cosine), ggx) in the 9 entries of M,
    with sorting permutations frozen (the a.e. subgradient)."""
    u = np.asarray(cosine_samples, dtype=np.float64)
    g = np.asarray(ggx_samples, dtype=np.float64)
    w = np.asarray(proj_dirs, dtype=np.float64)
    if u.shape != g.shape:
        raise ValueError("sample sets must have identical shapes")
    _, grad = _sw_loss_grad(mat.m.astype(np.float64), u, g, w, block=len(w),
                            tie_tol=64.0 * np.finfo(np.float64).eps)
    return grad


def _uniform_sphere(gen, n, dtype):
    w = gen.standard_normal((n, 3), dtype=dtype)
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    return w


class _SamplePools:
    """Per-fit sample pools, regenerated in large chunks.

    Drawing each step's samples by slicing a pooled block preserves the
    per-step iid semantics (the stream is consumed in order) while
    amortizing generator overhead across many steps.
    """

    def __init__(self, cfg: GgxConfig, fit: FitConfig, pool_steps: int = 128):
        self.cfg = cfg
        self.n = fit.samples_per_step
        self.d = fit.directions_per_step
        self.pool_steps = pool_steps
        self.gen_g = _rng.stream(fit.seed, "fit_ggx", cfg.key())
        self.gen_c = _rng.stream(fit.seed, "fit_cos", cfg.key())
        self.gen_w = _rng.stream(fit.seed, "fit_dirs", cfg.key())
        self._cursor = pool_steps

    def step_arrays(self):
        if self._cursor >= self.pool_steps:
            k = self.pool_steps
            self._g = sample_brdf_cos_batch(
                self.cfg, k * self.n, self.gen_g).astype(np.float32)
            u = self.gen_c.random((k * self.n, 2))
            self._c = sample_clamped_cosine(
                u[:, 0], u[:, 1]).astype(np.float32)
            self._w = _uniform_sphere(self.gen_w, k * self.d, np.float32)
            self._cursor = 0
        i = self._cursor
        self._cursor += 1
        return (self._g[i * self.n:(i + 1) * self.n],
                self._c[i * self.n:(i + 1) * self.n],
                self._w[i * self.d:(i + 1) * self.d])


def fit_ltc_full(cfg: GgxConfig, fit: FitConfig,
                 progress=None) -> FitResult:
    """Run the SGD loop and return the best-smoothed-loss matrix plus
    diagnostics.  Deterministic for a given (cfg, fit.seed).

    A divergence guard restores the best matrix seen and halves the step
    size whenever an entry of M passes 1e4 or |det| drops under 1e-9; more
    than max_resets such events abort with FitError.
    """
    m = np.eye(3) if fit.init is None else fit.init.m.copy()
    pools = _SamplePools(cfg, fit)
    alpha = 1.0 / fit.ema_window
    ema = math.inf
    best_loss = math.inf
    best_m = m.copy()
    history = np.empty(fit.steps, dtype=np.float32)
    resets = 0
    for step in range(fit.steps):
        g_s, c_s, w_s = pools.step_arrays()
        loss, grad = _sw_loss_grad(m.astype(np.float32), c_s, g_s, w_s)
        ema = loss if step == 0 else ema + alpha * (loss - ema)
        history[step] = ema
        if ema < best_loss:
            best_loss = ema
            best_m = m.copy()
        lr = (fit.learning_rate
              * fit.lr_decay ** (step // fit.lr_decay_every)
              * 0.5 ** resets)
        m -= lr * grad.astype(np.float64)
        det = np.linalg.det(m)
        if np.abs(m).max() > 1e4 or abs(det) < 1e-9:
            resets += 1
            if resets > fit.max_resets:
                raise FitError(
                    f"fit diverged after {resets} resets for {cfg}")
            m = best_m.copy()
        if progress is not None:
            progress(step, loss)
    return FitResult(matrix=LtcMatrix(best_m),
                     best_smoothed_loss=float(best_loss),
                     final_smoothed_loss=float(ema),
                     smoothed_history=history,
                     n_resets=resets)


def fit_ltc(cfg: GgxConfig, fit: FitConfig, progress=None) -> LtcMatrix:
    """Fit an LTC to the GGX lobe of cfg (see fit_ltc_full)."""
    return fit_ltc_full(cfg, fit, progress=progress).matrix


def _hammersley_cosine(count: int, seed: int) -> np.ndarray:
    """Fixed low-discrepancy cosine sample set (van der Corput base 2 with a
    seeded Cranley-Patterson rotation)."""
    i = np.arange(count, dtype=np.uint32)
    bits = i.copy()
    bits = ((bits << np.uint32(16)) | (bits >> np.uint32(16)))
    bits = ((bits & np.uint32(0x55555555)) << np.uint32(1)) | \
           ((bits & np.uint32(0xAAAAAAAA)) >> np.uint32(1))
    bits = ((bits & np.uint32(0x33333333)) << np.uint32(2)) | \
           ((bits & np.uint32(0xCCCCCCCC)) >> np.uint32(2))
    bits = ((bits & np.uint32(0x0F0F0F0F)) << np.uint32(4)) | \
           ((bits & np.uint32(0xF0F0F0F0)) >> np.uint32(4))
    bits = ((bits & np.uint32(0x00FF00FF)) << np.uint32(8)) | \
           ((bits & np.uint32(0xFF00FF00)) >> np.uint32(8))
    u2 = bits.astype(np.float64) * 2.3283064365386963e-10
    u1 = (i.astype(np.float64) + 0.5) / count
    shift = _rng.stream(seed, "align_shift").random(2)
    u1 = (u1 + shift[0]) % 1.0
    u2 = (u2 + shift[1]) % 1.0
    return sample_clamped_cosine(u1, u2)


_FLIPS = (XYFlip(1, 1), XYFlip(-1, 1), XYFlip(1, -1), XYFlip(-1, -1))


def _align_objective(m: np.ndarray, samples: np.ndarray) -> float:
    v = samples @ m.T
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    d = v - samples
    return float((d * d).sum(axis=1).mean())


def align(mat: LtcMatrix, cfg: AlignConfig | None = None) -> LtcMatrix:
    """Canonical representative M @ R_z(a*) @ F* of an LTC's equivalence
    class: the rotation/flip that moves the cosine samples least.

    One fixed low-discrepancy cosine sample set is shared by every
    candidate, so the argmin is deterministic; the rotation angle is found
    by a full-circle scan refined by golden-section search.
    """
    cfg = cfg or AlignConfig()
    samples = _hammersley_cosine(cfg.cosine_sample_count, cfg.seed)
    coarse = np.linspace(0.0, 2.0 * math.pi, cfg.rotation_steps,
                         endpoint=False)
    gr = (math.sqrt(5.0) - 1.0) / 2.0
    best = (math.inf, None, None)
    for flip in _FLIPS:
        f_m = flip.matrix()

        def objective(a, _f=f_m, _m=mat.m):
            rz = ZRotation(a).matrix()
            return _align_objective(_m @ rz @ _f, samples)

        vals = [objective(a) for a in coarse]
        k = int(np.argmin(vals))
        span = 2.0 * math.pi / cfg.rotation_steps
        lo, hi = coarse[k] - span, coarse[k] + span
        # Golden-section refinement of the scanned minimum.
        x1 = hi - gr * (hi - lo)
        x2 = lo + gr * (hi - lo)
        f1, f2 = objective(x1), objective(x2)
        while hi - lo > cfg.refine_tol:
            if f1 < f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - gr * (hi - lo)
                f1 = objective(x1)
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + gr * (hi - lo)
                f2 = objective(x2)
        a_star = 0.5 * (lo + hi)
        val = objective(a_star)
        if val < best[0]:
            best = (val, a_star, flip)
    _, a_star, flip = best
    rz = ZRotation(a_star).matrix()
    return LtcMatrix(mat.m @ rz @ flip.matrix())
