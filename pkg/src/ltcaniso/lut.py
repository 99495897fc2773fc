"""The 4D look-up table of fitted LTC matrices.

Axes are (theta, phi, alpha, lambda): view polar angle in [0, pi/2], view
azimuth folded into [0, pi/2], the larger roughness in [0, 1] and the
roughness ratio in [0, 1], each sampled at node-centered positions
i / (N - 1).  Every entry holds 11 channels: the 9 entries of the aligned,
symmetry-fixed, column-normalized matrix M, then the preintegrated albedo
n_D and Schlick weight f_D.

Queries outside the stored octant are answered through the azimuthal fold
and the roughness swap.  Both symmetries are applied as a conjugation
M -> (QP) M (QP)^T, which equals the plain left product up to a
cosine-stabilizer flip (so the represented distribution is identical) while
keeping the returned matrix entries continuous across the phi = 0 and
phi = pi/2 seams.
"""

import io
import math
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace

import numpy as np

from .fit import AlignConfig, FitConfig, FitError, align, fit_ltc_full
from .ggx import ALPHA_MIN, GgxConfig, directional_albedo, fresnel_weight
from .ltc import DET_MIN, LtcMatrix

MAGIC = b"LTCA"
VERSION = 1
CHANNELS = 11
HEADER = struct.Struct("<4sI4IQ")  # magic, version, dims, build seed

HALF_PI = math.pi / 2.0

# Channel layout: row-major matrix entries then the two Fresnel channels.
_COL3 = (2, 5, 8)            # m02, m12, m22
_ZERO_PHI0 = (1, 3, 5, 7)    # m01, m10, m12, m21
_ZERO_PHI90 = (1, 2, 3, 6)   # m01, m02, m10, m20
_ZERO_OFFDIAG = (1, 2, 3, 5, 6, 7)

_PERM_XY = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
# Azimuthal-fold sign pairs per quadrant of the original phi.
_QUAD_SIGNS = ((1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0))


class TableFormatError(ValueError):
    """Malformed table file; carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BuildError(RuntimeError):
    """Table build aborted; names the failing grid node."""


@dataclass(frozen=True)
class LtcTable4D:
    """Fitted table data of shape dims + (11,), float32."""

    data: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if self.data.ndim != 5 or self.data.shape[-1] != CHANNELS:
            raise ValueError("table data must have shape dims + (11,)")
        if min(self.data.shape[:4]) < 2:
            raise ValueError("table needs at least 2 nodes per axis")

    @property
    def dims(self) -> tuple:
        return self.data.shape[:4]

    def theta_nodes(self) -> np.ndarray:
        return np.linspace(0.0, HALF_PI, self.dims[0])

    def phi_nodes(self) -> np.ndarray:
        return np.linspace(0.0, HALF_PI, self.dims[1])

    def alpha_nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.dims[2])

    def lambda_nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.dims[3])

    def entry_matrix(self, it, ip, ia, il) -> np.ndarray:
        return self.data[it, ip, ia, il, :9].astype(np.float64).reshape(3, 3)

    def entry_config(self, it, ip, ia, il) -> GgxConfig:
        return node_config(self.dims, it, ip, ia, il)


def node_config(dims, it, ip, ia, il) -> GgxConfig:
    """GGX configuration fitted at a grid node; the singular corners
    (theta = pi/2, alpha = 0, lambda = 0) rely on GgxConfig's clamps."""
    nt, np_, na, nl = dims
    theta = HALF_PI * it / (nt - 1)
    phi = HALF_PI * ip / (np_ - 1)
    alpha = ia / (na - 1)
    lam = il / (nl - 1)
    return GgxConfig(theta_v=theta, phi_v=phi,
                     alpha_x=max(alpha, ALPHA_MIN),
                     alpha_y=max(lam * max(alpha, ALPHA_MIN), ALPHA_MIN))


def normalize_matrix(m: np.ndarray) -> np.ndarray:
    """Divide M by ||M (0,0,1)|| so its third column is unit length; the
    represented LTC distribution is unchanged."""
    m = np.asarray(m, dtype=np.float64)
    n = np.linalg.norm(m[:, 2])
    if n < 1e-9:
        raise ValueError("cannot normalize: third column is near zero")
    return m / n


def postprocess_symmetries(table: LtcTable4D) -> LtcTable4D:
    """Enforce the axial/rotational view symmetries on the boundary slices.

    Entries whose symmetry demands a zero are set to exact zeros on the
    phi = 0 and phi = pi/2 slices (plus all off-diagonals at
    theta = 0, phi = 0), then the theta = 0 row is made phi-independent by
    copying the phi = 0 entry.  Interior entries are untouched.
    """
    data = table.data.copy()
    for c in _ZERO_PHI0:
        data[:, 0, :, :, c] = 0.0
    for c in _ZERO_PHI90:
        data[:, -1, :, :, c] = 0.0
    for c in _ZERO_OFFDIAG:
        data[0, 0, :, :, c] = 0.0
    data[0, :, :, :, :] = data[0, 0, :, :, :][None]
    return replace(table, data=data)


def _normalize_all(data: np.ndarray) -> np.ndarray:
    cols = data[..., _COL3].astype(np.float64)
    norms = np.sqrt((cols * cols).sum(axis=-1))
    if norms.min() < 1e-9:
        raise BuildError("an entry has a near-zero third column")
    out = data.copy()
    out[..., :9] = (data[..., :9].astype(np.float64)
                    / norms[..., None]).astype(np.float32)
    return out


def _build_one(args):
    idx, dims, fit_cfg, align_cfg, albedo_samples = args
    cfg = node_config(dims, *idx)
    res = fit_ltc_full(cfg, fit_cfg)
    aligned = align(res.matrix, align_cfg)
    n_d = directional_albedo(cfg, albedo_samples, seed=fit_cfg.seed)
    f_d = fresnel_weight(cfg, albedo_samples, seed=fit_cfg.seed)
    channels = np.empty(CHANNELS, dtype=np.float32)
    channels[:9] = aligned.m.reshape(-1)
    channels[9] = n_d
    channels[10] = f_d
    return idx, channels, res.final_smoothed_loss, res.best_smoothed_loss


@dataclass
class BuildResult:
    table: LtcTable4D
    final_losses: np.ndarray
    best_losses: np.ndarray
    wall_time: float


def _checkpoint_tag(dims, fit_cfg, align_cfg, albedo_samples) -> str:
    return repr((dims, fit_cfg, align_cfg, albedo_samples))


def build_table(fit_cfg: FitConfig, align_cfg: AlignConfig,
                dims=(8, 8, 8, 8), threads: int | None = None,
                albedo_samples: int = 1_000_000, progress=None,
                checkpoint: str | None = None) -> BuildResult:
    """Fit, align and post-process every grid node.

    Entries are independent and computed in a process pool; per-entry
    random streams are derived from the node's configuration and the fit
    seed, so the result is identical for any thread count.  An optional
    checkpoint file makes long builds resumable.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or min(dims) < 2:
        raise ValueError("dims must be four axes of at least 2 nodes")
    threads = threads or int(os.environ.get("LTC_THREADS", "0")) \
        or os.cpu_count() or 1
    t0 = time.time()
    idxs = [(it, ip, ia, il)
            for it in range(dims[0]) for ip in range(dims[1])
            for ia in range(dims[2]) for il in range(dims[3])]
    n_entries = len(idxs)
    raw = np.zeros((n_entries, CHANNELS), dtype=np.float32)
    final_losses = np.zeros(n_entries, dtype=np.float32)
    best_losses = np.zeros(n_entries, dtype=np.float32)
    done = np.zeros(n_entries, dtype=bool)

    tag = _checkpoint_tag(dims, fit_cfg, align_cfg, albedo_samples)
    if checkpoint and os.path.exists(checkpoint):
        snap = np.load(checkpoint, allow_pickle=False)
        if str(snap["tag"]) == tag:
            raw, done = snap["raw"], snap["done"]
            final_losses, best_losses = snap["final"], snap["best"]

    def flat(idx):
        it, ip, ia, il = idx
        return ((it * dims[1] + ip) * dims[2] + ia) * dims[3] + il

    def save_checkpoint():
        if not checkpoint:
            return
        tmp = checkpoint + ".tmp.npz"
        np.savez(tmp, tag=tag, raw=raw, done=done,
                 final=final_losses, best=best_losses)
        os.replace(tmp, checkpoint)

    # The theta = 0 row is phi-independent and overwritten by the symmetry
    # post-process, so only its phi = 0 column is fitted; entries whose
    # clamped GGX configuration coincides (the alpha = 0 node collapses all
    # lambda values) share one fit.  Both reuse paths are bitwise exact.
    rep_of = {}
    by_cfg = {}
    for idx in idxs:
        rep = (0, 0, idx[2], idx[3]) if idx[0] == 0 else idx
        key = node_config(dims, *rep).key()
        rep_of[idx] = by_cfg.setdefault(key, rep)

    reps = sorted(set(rep_of.values()))
    tasks = [(idx, dims, fit_cfg, align_cfg, albedo_samples)
             for idx in reps if not done[flat(idx)]]
    completed = len(reps) - len(tasks)
    if tasks:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_build_one, t) for t in tasks]
            for fut in as_completed(futures):
                try:
                    idx, channels, fl, bl = fut.result()
                except FitError as exc:
                    raise BuildError(f"fit failed: {exc}") from exc
                k = flat(idx)
                raw[k] = channels
                final_losses[k] = fl
                best_losses[k] = bl
                done[k] = True
                completed += 1
                if completed % 16 == 0:
                    save_checkpoint()
                if progress is not None:
                    progress(completed, len(reps), idx, fl)
        save_checkpoint()
    for idx in idxs:
        src = flat(rep_of[idx])
        dst = flat(idx)
        if dst != src:
            raw[dst] = raw[src]
            final_losses[dst] = final_losses[src]
            best_losses[dst] = best_losses[src]
            done[dst] = done[src]

    data = raw.reshape(dims + (CHANNELS,))
    table = postprocess_symmetries(LtcTable4D(data=data, seed=fit_cfg.seed))
    table = replace(table, data=_normalize_all(table.data))
    return BuildResult(table=table,
                       final_losses=final_losses.reshape(dims),
                       best_losses=best_losses.reshape(dims),
                       wall_time=time.time() - t0)


@dataclass(frozen=True)
class RemapResult:
    """Symmetry decomposition of a query: M_world corresponds to
    (q @ p) T(theta, phi_t, alpha, lam) (q @ p)^T."""

    q: np.ndarray
    p: np.ndarray
    theta: float
    phi_t: float
    alpha: float
    lam: float

    @property
    def coords(self) -> tuple:
        return (self.theta, self.phi_t, self.alpha, self.lam)


def remap_query(theta: float, phi: float, alpha_x: float,
                alpha_y: float) -> RemapResult:
    """Fold an arbitrary query into table range.

    The roughness swap maps (phi, ax, ay) -> (pi/2 - phi, ay, ax) when
    ay > ax and contributes the xy permutation P; the azimuthal fold maps
    phi into [0, pi/2] and contributes the sign flip Q of the original
    phi's quadrant.  Both coordinate reductions commute, and Q P T equals
    the lobe of the query up to a right cosine-stabilizer factor.
    """
    theta = min(max(float(theta), 0.0), HALF_PI)
    phi = float(phi) % (2.0 * math.pi)
    ax = min(max(float(alpha_x), ALPHA_MIN), 1.0)
    ay = min(max(float(alpha_y), ALPHA_MIN), 1.0)
    quad = min(int(phi / HALF_PI), 3)
    phi_fold = (phi, math.pi - phi, phi - math.pi, 2.0 * math.pi - phi)[quad]
    phi_fold = min(max(phi_fold, 0.0), HALF_PI)
    sx, sy = _QUAD_SIGNS[quad]
    q = np.diag([sx, sy, 1.0])
    if ay > ax:
        p = _PERM_XY.copy()
        alpha, lam = ay, ax / ay
        phi_t = HALF_PI - phi_fold
    else:
        p = np.eye(3)
        alpha, lam = ax, ay / ax
        phi_t = phi_fold
    return RemapResult(q=q, p=p, theta=theta, phi_t=phi_t,
                       alpha=alpha, lam=lam)


def _interp_weights(t: np.ndarray, n: int) -> tuple:
    x = np.clip(t, 0.0, 1.0) * (n - 1)
    i0 = np.minimum(x.astype(np.int64), n - 2)
    return i0, x - i0


def interpolate_channels(table: LtcTable4D, theta, phi_t, alpha,
                         lam) -> np.ndarray:
    """Quadrilinear interpolation of all 11 channels at table coordinates;
    broadcasts over arrays and returns (..., 11) float64."""
    nt, np_, na, nl = table.dims
    theta = np.asarray(theta, dtype=np.float64)
    it, wt = _interp_weights(theta / HALF_PI, nt)
    ip, wp = _interp_weights(np.asarray(phi_t) / HALF_PI, np_)
    ia, wa = _interp_weights(np.asarray(alpha, dtype=np.float64), na)
    il, wl = _interp_weights(np.asarray(lam, dtype=np.float64), nl)
    out = np.zeros(theta.shape + (CHANNELS,), dtype=np.float64)
    data = table.data
    for dt in (0, 1):
        for dp in (0, 1):
            for da in (0, 1):
                for dl in (0, 1):
                    w = (np.where(dt, wt, 1.0 - wt)
                         * np.where(dp, wp, 1.0 - wp)
                         * np.where(da, wa, 1.0 - wa)
                         * np.where(dl, wl, 1.0 - wl))
                    corner = data[it + dt, ip + dp, ia + da, il + dl]
                    out += w[..., None] * corner.astype(np.float64)
    return out


@dataclass(frozen=True)
class FetchResult:
    matrix: LtcMatrix
    n_d: float
    f_d: float

    @property
    def m(self) -> np.ndarray:
        return self.matrix.m

    @property
    def m_inv(self) -> np.ndarray:
        return self.matrix.m_inv


def fetch(table: LtcTable4D, theta: float, phi: float, alpha_x: float,
          alpha_y: float) -> FetchResult:
    """Interpolated, symmetry-composed matrix plus Fresnel channels for an
    arbitrary view/roughness query.

    The third column is renormalized after interpolation (multilinear
    blending does not preserve it exactly) and the inverse is computed
    here, never stored.
    """
    rq = remap_query(theta, phi, alpha_x, alpha_y)
    ch = interpolate_channels(table, *rq.coords)
    a = rq.q @ rq.p
    m = a @ ch[:9].reshape(3, 3) @ a.T
    return FetchResult(matrix=LtcMatrix(normalize_matrix(m)),
                       n_d=float(ch[9]), f_d=float(ch[10]))


def fetch_many(table: LtcTable4D, theta, phi, alpha_x: float,
               alpha_y: float) -> tuple:
    """Vectorized fetch for one material over arrays of view angles.

    Returns (m, m_inv, n_d, f_d) with m of shape (..., 3, 3); used by the
    renderer where every pixel shares (alpha_x, alpha_y).
    """
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64) % (2.0 * math.pi)
    ax = min(max(float(alpha_x), ALPHA_MIN), 1.0)
    ay = min(max(float(alpha_y), ALPHA_MIN), 1.0)
    quad = np.minimum((phi / HALF_PI).astype(np.int64), 3)
    phi_fold = np.choose(quad, [phi, math.pi - phi, phi - math.pi,
                                2.0 * math.pi - phi])
    phi_fold = np.clip(phi_fold, 0.0, HALF_PI)
    signs = np.array(_QUAD_SIGNS)
    s = np.concatenate([signs[quad], np.ones(quad.shape + (1,))], axis=-1)
    swap = ay > ax
    if swap:
        alpha, lam = ay, ax / ay
        phi_t = HALF_PI - phi_fold
    else:
        alpha, lam = ax, ay / ax
        phi_t = phi_fold
    ch = interpolate_channels(table, np.clip(theta, 0.0, HALF_PI), phi_t,
                              alpha, lam)
    m = ch[..., :9].reshape(theta.shape + (3, 3))
    if swap:
        perm = np.array([1, 0, 2])
        m = m[..., perm, :][..., :, perm]
    m = m * (s[..., :, None] * s[..., None, :])
    norms = np.linalg.norm(m[..., :, 2], axis=-1)
    m = m / norms[..., None, None]
    m_inv = _invert_batch(m)
    return m, m_inv, ch[..., 9], ch[..., 10]


def _invert_batch(m: np.ndarray) -> np.ndarray:
    """Cofactor inverses for (..., 3, 3) arrays."""
    a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    d, e, f = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
    g, h, i = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]
    co = np.stack([
        np.stack([e * i - f * h, c * h - b * i, b * f - c * e], axis=-1),
        np.stack([f * g - d * i, a * i - c * g, c * d - a * f], axis=-1),
        np.stack([d * h - e * g, b * g - a * h, a * e - b * d], axis=-1),
    ], axis=-2)
    det = (a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g))
    return co / det[..., None, None]


def serialize(table: LtcTable4D, sink) -> None:
    """Write the binary table format: 32-byte header (magic, version, dims,
    build seed) then little-endian float32 channels in row-major node
    order.  Round trips are bitwise exact."""
    own = isinstance(sink, (str, os.PathLike))
    f = open(sink, "wb") if own else sink
    try:
        f.write(HEADER.pack(MAGIC, VERSION, *table.dims, table.seed))
        f.write(np.ascontiguousarray(table.data, dtype="<f4").tobytes())
    finally:
        if own:
            f.close()


def deserialize(source) -> LtcTable4D:
    """Parse a table file; malformed input raises TableFormatError naming
    the offending byte offset, never a partial table."""
    own = isinstance(source, (str, os.PathLike))
    f = open(source, "rb") if own else source
    try:
        header = f.read(HEADER.size)
        if len(header) < HEADER.size:
            raise TableFormatError("truncated header", len(header))
        magic, version, nt, np_, na, nl, seed = HEADER.unpack(header)
        if magic != MAGIC:
            raise TableFormatError(f"bad magic {magic!r}", 0)
        if version != VERSION:
            raise TableFormatError(f"unsupported version {version}", 4)
        dims = (nt, np_, na, nl)
        if min(dims) < 2 or max(dims) > 4096:
            raise TableFormatError(f"implausible dims {dims}", 8)
        expected = nt * np_ * na * nl * CHANNELS * 4
        payload = f.read(expected + 1)
        if len(payload) != expected:
            raise TableFormatError(
                f"payload has {len(payload)} bytes, expected {expected}",
                HEADER.size + min(len(payload), expected))
        data = np.frombuffer(payload, dtype="<f4").reshape(
            dims + (CHANNELS,)).copy()
        return LtcTable4D(data=data, seed=seed)
    finally:
        if own:
            f.close()


def _pullback_normalization(table: LtcTable4D, n_samples: int = 4096) -> tuple:
    """MC check that every stored matrix is a normalized density.

    Substituting w = normalize(M u) with u cosine-distributed turns the
    integral of the LTC density into E[D(w) J(u) pi / cos(u)] with the
    solid-angle Jacobian J = |det M| / ||M u||^3 written independently of
    the density formula; the estimate must be 1 for every entry.
    """
    from .core import sample_clamped_cosine
    from .ltc import LtcMatrix, ltc_eval

    gen = np.random.Generator(np.random.Philox(key=0x17C))
    uu = gen.random((n_samples, 2))
    u = sample_clamped_cosine(uu[:, 0], uu[:, 1])
    cos_u = u[:, 2]
    worst = 0.0
    worst_idx = (0, 0, 0, 0)
    dims = table.dims
    for it in range(dims[0]):
        for ip in range(dims[1]):
            for ia in range(dims[2]):
                for il in range(dims[3]):
                    m = table.entry_matrix(it, ip, ia, il)
                    mat = LtcMatrix(m)
                    v = u @ m.T
                    nn = np.linalg.norm(v, axis=1)
                    w = v / nn[:, None]
                    jac = abs(np.linalg.det(m)) / nn ** 3
                    est = float((ltc_eval(mat, w) * jac * math.pi
                                 / cos_u).mean())
                    err = abs(est - 1.0)
                    if err > worst:
                        worst, worst_idx = err, (it, ip, ia, il)
    return worst, worst_idx


def validate_table(table: LtcTable4D, n_queries: int = 1000,
                   seed: int = 0) -> list:
    """Run every table invariant; returns a machine-readable check list
    with one dict per check (name, value, tolerance, passed, detail)."""
    checks = []

    def add(name, value, tol, passed, detail=""):
        checks.append({"check": name, "value": float(value),
                       "tolerance": float(tol), "passed": bool(passed),
                       "detail": detail})

    data = table.data
    z0 = np.abs(data[:, 0, :, :, _ZERO_PHI0]).max()
    add("zero_pattern_phi0", z0, 0.0, z0 == 0.0)
    z1 = np.abs(data[:, -1, :, :, _ZERO_PHI90]).max()
    add("zero_pattern_phi90", z1, 0.0, z1 == 0.0)
    z2 = np.abs(data[0, 0, :, :, _ZERO_OFFDIAG]).max()
    add("zero_pattern_theta0_offdiag", z2, 0.0, z2 == 0.0)
    z3 = np.abs(data[0] - data[0, 0][None]).max()
    add("theta0_phi_invariance", z3, 0.0, z3 == 0.0)

    cols = data[..., _COL3].astype(np.float64)
    col_err = np.abs(np.sqrt((cols * cols).sum(-1)) - 1.0).max()
    add("unit_third_column", col_err, 1e-6, col_err < 1e-6)

    mats = data[..., :9].astype(np.float64).reshape(-1, 3, 3)
    dets = np.linalg.det(mats)
    k = int(np.argmin(np.abs(dets)))
    add("det_nonsingular", np.abs(dets).min(), DET_MIN,
        np.abs(dets).min() >= DET_MIN,
        detail=f"worst entry (t,p,a,l) = "
               f"{np.unravel_index(k, table.dims)}")
    if np.abs(dets).min() >= DET_MIN:
        inv = _invert_batch(mats)
        resid = np.abs(np.einsum("nij,njk->nik", mats, inv)
                       - np.eye(3)).max()
        add("inverse_residual", resid, 1e-5, resid < 1e-5)

        worst, idx = _pullback_normalization(table)
        add("density_normalization_mc", worst, 0.01, worst < 0.01,
            detail=f"worst entry (t,p,a,l) = {idx}")

    nd = data[..., 9]
    fd = data[..., 10]
    add("n_d_range", float(nd.min()), 0.0,
        bool((nd > 0.0).all() and (nd <= 1.0 + 1e-6).all()),
        detail=f"max n_D = {nd.max():.6f}")
    add("f_d_range", float((nd - fd).min()), 0.0,
        bool((fd >= 0.0).all() and (fd <= nd + 1e-6).all()))

    gen = np.random.Generator(np.random.Philox(key=seed + 0xF37C))
    q_theta = gen.random(n_queries) * HALF_PI
    q_phi = gen.random(n_queries) * 2.0 * math.pi
    q_ax = ALPHA_MIN + gen.random(n_queries) * (1.0 - ALPHA_MIN)
    q_ay = ALPHA_MIN + gen.random(n_queries) * (1.0 - ALPHA_MIN)
    worst_eq = 0.0
    worst_sandwich = -np.inf
    for i in range(n_queries):
        rq = remap_query(q_theta[i], q_phi[i], q_ax[i], q_ay[i])
        got = fetch(table, q_theta[i], q_phi[i], q_ax[i], q_ay[i])
        ch = interpolate_channels(table, *rq.coords)
        a = rq.q @ rq.p
        want = normalize_matrix(a @ ch[:9].reshape(3, 3) @ a.T)
        worst_eq = max(worst_eq, np.abs(got.m - want).max())
        lo, hi = _corner_envelope(table, rq)
        margin = max((lo - ch).max(), (ch - hi).max())
        worst_sandwich = max(worst_sandwich, margin)
    add("full_range_equivalence", worst_eq, 1e-6, worst_eq < 1e-6)
    add("interpolation_sandwich", worst_sandwich, 1e-6,
        worst_sandwich < 1e-6)

    worst_seam = 0.0
    eps = 1e-6
    for i in range(min(n_queries, 200)):
        th, ax_, ay_ = q_theta[i], q_ax[i], q_ay[i]
        for lo_phi, hi_phi in ((eps, -eps), (HALF_PI - eps, HALF_PI + eps)):
            a = fetch(table, th, lo_phi, ax_, ay_).m
            b = fetch(table, th, hi_phi, ax_, ay_).m
            worst_seam = max(worst_seam, np.abs(a - b).max())
    add("seam_continuity", worst_seam, 1e-4, worst_seam < 1e-4)

    return checks


def _corner_envelope(table: LtcTable4D, rq: RemapResult) -> tuple:
    """Min/max of the 16 interpolation corner values for one query."""
    nt, np_, na, nl = table.dims
    it, _ = _interp_weights(np.float64(rq.theta / HALF_PI), nt)
    ip, _ = _interp_weights(np.float64(rq.phi_t / HALF_PI), np_)
    ia, _ = _interp_weights(np.float64(rq.alpha), na)
    il, _ = _interp_weights(np.float64(rq.lam), nl)
    block = table.data[it:it + 2, ip:ip + 2, ia:ia + 2,
                       il:il + 2].astype(np.float64)
    flat = block.reshape(-1, CHANNELS)
    return flat.min(axis=0), flat.max(axis=0)


def pack_3d(table: LtcTable4D, prefix: str) -> tuple:
    """Export the raw 3D-texture layout: a little-endian float32 blob of
    shape (Ntheta*Nphi, Nalpha, Nlambda, channels), fusing (theta, phi) as
    fused = itheta * Nphi + iphi, plus a text manifest describing it.
    Returns the two file paths."""
    nt, np_, na, nl = table.dims
    blob_path = prefix + ".raw"
    manifest_path = prefix + ".manifest.txt"
    blob = np.ascontiguousarray(
        table.data.reshape(nt * np_, na, nl, CHANNELS), dtype="<f4")
    blob.tofile(blob_path)
    with open(manifest_path, "w") as f:
        f.write("layout: fused x alpha x lambda x channels\n")
        f.write(f"fused: {nt * np_}  (fused = itheta * {np_} + iphi)\n")
        f.write(f"alpha: {na}\nlambda: {nl}\n")
        f.write(f"channels: {CHANNELS}  "
                "(m00 m01 m02 m10 m11 m12 m20 m21 m22 n_D f_D)\n")
        f.write("dtype: little-endian float32\n")
        f.write(f"source dims (theta, phi, alpha, lambda): {table.dims}\n")
    return blob_path, manifest_path
