"""Acceptance suite: one test per shipped criterion, each printing a
PASS/FAIL line with its measured value.

Heavy criteria use the committed 8^4 table (tables/aniso_ggx_8.ltc, built
by the CLI with the manifest checked in next to it); criterion 7 performs
a fresh default-configuration 4^4 build.  Budgets quoted per criterion
assume 8 cores; wall times here are normalized by the actual worker count.
"""

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from ltcaniso import rng as rstream
from ltcaniso.core import SphericalPolygon
from ltcaniso.fit import (AlignConfig, FitConfig, align, fit_ltc,
                          fit_ltc_full, sw_loss_gradient)
from ltcaniso.ggx import (ALPHA_MIN, GgxConfig, directional_albedo,
                          mc_polygon_integral, ndf_eval,
                          sample_brdf_cos_batch)
from ltcaniso.ltc import (LtcMatrix, XYFlip, ZRotation, apply_rotation_flip,
                          ltc_eval, ltc_polygon_integral)
from ltcaniso.lut import (CHANNELS, LtcTable4D, build_table, deserialize,
                          fetch, serialize, validate_table)
from ltcaniso.images import Image, mean_abs_rel_error
from ltcaniso.render import Material, render, scene_from_json

from test_fit import TestSwLossGradient, unit_rows
from test_ggx import bin_masses_quadrature, sample_histogram
from test_ltc import random_matrix, random_quad

pytestmark = pytest.mark.acceptance

ROOT = os.path.join(os.path.dirname(__file__), "..")
TABLE_PATH = os.path.join(ROOT, "tables", "aniso_ggx_8.ltc")
SCENE_DIR = os.path.join(ROOT, "scenes")

HALF_PI = math.pi / 2


def report(num, ok, detail):
    print(f"\nACCEPTANCE {num:>2}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def shipped_table():
    return deserialize(TABLE_PATH)


def test_criterion_01_ndf_normalization():
    """Projected-NDF normalization within 1% for pairs spanning [1e-3, 1].

    Moderate pairs use jitter-stratified uniform-hemisphere MC; extreme
    pairs (which uniform sampling cannot resolve) use an exact
    change-of-variables oracle: sampling n from the cosine hemisphere and
    pushing it through w = normalize(diag(ax, ay, 1) n) has the known
    density p(w) = cos(n) ||Sn||^3 / (pi det S), independent of the NDF
    formula under test.
    """
    t0 = time.time()
    gen = rstream.stream(101, "ndf_norm")
    worst = 0.0
    for ax, ay in ((0.5, 0.5), (1.0, 1.0)):
        i, j = np.meshgrid(np.arange(1000), np.arange(1000), indexing="ij")
        u1 = (i.ravel() + gen.random(1_000_000)) / 1000
        u2 = (j.ravel() + gen.random(1_000_000)) / 1000
        z = u1
        s = np.sqrt(np.maximum(0.0, 1 - z * z))
        w = np.stack([s * np.cos(2 * np.pi * u2),
                      s * np.sin(2 * np.pi * u2), z], axis=1)
        est = (ndf_eval(w, ax, ay) * w[:, 2] * 2 * math.pi).mean()
        worst = max(worst, abs(est - 1.0))
    for ax, ay in ((1e-3, 1e-3), (1e-3, 1.0), (0.5, 0.1)):
        u = gen.random((2, 1_000_000))
        r = np.sqrt(u[0])
        phi = 2 * np.pi * u[1]
        n = np.stack([r * np.cos(phi), r * np.sin(phi),
                      np.sqrt(np.maximum(0.0, 1 - u[0]))], axis=1)
        sn = n * np.array([ax, ay, 1.0])
        ln = np.linalg.norm(sn, axis=1)
        w = sn / ln[:, None]
        pdf = n[:, 2] * ln ** -3 / (math.pi * ax * ay)
        est = (ndf_eval(w, ax, ay) * w[:, 2] / pdf).mean()
        worst = max(worst, abs(est - 1.0))
    report(1, worst < 0.01,
           f"worst |int D cos - 1| = {worst:.4f} (tol 0.01), "
           f"{time.time() - t0:.0f}s")


def test_criterion_02_sampler_density():
    """Rejection-sampled histograms match brdf_cos/albedo per bin."""
    t0 = time.time()
    configs = [GgxConfig(0.0, 0.0, 0.5, 0.5),
               GgxConfig(1.0, 0.8, 0.5, 0.1),
               GgxConfig(0.5, 2.5, 1.0, 1.0)]
    worst = 0.0
    for cfg in configs:
        gen = rstream.stream(102, "accept_density", cfg.key())
        samples = sample_brdf_cos_batch(cfg, 1_000_000, gen)
        hist = sample_histogram(samples, 16, 16)
        expected = bin_masses_quadrature(cfg, 16, 16)
        populated = expected > 0.005
        rel = np.abs(hist[populated] - expected[populated]) \
            / expected[populated]
        worst = max(worst, float(rel.max()))
    report(2, worst < 0.05,
           f"worst populated-bin error = {worst:.3f} (tol 0.05), "
           f"3 configs x 1e6 samples, {time.time() - t0:.0f}s")


def test_criterion_03_ltc_polygon_vs_mc():
    """Analytic LTC polygon integral within 3 sigma of its own-density MC
    for 50 random (matrix, quad) pairs."""
    t0 = time.time()
    gen = np.random.default_rng(103)
    mc_gen = rstream.stream(103, "accept_ltc_mc")
    failures = 0
    worst = 0.0
    for _ in range(50):
        m = random_matrix(gen, scale=0.5)
        corners = random_quad(gen)
        verts = corners / np.linalg.norm(corners, axis=1, keepdims=True)
        if ltc_polygon_integral(LtcMatrix(np.eye(3)),
                                SphericalPolygon(verts)) == 0.0:
            corners = corners[::-1]
            verts = verts[::-1]
        analytic = ltc_polygon_integral(m, SphericalPolygon(verts))
        e1, e2 = corners[1] - corners[0], corners[3] - corners[0]
        nrm = np.cross(e1, e2)
        area = np.linalg.norm(nrm)
        nrm = nrm / area
        n = 200_000
        u = mc_gen.random((n, 2))
        p = corners[0] + u[:, :1] * e1 + u[:, 1:] * e2
        r2 = (p * p).sum(1)
        l = p / np.sqrt(r2)[:, None]
        vals = ltc_eval(m, l) * np.abs(l @ nrm) / r2 * area
        mc = vals.mean()
        se = max(vals.std(ddof=1) / math.sqrt(n), 1e-7)
        dev = abs(analytic - mc) / se
        worst = max(worst, dev)
        if dev > 3.0:
            failures += 1
    report(3, failures == 0,
           f"{failures}/50 outside 3 sigma (worst {worst:.2f} sigma), "
           f"{time.time() - t0:.0f}s")


def test_criterion_04_nonuniqueness():
    """Pointwise LTC equality under M -> M Rz Fxy, 100 random cases."""
    t0 = time.time()
    gen = np.random.default_rng(104)
    worst = 0.0
    for _ in range(100):
        m = random_matrix(gen)
        m2 = apply_rotation_flip(
            m, ZRotation(gen.uniform(0, 2 * math.pi)),
            XYFlip(gen.choice([-1, 1]), gen.choice([-1, 1])))
        w = unit_rows(gen, 1000)
        a = ltc_eval(m, w)
        b = ltc_eval(m2, w)
        worst = max(worst, float((np.abs(a - b)
                                  / np.maximum(a, 1e-6)).max()))
    report(4, worst < 1e-6,
           f"worst relative deviation = {worst:.2e} (tol 1e-6), "
           f"{time.time() - t0:.0f}s")


def test_criterion_05_gradient_check():
    """All 9 SW-loss partials vs frozen-permutation central differences."""
    t0 = time.time()
    from ltcaniso.core import sample_clamped_cosine
    worst = 0.0
    for trial in range(20):
        gen = np.random.default_rng(500 + trial)
        uu = gen.random((256, 2))
        u = sample_clamped_cosine(uu[:, 0], uu[:, 1])
        g = unit_rows(gen, 256)
        g[:, 2] = np.abs(g[:, 2])
        dirs = unit_rows(gen, 16)
        m = np.eye(3) + 0.3 * gen.standard_normal((3, 3))
        grad = sw_loss_gradient(LtcMatrix(m), u, g, dirs)
        loss = TestSwLossGradient.frozen_pair_loss(m, u, g, dirs)
        h = 1e-4
        fd = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                mp, mm = m.copy(), m.copy()
                mp[i, j] += h
                mm[i, j] -= h
                fd[i, j] = (loss(mp) - loss(mm)) / (2 * h)
        rel = np.abs(grad - fd).max() / max(np.abs(fd).max(), 1e-12)
        worst = max(worst, rel)
    report(5, worst < 1e-3,
           f"worst relative gradient error = {worst:.2e} (tol 1e-3), "
           f"20 matrices, {time.time() - t0:.0f}s")


def test_criterion_06_alignment_well_defined():
    """align() collapses every representative of an equivalence class to
    one matrix, and is idempotent."""
    t0 = time.time()
    gen = np.random.default_rng(106)
    worst_pair = 0.0
    worst_idem = 0.0
    for _ in range(50):
        m = random_matrix(gen)
        r = ZRotation(gen.uniform(0, 2 * math.pi))
        f = XYFlip(gen.choice([-1, 1]), gen.choice([-1, 1]))
        a1 = align(m)
        a2 = align(apply_rotation_flip(m, r, f))
        worst_pair = max(worst_pair, float(np.abs(a1.m - a2.m).max()))
        a3 = align(a1)
        worst_idem = max(worst_idem, float(np.abs(a3.m - a1.m).max()))
    ok = worst_pair < 1e-2 and worst_idem < 1e-3
    report(6, ok,
           f"class collapse max = {worst_pair:.2e} (tol 1e-2), "
           f"idempotence max = {worst_idem:.2e} (tol 1e-3), "
           f"{time.time() - t0:.0f}s")


@pytest.mark.slow
def test_criterion_07_desk_scale_build(tmp_path):
    """Default-config 4^4 build (seed 42) completes within the 8-core
    budget (normalized by worker count) and passes every table check."""
    threads = min(os.cpu_count() or 1, 8)
    t0 = time.time()
    result = build_table(FitConfig(seed=42), AlignConfig(seed=42),
                         dims=(4, 4, 4, 4), threads=threads)
    wall = time.time() - t0
    core_minutes = wall * threads / 60.0
    checks = validate_table(result.table)
    failed = [c["check"] for c in checks if not c["passed"]]
    serialize(result.table, str(tmp_path / "t4.ltc"))
    ok = core_minutes <= 45 * 8 and not failed
    report(7, ok,
           f"build {wall / 60:.1f} min on {threads} threads "
           f"({core_minutes:.0f} core-min, budget 360), "
           f"failed checks: {failed or 'none'}")


def _fit_quality_config(args):
    cfg_key, quads, fit_seed = args
    cfg = GgxConfig(*cfg_key)
    mat = fit_ltc(cfg, FitConfig(steps=2500, learning_rate=2e-2,
                                 lr_decay_every=500, seed=fit_seed))
    albedo = directional_albedo(cfg, 1_000_000)
    rows = []
    for corners in quads:
        verts = corners / np.linalg.norm(corners, axis=1, keepdims=True)
        analytic = ltc_polygon_integral(mat, SphericalPolygon(verts))
        mc, se = mc_polygon_integral(cfg, corners, 400_000)
        rows.append((analytic, mc / albedo, se / albedo))
    return rows


@pytest.mark.slow
def test_criterion_08_fit_quality():
    """Fitted LTC polygon integrals vs albedo-normalized GGX MC within 15%
    relative on integrals above 0.05, over 20 sampled configs.

    Lune-regime configurations (ratio < 0.25 at views beyond 60 degrees)
    are excluded: those GGX lobes are outside the representational power
    of any linearly transformed cosine.
    """
    t0 = time.time()
    gen = np.random.default_rng(108)
    configs = []
    while len(configs) < 20:
        theta = gen.uniform(0.0, 0.995 * HALF_PI)
        phi = gen.uniform(0.0, HALF_PI)
        alpha = gen.uniform(0.1, 1.0)
        lam = gen.uniform(0.0, 1.0)
        if lam < 0.25 and theta > math.radians(60):
            continue  # lune regime, excluded and documented above
        configs.append((theta, phi, alpha, max(lam * alpha, ALPHA_MIN)))
    tasks = []
    for k, key in enumerate(configs):
        quads = [random_quad(gen) for _ in range(20)]
        oriented = []
        for q in quads:
            verts = q / np.linalg.norm(q, axis=1, keepdims=True)
            if ltc_polygon_integral(LtcMatrix(np.eye(3)),
                                    SphericalPolygon(verts)) == 0.0:
                q = q[::-1]
            oriented.append(q)
        tasks.append((key, oriented, 4200 + k))
    with ProcessPoolExecutor(max_workers=os.cpu_count()) as pool:
        all_rows = list(pool.map(_fit_quality_config, tasks))
    checked = 0
    bad = 0
    worst = 0.0
    for rows in all_rows:
        for analytic, target, se in rows:
            if target <= 0.05:
                continue
            checked += 1
            rel = abs(analytic - target) / target
            worst = max(worst, rel)
            if rel > 0.15 + 3 * se / target:
                bad += 1
    report(8, bad == 0,
           f"{bad}/{checked} integrals beyond 15% (worst {worst:.3f}), "
           f"20 configs x 20 quads, {(time.time() - t0) / 60:.1f} min")


def test_criterion_09_seam_continuity(shipped_table):
    """Matrix entries continuous across the phi = 0 and pi/2 folds."""
    t0 = time.time()
    gen = np.random.default_rng(109)
    eps = 1e-6
    worst = 0.0
    for _ in range(200):
        th = gen.uniform(0, HALF_PI)
        ax = gen.uniform(ALPHA_MIN, 1.0)
        ay = gen.uniform(ALPHA_MIN, 1.0)
        for lo, hi in ((eps, -eps), (HALF_PI - eps, HALF_PI + eps)):
            a = fetch(shipped_table, th, lo, ax, ay).m
            b = fetch(shipped_table, th, hi, ax, ay).m
            worst = max(worst, float(np.abs(a - b).max()))
    report(9, worst < 1e-4,
           f"worst seam matrix-entry jump = {worst:.2e} (tol 1e-4), "
           f"{time.time() - t0:.0f}s")


def test_criterion_10_file_format(shipped_table):
    """Shipped 8^4 file is exactly 180256 bytes and round trips bitwise."""
    size = os.path.getsize(TABLE_PATH)
    import io
    buf = io.BytesIO()
    serialize(shipped_table, buf)
    first = buf.getvalue()
    again = io.BytesIO()
    serialize(deserialize(io.BytesIO(first)), again)
    ok = size == 180_256 and again.getvalue() == first \
        and first == open(TABLE_PATH, "rb").read()
    report(10, ok, f"file size {size} bytes (expect 180256), "
                   f"round trip bitwise = {again.getvalue() == first}")


# Per-scene mean-absolute-relative-error bounds, frozen from the first
# oracle run of the shipped table (see tests/record_render_baselines.py);
# renders are deterministic, so these are regression constants.
RENDER_MARE_BOUNDS = json.load(open(os.path.join(
    os.path.dirname(__file__), "render_baselines.json")))


@pytest.mark.slow
def test_criterion_11_render_regression(shipped_table):
    """Fig.-13-style sphere scenes: LTC vs 4096-spp reference MARE within
    the frozen per-scene bounds."""
    t0 = time.time()
    threads = os.cpu_count() or 1
    results = {}
    ok = True
    for name, bound in sorted(RENDER_MARE_BOUNDS.items()):
        scene = scene_from_json(os.path.join(SCENE_DIR, name + ".json"))
        ltc_img = render(scene, "ltc", table=shipped_table)
        ref_img = render(scene, "reference", spp=4096, seed=0,
                         threads=threads)
        mare = mean_abs_rel_error(ltc_img, ref_img)
        results[name] = mare
        ok = ok and mare <= bound
    detail = ", ".join(f"{k}={v:.3f}(<= {RENDER_MARE_BOUNDS[k]})"
                       for k, v in results.items())
    report(11, ok, f"{detail}, {(time.time() - t0) / 60:.1f} min")


def _fit_const_table(args):
    theta, phi, alpha, seed = args
    cfg = GgxConfig(theta, phi, alpha, alpha)
    mat = fit_ltc(cfg, FitConfig(steps=2500, learning_rate=2e-2,
                                 lr_decay_every=500, seed=seed))
    n_d = directional_albedo(cfg, 500_000)
    f_d = 0.0
    ch = np.empty(CHANNELS, dtype=np.float32)
    ch[:9] = (mat.m / np.linalg.norm(mat.m[:, 2])).reshape(-1)
    ch[9] = n_d
    ch[10] = f_d
    return ch


@pytest.mark.slow
def test_criterion_12_discretization():
    """8-node vs 16-node alpha-axis tables: the render-error difference is
    under 20% of the LTC approximation error itself (fixed view, isotropic
    roughness sweep)."""
    t0 = time.time()
    theta_v, phi_v = 1.0, 0.3
    probes = [0.27, 0.38, 0.52, 0.68, 0.83, 0.93]
    node8 = np.linspace(0.0, 1.0, 8)
    node16 = np.linspace(0.0, 1.0, 16)
    jobs = [(theta_v, phi_v, max(a, ALPHA_MIN), 7000 + k)
            for k, a in enumerate(node8)]
    jobs += [(theta_v, phi_v, max(a, ALPHA_MIN), 7100 + k)
             for k, a in enumerate(node16)]
    jobs += [(theta_v, phi_v, a, 7200 + k) for k, a in enumerate(probes)]
    with ProcessPoolExecutor(max_workers=os.cpu_count()) as pool:
        channels = list(pool.map(_fit_const_table, jobs))
    fits8 = channels[:8]
    fits16 = channels[8:24]
    dense = channels[24:]

    def interp_channels(nodes, fits, a):
        x = np.clip(a, 0, 1) * (len(nodes) - 1)
        i0 = min(int(x), len(nodes) - 2)
        w = x - i0
        ch = (1 - w) * fits[i0] + w * fits[i0 + 1]
        m = ch[:9].reshape(3, 3).astype(np.float64)
        m /= np.linalg.norm(m[:, 2])
        out = ch.copy()
        out[:9] = m.reshape(-1)
        return out

    def const_table(ch):
        data = np.broadcast_to(ch.astype(np.float32),
                               (2, 2, 2, 2, CHANNELS)).copy()
        return LtcTable4D(data=data, seed=0)

    scene_d = json.load(open(os.path.join(SCENE_DIR, "scene_05.json")))
    scene_d["camera"]["width"] = scene_d["camera"]["height"] = 64
    err8, err16, err_dense = [], [], []
    for k, a in enumerate(probes):
        scene_d["material"]["alpha_x"] = a
        scene_d["material"]["alpha_y"] = a
        scene = scene_from_json(scene_d)
        ref = render(scene, "reference", spp=512, seed=0,
                     threads=os.cpu_count())
        for fits, nodes, acc in ((fits8, node8, err8),
                                 (fits16, node16, err16),
                                 (None, None, err_dense)):
            ch = dense[k] if fits is None else \
                interp_channels(nodes, fits, a)
            img = render(scene, "ltc", table=const_table(ch))
            acc.append(mean_abs_rel_error(img, ref))
    e8 = float(np.mean(err8))
    e16 = float(np.mean(err16))
    e_ltc = float(np.mean(err_dense))
    ok = abs(e16 - e8) < 0.2 * e_ltc
    report(12, ok,
           f"err(8 nodes) = {e8:.4f}, err(16) = {e16:.4f}, "
           f"LTC approx err = {e_ltc:.4f}; |diff| {abs(e16 - e8):.4f} "
           f"< 0.2 x {e_ltc:.4f}, {(time.time() - t0) / 60:.1f} min")
