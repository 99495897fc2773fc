"""Command-line front end: build tables, validate them, render comparisons
and emit lobe plots.

Exit codes: 0 success, 1 domain failure (failed fit or failed validation),
2 usage error, 3 file/parse error.  Every command writes a JSON manifest
with the arguments, versions and seed needed to reproduce its output.
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .fit import AlignConfig, FitConfig, fit_ltc
from .ggx import GgxConfig
from .images import Image, image_metrics, mean_abs_rel_error, write_pfm, \
    write_ppm
from .lut import (BuildError, TableFormatError, build_table, deserialize,
                  fetch, pack_3d, serialize, validate_table)
from .render import diff_image, plot_lobe_pair, render, scene_from_json


def _default_threads():
    return int(os.environ.get("LTC_THREADS", "0")) or (os.cpu_count() or 1)


def _write_manifest(path, payload):
    payload = dict(payload)
    payload["toolkit_version"] = __version__
    payload["numpy_version"] = np.__version__
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_build(args):
    fit_cfg = FitConfig(steps=args.steps, samples_per_step=args.samples,
                        directions_per_step=args.dirs,
                        learning_rate=args.lr,
                        lr_decay_every=args.lr_decay_every, seed=args.seed)
    align_cfg = AlignConfig(seed=args.seed)
    t0 = time.time()
    try:
        result = build_table(fit_cfg, align_cfg, dims=(args.res,) * 4,
                             threads=args.threads,
                             albedo_samples=args.albedo_samples,
                             checkpoint=args.checkpoint,
                             progress=_build_progress if args.verbose
                             else None)
    except BuildError as exc:
        print(f"build failed: {exc}", file=sys.stderr)
        return 1
    serialize(result.table, args.out)
    _write_manifest(args.out + ".manifest.json", {
        "command": "build",
        "argv": sys.argv[1:],
        "dims": [args.res] * 4,
        "fit": {"steps": fit_cfg.steps,
                "samples_per_step": fit_cfg.samples_per_step,
                "directions_per_step": fit_cfg.directions_per_step,
                "learning_rate": fit_cfg.learning_rate,
                "lr_decay": fit_cfg.lr_decay,
                "lr_decay_every": fit_cfg.lr_decay_every},
        "align": {"rotation_steps": align_cfg.rotation_steps,
                  "refine_tol": align_cfg.refine_tol,
                  "cosine_sample_count": align_cfg.cosine_sample_count},
        "albedo_samples": args.albedo_samples,
        "seed": args.seed,
        "threads": args.threads or _default_threads(),
        "wall_time_s": time.time() - t0,
        "table_sha256": _sha256(args.out),
        "entry_final_losses": result.final_losses.reshape(-1).tolist(),
        "entry_best_losses": result.best_losses.reshape(-1).tolist(),
    })
    print(f"wrote {args.out} ({os.path.getsize(args.out)} bytes) "
          f"in {time.time() - t0:.1f}s")
    return 0


def _build_progress(done, total, idx, loss):
    print(f"  [{done}/{total}] node {idx} loss {loss:.4f}", flush=True)


def cmd_validate(args):
    try:
        table = deserialize(args.table)
    except (TableFormatError, OSError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 3
    checks = validate_table(table)
    report = {"command": "validate", "argv": sys.argv[1:],
              "table": args.table, "checks": checks,
              "passed": all(c["passed"] for c in checks)}
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    return 0 if report["passed"] else 1


def cmd_render(args):
    modes = ["ltc", "reference", "diff"] if args.mode == "all" \
        else [args.mode]
    table = None
    if "ltc" in modes or "diff" in modes:
        if not args.table:
            raise UsageError("--table is required for ltc/diff renders")
        try:
            table = deserialize(args.table)
        except (TableFormatError, OSError) as exc:
            print(f"parse error: {exc}", file=sys.stderr)
            return 3
    try:
        scene = scene_from_json(args.scene)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"scene error: {exc}", file=sys.stderr)
        return 3
    t0 = time.time()
    images = {}
    for mode in ("ltc", "reference"):
        if mode in modes or "diff" in modes:
            images[mode] = render(scene, mode, table=table, spp=args.spp,
                                  seed=args.seed, threads=args.threads)
    if "diff" in modes:
        images["diff"] = diff_image(images["ltc"], images["reference"])
    outputs = {}
    for mode in modes:
        img = images[mode]
        write_ppm(img, f"{args.out}_{mode}.ppm")
        write_pfm(img, f"{args.out}_{mode}.pfm")
        outputs[mode] = f"{args.out}_{mode}.ppm"
    metrics = {}
    if "ltc" in images and "reference" in images:
        metrics = image_metrics(images["ltc"], images["reference"])
        metrics["mean_abs_rel_error"] = mean_abs_rel_error(
            images["ltc"], images["reference"])
        with open(f"{args.out}_metrics.json", "w") as f:
            json.dump(metrics, f, indent=2, sort_keys=True)
            f.write("\n")
    _write_manifest(f"{args.out}.manifest.json", {
        "command": "render", "argv": sys.argv[1:], "scene": args.scene,
        "table": args.table, "mode": args.mode, "spp": args.spp,
        "seed": args.seed, "outputs": outputs, "metrics": metrics,
        "wall_time_s": time.time() - t0,
    })
    return 0


def cmd_plot(args):
    cfg = GgxConfig(theta_v=args.theta, phi_v=args.phi,
                    alpha_x=args.ax, alpha_y=args.ay)
    if args.table:
        try:
            table = deserialize(args.table)
        except (TableFormatError, OSError) as exc:
            print(f"parse error: {exc}", file=sys.stderr)
            return 3
        mat = fetch(table, cfg.theta_v, cfg.phi_v, cfg.alpha_x,
                    cfg.alpha_y).matrix
    else:
        mat = fit_ltc(cfg, FitConfig(steps=args.steps, seed=args.seed))
    g_img, l_img = plot_lobe_pair(cfg, mat, resolution=args.res)
    side = Image(pixels=np.concatenate([g_img.pixels, l_img.pixels],
                                       axis=1))
    write_ppm(side, args.out)
    write_pfm(side, args.out + ".pfm")
    _write_manifest(args.out + ".manifest.json", {
        "command": "plot", "argv": sys.argv[1:],
        "theta": args.theta, "phi": args.phi, "ax": args.ax, "ay": args.ay,
        "table": args.table, "steps": args.steps, "seed": args.seed,
        "resolution": args.res, "out": args.out,
    })
    return 0


def cmd_pack3d(args):
    try:
        table = deserialize(args.table)
    except (TableFormatError, OSError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 3
    blob, manifest = pack_3d(table, args.out)
    print(f"wrote {blob} and {manifest}")
    return 0


class UsageError(Exception):
    pass


def _parser():
    p = argparse.ArgumentParser(
        prog="ltcaniso",
        description="Anisotropic-GGX LTC table toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="fit a table and write it to disk")
    b.add_argument("--res", type=int, default=8,
                   help="nodes per axis of the 4D grid")
    b.add_argument("--steps", type=int, default=10_000)
    b.add_argument("--samples", type=int, default=2048)
    b.add_argument("--dirs", type=int, default=64)
    b.add_argument("--lr", type=float, default=5e-3)
    b.add_argument("--lr-decay-every", type=int, default=2500)
    b.add_argument("--albedo-samples", type=int, default=1_000_000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--threads", type=int, default=None)
    b.add_argument("--checkpoint", default=None,
                   help="resumable progress file for long builds")
    b.add_argument("--verbose", action="store_true")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    v = sub.add_parser("validate", help="check a table's invariants")
    v.add_argument("table")
    v.add_argument("--out", default=None, help="write the JSON report here")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("render", help="render a scene with a table")
    r.add_argument("--table", default=None)
    r.add_argument("--scene", required=True)
    r.add_argument("--mode", choices=["ltc", "reference", "diff", "all"],
                   default="all")
    r.add_argument("--spp", type=int, default=256)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("--out", required=True, help="output path prefix")
    r.set_defaults(func=cmd_render)

    pl = sub.add_parser("plot", help="side-by-side GGX/LTC lobe heatmap")
    pl.add_argument("--theta", type=float, required=True)
    pl.add_argument("--phi", type=float, required=True)
    pl.add_argument("--ax", type=float, required=True)
    pl.add_argument("--ay", type=float, required=True)
    pl.add_argument("--table", default=None,
                    help="fetch the LTC from this table instead of fitting")
    pl.add_argument("--steps", type=int, default=10_000)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--res", type=int, default=256)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)

    pk = sub.add_parser("pack-3d", help="export the fused 3D-texture blob")
    pk.add_argument("table")
    pk.add_argument("--out", required=True, help="output path prefix")
    pk.set_defaults(func=cmd_pack3d)
    return p


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    if getattr(args, "theta", None) is not None:
        if not 0.0 <= args.theta <= np.pi / 2 * 1.0001:
            parser.error("--theta must be in [0, pi/2]")
    for name in ("ax", "ay"):
        val = getattr(args, name, None)
        if val is not None and not 0.0 <= val <= 1.0:
            parser.error(f"--{name} must be in [0, 1]")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
