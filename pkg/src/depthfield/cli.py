"""Command-line surface.

Subcommands: decode, sample, normals, hfmask, eval, train-toy, fixture,
init-params. Every run prints its resolved configuration first; exit code 0
means the operation fully succeeded. The eval and train-toy report paths
save matplotlib figures alongside their delimited text/JSON output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import report as report_mod
from .errors import DepthFieldError
from .field import DepthField, decode_batch, decode_grid, differentiable_mask, pixel_centers
from .fixtures import FIXTURE_KINDS, make_fixture
from .formats import (
    read_params,
    read_pfm,
    read_pgm,
    read_pyramid,
    write_params,
    write_pfm,
    write_pfm_color,
    write_pgm,
    write_ply,
    write_pyramid,
)
from .geometry import CameraIntrinsics, normals_batch
from .hfmask import build_hf_mask
from .metrics import DepthMap, denormalize, evaluate, log_quantiles
from .sampler import sample_per_pixel, sample_surface
from .training import TrainConfig, draw_supervision, init_params, train_toy


def _parse_intrinsics(text):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("intrinsics must be fx,fy,cx,cy")
    return CameraIntrinsics(*parts)


def _parse_dims(text):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as e:
        raise argparse.ArgumentTypeError("dims must look like 64x64") from e


def _parse_threshold(text):
    if "^" in text:
        base, exp = text.split("^", 1)
        return float(base) ** float(exp)
    return float(text)


def _parse_thresholds(text):
    return tuple(_parse_threshold(t) for t in text.split(","))


def _parse_scales(text):
    return tuple(float(s) for s in text.split(","))


def _print_config(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print("config:", json.dumps(cfg, default=str))


def _load_field(args):
    return DepthField(read_pyramid(args.pyramid), read_params(args.params))


def cmd_decode(args):
    field = _load_field(args)
    dm = decode_grid(field, args.width, args.height)
    if args.denorm is not None:
        lo, hi = args.denorm
        dm = DepthMap(denormalize(dm.values, lo, hi))
    write_pfm(dm, args.out)
    print(f"wrote {args.width}x{args.height} depth map to {args.out}")


def cmd_sample(args):
    field = _load_field(args)
    gw, gh = args.grid if args.grid else (field.width, field.height)
    if args.per_pixel:
        pc = sample_per_pixel(field, args.intrinsics, gw, gh)
    else:
        pc = sample_surface(field, args.intrinsics, args.n, args.seed, gw, gh, eps=args.eps)
    write_ply(pc, args.out, binary=not args.ascii)
    print(f"wrote {len(pc)} points to {args.out}")


def cmd_normals(args):
    field = _load_field(args)
    xs, ys = pixel_centers(args.width, args.height, field.width, field.height)
    gx, gy = np.meshgrid(xs, ys)
    gx = gx.ravel()
    gy = gy.ravel()
    ok = differentiable_mask(field, gx, gy)
    out = np.zeros((gx.size, 3))
    if np.any(ok):
        _, n, _, valid = normals_batch(field, gx[ok], gy[ok], args.intrinsics)
        n[~valid] = 0.0
        out[ok] = n
    write_pfm_color(out.reshape(args.height, args.width, 3), args.out)
    print(f"wrote {args.width}x{args.height} normal map to {args.out}")


def cmd_hfmask(args):
    depth = read_pfm(args.depth)
    hf = build_hf_mask(depth, args.n, args.seed, scales=args.scales, tau=args.tau)
    write_pgm(hf.mask, args.out)
    print(f"wrote mask with {int(hf.mask.sum())} pixels to {args.out}")


def _figures_prefix(json_path):
    base, _ = os.path.splitext(json_path)
    return base


def cmd_eval(args):
    pred = read_pfm(args.pred)
    gt = read_pfm(args.gt)
    mask = read_pgm(args.mask) if args.mask else None
    rep, aligned = evaluate(pred, gt, args.thresholds, align=args.align, mask=mask)
    text = rep.to_text()
    sys.stdout.write(text)
    if args.json:
        with open(args.json, "w") as f:
            f.write(rep.to_json())
        base = _figures_prefix(args.json)
        with open(base + ".txt", "w") as f:
            f.write(text)
        if not args.no_figures:
            report_mod.save_delta_bars(rep, base + "_deltas.png")
            report_mod.save_ratio_error_map(aligned, gt, base + "_errmap.png")
            print(f"wrote report to {args.json} (+ .txt, figures)")


def cmd_train_toy(args):
    fx = make_fixture(args.fixture, dims=args.dims, seed=args.fixture_seed,
                      gt_scale=args.gt_scale)
    sup = draw_supervision(fx.gt, args.pairs, args.seed)
    params0 = init_params(fx.pyramid.channel_dims, args.seed,
                          scale=args.init_scale, head_hidden=args.head_hidden)
    cfg = TrainConfig(steps=args.steps, batch_size=args.batch, lr=args.lr,
                      seed=args.seed, init_scale=args.init_scale,
                      weight_decay=args.weight_decay)
    field0 = DepthField(fx.pyramid, params0)
    trained, losses = train_toy(field0, sup, cfg)
    write_params(trained, args.out)

    # evaluate on the training coordinates, in de-normalized depth space
    field = DepthField(fx.pyramid, trained)
    lo, hi = log_quantiles(fx.gt)
    xs = sup.xs * (field.width / sup.gt_width)
    ys = sup.ys * (field.height / sup.gt_height)
    preds = decode_batch(field, xs, ys)
    pred_d = denormalize(preds, lo, hi)
    target_d = denormalize(sup.targets, lo, hi)
    ratio = np.maximum(pred_d / target_d, target_d / pred_d)
    delta_001 = float(100.0 * np.mean(ratio < 1.01))
    final_loss = float(np.mean(np.abs(preds - sup.targets)))

    base, _ = os.path.splitext(args.out)
    summary = {
        "fixture": args.fixture,
        "dims": list(args.dims),
        "pairs": args.pairs,
        "steps": args.steps,
        "final_train_loss": final_loss,
        "delta_0.01_train_coords": delta_001,
        "log_norm_lo": lo,
        "log_norm_hi": hi,
    }
    with open(base + ".summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    np.savetxt(base + ".loss.csv", np.column_stack([np.arange(losses.size), losses]),
               fmt=("%d", "%.8g"), delimiter=",", header="step,loss", comments="")
    report_mod.save_loss_curve(losses, base + ".loss.png")
    print(f"final_train_loss\t{final_loss:.6f}")
    print(f"delta_0.01_train_coords\t{delta_001:.4f}")
    print(f"wrote {args.out} (+ summary, loss csv/figure)")


def cmd_fixture(args):
    kw = {}
    if args.theta is not None:
        kw["theta_deg"] = args.theta
    if args.value is not None:
        kw["value"] = args.value
    fx = make_fixture(args.kind, dims=args.dims, seed=args.seed,
                      gt_scale=args.gt_scale, **kw)
    write_pyramid(fx.pyramid, args.out_prefix + ".idfp")
    write_params(fx.params, args.out_prefix + ".idfw")
    write_pfm(fx.gt, args.out_prefix + "_gt.pfm")
    k = fx.intrinsics
    print(f"intrinsics\t{k.fx},{k.fy},{k.cx},{k.cy}")
    print(f"wrote {args.out_prefix}.idfp, .idfw, _gt.pfm")


def cmd_init_params(args):
    pyramid = read_pyramid(args.pyramid)
    params = init_params(pyramid.channel_dims, args.seed, scale=args.scale,
                         head_hidden=args.head_hidden)
    write_params(params, args.out)
    print(f"wrote decoder params for channels {pyramid.channel_dims} to {args.out}")


def build_parser():
    p = argparse.ArgumentParser(prog="depthfield",
                                description="continuous depth field toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("decode", help="render the field to a PFM depth map")
    d.add_argument("--pyramid", required=True)
    d.add_argument("--params", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--width", type=int, required=True)
    d.add_argument("--height", type=int, required=True)
    d.add_argument("--denorm", type=float, nargs=2, metavar=("LO", "HI"),
                   help="map normalized output through exp(lo + t*(hi-lo))")
    d.set_defaults(func=cmd_decode)

    s = sub.add_parser("sample", help="sample a surface point cloud to PLY")
    s.add_argument("--pyramid", required=True)
    s.add_argument("--params", required=True)
    s.add_argument("--intrinsics", type=_parse_intrinsics, required=True,
                   metavar="fx,fy,cx,cy")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--per-pixel", action="store_true",
                   help="baseline: one point per pixel center (ignores --n/--seed)")
    s.add_argument("--grid", type=_parse_dims, default=None,
                   help="weight/query grid, default: image dims")
    s.add_argument("--eps", type=float, default=1e-4)
    s.add_argument("--ascii", action="store_true")
    s.set_defaults(func=cmd_sample)

    n = sub.add_parser("normals", help="render surface normals to 3-channel PFM")
    n.add_argument("--pyramid", required=True)
    n.add_argument("--params", required=True)
    n.add_argument("--intrinsics", type=_parse_intrinsics, required=True,
                   metavar="fx,fy,cx,cy")
    n.add_argument("--width", type=int, required=True)
    n.add_argument("--height", type=int, required=True)
    n.add_argument("--out", required=True)
    n.set_defaults(func=cmd_normals)

    hf = sub.add_parser("hfmask", help="high-frequency mask from a depth map")
    hf.add_argument("--depth", required=True)
    hf.add_argument("--scales", type=_parse_scales, default=(0.0, 1.0, 2.0, 4.0))
    hf.add_argument("--tau", type=float, default=0.5)
    hf.add_argument("--n", type=int, required=True)
    hf.add_argument("--seed", type=int, default=0)
    hf.add_argument("--out", required=True)
    hf.set_defaults(func=cmd_hfmask)

    e = sub.add_parser("eval", help="delta metrics between two PFM depth maps")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--mask", default=None)
    e.add_argument("--align", choices=("depth", "disparity", "none"), default="depth")
    e.add_argument("--thresholds", type=_parse_thresholds,
                   default=_parse_thresholds("1.25^0.5,1.25,1.25^2"))
    e.add_argument("--json", default=None)
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_eval)

    t = sub.add_parser("train-toy", help="overfit a decoder on a synthetic fixture")
    t.add_argument("--fixture", choices=FIXTURE_KINDS, default="slanted")
    t.add_argument("--dims", type=_parse_dims, default=(8, 8))
    t.add_argument("--gt-scale", type=int, default=1)
    t.add_argument("--fixture-seed", type=int, default=0)
    t.add_argument("--pairs", type=int, default=2000)
    t.add_argument("--steps", type=int, default=5000)
    t.add_argument("--batch", type=int, default=256)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--weight-decay", type=float, default=1e-4)
    t.add_argument("--init-scale", type=float, default=1.0)
    t.add_argument("--head-hidden", type=int, default=256)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_toy)

    f = sub.add_parser("fixture", help="write a synthetic fixture to disk")
    f.add_argument("--kind", choices=FIXTURE_KINDS, required=True)
    f.add_argument("--dims", type=_parse_dims, default=(64, 64))
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--gt-scale", type=int, default=1)
    f.add_argument("--theta", type=float, default=None)
    f.add_argument("--value", type=float, default=None)
    f.add_argument("--out-prefix", required=True)
    f.set_defaults(func=cmd_fixture)

    ip = sub.add_parser("init-params", help="seeded decoder init matching a pyramid")
    ip.add_argument("--pyramid", required=True)
    ip.add_argument("--seed", type=int, default=0)
    ip.add_argument("--scale", type=float, default=1.0)
    ip.add_argument("--head-hidden", type=int, default=256)
    ip.add_argument("--out", required=True)
    ip.set_defaults(func=cmd_init_params)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    _print_config(args)
    try:
        args.func(args)
    except (DepthFieldError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
