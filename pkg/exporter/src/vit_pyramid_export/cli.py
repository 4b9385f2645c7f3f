"""Command line for the feature exporter.

Example:
    pyramid-export --image img.png --out feats.idfp \
        --layers 4,11,23 --dims 256,512,1024 --factors 4,2,1 --seed 0
"""

from __future__ import annotations

import argparse
import json
import sys

from .exporter import ExportConfig, ExportError, export


def _ints(text):
    return tuple(int(t) for t in text.split(","))


def _dims(text):
    w, h = text.lower().split("x")
    return int(w), int(h)


def build_parser():
    p = argparse.ArgumentParser(prog="pyramid-export",
                                description="export ViT layer features as an IDFP pyramid")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=_ints, default=(4, 11, 23))
    p.add_argument("--dims", type=_ints, default=(256, 512, 1024))
    p.add_argument("--factors", type=_ints, default=(4, 2, 1))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resize", type=_dims, default=(896, 504), metavar="WxH")
    p.add_argument("--weights", default=None,
                   help="pretrained checkpoint id/path (default: seeded random init)")
    p.add_argument("--init", choices=("random",), default=None,
                   help="force the seeded random encoder")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    cfg_dict = {k: v for k, v in sorted(vars(args).items())}
    print("config:", json.dumps(cfg_dict, default=str))
    weights = args.weights if args.weights and args.init != "random" else "random"
    try:
        cfg = ExportConfig(layers=args.layers, dims=args.dims, factors=args.factors,
                           seed=args.seed, resize=args.resize, weights=weights)
        levels = export(args.image, args.out, cfg)
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    shapes = ", ".join(f"{lv.shape[1]}x{lv.shape[0]}x{lv.shape[2]}" for lv in levels)
    print(f"wrote {len(levels)}-level pyramid ({shapes}) to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
