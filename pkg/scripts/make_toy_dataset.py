#!/usr/bin/env python3
"""Generate a synthetic scene plus a ready-to-run pipeline config.

Writes scene rasters, WKT label shapes, an SCL plane with a cloudy corner,
and cfg.yaml into --out, then prints the commands to run the pipeline on it.
"""

import argparse
from pathlib import Path

import numpy as np

from terraseg.georaster import GeoRaster, write_raster
from terraseg.synth import make_scene, make_scl, scene_label_shapes, shapes_to_json

CONFIG = """\
seed: {seed}
store: {out}/store
base_group: Romania/2018
ingest:
  image: {out}/scene
  labels: {out}/labels.json
  scl: {out}/scl
  num_classes: {classes}
  weeks: {weeks}
  tile_size: {tile}
split:
  k: {k}
train:
  topology:
    kind: unet
    depth: 2
    base_channels: 8
    in_channels: {channels}
    num_classes: {classes}
  epochs: 60
  validation_fold: 0
  checkpoint: model.ckpt
  history: history
  slice_timestamps: [0, {weeks}]
evaluate:
  fold: 0
  out: report
predict:
  week: 0
  out: prediction
  preview: true
"""


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="toy", help="output directory")
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--size", type=int, default=64, help="scene height and width")
    ap.add_argument("--tile", type=int, default=32)
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--channels", type=int, default=4)
    ap.add_argument("--weeks", type=int, default=1)
    ap.add_argument("--folds", type=int, default=2)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data, labels, gt = make_scene(args.seed, height=args.size, width=args.size,
                                  channels=args.channels,
                                  num_classes=args.classes,
                                  block=args.tile // 2)
    write_raster(GeoRaster(data, gt, "EPSG:4326", 0.0), str(out / "scene"))
    shapes = scene_label_shapes(args.size, args.size, args.classes,
                                args.tile // 2, gt)
    (out / "labels.json").write_text(shapes_to_json(shapes), encoding="utf-8")
    scl = make_scl(args.size, args.size, cloud_rows=args.size // 8,
                   cloud_cols=args.size // 8)
    write_raster(GeoRaster(scl[None].astype(np.uint8), gt, "EPSG:4326", 0.0),
                 str(out / "scl"))
    cfg = out / "cfg.yaml"
    cfg.write_text(CONFIG.format(seed=args.seed, out=out, classes=args.classes,
                                 weeks=args.weeks, tile=args.tile,
                                 channels=args.channels, k=args.folds),
                   encoding="utf-8")
    print(f"wrote {out}/scene.bin, labels.json, scl.bin, {cfg}")
    print("next:")
    for cmd in ("ingest", "split", "train", "evaluate", "predict"):
        extra = f" --out {out}/run" if cmd in ("train", "evaluate", "predict") else ""
        print(f"  terraseg {cmd} --config {cfg}{extra}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
