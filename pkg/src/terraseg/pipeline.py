"""Command implementations behind the CLI: ingest, split, train, evaluate,
predict, query.

Store layout written by ingest (under the configured base group):

    Sentinel-2/MSI/10m              f32 [weeks, ty, tx, th, tw, ch]
    Sentinel-2/MSI/ignore_masks     u8  [weeks, ty, tx, th, tw]
    Sentinel-3/OLCI/300m            f32 [weeks, ty, tx, hc, wc, cc]  (optional)
    Labels/CLC_10m/labels           u8  [ty, tx, th, tw]
    Labels/CLC_10m/multilabel_stratified_kfolds   i32 [ty*tx]

Training samples concatenate the configured input components channel-wise;
coarser components are nearest-neighbor upsampled to the first component's
tile size. Sample ignore masks are the union of the stored (cloud) mask and
label-nodata pixels. Relative output paths resolve against ``out_dir``.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .catalog import CatalogQuery, build_catalog_query
from .checkpoint import checkpoint_load
from .chunkstore import Store, StoredArray
from .config import PipelineConfig, TrainSection
from .datasplit import (
    SampleRecord,
    fold_manifest,
    presence_labels,
    stratified_kfold_partition,
)
from .errors import ConfigError, DataError, ParameterError
from .georaster import (
    GeoRaster,
    TileGrid,
    mosaic,
    rasterize,
    read_raster,
    scl_to_ignore_mask,
    tile,
    write_pgm,
    write_ppm,
)
from .metrics import ConfusionMatrix, confusion_update, render_report, report, report_json
from .optim import AdamState, SgdState
from .synth import one_hot
from .tensor import Tensor, mix_seed
from .topologies import build_topology
from .training import History, Sample, TrainConfig, fit
from .wkt import parse_wkt

log = logging.getLogger("terraseg")

IMAGE_ARRAY = "Sentinel-2/MSI/10m"
MASK_ARRAY = "Sentinel-2/MSI/ignore_masks"
COARSE_ARRAY = "Sentinel-3/OLCI/300m"
LABEL_ARRAY = "Labels/CLC_10m/labels"
FOLD_ARRAY = "Labels/CLC_10m/multilabel_stratified_kfolds"

__all__ = [
    "IMAGE_ARRAY", "MASK_ARRAY", "COARSE_ARRAY", "LABEL_ARRAY", "FOLD_ARRAY",
    "cmd_ingest", "cmd_split", "cmd_train", "cmd_evaluate", "cmd_predict",
    "cmd_query",
]


def _node(config: PipelineConfig, rel: str) -> str:
    return f"{config.base_group}/{rel}" if config.base_group else rel


def _section(config: PipelineConfig, name: str):
    section = getattr(config, name)
    if section is None:
        raise ConfigError(f"config.{name}: section required for this command")
    return section


def _resolve(path: str, out_dir) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(out_dir) / p


def _load_label_shapes(path: str, num_classes: int, class_map) -> list:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"label file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"label file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, list):
        raise DataError(f"label file {path} must hold a JSON list")
    remap = dict(class_map) if class_map is not None else None
    shapes = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict) or "class" not in entry or "wkt" not in entry:
            raise DataError(f"label entry {i} needs 'class' and 'wkt' keys")
        code = entry["class"]
        if remap is not None:
            if code not in remap:
                raise DataError(f"label entry {i}: class code {code} not in class_map")
            code = remap[code]
        if not isinstance(code, int) or not 0 <= code < num_classes:
            raise DataError(
                f"label entry {i}: class index {code} outside [0, {num_classes})"
            )
        shapes.append((code, parse_wkt(entry["wkt"])))
    return shapes


def cmd_ingest(config: PipelineConfig) -> Store:
    """Rasterize labels, tile everything, and (re)write the store arrays."""
    ing = _section(config, "ingest")
    raster = read_raster(ing.image)
    shapes = _load_label_shapes(ing.labels, ing.num_classes, ing.class_map)
    label_raster = rasterize(shapes, raster.width, raster.height,
                             raster.geotransform, raster.crs,
                             nodata=ing.label_nodata)
    if ing.scl is not None:
        scl = read_raster(ing.scl)
        if scl.crs != raster.crs:
            raise DataError(f"SCL crs {scl.crs!r} != image crs {raster.crs!r}")
        if scl.data.shape[1:] != raster.data.shape[1:]:
            raise DataError("SCL plane does not match the image extent")
        mask_raster = scl_to_ignore_mask(scl, ing.cloud_classes)
    else:
        mask_raster = GeoRaster(
            np.zeros((1, raster.height, raster.width), dtype=np.uint8),
            raster.geotransform, raster.crs, 0.0)
    # pad value 1 marks synthetic edge pixels as ignored
    mask_raster = GeoRaster(mask_raster.data, mask_raster.geotransform,
                            mask_raster.crs, 1.0)

    grid, img_tiles = tile(raster, ing.tile_size)
    _, lbl_tiles = tile(label_raster, ing.tile_size)
    _, mask_tiles = tile(mask_raster, ing.tile_size)
    nty, ntx, ts = grid.tiles_y, grid.tiles_x, grid.tile_size
    geo_attrs = {
        "geotransform": list(raster.geotransform),
        "crs": raster.crs,
        "scene_height": raster.height,
        "scene_width": raster.width,
        "tile_size": ts,
    }

    store = Store(config.store)
    for rel in (IMAGE_ARRAY, MASK_ARRAY, COARSE_ARRAY, LABEL_ARRAY, FOLD_ARRAY):
        store.remove(_node(config, rel))

    img = store.create_array(
        _node(config, IMAGE_ARRAY),
        [ing.weeks, nty, ntx, ts, ts, raster.channels],
        [1, 1, 1, ts, ts, raster.channels], "f32",
        attributes={**geo_attrs, "weeks": ing.weeks, "nodata": raster.nodata})
    msk = store.create_array(
        _node(config, MASK_ARRAY),
        [ing.weeks, nty, ntx, ts, ts], [1, 1, 1, ts, ts], "u8", fill=1)
    lbl = store.create_array(
        _node(config, LABEL_ARRAY),
        [nty, ntx, ts, ts], [1, 1, ts, ts], "u8", fill=ing.label_nodata,
        attributes={**geo_attrs, "num_classes": ing.num_classes,
                    "label_nodata": ing.label_nodata})

    for i, (img_t, lbl_t, msk_t) in enumerate(zip(img_tiles, lbl_tiles, mask_tiles)):
        iy, ix = divmod(i, ntx)
        lbl.write_region((iy, ix, 0, 0), lbl_t.data[0][None, None])
        for w in range(ing.weeks):
            img.write_region((w, iy, ix, 0, 0, 0),
                             img_t.data.transpose(1, 2, 0)[None, None, None])
            msk.write_region((w, iy, ix, 0, 0), msk_t.data[0][None, None, None])

    if ing.coarse_image is not None:
        coarse = read_raster(ing.coarse_image)
        if coarse.crs != raster.crs:
            raise DataError(f"coarse crs {coarse.crs!r} != image crs {raster.crs!r}")
        if coarse.height % nty or coarse.width % ntx:
            raise DataError(
                f"coarse extent {coarse.height}x{coarse.width} does not divide "
                f"into the {nty}x{ntx} tile grid")
        hc, wc = coarse.height // nty, coarse.width // ntx
        arr = store.create_array(
            _node(config, COARSE_ARRAY),
            [ing.weeks, nty, ntx, hc, wc, coarse.channels],
            [1, 1, 1, hc, wc, coarse.channels], "f32",
            attributes={"crs": coarse.crs,
                        "geotransform": list(coarse.geotransform)})
        for iy in range(nty):
            for ix in range(ntx):
                block = coarse.data[:, iy * hc : (iy + 1) * hc,
                                    ix * wc : (ix + 1) * wc]
                for w in range(ing.weeks):
                    arr.write_region((w, iy, ix, 0, 0, 0),
                                     block.transpose(1, 2, 0)[None, None, None])
    log.info("ingested %dx%d tiles of %d into %s", nty, ntx, ts, config.store)
    return store


def cmd_split(config: PipelineConfig):
    """Stratified fold assignment over label tiles, persisted in the store."""
    sp = _section(config, "split")
    store = Store(config.store)
    lbl = store.array(_node(config, LABEL_ARRAY))
    nty, ntx, th, tw = lbl.shape
    nodata = lbl.attributes.get("label_nodata", 255)
    records = []
    for iy in range(nty):
        for ix in range(ntx):
            plane = lbl.read_region((iy, ix, 0, 0), (1, 1, th, tw))[0, 0]
            records.append(SampleRecord(
                iy * ntx + ix,
                presence_labels(plane, sp.min_pixels, ignore_value=nodata)))
    if sp.k > len(records):
        raise ParameterError(f"k={sp.k} exceeds the {len(records)} available tiles")
    assignment = stratified_kfold_partition(records, sp.k,
                                            mix_seed(config.seed, "split"))
    store.remove(_node(config, FOLD_ARRAY))
    n = len(records)
    arr = store.create_array(
        _node(config, FOLD_ARRAY), [n], [n], "i32", codec="raw",
        attributes=fold_manifest(assignment, records, config.seed))
    arr.write_region((0,), np.array([assignment.fold_of(i) for i in range(n)],
                                    dtype=np.int32))
    log.info("assigned %d tiles to %d folds", n, sp.k)
    return assignment


def _read_tile_chw(arr: StoredArray, week: int, iy: int, ix: int) -> np.ndarray:
    _, _, _, h, w, c = arr.shape
    block = arr.read_region((week, iy, ix, 0, 0, 0), (1, 1, 1, h, w, c))
    return block[0, 0, 0].transpose(2, 0, 1)


def _upsample_to(plane: np.ndarray, th: int, tw: int) -> np.ndarray:
    c, h, w = plane.shape
    if th % h or tw % w:
        raise DataError(f"cannot upsample {h}x{w} tile to {th}x{tw} (non-integer factor)")
    return np.repeat(np.repeat(plane, th // h, axis=1), tw // w, axis=2)


class _SampleSource:
    """Reads (image, target, ignore) triples out of an ingested store."""

    def __init__(self, config: PipelineConfig, store: Store, train: TrainSection):
        self.inputs = [store.array(_node(config, comp)) for comp in train.inputs]
        self.labels = store.array(_node(config, LABEL_ARRAY))
        self.masks = (store.array(_node(config, train.masks))
                      if train.masks is not None else None)
        self.nty, self.ntx, self.th, self.tw = self.labels.shape
        attrs = self.labels.attributes
        self.num_classes = int(attrs["num_classes"])
        self.nodata = int(attrs.get("label_nodata", 255))
        self.weeks = self.inputs[0].shape[0]
        self.channels = sum(a.shape[5] for a in self.inputs)

    def week_range(self, lo: int, hi: int) -> range:
        if not (0 <= lo < hi <= self.weeks):
            raise ParameterError(
                f"slice_timestamps [{lo}, {hi}) outside the {self.weeks}-week store")
        return range(lo, hi)

    def label_plane(self, iy: int, ix: int) -> np.ndarray:
        return self.labels.read_region((iy, ix, 0, 0), (1, 1, self.th, self.tw))[0, 0]

    def ignore_plane(self, week: int, iy: int, ix: int) -> np.ndarray:
        if self.masks is None:
            return np.zeros((self.th, self.tw), dtype=np.uint8)
        block = self.masks.read_region((week, iy, ix, 0, 0),
                                       (1, 1, 1, self.th, self.tw))
        return (block[0, 0, 0] != 0).astype(np.uint8)

    def image(self, week: int, iy: int, ix: int) -> Tensor:
        planes = []
        for arr in self.inputs:
            chw = _read_tile_chw(arr, week, iy, ix).astype(np.float64)
            if chw.shape[1:] != (self.th, self.tw):
                chw = _upsample_to(chw, self.th, self.tw)
            planes.append(chw)
        return Tensor(np.concatenate(planes, axis=0), name="image")

    def sample(self, week: int, iy: int, ix: int) -> Sample:
        label = self.label_plane(iy, ix)
        target, label_ignore = one_hot(label, self.num_classes, self.nodata)
        ignore = np.where(self.ignore_plane(week, iy, ix) | label_ignore, 1, 0)
        return Sample(self.image(week, iy, ix), target, ignore.astype(np.uint8))


def _fold_ids(store: Store, config: PipelineConfig) -> np.ndarray:
    arr = store.array(_node(config, FOLD_ARRAY))
    return arr.read_region((0,), arr.shape)


def _make_optimizer(opt_config):
    if opt_config.kind == "sgd":
        return SgdState(lr=opt_config.lr)
    return AdamState(lr=opt_config.lr, beta1=opt_config.beta_1,
                     beta2=opt_config.beta_2, eps=opt_config.epsilon)


def cmd_train(config: PipelineConfig, out_dir=".") -> History:
    """Build samples from the store, train the configured topology."""
    t = _section(config, "train")
    store = Store(config.store)
    src = _SampleSource(config, store, t)
    if t.topology.num_classes != src.num_classes:
        raise ConfigError(
            f"config.train.topology.num_classes: {t.topology.num_classes} but the "
            f"store labels carry {src.num_classes}")
    if t.topology.in_channels != src.channels:
        raise ConfigError(
            f"config.train.topology.in_channels: {t.topology.in_channels} but the "
            f"configured inputs concatenate to {src.channels}")

    folds = None
    if t.validation_fold is not None:
        folds = _fold_ids(store, config)
    train_samples, val_samples = [], []
    weeks = src.week_range(*t.slice_timestamps)
    for w in weeks:
        for iy in range(src.nty):
            for ix in range(src.ntx):
                s = src.sample(w, iy, ix)
                if s.ignore is not None and s.ignore.all():
                    log.info("skipping fully ignored tile (%d, %d, %d)", w, iy, ix)
                    continue
                if folds is not None and folds[iy * src.ntx + ix] == t.validation_fold:
                    val_samples.append(s)
                else:
                    train_samples.append(s)
    if not train_samples:
        raise DataError("no usable training tiles (all ignored or in the validation fold)")

    graph = build_topology(t.topology, input_hw=(src.th, src.tw),
                           seed=mix_seed(config.seed, "init"))
    ckpt = str(_resolve(t.checkpoint, out_dir)) if t.checkpoint else None
    if ckpt:
        Path(ckpt).parent.mkdir(parents=True, exist_ok=True)
    tc = TrainConfig(
        epochs=t.epochs, batch_size=t.batch_size, seed=config.seed,
        shuffle=t.randomise, monitor=t.monitor, min_delta=t.min_delta,
        early_stop_patience=t.early_stop_patience,
        plateau_patience=t.plateau_patience, plateau_factor=t.plateau_factor,
        checkpoint_path=ckpt, metric_names=t.metrics)
    history = fit(graph, train_samples, tc, _make_optimizer(t.optimizer),
                  val_samples or None)
    base = _resolve(t.history or "history", out_dir)
    base.parent.mkdir(parents=True, exist_ok=True)
    base.with_suffix(".txt").write_text(history.table(), encoding="utf-8")
    base.with_suffix(".json").write_text(history.to_json(), encoding="utf-8")
    log.info("trained %d epochs on %d samples", len(history.records),
             len(train_samples))
    return history


def _checkpoint_path(config: PipelineConfig, section, out_dir) -> Path:
    path = section.checkpoint
    if path is None and config.train is not None:
        path = config.train.checkpoint
    if path is None:
        raise ConfigError("config: no checkpoint path in this section or train")
    return _resolve(path, out_dir)


def cmd_evaluate(config: PipelineConfig, out_dir=".") -> dict:
    """Aggregate confusion matrix over held-out tiles; write the report."""
    e = _section(config, "evaluate")
    t = _section(config, "train")
    store = Store(config.store)
    src = _SampleSource(config, store, t)
    graph, _ = checkpoint_load(str(_checkpoint_path(config, e, out_dir)))
    out_classes = graph.shape_of(graph.output_name)[0]
    if out_classes != src.num_classes:
        raise ConfigError(
            f"config.evaluate: checkpoint predicts {out_classes} classes but the "
            f"store labels carry {src.num_classes}")

    wanted = None
    if e.fold is not None:
        folds = _fold_ids(store, config)
        wanted = {divmod(i, src.ntx) for i in range(folds.size)
                  if folds[i] == e.fold}
        if not wanted:
            raise DataError(f"fold {e.fold} holds no tiles")
    cm = ConfusionMatrix.zeros(src.num_classes)
    for w in src.week_range(*t.slice_timestamps):
        for iy in range(src.nty):
            for ix in range(src.ntx):
                if wanted is not None and (iy, ix) not in wanted:
                    continue
                label = src.label_plane(iy, ix)
                _, label_ignore = one_hot(label, src.num_classes, src.nodata)
                ignore = np.where(src.ignore_plane(w, iy, ix) | label_ignore, 1, 0)
                probs, _ = graph.forward(src.image(w, iy, ix), training=False)
                truth = np.where(ignore == 1, 0, label).astype(np.int64)
                confusion_update(cm, probs.data.argmax(axis=0), truth, ignore)
    values = report(cm)
    base = _resolve(e.out or "report", out_dir)
    base.parent.mkdir(parents=True, exist_ok=True)
    base.with_suffix(".txt").write_text(render_report(values), encoding="utf-8")
    base.with_suffix(".json").write_text(report_json(values), encoding="utf-8")
    return values


def cmd_predict(config: PipelineConfig, out_dir=".") -> Path:
    """Argmax class masks for one week, mosaicked and written as PGM."""
    p = _section(config, "predict")
    t = _section(config, "train")
    store = Store(config.store)
    src = _SampleSource(config, store, t)
    graph, _ = checkpoint_load(str(_checkpoint_path(config, p, out_dir)))
    if not 0 <= p.week < src.weeks:
        raise ParameterError(f"week {p.week} outside the {src.weeks}-week store")

    attrs = store.array(_node(config, IMAGE_ARRAY)).attributes
    gt = tuple(attrs["geotransform"])
    grid = TileGrid(src.th, src.nty, src.ntx,
                    int(attrs["scene_width"]), int(attrs["scene_height"]),
                    gt, attrs["crs"], 255.0, 1, "u8")
    ref = GeoRaster(np.zeros((1, 1, 1), dtype=np.uint8), gt, attrs["crs"], 255.0)
    tiles = []
    for iy in range(src.nty):
        for ix in range(src.ntx):
            probs, _ = graph.forward(src.image(p.week, iy, ix), training=False)
            pred = probs.data.argmax(axis=0).astype(np.uint8)
            pred[src.ignore_plane(p.week, iy, ix) != 0] = 255
            ox, oy = ref.pixel_to_world(ix * src.tw, iy * src.th)
            tiles.append(GeoRaster(pred[None], (ox, gt[1], gt[2], oy, gt[4], gt[5]),
                                   attrs["crs"], 255.0))
    full = mosaic(grid, tiles)
    base = _resolve(p.out, out_dir)
    base.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(full, str(base))
    if p.preview:
        write_ppm(full, str(base) + "_preview")
    log.info("wrote prediction mask %s.pgm", base)
    return base


def cmd_query(config: PipelineConfig) -> str:
    """Build the catalog search URL from the query section."""
    q = _section(config, "query")
    footprint = parse_wkt(q.footprint) if q.footprint is not None else None
    cq = CatalogQuery(
        begin=q.begin, end=q.end, platform_name=q.platformname,
        filename=q.filename, product_type=q.producttype,
        instrument=q.instrumentshortname, footprint=footprint,
        offset=q.offset, limit=q.limit, sorted_by=q.sortedby, order=q.order)
    return build_catalog_query(cq)
