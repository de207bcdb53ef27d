"""Command-line entry point: ``cganseg <subcommand> ...``.

Exit codes: 0 success, 2 argument or input error, 3 numeric failure.
Every subcommand that writes into a directory also writes ``run.cfg`` there,
echoing the fully resolved options.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import NonFiniteError
from .data import (ManifestError, Raster, RasterError, SplitError, SplitSpec, binarize_mask,
                   load_dataset, preprocess, read_raster, split, synth_records, write_manifest,
                   write_raster)
from .metrics import METRIC_NAMES, ConfusionCounts, confusion, metrics, morpho_clean
from .nets import CheckpointError, SpecMismatchError, Variant, read_checkpoint, save_weights
from .shapes import ShapeLabel, Subtype, classify_shapes, contingency
from .trainer import (ShapeTrainConfig, TrainConfig, TrainingDiverged, fit_shape_cnn, segment,
                      train_cgan, train_shape_cnn)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

RASTER_SUFFIXES = (".pgm", ".png")
VARIANT_ALIASES = {
    "unet": Variant.GEN_UNET, "genunet": Variant.GEN_UNET,
    "autoenc": Variant.GEN_AUTOENC, "genautoenc": Variant.GEN_AUTOENC,
}

log = logging.getLogger("cganseg")


class InputError(Exception):
    """Bad user input detected after argument parsing; maps to exit code 2."""


# -- helpers ----------------------------------------------------------------------

def _variant(text: str) -> Variant:
    try:
        return VARIANT_ALIASES[text.strip().lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"unknown variant {text!r} (choose unet or autoenc)") from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _unit_interval(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {text}")
    return value


def _write_run_cfg(out_dir: Path, command: str, options: dict) -> None:
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.optionxform = str  # keep key case
    cfg[command] = {k: _cfg_value(v) for k, v in options.items()}
    buf = io.StringIO()
    cfg.write(buf)
    (out_dir / "run.cfg").write_text(buf.getvalue())


def _cfg_value(v) -> str:
    if isinstance(v, Variant):
        return v.value
    if isinstance(v, (list, tuple)):
        return " ".join(_cfg_value(x) for x in v)
    if v is None:
        return ""
    return str(v)


def _ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _raster_files(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        raise InputError(f"not a directory: {directory}")
    return {p.name: p for p in sorted(directory.iterdir())
            if p.is_file() and p.suffix.lower() in RASTER_SUFFIXES}


def _mask_raster(mask: np.ndarray) -> Raster:
    return Raster((np.asarray(mask) > 0).astype(np.uint8) * 255, 255)


def _binary_pixels(r: Raster, shape: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Raster thresholded at half scale, resized first when ``shape`` differs."""
    if shape is None or r.pixels.shape == shape:
        return r.pixels.astype(np.float64) / r.maxval >= 0.5
    if shape[0] != shape[1]:
        raise InputError(f"cannot resample to non-square shape {shape}")
    return binarize_mask(r, shape[0]).data[0].astype(bool)


def _load_generator(path: Path):
    w = read_checkpoint(path)
    if not w.spec.variant.is_generator:
        raise InputError(f"{path} holds {w.spec.variant.value} weights, not a generator")
    return w


# -- subcommands ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = _ensure_dir(Path(args.out))
    _ensure_dir(out / "images")
    _ensure_dir(out / "masks")
    rows = []
    for rec in synth_records(args.count, args.seed, args.resolution):
        write_raster(out / "images" / f"{rec.id}.pgm", rec.image)
        write_raster(out / "masks" / f"{rec.id}.pgm", rec.mask)
        rows.append({"id": rec.id, "image": f"images/{rec.id}.pgm", "mask": f"masks/{rec.id}.pgm",
                     "shape": rec.shape_label.name.lower()})
    write_manifest(out / "manifest.csv", rows)
    _write_run_cfg(out, "synth", {"count": args.count, "seed": args.seed,
                                  "resolution": args.resolution, "out": args.out})
    print(f"wrote {args.count} samples to {out}")
    return EXIT_OK


def cmd_train_seg(args) -> int:
    try:
        cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                          beta1=args.beta1, beta2=args.beta2, lambda_l1=args.lambda_l1,
                          seed=args.seed, variant=args.variant, resolution=args.resolution,
                          checkpoint_every=args.checkpoint_every, depth=args.depth,
                          base_channels=args.base_channels, dropout=args.dropout,
                          threshold=args.threshold)
        spec = SplitSpec(*args.split, seed=args.seed)
    except (ValueError, SplitError) as exc:
        raise InputError(str(exc)) from None
    samples = load_dataset(args.manifest, cfg.resolution, cfg.threshold)
    if not samples:
        raise InputError(f"{args.manifest}: manifest lists no samples")
    train, val, test = split(samples, spec)
    if not train:
        raise InputError("split leaves the training set empty")
    out = _ensure_dir(Path(args.out))
    _write_run_cfg(out, "train-seg", {"manifest": args.manifest, "out": args.out,
                                      "split": args.split, **cfg.resolved()})
    with (out / "split.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "subset"])
        for name, part in (("train", train), ("val", val), ("test", test)):
            for s in part:
                w.writerow([s.id, name])
    gen, disc, report = train_cgan(train, val, cfg, out_dir=out)
    save_weights(report.best_generator, out / "generator.ckpt")
    save_weights(gen, out / "generator_last.ckpt")
    save_weights(disc, out / "discriminator_last.ckpt")
    report.write_csv(out / "report.csv")
    last = report.epochs[-1]
    print(f"best epoch {report.best_epoch}; final train dice {last.train_dice:.4f}"
          + ("" if last.val_dice is None else f", val dice {last.val_dice:.4f}"))
    return EXIT_OK


def _segment_file(weights, src: Path, dst: Path, threshold: float, clean_radius: int) -> None:
    res = weights.spec.input_resolution
    image = preprocess(read_raster(src), res)
    mask = segment(weights, image, threshold).data[0]
    if clean_radius > 0:
        mask = morpho_clean(mask, clean_radius)
    write_raster(dst.with_suffix(".pgm"), _mask_raster(mask))


def cmd_segment(args) -> int:
    weights = _load_generator(Path(args.weights))
    src = Path(args.image)
    out = Path(args.out)
    if src.is_dir():
        files = _raster_files(src)
        if not files:
            raise InputError(f"no .pgm or .png images in {src}")
        _ensure_dir(out)
        for name, path in files.items():
            _segment_file(weights, path, out / Path(name).with_suffix(".pgm").name,
                          args.threshold, args.clean_radius)
        cfg_dir = out
        print(f"segmented {len(files)} images into {out}")
    else:
        if not src.is_file():
            raise InputError(f"image not found: {src}")
        if out.suffix.lower() != ".pgm":
            raise InputError(f"--out for a single image must end in .pgm, got {out}")
        _ensure_dir(out.parent)
        _segment_file(weights, src, out, args.threshold, args.clean_radius)
        cfg_dir = out.parent
        print(f"wrote {out}")
    _write_run_cfg(cfg_dir, "segment", {"weights": args.weights, "image": args.image,
                                        "out": args.out, "threshold": args.threshold,
                                        "clean_radius": args.clean_radius})
    return EXIT_OK


def cmd_eval(args) -> int:
    preds = _raster_files(Path(args.pred_dir))
    truths = _raster_files(Path(args.truth_dir))
    pred_only = sorted(set(preds) - set(truths))
    truth_only = sorted(set(truths) - set(preds))
    if pred_only or truth_only:
        lines = [f"  prediction without truth: {n}" for n in pred_only]
        lines += [f"  truth without prediction: {n}" for n in truth_only]
        raise InputError("unmatched filenames:\n" + "\n".join(lines))
    if not preds:
        raise InputError(f"no .pgm or .png masks in {args.pred_dir}")
    header = ["image", "tp", "fp", "tn", "fn", *METRIC_NAMES]
    rows = []
    pooled = ConfusionCounts(0, 0, 0, 0)
    for name in sorted(preds):
        p = _binary_pixels(read_raster(preds[name]))
        t = _binary_pixels(read_raster(truths[name]), p.shape)
        c = confusion(p, t)
        pooled = pooled + c
        rows.append([name, c.tp, c.fp, c.tn, c.fn, *(repr(v) for v in metrics(c).as_tuple())])
    rows.append(["pooled", pooled.tp, pooled.fp, pooled.tn, pooled.fn,
                 *(repr(v) for v in metrics(pooled).as_tuple())])
    out = Path(args.out)
    _ensure_dir(out.parent)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    _write_run_cfg(out.parent, "eval", {"pred_dir": args.pred_dir, "truth_dir": args.truth_dir,
                                        "out": args.out})
    m = metrics(pooled)
    print(f"{len(preds)} masks; pooled dice {m.dice:.4f} jaccard {m.jaccard:.4f}")
    return EXIT_OK


def cmd_train_shape(args) -> int:
    try:
        cfg = ShapeTrainConfig(lr=args.lr, batch_size=args.batch_size, seed=args.seed,
                               resolution=args.resolution, base_channels=args.base_channels)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    samples = load_dataset(args.manifest, cfg.resolution)
    if not samples:
        raise InputError(f"{args.manifest}: manifest lists no samples")
    unlabeled = [s.id for s in samples if s.shape_label is None]
    if unlabeled:
        raise InputError(f"{len(unlabeled)} samples have no shape label (first: {unlabeled[0]})")
    out = _ensure_dir(Path(args.out))
    _write_run_cfg(out, "train-shape", {"manifest": args.manifest, "out": args.out,
                                        "folds": args.folds, "epochs": args.epochs,
                                        **cfg.resolved()})
    if args.folds:
        try:
            _, report = train_shape_cnn(samples, args.folds, args.epochs, cfg)
        except SplitError as exc:
            raise InputError(str(exc)) from None
        (out / "cv.csv").write_text(report.to_csv())
        (out / "cv_confusion.csv").write_text(report.confusion_csv())
        print(f"{args.folds}-fold mean accuracy {report.mean_accuracy:.4f}")
    final = fit_shape_cnn(samples, args.epochs, cfg, seed=cfg.seed)
    save_weights(final, out / "shape.ckpt")
    print(f"wrote {out / 'shape.ckpt'}")
    return EXIT_OK


def cmd_classify(args) -> int:
    weights = read_checkpoint(args.weights)
    if weights.spec.variant is not Variant.SHAPE_CNN:
        raise InputError(f"{args.weights} holds {weights.spec.variant.value} weights, not ShapeCNN")
    files = _raster_files(Path(args.masks))
    if not files:
        raise InputError(f"no .pgm or .png masks in {args.masks}")
    res = weights.spec.input_resolution
    masks = [binarize_mask(read_raster(p), res) for p in files.values()]
    labels = classify_shapes(weights, masks)
    out = Path(args.out)
    _ensure_dir(out.parent)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "shape"])
        for name, label in zip(files, labels):
            w.writerow([Path(name).stem, label.name.lower()])
    _write_run_cfg(out.parent, "classify", {"weights": args.weights, "masks": args.masks,
                                            "out": args.out})
    print(f"classified {len(labels)} masks")
    return EXIT_OK


def _read_csv(path: Path) -> tuple[list[str], list[tuple[int, dict]]]:
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip().lower() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        rows = [(reader.line_num, {k: (v or "").strip() for k, v in r.items() if k})
                for r in reader if any((v or "").strip() for v in r.values())]
    return header, rows


def cmd_analyze(args) -> int:
    labels_path = Path(args.labels)
    header, rows = _read_csv(labels_path)
    if "subtype" not in header:
        raise InputError(f"{labels_path}: needs a 'subtype' column")
    predicted: Optional[dict[str, str]] = None
    if args.shapes:
        shapes_path = Path(args.shapes)
        sh_header, sh_rows = _read_csv(shapes_path)
        if not {"id", "shape"} <= set(sh_header):
            raise InputError(f"{shapes_path}: needs 'id' and 'shape' columns")
        predicted = {r["id"]: r["shape"] for _, r in sh_rows}
        if "id" not in header:
            raise InputError(f"{labels_path}: needs an 'id' column to join with {shapes_path}")
    elif "shape" not in header:
        raise InputError(f"{labels_path}: needs a 'shape' column (or pass --shapes)")
    pairs = []
    for line, r in rows:
        try:
            subtype = Subtype.parse(r["subtype"])
            if predicted is not None:
                if r["id"] not in predicted:
                    raise InputError(f"{labels_path}:{line}: id {r['id']!r} has no predicted shape")
                shape = ShapeLabel.parse(predicted[r["id"]])
            else:
                shape = ShapeLabel.parse(r["shape"])
        except ValueError as exc:
            raise InputError(f"{labels_path}:{line}: {exc}") from None
        pairs.append((subtype, shape))
    if not pairs:
        raise InputError(f"{labels_path}: no labelled rows")
    table = contingency(pairs)
    out = _ensure_dir(Path(args.out))
    (out / "contingency.txt").write_text(table.to_text())
    (out / "contingency.csv").write_text(table.to_csv())
    _write_run_cfg(out, "analyze", {"labels": args.labels, "shapes": args.shapes, "out": args.out})
    sys.stdout.write(table.to_text())
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cganseg",
        description="Mass segmentation with a conditional GAN, then shape classification.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    p.add_argument("--count", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=_positive_int, default=64)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    d = TrainConfig()
    p = sub.add_parser("train-seg", help="train the segmentation cGAN")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--variant", type=_variant, default=Variant.GEN_UNET, help="unet or autoenc")
    p.add_argument("--epochs", type=_positive_int, default=d.epochs)
    p.add_argument("--lambda", dest="lambda_l1", type=float, default=d.lambda_l1)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--beta1", type=float, default=d.beta1)
    p.add_argument("--beta2", type=float, default=d.beta2)
    p.add_argument("--batch-size", type=_positive_int, default=d.batch_size)
    p.add_argument("--resolution", type=_positive_int, default=d.resolution)
    p.add_argument("--depth", type=int, default=d.depth)
    p.add_argument("--base-channels", type=int, default=d.base_channels)
    p.add_argument("--dropout", type=float, default=d.dropout)
    p.add_argument("--threshold", type=_unit_interval, default=d.threshold)
    p.add_argument("--split", type=float, nargs=3, default=[0.70, 0.15, 0.15],
                   metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--checkpoint-every", type=_nonneg_int, default=0)
    p.add_argument("--seed", type=int, default=d.seed)
    p.set_defaults(func=cmd_train_seg)

    p = sub.add_parser("segment", help="predict binary masks with a trained generator")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True, help="image file or directory of images")
    p.add_argument("--out", required=True, help=".pgm file, or directory when --image is one")
    p.add_argument("--threshold", type=_unit_interval, default=0.5)
    p.add_argument("--clean-radius", type=_nonneg_int, default=1,
                   help="opening radius in pixels; 0 disables cleaning")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--truth-dir", required=True)
    p.add_argument("--out", required=True, help="metrics CSV")
    p.set_defaults(func=cmd_eval)

    s = ShapeTrainConfig()
    p = sub.add_parser("train-shape", help="cross-validate and train the shape classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--folds", type=_nonneg_int, default=10, help="0 skips cross-validation")
    p.add_argument("--epochs", type=_positive_int, default=50)
    p.add_argument("--lr", type=float, default=s.lr)
    p.add_argument("--batch-size", type=_positive_int, default=s.batch_size)
    p.add_argument("--resolution", type=_positive_int, default=s.resolution)
    p.add_argument("--base-channels", type=int, default=s.base_channels)
    p.add_argument("--seed", type=int, default=s.seed)
    p.set_defaults(func=cmd_train_shape)

    p = sub.add_parser("classify", help="assign a shape class to each mask")
    p.add_argument("--weights", required=True)
    p.add_argument("--masks", required=True, help="directory of mask images")
    p.add_argument("--out", required=True, help="CSV of id,shape")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("analyze", help="subtype-by-shape contingency table")
    p.add_argument("--labels", required=True, help="CSV with subtype and shape (or id) columns")
    p.add_argument("--shapes", help="classify output; shapes are joined to --labels by id")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (TrainingDiverged, NonFiniteError, FloatingPointError) as exc:
        print(f"cganseg: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ManifestError, RasterError, CheckpointError, SpecMismatchError,
            SplitError, ValueError, OSError) as exc:
        print(f"cganseg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
