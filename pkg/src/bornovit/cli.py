"""Command-line entry point: ``bornovit {train,eval,profile,gradcam,crop-page}``.

Exit codes: 0 success, 2 config/usage error, 3 data/IO error, 4 semantic mismatch.
Human-readable tables go to stdout; line-delimited JSON logs go to stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .data import crop_page_grid, decode_image, load_dataset, resize_to_input, save_page_cells
from .errors import ConfigError, DataError, FormatError, TrainingAborted
from .evaluator import evaluate, gradcam
from .model import ModelConfig, adapt_head, init_params
from .profiler import count_params
from .trainer import run_kfold

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_MISMATCH = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _log(record: dict) -> None:
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
    sys.stderr.flush()


def _fail(code: int, message: str) -> int:
    _log({"level": "error", "message": message, "exit_code": code})
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_train(args) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    data_dir = args.data_dir or cfg.data.root_dir
    out_dir = args.out or cfg.output_dir
    if not data_dir:
        raise ConfigError("no data directory: pass --data-dir or set data.root_dir")
    if not out_dir:
        raise ConfigError("no output directory: pass --out or set output_dir")
    if not Path(data_dir).is_dir():
        raise DataError(f"data directory not found: {data_dir}")
    train_cfg = cfg.train
    if args.seed is not None:
        train_cfg = train_cfg.replace(seed=args.seed)
    train_cfg = train_cfg.replace(deterministic=cfg.mode.deterministic)
    k = args.k or cfg.k

    dataset = load_dataset(data_dir, cfg.data.manifest)
    if len(dataset) < k:
        raise DataError(f"{data_dir}: {len(dataset)} readable images, need at least k={k}")
    model_cfg = cfg.model.replace(num_classes=len(dataset.class_names))
    base = init_params(model_cfg, train_cfg.seed)
    if args.pretrained:
        pre = load_checkpoint(args.pretrained).params
        base = adapt_head(pre, model_cfg.num_classes, train_cfg.seed) \
            if pre.config.num_classes != model_cfg.num_classes else pre
        model_cfg = base.config

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = run_kfold(lambda r: base.copy(), dataset.samples, k, train_cfg, cfg.augment,
                       dataset.class_names, cfg.mode.stratified_folds, args.parallel_folds, _log)
    for r, fold in enumerate(report.folds):
        save_checkpoint(out / f"fold{r}.bvit", fold.checkpoint)
        with open(out / f"fold{r}_metrics.jsonl", "w", encoding="utf-8") as fh:
            for record in fold.history:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    summary = report.summary()
    summary["class_names"] = dataset.class_names
    summary["model_config"] = model_cfg.to_dict()
    summary["train_config"] = dataclasses.asdict(train_cfg)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                                      encoding="utf-8")
    print(f"k={k} mean test accuracy {report.mean_accuracy:.4f} +/- {report.std_accuracy:.4f}")
    for f in summary["folds"]:
        print(f"  fold {f['fold']}: test acc {f['test_accuracy']:.4f}, best epoch {f['best_epoch']}, "
              f"epochs trained {f['epochs_trained']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data_dir)
    n_model, n_data = ckpt.config.num_classes, len(dataset.class_names)
    if n_model != n_data:
        return _fail(EXIT_MISMATCH, f"checkpoint has {n_model} classes but dataset has {n_data}; "
                                    "adapt the head (--pretrained with train) and retrain")
    if not dataset.samples:
        raise DataError(f"no readable images under {args.data_dir}")
    names = ckpt.class_names or dataset.class_names
    report = evaluate(ckpt.params, dataset.samples, class_names=names)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "confusion.csv").write_text(report.confusion_csv(), encoding="utf-8")
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_profile(args) -> int:
    model_cfg = load_run_config(args.config).model if args.config else ModelConfig()
    if args.num_classes is not None:
        model_cfg = model_cfg.replace(num_classes=args.num_classes)
    report = count_params(model_cfg)
    print(report.to_json() if args.json else report.to_text(), end="")
    return EXIT_OK


def cmd_gradcam(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    n = ckpt.config.num_classes
    if args.target_class is not None and not 0 <= args.target_class < n:
        raise ConfigError(f"--class {args.target_class} out of range [0, {n})")
    image = resize_to_input(decode_image(args.image), ckpt.config.image_size)
    result = gradcam(ckpt.params, image, args.target_class)
    result.save(args.out)
    names = ckpt.class_names or [str(i) for i in range(n)]
    print(f"class {result.target_class} ({names[result.target_class]}) probability {result.probability:.4f}")
    return EXIT_OK


def cmd_crop_page(args) -> int:
    page = decode_image(args.image)
    cells = crop_page_grid(page, args.rows, args.cols)
    save_page_cells(cells, args.cols, args.out_dir)
    print(f"wrote {len(cells)} cells to {args.out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bornovit", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="k-fold training with early stopping")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--data-dir", help="image-folder dataset root (overrides data.root_dir)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, help="number of folds (default 5)")
    p.add_argument("--pretrained", help="checkpoint to start from; its head is adapted if needed")
    p.add_argument("--parallel-folds", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="classification report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", default=".", help="directory for report.json and confusion.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="parameter / MAC / size breakdown")
    p.add_argument("--config")
    p.add_argument("--num-classes", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("gradcam", help="Grad-CAM heatmap and overlay for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--class", dest="target_class", type=int)
    p.set_defaults(func=cmd_gradcam)

    p = sub.add_parser("crop-page", help="cut a scanned page into grid cells")
    p.add_argument("--image", required=True)
    p.add_argument("--rows", type=int, default=10)
    p.add_argument("--cols", type=int, default=6)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_crop_page)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, FormatError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except (DataError, TrainingAborted, OSError) as exc:
        return _fail(EXIT_DATA, str(exc))


if __name__ == "__main__":
    sys.exit(main())
