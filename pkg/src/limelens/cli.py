"""Command-line interface: synth, train, evaluate, explain, compare, serve.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path


from .compare import compare_models
from .data import load_dataset, resize_image, save_dataset_png, split, synthesize_dataset
from .errors import LimelensError
from .jsondoc import canonical_json
from .lime import ExplanationConfig, explain, render_overlay, segment_grid
from .metrics import classification_report, confusion
from .models import (
    TrainingConfig,
    build_cnn,
    build_mlp,
    load_weights,
    predict,
    predicted_labels,
    save_weights,
    train,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the CLI contract wants 1.
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="limelens", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    synth = sub.add_parser("synth", help="generate a synthetic cell-image dataset")
    synth.add_argument("--n", type=int, required=True, help="total images (even)")
    synth.add_argument("--size", type=int, default=32, choices=(32, 128))
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="output dataset directory")

    tr = sub.add_parser("train", help="train a classifier on a dataset directory")
    tr.add_argument("--arch", required=True, choices=("mlp", "cnn"))
    tr.add_argument("--data", required=True, help="dataset root with class subdirectories")
    tr.add_argument("--out", required=True, help="weights file to write")
    tr.add_argument("--size", type=int, default=32, choices=(32, 128))
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--lr", type=float, default=0.01)
    tr.add_argument("--epochs", type=int, default=150)
    tr.add_argument("--patience", type=int, default=10)
    tr.add_argument("--batch", type=int, default=32)

    ev = sub.add_parser("evaluate", help="print a classification report for a model")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--json", action="store_true", help="emit the report document instead of a table")

    ex = sub.add_parser("explain", help="explain one prediction; writes document + overlay")
    ex.add_argument("--model", required=True)
    ex.add_argument("--image", required=True)
    ex.add_argument("--k", type=int, default=2)
    ex.add_argument("--samples", type=int, default=1000)
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--grid", default="8x8", help="segment grid as RxC")
    ex.add_argument("--workers", type=int, default=1)

    cp = sub.add_parser("compare", help="compare two models' explanations on a dataset")
    cp.add_argument("--model-a", required=True)
    cp.add_argument("--model-b", required=True)
    cp.add_argument("--data", required=True)
    cp.add_argument("--k", type=int, default=2)
    cp.add_argument("--samples", type=int, default=1000)
    cp.add_argument("--seed", type=int, default=0)
    cp.add_argument("--grid", default="8x8")
    cp.add_argument("--limit", type=int, default=0, help="compare at most N images (0 = all)")
    cp.add_argument("--out", help="write the report document to this file")
    cp.add_argument("--overlays", help="directory for per-image overlay PNGs")
    cp.add_argument("--workers", type=int, default=1)

    sv = sub.add_parser("serve", help="run the local HTTP service")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8401)
    sv.add_argument("--models", required=True, help="directory of .lmnw weight files")
    sv.add_argument("--data", required=True, help="dataset root to serve images from")
    sv.add_argument("--console", help="directory with the built web console (optional)")
    return parser


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError as exc:
        raise UsageError(f"--grid must look like 8x8, got {text!r}") from exc


def image_id_for(path: Path) -> str:
    """Stable image id: '<class>/<filename>' when the parent dir is a class."""
    parent = path.parent.name.lower()
    if parent in ("parasitized", "uninfected"):
        return f"{parent}/{path.name}"
    return path.name


def _explanation_config(args) -> ExplanationConfig:
    rows, cols = _parse_grid(args.grid)
    return ExplanationConfig(
        k=args.k, num_samples=args.samples, seed=args.seed, grid_rows=rows, grid_cols=cols
    )


def _cmd_synth(args) -> int:
    dataset = synthesize_dataset(args.n, args.size, seed=args.seed)
    out = save_dataset_png(dataset, args.out)
    print(f"wrote {len(dataset)} images to {out}")
    return 0


def _cmd_train(args) -> int:
    dataset = load_dataset(args.data, target_size=args.size)
    train_set, val_set, _ = split(dataset, seed=args.seed)
    builder = build_mlp if args.arch == "mlp" else build_cnn
    network = builder([3, args.size, args.size], seed=args.seed)
    network.id = Path(args.out).stem
    config = TrainingConfig(
        batch_size=args.batch,
        max_epochs=args.epochs,
        patience=args.patience,
        lr=args.lr,
        seed=args.seed,
    )
    trained, history = train(network, train_set, val_set, config)
    save_weights(trained, args.out)
    print(
        f"trained {args.arch} for {history.stopped_epoch} epochs "
        f"(best epoch {history.best_epoch}, val loss {min(history.val_loss):.4f}, "
        f"val accuracy {history.val_accuracy[history.best_epoch - 1]:.4f})"
    )
    print(f"weights written to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    network = load_weights(args.model)
    size = network.input_shape[1]
    dataset = load_dataset(args.data, target_size=size)
    truths = [s.label for s in dataset.samples]
    report = classification_report(confusion(predicted_labels(network, dataset), truths))
    if args.json:
        sys.stdout.buffer.write(canonical_json(report.to_document()) + b"\n")
    else:
        print(report.format_table())
    return 0


def _cmd_explain(args) -> int:
    config = _explanation_config(args)
    network = load_weights(args.model)
    image_path = Path(args.image)
    from .data import decode_png

    pixels = decode_png(image_path)
    size = network.input_shape[1]
    pixels = resize_image(pixels, size, size)
    segmap = segment_grid(pixels, config.grid_rows, config.grid_cols)
    explanation = explain(
        network,
        pixels,
        segmap,
        config,
        model_id=network.id,
        image_id=image_id_for(image_path),
        workers=args.workers,
    )
    doc_path = image_path.with_suffix(".explanation.json")
    doc_path.write_bytes(explanation.to_bytes())
    overlay_path = render_overlay(
        pixels, segmap, explanation, image_path.with_suffix(".explained.png")
    )
    result = predict(network, pixels)
    print(
        f"{result.predicted_class} (p={result.probability:.4f}); "
        f"top {config.k} segments: "
        + ", ".join(f"{i} ({explanation.signs[i]})" for i in explanation.selected)
    )
    print(f"explanation document: {doc_path}")
    print(f"overlay: {overlay_path}")
    return 0


def _cmd_compare(args) -> int:
    config = _explanation_config(args)
    model_a = load_weights(args.model_a)
    model_b = load_weights(args.model_b)
    size = model_a.input_shape[1]
    dataset = load_dataset(args.data, target_size=size)
    if args.limit:
        from .data import Dataset

        dataset = Dataset(dataset.samples[: args.limit])
    report = compare_models(
        model_a,
        model_b,
        dataset,
        config,
        artifact_dir=args.overlays,
        workers=args.workers,
    )
    print(report.format_table())
    if args.out:
        Path(args.out).write_bytes(report.to_bytes())
        print(f"report document: {args.out}")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    serve(args.host, args.port, args.models, args.data, console_dir=args.console)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "explain": _cmd_explain,
    "compare": _cmd_compare,
    "serve": _cmd_serve,
}


def cli_run(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LimelensError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_run(sys.argv[1:]))


if __name__ == "__main__":
    main()
