"""The ``pmrn`` command-line tool.

Subcommands: analyze | train | sr | eval | gradcheck | dump-features.

Exit codes are a stable contract for CI: 0 success, 1 usage error, 2
validation or expectation failure (bad files, mismatched configs, failed
--expect checks, failed gradient checks), 3 runtime error.

Config precedence is flags > --config file > defaults; every command that
writes an output also writes a ``*.config.json`` sidecar holding the fully
resolved configuration. The config file is JSON with optional "model" and
"train" sections whose keys mirror PmrnConfig and TrainConfig fields.

``PMRN_THREADS`` caps BLAS threading; it is applied before numpy loads,
which is why the heavyweight imports in this module live inside functions.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


class UsageError(Exception):
    """Bad flags or flag combinations."""


class ExpectationError(Exception):
    """An --expect check or another validated expectation failed."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _cap_threads() -> None:
    raw = os.environ.get("PMRN_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        print(f"ignoring PMRN_THREADS={raw!r} (not an integer)", file=sys.stderr)
        return
    if n < 1:
        print(f"ignoring PMRN_THREADS={n} (must be >= 1)", file=sys.stderr)
        return
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


# ---------------------------------------------------------------------------
# flag plumbing

def _resolution_arg(text: str):
    m = re.fullmatch(r"(\d+)x(\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError(
            f"resolution must look like 1280x720, got {text!r}"
        )
    return int(m.group(1)), int(m.group(2))


_EXPECT_KEYS = ("params", "macs", "convs")


def _expect_arg(text: str):
    key, sep, value = text.partition("=")
    if not sep or key not in _EXPECT_KEYS:
        raise argparse.ArgumentTypeError(
            f"--expect takes KEY=N with KEY in {_EXPECT_KEYS}, got {text!r}"
        )
    try:
        return key, int(value.replace(",", "").replace("_", ""))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--expect value must be an integer: {text!r}")


def _add_model_flags(p) -> None:
    p.add_argument("--scale", type=int, choices=(2, 3, 4), help="upscale factor")
    p.add_argument("--channels", type=int, help="feature channel width")
    p.add_argument("--blocks", type=int, help="number of residual blocks")
    p.add_argument("--largest-scale", type=int, dest="largest_scale",
                   help="largest combination scale (odd, >= 3)")
    p.add_argument("--attention", choices=("cpa", "none"))
    p.add_argument("--variant", choices=("combinations", "large-kernels"),
                   help="multi-scale stacks or the single-large-kernel ablation")
    p.add_argument("--config", help="JSON config file (model/train sections)")


def _load_config_file(path):
    if not path:
        return {}
    with open(path) as fh:
        record = json.load(fh)
    if not isinstance(record, dict):
        raise ValueError(f"{path}: config file must hold a JSON object")
    unknown = set(record) - {"model", "train"}
    if unknown:
        raise ValueError(f"{path}: unknown config sections {sorted(unknown)}")
    return record


_MODEL_FLAG_MAP = {
    "scale": "scale",
    "channels": "channels",
    "num_blocks": "blocks",
    "largest_scale": "largest_scale",
    "attention": "attention",
    "multiscale": "variant",
}

_TRAIN_FLAG_MAP = {
    "lr0": "lr0",
    "halve_every": "halve_every",
    "total_units": "units",
    "steps_per_unit": "steps_per_unit",
    "batch_size": "batch",
    "patch_size": "patch",
    "seed": "seed",
    "degradation": "degradation",
    "val_interval": "val_interval",
    "init_gain": "init_gain",
}


def _merge_section(args, file_section: dict, flag_map: dict, defaults: dict | None = None):
    merged = dict(defaults or {})
    for key in file_section:
        if key not in flag_map:
            raise ValueError(f"unknown config key {key!r}")
    merged.update(file_section)
    for key, attr in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            merged[key] = value
    return merged


def _resolve_model_config(args, file_record, defaults: dict | None = None):
    from .arch import PmrnConfig

    merged = _merge_section(args, file_record.get("model", {}), _MODEL_FLAG_MAP, defaults)
    if isinstance(merged.get("multiscale"), str):
        merged["multiscale"] = merged["multiscale"].replace("-", "_")
    return PmrnConfig(**merged)


def _resolve_train_config(args, file_record):
    from .trainer import TrainConfig

    merged = _merge_section(args, file_record.get("train", {}), _TRAIN_FLAG_MAP)
    return TrainConfig(**merged)


def _sidecar(out_path: str, record: dict) -> None:
    with open(f"{out_path}.config.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# dataset helpers

_LR_SIBLING = re.compile(r"_x\d+$")


def _hr_paths(directory):
    from . import data

    paths = [
        p for p in data.list_images(directory)
        if not _LR_SIBLING.search(os.path.splitext(os.path.basename(p))[0])
    ]
    if not paths:
        raise ValueError(f"{directory}: no HR images (only _x<r> siblings found)")
    return paths


def _lr_for(hr_path: str, hr_img, scale: int):
    """Cached `<name>_x<r>` sibling if present, else degrade on the fly."""
    from . import data

    stem, ext = os.path.splitext(hr_path)
    for candidate in (f"{stem}_x{scale}{ext}", f"{stem}_x{scale}.png"):
        if os.path.exists(candidate):
            lr = data.read_image_float(candidate)
            want = (hr_img.shape[-2] // scale, hr_img.shape[-1] // scale)
            if lr.shape[-2:] != want:
                raise ValueError(
                    f"{candidate}: LR size {lr.shape[-2:]} does not match "
                    f"HR/{scale} = {want}"
                )
            return lr
    return None


# ---------------------------------------------------------------------------
# subcommands

def cmd_analyze(args) -> int:
    from dataclasses import replace

    from . import analyzer

    file_record = _load_config_file(args.config)
    cfg = _resolve_model_config(args, file_record)
    report = analyzer.analyze(cfg, args.resolution)
    print(analyzer.render_text(report, per_layer=args.per_layer))
    if args.macs_include_elementwise:
        total = report.total_macs + report.elementwise_ops
        print(f"MACs including elementwise: {total:,} "
              f"({analyzer.format_macs_g(total)})")
    if args.compare:
        other_kind = (
            "large_kernels" if cfg.multiscale == "combinations" else "combinations"
        )
        cmp = analyzer.compare_variants(cfg, replace(cfg, multiscale=other_kind),
                                        args.resolution)
        print(f"\nvariant comparison (A={cfg.multiscale}, B={other_kind}):")
        print(analyzer.render_comparison(cmp))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(analyzer.render_csv(report) + "\n")
        _sidecar(args.csv, {
            "command": "analyze",
            "model": cfg.to_dict(),
            "resolution": list(args.resolution),
        })
        print(f"per-layer CSV written to {args.csv}")

    failures = []
    actual = {
        "params": report.total_params,
        "macs": report.total_macs,
        "convs": len(report.descriptors),
    }
    for key, want in args.expect or []:
        if actual[key] != want:
            failures.append(f"{key}: expected {want:,}, got {actual[key]:,}")
    if failures:
        raise ExpectationError("; ".join(failures))
    return EXIT_OK


def _load_model(weights_path):
    from . import nn
    from .arch import PmrnConfig, PmrnModel

    store, config, meta = nn.load_weights(weights_path)
    cfg = PmrnConfig.from_dict(config)
    model = PmrnModel(cfg)
    nn.check_store_matches(store, model.template_params(), path=str(weights_path))
    return model, store, meta


def cmd_sr(args) -> int:
    from . import data
    from .arch import self_ensemble_forward
    from .autodiff import Eager, Tensor

    model, store, _ = _load_model(args.weights)
    scale = model.config.scale
    os.makedirs(args.out, exist_ok=True)
    ctx = Eager()
    for path in args.inputs:
        img = data.read_image_float(path)
        x = Tensor(img[None])
        if args.ensemble:
            out = self_ensemble_forward(model, store, x)
        else:
            out = model.forward(ctx, store, x)
        sr_img = data.to_uint8(out.numpy()[0])
        stem = os.path.splitext(os.path.basename(path))[0]
        out_path = os.path.join(args.out, f"{stem}_x{scale}.png")
        data.write_image(out_path, sr_img)
        _sidecar(out_path, {
            "command": "sr",
            "weights": os.path.abspath(args.weights),
            "input": os.path.abspath(path),
            "ensemble": bool(args.ensemble),
            "model": model.config.to_dict(),
        })
        print(f"{path} -> {out_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    import math

    import numpy as np

    from . import data, metrics
    from .arch import self_ensemble_forward
    from .autodiff import Eager, Tensor

    model = store = None
    if args.weights:
        model, store, _ = _load_model(args.weights)
        scale = model.config.scale
        if args.scale is not None and args.scale != scale:
            raise ValueError(
                f"--scale {args.scale} conflicts with weights scale {scale}"
            )
    else:
        if args.scale is None:
            raise ValueError("--scale is required with --baseline")
        scale = args.scale
    spec = data.DegradationSpec(args.degradation, scale)
    shave = scale if args.shave is None else args.shave

    rows = []
    ctx = Eager()
    for path in _hr_paths(args.hr):
        hr = data.crop_to_multiple(data.read_image_float(path), scale)
        lr = _lr_for(path, hr, scale)
        if lr is None:
            lr = data.degrade(hr, spec)
        if args.baseline == "identity":
            pred = hr
        elif args.baseline == "bicubic":
            pred = data.bicubic_upscale(lr, scale)
        elif args.ensemble:
            pred = self_ensemble_forward(model, store, Tensor(lr[None])).numpy()[0]
        else:
            pred = model.forward(ctx, store, Tensor(lr[None])).numpy()[0]
        name = os.path.basename(path)
        rows.append((
            name,
            metrics.psnr(pred, hr, shave=shave),
            metrics.ssim(pred, hr, shave=shave),
        ))

    width = max(len(r[0]) for r in rows)
    print(f"{'image':<{width}}  {'PSNR':>9}  {'SSIM':>7}")
    for name, p, s in rows:
        print(f"{name:<{width}}  {p:>9.4f}  {s:>7.4f}")
    finite = [p for _, p, _ in rows if math.isfinite(p)]
    mean_psnr = float(np.mean(finite)) if finite else math.inf
    mean_ssim = float(np.mean([s for _, _, s in rows]))
    print(f"{'mean':<{width}}  {mean_psnr:>9.4f}  {mean_ssim:>7.4f}")

    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("name,psnr,ssim\n")
            for name, p, s in rows:
                fh.write(f"{name},{p:.4f},{s:.6f}\n")
            fh.write(f"mean,{mean_psnr:.4f},{mean_ssim:.6f}\n")
        _sidecar(args.csv, {
            "command": "eval",
            "hr": os.path.abspath(args.hr),
            "weights": os.path.abspath(args.weights) if args.weights else None,
            "baseline": args.baseline,
            "degradation": args.degradation,
            "scale": scale,
            "shave": shave,
            "ensemble": bool(args.ensemble),
        })
        print(f"metrics CSV written to {args.csv}")
    return EXIT_OK


def cmd_train(args) -> int:
    from . import data, nn, trainer
    from .arch import PmrnModel

    file_record = _load_config_file(args.config)
    cfg = _resolve_model_config(args, file_record)
    tcfg = _resolve_train_config(args, file_record)
    dataset = [data.read_image_float(p) for p in _hr_paths(args.data)]
    heldout = None
    if args.val:
        heldout = [data.read_image_float(p) for p in _hr_paths(args.val)]
    model = PmrnModel(cfg)
    os.makedirs(args.out, exist_ok=True)
    checkpoint_path = os.path.join(args.out, "checkpoint.pmrn")

    def log(row):
        msg = (f"unit {row['unit']:>5}  lr {row['lr']:.3e}  "
               f"loss {row['train_loss']:.5f}")
        if row["val_psnr"] is not None:
            msg += f"  val {row['val_psnr']:.3f} dB"
        print(msg)

    result = trainer.train(
        model, dataset, tcfg,
        heldout=heldout,
        checkpoint_path=checkpoint_path,
        checkpoint_every=args.checkpoint_every,
        resume=args.resume,
        log=None if args.quiet else log,
    )

    weights_path = os.path.join(args.out, "weights.pmrn")
    nn.save_weights(result.params, weights_path, cfg.to_dict(),
                    meta={"trained_units": len(result.history)})
    history_path = os.path.join(args.out, "history.csv")
    with open(history_path, "w") as fh:
        fh.write(trainer.history_csv(result.history) + "\n")
    _sidecar(weights_path, {
        "command": "train",
        "model": cfg.to_dict(),
        "train": {k: getattr(tcfg, k) for k in _TRAIN_FLAG_MAP},
        "data": os.path.abspath(args.data),
        "val": os.path.abspath(args.val) if args.val else None,
    })
    final = result.history[-1]
    last_val = next(
        (row["val_psnr"] for row in reversed(result.history)
         if row["val_psnr"] is not None),
        None,
    )
    summary = f"done: {len(result.history)} units, final loss {final['train_loss']:.5f}"
    if last_val is not None:
        summary += f", val PSNR {last_val:.3f} dB"
    print(summary)
    print(f"weights: {weights_path}\ncheckpoint: {checkpoint_path}\n"
          f"history: {history_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .arch import PmrnModel, model_gradcheck
    from .autodiff import standard_op_checks

    file_record = _load_config_file(args.config)
    cfg = _resolve_model_config(args, file_record, defaults={
        "scale": 2, "channels": 4, "num_blocks": 1, "largest_scale": 5,
    })
    all_passed = True
    for name, report in standard_op_checks(
        tolerance=args.tolerance, seed=args.seed,
        samples_per_param=args.samples,
    ):
        status = "PASS" if report.passed else "FAIL"
        print(f"op {name:<18} max rel err {report.max_rel_error:.3e}  {status}")
        all_passed &= report.passed

    model = PmrnModel(cfg)
    report = model_gradcheck(
        model, size=args.size, tolerance=args.tolerance,
        samples_per_param=args.model_samples, seed=args.seed,
    )
    status = "PASS" if report.passed else "FAIL"
    print(f"model (c={cfg.channels} K={cfg.num_blocks} S={cfg.largest_scale} "
          f"r={cfg.scale}, {args.size}x{args.size} input) "
          f"max rel err {report.max_rel_error:.3e}  {status}")
    all_passed &= report.passed
    return EXIT_OK if all_passed else EXIT_VALIDATION


def _feature_to_png(arr) -> "np.ndarray":
    """(1, c, h, w) feature map -> channel mean -> min-max 8-bit grayscale."""
    import numpy as np

    plane = arr[0].mean(axis=0)
    lo, hi = float(plane.min()), float(plane.max())
    if hi > lo:
        plane = (plane - lo) / (hi - lo)
    else:
        plane = np.zeros_like(plane)
    return np.clip(np.rint(plane * 255.0), 0, 255).astype(np.uint8)


def cmd_dump_features(args) -> int:
    from . import data
    from .autodiff import Eager, Tensor

    model, store, _ = _load_model(args.weights)
    cfg = model.config
    if args.block is not None and not 1 <= args.block <= cfg.num_blocks:
        raise ValueError(
            f"--block {args.block} out of range 1..{cfg.num_blocks}"
        )
    if args.feature_scale is not None and args.feature_scale not in cfg.scales:
        raise ValueError(
            f"--feature-scale {args.feature_scale} not in {cfg.scales}"
        )

    img = data.read_image_float(args.image)
    capture = {}
    model.forward(Eager(), store, Tensor(img[None]), capture=capture)
    os.makedirs(args.out, exist_ok=True)

    blocks = [args.block] if args.block is not None else range(1, cfg.num_blocks + 1)
    scales = [args.feature_scale] if args.feature_scale is not None else cfg.scales
    written = []

    def emit(key, filename):
        data.write_image(os.path.join(args.out, filename),
                         _feature_to_png(capture[key]))
        written.append(filename)

    if args.feature_scale is None and args.block is None:
        emit("input", "input.png")
        emit("fem", "fem.png")
        emit("output", "output.png")
    for k in blocks:
        for s in scales:
            emit(f"block{k}.x{s}", f"block{k}_x{s}.png")
        if cfg.attention == "cpa" and args.feature_scale is None:
            emit(f"block{k}.gamma", f"block{k}_gamma.png")
            emit(f"block{k}.beta", f"block{k}_beta.png")

    _sidecar(os.path.join(args.out, "features"), {
        "command": "dump-features",
        "weights": os.path.abspath(args.weights),
        "image": os.path.abspath(args.image),
        "model": cfg.to_dict(),
        "files": written,
    })
    print(f"wrote {len(written)} maps to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser assembly and entry point

def build_parser() -> _Parser:
    parser = _Parser(
        prog="pmrn",
        description="Progressive multi-scale residual network: analysis, "
                    "training, and super-resolution inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="parameter / MACs / receptive-field report")
    _add_model_flags(p)
    p.add_argument("--resolution", type=_resolution_arg, default=(1280, 720),
                   help="output resolution WxH for MAC accounting (default 1280x720)")
    p.add_argument("--per-layer", action="store_true", help="print every conv layer")
    p.add_argument("--csv", help="write the per-layer breakdown as CSV")
    p.add_argument("--compare", action="store_true",
                   help="compare against the other multiscale variant")
    p.add_argument("--macs-include-elementwise", action="store_true",
                   help="also print MACs with elementwise ops folded in")
    p.add_argument("--expect", action="append", type=_expect_arg, metavar="KEY=N",
                   help="fail (exit 2) unless params/macs/convs equal N")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train on a directory of HR images")
    _add_model_flags(p)
    p.add_argument("--data", required=True, help="directory of HR training images")
    p.add_argument("--val", help="directory of held-out HR images")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--lr0", type=float, help="initial learning rate")
    p.add_argument("--halve-every", type=int, dest="halve_every",
                   help="halve the learning rate every N units")
    p.add_argument("--units", type=int, help="total schedule units")
    p.add_argument("--steps-per-unit", type=int, dest="steps_per_unit",
                   help="gradient steps per schedule unit")
    p.add_argument("--batch", type=int, help="batch size")
    p.add_argument("--patch", type=int, help="LR patch size")
    p.add_argument("--seed", type=int, help="init and sampling seed")
    p.add_argument("--degradation", type=lambda s: s.upper(), choices=("BI", "BD"))
    p.add_argument("--val-interval", type=int, dest="val_interval",
                   help="validate every N units (0: only at the end)")
    p.add_argument("--init-gain", type=float, dest="init_gain",
                   help="Kaiming-uniform gain for fresh weights")
    p.add_argument("--checkpoint-every", type=int, default=0,
                   help="checkpoint every N units (always at the end)")
    p.add_argument("--resume", help="checkpoint file to continue from")
    p.add_argument("--quiet", action="store_true", help="suppress per-unit logs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", help="upscale images with a weights file")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--ensemble", action="store_true",
                   help="average over the 8 flip/rotation transforms")
    p.add_argument("inputs", nargs="+", help="input image files")
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("eval", help="PSNR/SSIM over a directory of HR images")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--weights")
    source.add_argument("--baseline", choices=("bicubic", "identity"))
    p.add_argument("--hr", required=True, help="directory of HR images")
    p.add_argument("--scale", type=int, choices=(2, 3, 4),
                   help="upscale factor (required for --baseline)")
    p.add_argument("--degradation", type=lambda s: s.upper(),
                   choices=("BI", "BD"), default="BI")
    p.add_argument("--shave", type=int, help="border pixels to ignore (default: scale)")
    p.add_argument("--ensemble", action="store_true")
    p.add_argument("--csv", help="write per-image metrics as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every op and a small model")
    _add_model_flags(p)
    p.add_argument("--size", type=int, default=8, help="input height/width")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=8,
                   help="coordinates checked per tensor in op checks")
    p.add_argument("--model-samples", type=int, default=4, dest="model_samples",
                   help="coordinates checked per tensor in the model check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dump-features",
                       help="write per-block feature and attention maps as PNGs")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", default="features")
    p.add_argument("--block", type=int, help="only this block (1-based)")
    p.add_argument("--feature-scale", type=int, dest="feature_scale",
                   help="only this combination scale's map")
    p.set_defaults(func=cmd_dump_features)

    return parser


def main(argv=None) -> int:
    _cap_threads()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExpectationError as exc:
        print(f"expectation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - defensive catch-all
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
