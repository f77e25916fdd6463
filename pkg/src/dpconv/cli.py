"""``dpconv`` command-line tool.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.  ``DPCONV_OUT_DIR`` sets the default output
directory.  Every subcommand also accepts ``--config FILE`` with flat
``key = value`` lines (``#`` comments) naming its flags; explicit flags win.
"""
import argparse
import csv
import io
import math
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUT_DIR_ENV = "DPCONV_OUT_DIR"


class DataError(Exception):
    """Bad input data or configuration; maps to exit code 2."""


class NumericFailure(Exception):
    """Maps to exit code 3."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def default_out_dir():
    return Path(os.environ.get(OUT_DIR_ENV) or ".")


# ------------------------------------------------------------------ files

def _write_bytes(path, data):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror or exc}") from None


def _png_bytes(array):
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return buf.getvalue()


def _read_png(path, mode):
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert(mode))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# ------------------------------------------------------------ subcommands

def cmd_maskgen(args):
    from .maskprop import MaskGenerationError, generate_irregular_mask
    from .tensor import mask_ratio

    if not 0 < args.ratio < 0.9:
        raise DataError(f"--ratio must lie in (0, 0.9), got {args.ratio}")
    out_dir = Path(args.out_dir) if args.out_dir else default_out_dir() / "masks"
    ratios = []
    for i in range(args.count):
        try:
            mask = generate_irregular_mask(args.height, args.width, args.ratio, (args.seed, i))
        except MaskGenerationError as exc:
            raise DataError(str(exc)) from None
        ratios.append(mask_ratio(mask))
        _write_bytes(out_dir / f"mask_{i:05}.png", _png_bytes((mask * 255).astype(np.uint8)))
    if ratios:
        print(f"wrote {len(ratios)} masks to {out_dir}; hole ratio mean {np.mean(ratios):.4f} "
              f"min {min(ratios):.4f} max {max(ratios):.4f}")
    else:
        print(f"wrote 0 masks to {out_dir}")


def cmd_analyze(args):
    from .maskprop import ExperimentConfigError, parse_experiment_config, rows_to_csv, \
        run_transparency_experiment

    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise DataError(f"cannot read {args.config}: {exc.strerror}") from None
    try:
        config = parse_experiment_config(text, {"cap": args.cap, "seed": args.seed,
                                                "workers": args.workers})
    except ExperimentConfigError as exc:
        raise DataError(f"{args.config or 'config'}: {exc}") from None
    out = Path(args.out) if args.out else default_out_dir() / "results.csv"
    rows = run_transparency_experiment(config)
    _write_bytes(out, rows_to_csv(rows).encode())
    print(f"wrote {len(rows)} rows to {out}")


def cmd_gradcheck(args):
    from .gradcheck import TOLERANCE, run_gradcheck

    report = run_gradcheck(args.trials, args.seed)
    width = max(map(len, report))
    for name, err in report.items():
        flag = "ok" if err < TOLERANCE else "FAIL"
        print(f"{name:<{width}}  max rel error {err:.3e}  {flag}")
    bad = [name for name, err in report.items() if not err < TOLERANCE]
    if bad:
        raise NumericFailure(f"relative error above {TOLERANCE:g}: {', '.join(bad)}")


def cmd_train_demo(args):
    from .nn.checkpoint import save_checkpoint
    from .nn.generator import ConfigError
    from .nn.train import LOG_COLUMNS, NumericalError, TrainConfig, train

    ckpt = Path(args.checkpoint) if args.checkpoint else default_out_dir() / "model.ckpt"
    log_path = Path(args.log) if args.log else ckpt.parent / "loss_log.csv"
    try:
        config = TrainConfig(steps=args.steps, size=args.size, batch_size=args.batch,
                             width=args.width, seed=args.seed)
        trainer, log = train(config, on_step=_progress(args.steps))
    except NumericalError as exc:
        raise NumericFailure(str(exc)) from None
    except (ConfigError, ValueError) as exc:
        raise DataError(str(exc)) from None
    gen = trainer.generator
    meta = {"generator": gen.config.to_dict(),
            "train": {"steps": args.steps, "size": args.size, "batch": args.batch,
                      "width": args.width, "seed": args.seed}}
    try:
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, meta, gen.params)
    except OSError as exc:
        raise DataError(f"cannot write {ckpt}: {exc.strerror or exc}") from None
    rows = [[r["step"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]] for r in log]
    _write_bytes(log_path, _csv_text(LOG_COLUMNS, rows).encode())
    if log:
        print(f"final total {log[-1]['total']:.4f}")
    print(f"checkpoint {ckpt}; log {log_path}")


def _progress(steps):
    every = max(1, steps // 10)

    def report(record):
        if record["step"] % every == 0 or record["step"] == steps - 1:
            print(f"step {record['step']:4d}  total {record['total']:.4f}", file=sys.stderr)
    return report


def load_generator(path, resolution=None):
    """Generator from a checkpoint, optionally rebuilt for another resolution."""
    from .nn.checkpoint import CheckpointError, load_checkpoint
    from .nn.generator import ConfigError, Generator, GeneratorConfig

    try:
        meta, params = load_checkpoint(path)
        cfg = GeneratorConfig.from_dict(meta["generator"])
    except FileNotFoundError:
        raise DataError(f"checkpoint {path} not found") from None
    except (CheckpointError, KeyError, TypeError) as exc:
        raise DataError(f"checkpoint {path}: {exc}") from None
    if resolution is not None:
        cfg.resolution = tuple(resolution)
    try:
        gen = Generator(cfg)
        gen.load_params(params)
    except (ConfigError, KeyError, ValueError) as exc:
        raise DataError(f"checkpoint {path} does not fit this input: {exc}") from None
    return gen


def inpaint(gen, image, mask, composited=False):
    """uint8 (H, W, 3) image and {0, 1} (H, W) mask -> uint8 (H, W, 3) result."""
    x = image.astype(np.float64).transpose(2, 0, 1)[None] / 127.5 - 1.0
    out = gen.forward(x, mask[None])[0].transpose(1, 2, 0)
    if not np.isfinite(out).all():
        raise NumericFailure("generator produced non-finite values")
    result = np.clip(np.rint((out + 1.0) * 127.5), 0, 255).astype(np.uint8)
    if composited:
        result = np.where(mask[:, :, None].astype(bool), image, result)
    return result


def cmd_infer(args):
    image = _read_png(args.image, "RGB")
    mask = (_read_png(args.mask, "L") >= 128).astype(np.uint8)
    if image.shape[:2] != mask.shape:
        raise DataError(f"image is {image.shape[1]}x{image.shape[0]} but mask is "
                        f"{mask.shape[1]}x{mask.shape[0]}")
    gen = load_generator(args.checkpoint, image.shape[:2])
    result = inpaint(gen, image, mask, args.composited)
    out = Path(args.out) if args.out else default_out_dir() / "inpainted.png"
    _write_bytes(out, _png_bytes(result))
    print(f"wrote {out}")


def _fmt(value):
    return "inf" if math.isinf(value) else f"{value:.6f}"


def cmd_metrics(args):
    from .convspec import ShapeError
    from .metrics import evaluate

    dir_a, dir_b = Path(args.a), Path(args.b)
    for d in (dir_a, dir_b):
        if not d.is_dir():
            raise DataError(f"{d} is not a directory")
    names_a = {p.name for p in dir_a.glob("*.png")}
    names_b = {p.name for p in dir_b.glob("*.png")}
    if names_a != names_b:
        lines = [f"  only in {dir_a}: {n}" for n in sorted(names_a - names_b)]
        lines += [f"  only in {dir_b}: {n}" for n in sorted(names_b - names_a)]
        raise DataError("file sets differ:\n" + "\n".join(lines))
    if not names_a:
        raise DataError(f"no PNG files in {dir_a}")
    rows, reports = [], []
    for name in sorted(names_a):
        a = _read_png(dir_a / name, "RGB").transpose(2, 0, 1) / 255.0
        b = _read_png(dir_b / name, "RGB").transpose(2, 0, 1) / 255.0
        try:
            rep = evaluate(a, b)
        except ShapeError as exc:
            raise DataError(f"{name}: {exc}") from None
        reports.append(rep)
        rows.append([name, _fmt(rep.l1_percent), _fmt(rep.psnr_db), _fmt(rep.ssim)])
    mean = [float(np.mean([getattr(r, f) for r in reports]))
            for f in ("l1_percent", "psnr_db", "ssim")]
    rows.append(["mean"] + [_fmt(v) for v in mean])
    out = Path(args.out) if args.out else default_out_dir() / "metrics.csv"
    _write_bytes(out, _csv_text(["name", "l1_percent", "psnr_db", "ssim"], rows).encode())
    print(f"{len(reports)} pairs: l1% {_fmt(mean[0])}  psnr {_fmt(mean[1])}  ssim {_fmt(mean[2])}")


# ---------------------------------------------------------------- parsing

def build_parser():
    p = _Parser(prog="dpconv", description="Dilated partial convolution inpainting toolkit.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(func=func)
        sp.add_argument("--config", help="key = value file; explicit flags override it")
        return sp

    sp = add("maskgen", cmd_maskgen, "Generate irregular hole masks as PNG files.")
    sp.add_argument("--height", type=_positive_int, default=256)
    sp.add_argument("--width", type=_positive_int, default=256)
    sp.add_argument("--ratio", type=float, default=0.3, help="target hole ratio")
    sp.add_argument("--count", type=_nonneg_int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", help=f"default: ${OUT_DIR_ENV}/masks or ./masks")

    sp = add("analyze", cmd_analyze, "Run the layers-to-transparency experiment.")
    sp.add_argument("--out", help="CSV path (default results.csv in the output directory)")
    sp.add_argument("--cap", type=_positive_int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--workers", type=_positive_int)

    sp = add("gradcheck", cmd_gradcheck, "Compare analytic gradients with finite differences.")
    sp.add_argument("--trials", type=_positive_int, default=20)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("train-demo", cmd_train_demo, "Train on synthetic textures.")
    sp.add_argument("--steps", type=_nonneg_int, default=200)
    sp.add_argument("--size", type=_positive_int, default=64)
    sp.add_argument("--batch", type=_positive_int, default=8)
    sp.add_argument("--width", type=_positive_int, default=32, help="base channel count")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--checkpoint", help="default: model.ckpt in the output directory")
    sp.add_argument("--log", help="default: loss_log.csv next to the checkpoint")

    sp = add("infer", cmd_infer, "Inpaint one image with a trained checkpoint.")
    sp.add_argument("--checkpoint", help="required")
    sp.add_argument("--image", help="required; 8-bit PNG")
    sp.add_argument("--mask", help="required; grayscale PNG, 0 = hole, 255 = valid")
    sp.add_argument("--out")
    sp.add_argument("--composited", action="store_true",
                    help="keep valid pixels byte-identical to the input")

    sp = add("metrics", cmd_metrics, "Compare two directories of PNG images.")
    sp.add_argument("--a", help="required; directory of reference PNGs")
    sp.add_argument("--b", help="required; directory with the same file names")
    sp.add_argument("--out")
    return p


def _subparser(parser, command):
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices[command]


def _apply_config_file(parser, argv, args):
    """Re-parse with file values as defaults so that explicit flags still win."""
    sp = _subparser(parser, args.command)
    actions = {a.dest: a for a in sp._actions if a.option_strings and a.dest not in ("help", "config")}
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {args.config}: {exc.strerror}") from None
    defaults = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (t.strip() for t in line.partition("="))
        dest = key.replace("-", "_")
        if not sep or not key:
            raise DataError(f"{args.config}: line {lineno}: expected 'key = value'")
        if dest not in actions:
            raise DataError(f"{args.config}: line {lineno}: unknown key {key!r}")
        action = actions[dest]
        try:
            if isinstance(action, argparse._StoreTrueAction):
                defaults[dest] = value.lower() in ("1", "true", "yes", "on")
            else:
                defaults[dest] = action.type(value) if action.type else value
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise DataError(f"{args.config}: line {lineno}: bad value for {key}: {exc}") from None
    sp.set_defaults(**defaults)
    return parser.parse_args(argv)


REQUIRED = {"infer": ("checkpoint", "image", "mask"), "metrics": ("a", "b")}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config and args.command != "analyze":
            args = _apply_config_file(parser, argv, args)
        missing = [f"--{d}" for d in REQUIRED.get(args.command, ()) if getattr(args, d) is None]
        if missing:
            _subparser(parser, args.command).error(f"missing {', '.join(missing)}")
        args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except DataError as exc:
        print(f"dpconv {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericFailure as exc:
        print(f"dpconv {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
