"""Command-line entry point: ``ercdenoise <subcommand> ...``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 when
the input data is rejected (unreadable, malformed, mismatched or degenerate).
"""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import math
import sys
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io, metrics
from .config import RunConfig, load_config
from .errors import ConfigError, ErcDenoiseError, InvalidArgumentError
from .phantom import apply_nonstationary_rician, generate_phantom, preset_regions
from .profile import distance_map, fit_scale_map, scale_map_from_profile, snr_gain
from .sampler import reconstruct

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

REPORT_DIGITS = 10


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route it through our codes instead
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# --------------------------------------------------------------------------
# report helpers
# --------------------------------------------------------------------------

def _round_floats(obj):
    if isinstance(obj, float) or isinstance(obj, np.floating):
        value = float(obj)
        return float(f"{value:.{REPORT_DIGITS}g}") if math.isfinite(value) else None
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def format_report(inputs: dict, config_echo: dict, values: dict, timings_ms: dict) -> str:
    """Serialise a run report with a fixed top-level key order."""
    report = {
        "inputs": inputs,
        "config_echo": config_echo,
        "metrics": values,
        "timings_ms": timings_ms,
    }
    return json.dumps(_round_floats(report), indent=2) + "\n"


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


class _Timer:
    """Collects wall-clock spans in milliseconds, keyed by name."""

    def __init__(self):
        self.timings = {}

    @contextmanager
    def __call__(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = 1000.0 * (time.perf_counter() - t0)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _cmd_phantom(args, cfg: RunConfig):
    out_dir = Path(args.out or cfg.output or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = cfg.phantom
    timer = _Timer()
    with timer("generate"):
        truth = generate_phantom(spec)
        dmap = distance_map(spec.coil, spec.rows, spec.cols)
        scale = scale_map_from_profile(dmap, cfg.profile, spec.sigma0)
        noisy = apply_nonstationary_rician(truth, scale, np.random.default_rng(cfg.seed))
        background, prostate = preset_regions(spec)
    files = {
        "ground_truth": out_dir / "ground_truth.raw",
        "noisy": out_dir / "noisy.raw",
        "scale_map": out_dir / "scale_map.raw",
        "background_mask": out_dir / "background_mask.pgm",
        "prostate_mask": out_dir / "prostate_mask.pgm",
        "gland_mask": out_dir / "gland_mask.pgm",
    }
    with timer("write"):
        io.write_raw(files["ground_truth"], truth, spec.spacing_mm)
        io.write_raw(files["noisy"], noisy, spec.spacing_mm)
        io.write_raw(files["scale_map"], scale.values, spec.spacing_mm)
        io.write_mask(files["background_mask"], background)
        io.write_mask(files["prostate_mask"], prostate)
        io.write_mask(files["gland_mask"], spec.prostate_mask())
    values = {
        "noisy_background_snr_db": metrics.snr_db(noisy, background),
        "noisy_prostate_snr_db": metrics.snr_db(noisy, prostate),
        "noisy_cnr_db": metrics.cnr_db(noisy, background, prostate),
        "sigma0": scale.sigma0,
    }
    outputs = {k: str(v) for k, v in files.items()}
    _emit(format_report({"outputs": outputs}, cfg.echo(), values, timer.timings), None)


def _cmd_denoise(args, cfg: RunConfig):
    src = args.input or cfg.input
    dst = args.out or cfg.output
    if src is None or dst is None:
        raise UsageError("denoise needs an input image and --out (or paths.input/paths.output)")
    timer = _Timer()
    with timer("read"):
        image = io.read_image(src)
    spacing = image.spacing_mm or cfg.coil.spacing_mm
    map_path = args.scale_map or cfg.scale_map
    values = {}
    with timer("scale_map"):
        if map_path is not None:
            scale = io.read_image(map_path).pixels
            if scale.shape != image.pixels.shape:
                raise InvalidArgumentError(
                    f"scale map dimensions {scale.shape[0]}x{scale.shape[1]} do not match "
                    f"image dimensions {image.pixels.shape[0]}x{image.pixels.shape[1]}")
        else:
            rows, cols = image.pixels.shape
            coil = replace(cfg.coil, spacing_mm=spacing)
            fitted = fit_scale_map(image.pixels, distance_map(coil, rows, cols), cfg.profile,
                                   cfg.fit.window_radius, stride=cfg.fit.stride,
                                   max_signal_ratio=cfg.fit.max_signal_ratio)
            scale = fitted.values
            values["sigma0"] = fitted.sigma0
    progress = None
    if args.verbose:
        def progress(done, total):
            print(f"denoise: {done}/{total} rows", file=sys.stderr)
    with timer("reconstruct"):
        out = reconstruct(image.pixels, scale, cfg.sampler, progress=progress, threads=cfg.threads)
    with timer("write"):
        io.write_image(dst, out, spacing)
    inputs = {"image": str(src), "scale_map": None if map_path is None else str(map_path),
              "output": str(dst)}
    values.update(rows=out.shape[0], cols=out.shape[1])
    _emit(format_report(inputs, cfg.echo(), values, timer.timings), None)


def _cmd_metrics(args, cfg: RunConfig):
    timer = _Timer()
    background = args.background or cfg.regions.background
    foreground = args.foreground or cfg.regions.foreground
    edge = args.edge or cfg.regions.edge
    with timer("read"):
        image = io.read_image(args.image).pixels
        reference = None if args.reference is None else io.read_image(args.reference).pixels
        masks = {name: None if p is None else io.read_mask(p)
                 for name, p in (("background", background), ("foreground", foreground),
                                 ("edge", edge))}
    if all(m is None for m in masks.values()):
        raise UsageError("metrics needs at least one of --background, --foreground, --edge")
    values = {}
    with timer("metrics"):
        if masks["background"] is not None:
            values["snr_db_background"] = metrics.snr_db(image, masks["background"])
        if masks["foreground"] is not None:
            values["snr_db_foreground"] = metrics.snr_db(image, masks["foreground"])
        if masks["background"] is not None and masks["foreground"] is not None:
            values["cnr_db"] = metrics.cnr_db(image, masks["background"], masks["foreground"])
        if masks["edge"] is not None:
            if reference is None:
                raise UsageError("edge preservation needs --reference (the unprocessed image)")
            values["edge_preservation"] = metrics.edge_preservation(reference, image,
                                                                    masks["edge"])
    inputs = {"image": str(args.image),
              "reference": None if args.reference is None else str(args.reference),
              "background": _opt_str(background), "foreground": _opt_str(foreground),
              "edge": _opt_str(edge)}
    _emit(format_report(inputs, cfg.echo(), values, timer.timings), args.out)


def _opt_str(p):
    return None if p is None else str(p)


def _read_csv(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise InvalidArgumentError(f"{path} is not UTF-8 text") from None
    rows = [r for r in csv.reader(_stdio.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise InvalidArgumentError(f"{path} is empty")
    return rows


def load_scores(path):
    """Read a long-format score CSV ``method,evaluator,slice,score``.

    Returns ``{method: (evaluators x slices) int matrix}``; every method must
    score every (evaluator, slice) pair exactly once.
    """
    rows = _read_csv(path)
    header = [h.strip().lower() for h in rows[0]]
    if header != ["method", "evaluator", "slice", "score"]:
        raise InvalidArgumentError("score CSV header must be 'method,evaluator,slice,score'")
    cells = defaultdict(dict)
    evaluators, slices = {}, {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise InvalidArgumentError(f"{path}:{lineno}: expected 4 fields")
        method, ev, sl, score = (c.strip() for c in row)
        try:
            value = int(score)
        except ValueError:
            raise InvalidArgumentError(f"{path}:{lineno}: score {score!r} is not an integer") from None
        if (ev, sl) in cells[method]:
            raise InvalidArgumentError(f"{path}:{lineno}: duplicate score for {method}/{ev}/{sl}")
        cells[method][(ev, sl)] = value
        evaluators.setdefault(ev, len(evaluators))
        slices.setdefault(sl, len(slices))
    out = {}
    for method, grid in cells.items():
        if len(grid) != len(evaluators) * len(slices):
            raise InvalidArgumentError(f"method {method!r} does not score every evaluator/slice")
        mat = np.zeros((len(evaluators), len(slices)), dtype=np.int64)
        for (ev, sl), value in grid.items():
            mat[evaluators[ev], slices[sl]] = value
        out[method] = mat
    return out


def _cmd_scores(args, cfg: RunConfig):
    timer = _Timer()
    with timer("read"):
        table = load_scores(args.csv)
    values = {}
    with timer("metrics"):
        for method in sorted(table):
            mat = table[method]
            values[method] = {
                "rank_sum": metrics.rank_sum(mat),
                "median": metrics.score_median(mat),
                "f_pseudosigma": metrics.f_pseudosigma(mat),
            }
    _emit(format_report({"csv": str(args.csv)}, cfg.echo(), values, timer.timings), args.out)


def load_columns(path, names=None):
    """Two numeric columns from a CSV; a non-numeric first row is a header."""
    rows = _read_csv(path)
    first = [c.strip() for c in rows[0]]
    try:
        [float(c) for c in first]
        header, body = None, rows
    except ValueError:
        header, body = first, rows[1:]
    if names is not None:
        if header is None:
            raise InvalidArgumentError("--columns given but the CSV has no header row")
        try:
            idx = [header.index(n) for n in names]
        except ValueError:
            raise InvalidArgumentError(f"columns {names} not all present in {header}") from None
    else:
        idx = [0, 1]
    cols = ([], [])
    for lineno, row in enumerate(body, start=2 if header else 1):
        try:
            for k, i in enumerate(idx):
                cols[k].append(float(row[i]))
        except (ValueError, IndexError):
            raise InvalidArgumentError(f"{path}:{lineno}: expected numeric values") from None
    labels = [header[i] for i in idx] if header else ["column_1", "column_2"]
    return labels, np.array(cols[0]), np.array(cols[1])


def _cmd_ttest(args, cfg: RunConfig):
    timer = _Timer()
    with timer("read"):
        labels, a, b = load_columns(args.csv, args.columns)
    with timer("metrics"):
        p = metrics.paired_p_value(a, b)
    diff = a - b
    values = {"p_value": p, "n": int(diff.size), "mean_difference": float(diff.mean())}
    inputs = {"csv": str(args.csv), "method": labels[0], "reference": labels[1]}
    _emit(format_report(inputs, cfg.echo(), values, timer.timings), args.out)


def _cmd_profile(args, cfg: RunConfig):
    if not (args.step > 0 and args.max_distance >= 0):
        raise UsageError("--step must be > 0 and --max-distance >= 0")
    n = int(math.floor(args.max_distance / args.step + 1e-9)) + 1
    d = np.arange(n) * args.step
    gain = np.atleast_1d(snr_gain(cfg.profile, d))
    lines = ["distance_mm,gain"] + [f"{di:.10g},{gi:.10g}" for di, gi in zip(d, gain)]
    _emit("\n".join(lines) + "\n", args.out)


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value configuration file")
    common.add_argument("--seed", type=_u64, help="random seed (overrides the config)")
    common.add_argument("--threads", type=_positive_int, help="worker threads for denoise")
    common.add_argument("--out", type=Path, help="output path")

    parser = _Parser(prog="ercdenoise",
                     description="Rician Monte Carlo denoising for coil-corrected "
                                 "endorectal MR images.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("phantom", parents=[common],
                   help="write a synthetic phantom, its noisy copy, scale map and masks "
                        "into the --out directory")

    p = sub.add_parser("denoise", parents=[common], help="reconstruct a noisy image")
    p.add_argument("input", nargs="?", type=Path)
    p.add_argument("--scale-map", type=Path, help="precomputed scale map (skips the fit)")
    p.add_argument("-v", "--verbose", action="store_true", help="row progress on stderr")

    p = sub.add_parser("metrics", parents=[common], help="SNR, CNR and edge preservation")
    p.add_argument("image", type=Path)
    p.add_argument("--reference", type=Path, help="unprocessed image for edge preservation")
    p.add_argument("--background", type=Path, help="noise-region mask")
    p.add_argument("--foreground", type=Path, help="signal-region mask")
    p.add_argument("--edge", type=Path, help="mask for edge preservation")

    p = sub.add_parser("scores", parents=[common],
                       help="rank sum, median and F-pseudosigma per method")
    p.add_argument("csv", type=Path, help="CSV with columns method,evaluator,slice,score")

    p = sub.add_parser("ttest", parents=[common], help="paired two-tailed t-test p-value")
    p.add_argument("csv", type=Path)
    p.add_argument("--columns", nargs=2, metavar=("METHOD", "REFERENCE"))

    p = sub.add_parser("profile", parents=[common], help="SNR gain versus distance as CSV")
    p.add_argument("--max-distance", type=float, default=80.0, help="mm (default 80)")
    p.add_argument("--step", type=float, default=1.0, help="mm (default 1)")
    return parser


_COMMANDS = {
    "phantom": _cmd_phantom,
    "denoise": _cmd_denoise,
    "metrics": _cmd_metrics,
    "scores": _cmd_scores,
    "ttest": _cmd_ttest,
    "profile": _cmd_profile,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed, sampler=replace(cfg.sampler, seed=args.seed))
        if args.threads is not None:
            cfg = replace(cfg, threads=args.threads)
        _COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"ercdenoise: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ErcDenoiseError, OSError) as exc:
        print(f"ercdenoise: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
