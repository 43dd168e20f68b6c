"""``splatmerge`` command line: simplify, inspect, verify.

Exit codes: 0 ok, 1 PLY parse error, 2 invalid configuration, 3 I/O
failure, 4 a verify check failed. Progress goes to stderr; the summary line
goes to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .errors import PlyFormatError
from .gsply_io import PlyIOError, read_header, read_splat_ply, write_splat_ply
from .merge_cost import DEFAULT_BLOCK, CostMode, CostParams
from .simplifier import SimplifyConfig, simplify

EXIT_PARSE, EXIT_CONFIG, EXIT_IO, EXIT_VERIFY = 1, 2, 3, 4


class ConfigError(Exception):
    pass


def _fail(code: int, message: str) -> int:
    print(f"splatmerge: error: {message}", file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatmerge",
        description="Training-free Gaussian splat simplification by greedy pairwise merging.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("simplify", help="reduce a 3DGS PLY to a target keep ratio", formatter_class=fmt)
    p.add_argument("--input", required=True, help="input 3DGS PLY")
    p.add_argument("--output", required=True, help="output PLY path")
    p.add_argument("--ratio", type=float, required=True, help="keep ratio in (0, 1]")
    p.add_argument("--k", type=int, default=8, help="neighbours per splat in the merge graph")
    p.add_argument("--tau", type=float, default=0.01, help="opacity prune threshold")
    p.add_argument("--samples", type=int, default=16, help="Monte-Carlo samples per edge")
    p.add_argument("--cost-mode", choices=[m.value for m in CostMode], default=CostMode.IDIV.value,
                   help="geometric term: Monte-Carlo KL (idiv) or mean/covariance squared error (mse)")
    p.add_argument("--app-weight", type=float, default=1.0, help="weight of the SH appearance term")
    p.add_argument("--seed", type=int, default=0, help="seed of the per-pass sample banks")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads (results do not depend on it)")
    p.add_argument("--block-size", type=int, default=DEFAULT_BLOCK, help="edges per cost block")
    p.add_argument("--max-passes", type=int, default=None, help="safety cap (default 10*ceil(log2(1/ratio))+16)")
    p.add_argument("--report", default=None, help="write the JSON pass report here")

    p = sub.add_parser("inspect", help="print header and statistics of a PLY", formatter_class=fmt)
    p.add_argument("--input", required=True, help="3DGS PLY to inspect")

    p = sub.add_parser("verify", help="run the oracle cross-checks on synthetic data", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0, help="seed of the synthetic test data")
    return parser


def _config_from_args(args) -> SimplifyConfig:
    checks = [
        ("--ratio", 0.0 < args.ratio <= 1.0, f"must be in (0, 1], got {args.ratio}"),
        ("--k", args.k >= 1, f"must be >= 1, got {args.k}"),
        ("--tau", 0.0 <= args.tau <= 1.0, f"must be in [0, 1], got {args.tau}"),
        ("--samples", args.samples >= 1, f"must be >= 1, got {args.samples}"),
        ("--app-weight", args.app_weight >= 0, f"must be >= 0, got {args.app_weight}"),
        ("--threads", args.threads >= 1, f"must be >= 1, got {args.threads}"),
        ("--block-size", args.block_size >= 1, f"must be >= 1, got {args.block_size}"),
        ("--max-passes", args.max_passes is None or args.max_passes >= 0, f"must be >= 0, got {args.max_passes}"),
    ]
    for flag, ok, message in checks:
        if not ok:
            raise ConfigError(f"{flag} {message}")
    cost = CostParams(args.samples, args.app_weight, CostMode(args.cost_mode), args.seed)
    return SimplifyConfig(
        keep_ratio=args.ratio, k=args.k, tau=args.tau, cost=cost,
        block_size=args.block_size, max_passes=args.max_passes, workers=args.threads,
    )


def run_simplify(args) -> int:
    try:
        config = _config_from_args(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        splats, invalid = read_splat_ply(args.input, return_dropped=True)
    except PlyFormatError as exc:
        return _fail(EXIT_PARSE, f"{args.input}: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, f"{args.input}: {exc}")
    if invalid:
        logging.getLogger(__name__).warning("dropped %d records with non-finite values", invalid)

    out, report = simplify(splats, config)
    report.invalid_records = invalid
    try:
        write_splat_ply(out, args.output)
        if args.report:
            with open(args.report, "w") as fh:
                json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    print(
        f"{report.input_count} -> {report.final_count} splats, {len(report.passes)} passes, "
        f"{report.total_wall_time:.2f}s ({report.stop_reason})"
    )
    if args.report:
        print(f"report: {args.report}")
    return 0


def inspect_stats(path) -> dict:
    """Header and summary statistics of a PLY, as printed by ``inspect``."""
    with open(path, "rb") as fh:
        header = read_header(fh)
    splats, invalid = read_splat_ply(path, return_dropped=True)
    stats = {
        "count": header.count,
        "sh_degree": header.sh_degree,
        "invalid_records": invalid,
        "file_size": os.path.getsize(path),
    }
    if len(splats):
        a = np.sort(splats.alpha)
        stats["opacity_min"] = float(a[0])
        stats["opacity_median"] = float(a[(len(a) - 1) // 2])
        stats["opacity_max"] = float(a[-1])
        stats["bbox_min"] = splats.mu.min(axis=0).tolist()
        stats["bbox_max"] = splats.mu.max(axis=0).tolist()
    return stats


def run_inspect(args) -> int:
    try:
        stats = inspect_stats(args.input)
    except PlyFormatError as exc:
        return _fail(EXIT_PARSE, f"{args.input}: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, f"{args.input}: {exc}")
    for key, value in stats.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        elif isinstance(value, list):
            value = " ".join(f"{v:.6g}" for v in value)
        print(f"{key}: {value}")
    return 0


def run_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
    args = build_parser().parse_args(argv)
    handler = {"simplify": run_simplify, "inspect": run_inspect, "verify": run_verify}[args.command]
    try:
        return handler(args)
    except PlyIOError as exc:
        return _fail(EXIT_IO, str(exc))


if __name__ == "__main__":
    sys.exit(main())
