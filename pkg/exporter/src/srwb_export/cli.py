"""Console entry points: srwb-export and srwb-verify."""

import argparse
import sys

from .export import export_checkpoint
from .formats import ExportError
from .verify import verify_export


def main_export(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="srwb-export",
        description="Convert a pretrained checkpoint into an SRWB weight bundle.",
    )
    parser.add_argument("--checkpoint", required=True, help="torch file or .npz archive")
    parser.add_argument("--map", required=True, help="layer-name map file")
    parser.add_argument("--arch", required=True, help="target architecture preset or file")
    parser.add_argument("--out", required=True, help="SRWB output path")
    parser.add_argument("--manifest", default=None, help="manifest path (default: <out>.manifest)")
    parser.add_argument("--means", default="0,0,0", help="per-channel means for the probe run")
    parser.add_argument("--probe-seed", type=int, default=7)
    parser.add_argument("--engine-cmd", default=None,
                        help="engine CLI command (default: selrel on PATH)")
    args = parser.parse_args(argv)
    try:
        means = tuple(float(x) for x in args.means.split(","))
        command = args.engine_cmd.split() if args.engine_cmd else None
        manifest = export_checkpoint(
            args.checkpoint, args.map, args.out, args.arch,
            means=means, probe_seed=args.probe_seed,
            manifest_path=args.manifest, command=command,
        )
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(args.out)
    print(manifest)
    return 0


def main_verify(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="srwb-verify",
        description="Check an SRWB bundle against its export manifest.",
    )
    parser.add_argument("--bundle", required=True)
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--engine-cmd", default=None)
    args = parser.parse_args(argv)
    try:
        command = args.engine_cmd.split() if args.engine_cmd else None
        report = verify_export(args.bundle, args.manifest, command=command)
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(report.text(), end="")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main_export())
