"""Command-line front end: run, analyze, verify, export."""

from __future__ import annotations

import argparse
import logging
import sys
import tarfile
from pathlib import Path

from .analyze import AnalyzeError, cmd_analyze
from .config import ConfigError, parse_config
from .manifest import MANIFEST_NAME, ManifestError, check_files, load_manifest
from .runner import ENV_OUTPUT_ROOT, RunnerError, cmd_run, resolve_output_dir
from .verify import format_report, run_verify

log = logging.getLogger("fedscope.cli")


def _ints_arg(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, "
                                         f"got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedscope",
        description="Deterministic federated-learning simulations with "
                    "representation-similarity analysis.",
        epilog=f"Relative output dirs resolve under ${ENV_OUTPUT_ROOT} "
               f"when that variable is set.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run (or resume) an experiment")
    p_run.add_argument("--config", required=True,
                       help="experiment file (key = value lines)")

    p_an = sub.add_parser("analyze",
                          help="similarity CSVs + PGM heatmaps per snapshot")
    p_an.add_argument("run_dir", help="output dir of a previous run")
    p_an.add_argument("--epochs", type=_ints_arg, default=(),
                      help="snapshot epochs (default: all in the config)")
    p_an.add_argument("--clients", type=_ints_arg, default=(),
                      help="client ids (default: all)")
    p_an.add_argument("--overall-capture", default=None, metavar="POINT",
                      help="capture point for the model-by-model overall "
                           "matrix (default: the last one)")

    p_ver = sub.add_parser("verify", help="run the built-in oracle suites")
    p_ver.add_argument("--hsic-pair-coeff", type=float, default=2.0,
                       help=argparse.SUPPRESS)  # self-check mutation hook

    p_exp = sub.add_parser("export",
                           help="bundle a run's artifacts into a tar archive")
    p_exp.add_argument("run_dir")
    p_exp.add_argument("--output", default="",
                       help="archive path (default: <run_dir>/export.tar)")
    return parser


def _do_export(run_dir: str, output: str) -> Path:
    src = Path(run_dir)
    manifest = load_manifest(src)
    problems = check_files(src, manifest)
    if problems:
        raise ManifestError("run dir fails integrity check: "
                            + "; ".join(problems))
    target = Path(output) if output else src / "export.tar"
    members = [MANIFEST_NAME] + sorted(manifest.files)
    with tarfile.open(target, "w") as tar:
        for rel in members:
            info = tar.gettarinfo(src / rel, arcname=rel)
            info.mtime = 0          # archives of equal runs are byte-equal
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            with open(src / rel, "rb") as fh:
                tar.addfile(info, fh)
    log.info("exported %d files to %s", len(members), target)
    return target


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = parse_config(args.config)
            out = cmd_run(cfg)
            print(f"run complete: {out}")
            return 0
        if args.command == "analyze":
            files = cmd_analyze(resolve_output_dir(args.run_dir),
                                epochs=args.epochs, clients=args.clients,
                                overall_capture=args.overall_capture)
            for path in files:
                print(path)
            return 0
        if args.command == "verify":
            results, ok = run_verify(hsic_pair_coeff=args.hsic_pair_coeff)
            print(format_report(results, ok))
            return 0 if ok else 1
        if args.command == "export":
            print(_do_export(resolve_output_dir(args.run_dir), args.output))
            return 0
    except (ConfigError, ManifestError, RunnerError, AnalyzeError,
            FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
