from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, TextIO

from pydantic import ValidationError

from . import certs
from .config import BenchConfig, ScenarioConfig, TamperPoint
from .errors import MalformedEncoding, PkiError, UnknownStrength
from .formats import FormatError, ReportFormats
from .harness import EXIT_OK, EXIT_PROTOCOL_FAILURE, EXIT_USAGE, bench, emit_report, run_scenario

LOGGER = logging.getLogger(__name__)


class UsageError(Exception):
    pass


def _int_list(text: str) -> List[int]:
    if not text.strip():
        return []
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}") from err


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="bkepy",
        description="Butterfly key expansion PKI: scenario runner, benchmark and certificate tools.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    scenario = commands.add_parser("scenario", help="run the healthcare pseudonym flow end to end")
    scenario.add_argument("--strength", type=int, default=None, help="security strength (env BKEPY_STRENGTH)")
    scenario.add_argument("--seed", type=int, default=0, help="seed for the deterministic random source")
    scenario.add_argument("--out", type=Path, default=None, help="output directory (env BKEPY_OUT_DIR)")
    scenario.add_argument("--reading", default=None, help="reading text the device sends to the hospital")
    scenario.add_argument("--count", type=int, default=None, help="pseudonym certificates to request")
    scenario.add_argument(
        "--tamper",
        choices=[point.value for point in TamperPoint],
        default=None,
        help="corrupt one message in transit",
    )

    bench_cmd = commands.add_parser("bench", help="time cocoon and butterfly expansion")
    bench_cmd.add_argument("--strengths", type=_int_list, default=None, help="e.g. 80,112,128,192,256")
    bench_cmd.add_argument("--iterations", type=int, default=1000)
    bench_cmd.add_argument("--batch", type=int, default=20)
    bench_cmd.add_argument("--experiments", type=_int_list, default=None, help="subset of 1,2,3,4")
    bench_cmd.add_argument("--seed", type=int, default=0)
    bench_cmd.add_argument("--warmup", type=int, default=10)
    bench_cmd.add_argument("--format", default="table", choices=ReportFormats.names())
    bench_cmd.add_argument("--output", type=Path, default=None, help="write the report here instead of stdout")

    cert = commands.add_parser("cert", help="certificate utilities")
    cert_commands = cert.add_subparsers(dest="cert_command", required=True, parser_class=_Parser)
    dump = cert_commands.add_parser("dump", help="print a certificate or chain file")
    dump.add_argument("file", type=Path)
    dump.add_argument("--chain", action="store_true", help="the file holds a length-prefixed chain")
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _run_scenario(args: argparse.Namespace, out: TextIO) -> int:
    config = ScenarioConfig.from_env(
        strength=args.strength,
        seed=args.seed,
        out_dir=args.out,
        reading=args.reading.encode("utf-8") if args.reading is not None else None,
        pseudonym_count=args.count,
        tamper=args.tamper,
    )
    result = run_scenario(config)
    print(result.message, file=out)
    for role, path in sorted(result.transcript_paths.items()):
        print(f"transcript {role}: {path}", file=out)
    return result.exit_code


def _run_bench(args: argparse.Namespace, out: TextIO) -> int:
    values = {
        "iterations": args.iterations,
        "batch_size": args.batch,
        "seed": args.seed,
        "warmup": args.warmup,
    }
    if args.strengths is not None:
        values["strengths"] = args.strengths
    if args.experiments is not None:
        values["experiments"] = args.experiments
    report = bench(BenchConfig(**values))
    rendered = emit_report(report, args.format)
    if args.output is not None:
        args.output.write_bytes(rendered)
    else:
        out.write(rendered.decode("utf-8"))
    return EXIT_OK


def _run_cert_dump(args: argparse.Namespace, out: TextIO) -> int:
    try:
        data = args.file.read_bytes()
    except OSError as err:
        raise UsageError(f"cannot read {args.file}: {err.strerror}") from err
    chain = certs.decode_chain(data) if args.chain else (certs.decode(data),)
    for position, cert in enumerate(chain):
        if args.chain:
            print(f"[{position}]", file=out)
        out.write(certs.dump_text(cert))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None, *, out: Optional[TextIO] = None, err: Optional[TextIO] = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=err)
        return EXIT_USAGE
    _configure_logging(args.verbose)
    try:
        if args.command == "scenario":
            return _run_scenario(args, out)
        if args.command == "bench":
            return _run_bench(args, out)
        return _run_cert_dump(args, out)
    except (UsageError, ValidationError, UnknownStrength, FormatError, ValueError) as exc:
        if isinstance(exc, MalformedEncoding):
            print(f"malformed certificate data: {exc}", file=err)
            return EXIT_PROTOCOL_FAILURE
        print(f"usage error: {exc}", file=err)
        return EXIT_USAGE
    except PkiError as exc:
        print(f"protocol failure: {exc}", file=err)
        return EXIT_PROTOCOL_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
