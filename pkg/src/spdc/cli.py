"""Command-line front end.

Exit codes: 0 success, 1 usage or I/O error, 2 tamper detected,
3 singular pivots on every retry, 4 a verification or trace check failed.
"""

import argparse
import sys

import numpy as np

from .client import (
    METHODS,
    METRICS_HEADER,
    ProtocolConfig,
    SingularityError,
    TamperError,
    format_report,
    metrics_row,
    prepare,
    run_protocol,
)
from .matrix_core import MatrixFormatError, as_matrix, load_matrix
from .netsim import FaultSpec, Trace, validate_trace
from .obfuscation import MODES, format_key_file

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TAMPER = 2
EXIT_SINGULAR = 3
EXIT_CHECK = 4


class UsageError(Exception):
    pass


def _hex(text):
    try:
        value = bytes.fromhex(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a hex string: {text!r}") from None
    if not value:
        raise argparse.ArgumentTypeError("hex string must not be empty")
    return value


def _int_list(text):
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def _fault(text):
    try:
        return FaultSpec.parse(text)
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def _protocol_flags(p, servers_help):
    p.add_argument("--servers", type=_int_list, default=[2], help=servers_help)
    p.add_argument("--mode", choices=MODES, default="EWD")
    p.add_argument("--method", choices=METHODS, default="Q3")
    p.add_argument("--seed", type=int, default=0, help="rng seed for every random choice")
    p.add_argument("--lambda1", type=_hex, help="seed security parameter (hex)")
    p.add_argument("--lambda2", type=_hex, help="key security parameter (hex)")
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--fault", type=_fault, action="append", default=[],
                   help="inject a fault, e.g. server=2,block=U_22,rel=1e-2")
    p.add_argument("--concurrent", action="store_true", help="one thread per server")
    p.add_argument("--metrics-out", help="CSV metrics file")


def build_parser():
    parser = argparse.ArgumentParser(prog="spdc", description="Blinded N-server determinant computation.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="compute the determinant of a matrix file")
    run.add_argument("matrix", help="matrix text file ('rows cols' header, one row per line)")
    _protocol_flags(run, "number of servers")
    run.add_argument("--out", help="report file (default: stdout)")
    run.add_argument("--trace-out", help="message trace file")
    run.add_argument("--key-out", help="write the client's seed and blinding key")

    bench = sub.add_parser("bench", help="operation counts over a size and server sweep")
    bench.add_argument("--sizes", type=_int_list, default=[8, 16, 32])
    _protocol_flags(bench, "comma-separated server counts")
    bench.add_argument("--out", help="alias for --metrics-out")

    verify = sub.add_parser("verify", help="run the invariant campaigns")
    verify.add_argument("--only", type=_int_list, help="campaign numbers to run")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--out", help="write the summary here as well")

    trace = sub.add_parser("trace", help="re-validate a stored trace")
    trace.add_argument("path", help="trace file (text or JSON)")
    trace.add_argument("--servers", type=int, help="override the server count in the header")
    trace.add_argument("--out", help="write violations here as well")
    return parser


def _config(args, n_servers, faults):
    return ProtocolConfig(
        n_servers=n_servers,
        mode=args.mode,
        method=args.method,
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        rng_seed=args.seed,
        max_retries=args.max_retries,
        faults=tuple(faults),
        concurrent=args.concurrent,
    )


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
        return
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as err:
        raise UsageError(f"cannot write {path}: {err.strerror}") from None


def cmd_run(args):
    if len(args.servers) != 1:
        raise UsageError("run takes a single --servers value")
    try:
        m = as_matrix(load_matrix(args.matrix), square=True)
    except MatrixFormatError as err:
        raise UsageError(f"{args.matrix}: {err}") from None
    except OSError as err:
        raise UsageError(f"cannot read {args.matrix}: {err.strerror}") from None
    except ValueError as err:
        raise UsageError(f"{args.matrix}: {err}") from None
    config = _config(args, args.servers[0], args.fault)
    try:
        outcome = run_protocol(m, config)
    except TamperError as err:
        print(f"tamper detected: {err}", file=sys.stderr)
        if args.trace_out and err.trace is not None:
            _write(args.trace_out, err.trace.to_text())
        return EXIT_TAMPER
    except SingularityError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SINGULAR
    _write(args.out, format_report(outcome))
    if args.trace_out:
        _write(args.trace_out, outcome.trace.to_text())
    if args.metrics_out:
        _write(args.metrics_out, METRICS_HEADER + "\n" + metrics_row(outcome) + "\n")
    if args.key_out:
        prep = prepare(m, config, outcome.retries)
        _write(args.key_out, format_key_file(prep.seed, prep.key, prep.env.theta))
    return EXIT_OK


def cmd_bench(args):
    rows = [METRICS_HEADER]
    status = EXIT_OK
    for n in args.sizes:
        # one matrix per size so every server count sees the same input
        rng = np.random.default_rng([args.seed, n])
        m = rng.uniform(-1.0, 1.0, (n, n)) + n * np.eye(n)
        for n_servers in args.servers:
            try:
                outcome = run_protocol(m, _config(args, n_servers, args.fault))
            except TamperError as err:
                print(f"n={n} N={n_servers}: {err}", file=sys.stderr)
                status = EXIT_TAMPER
                continue
            except SingularityError as err:
                print(f"n={n} N={n_servers}: {err}", file=sys.stderr)
                status = max(status, EXIT_SINGULAR) if status != EXIT_TAMPER else status
                continue
            rows.append(metrics_row(outcome))
    _write(args.metrics_out or args.out, "\n".join(rows) + "\n")
    return status


def cmd_verify(args):
    from .verify import run_checks

    results = run_checks(args.only, seed=args.seed)
    text = "\n".join(r.line() for r in results) + "\n"
    sys.stdout.write(text)
    if args.out:
        _write(args.out, text)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_trace(args):
    try:
        with open(args.path) as fh:
            text = fh.read()
    except OSError as err:
        raise UsageError(f"cannot read {args.path}: {err.strerror}") from None
    try:
        trace = Trace.from_json(text) if text.lstrip().startswith("{") else Trace.from_text(text)
    except (ValueError, KeyError) as err:
        raise UsageError(f"{args.path}: {err}") from None
    problems = validate_trace(trace, args.servers)
    lines = problems or [f"ok: {trace.messages} messages, {trace.n_servers} servers, no violations"]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        _write(args.out, text)
    return EXIT_CHECK if problems else EXIT_OK


COMMANDS = {"run": cmd_run, "bench": cmd_bench, "verify": cmd_verify, "trace": cmd_trace}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; 2 is reserved for tamper detection
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
