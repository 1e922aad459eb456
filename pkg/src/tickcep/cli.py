"""``tickcep`` command line: generate | serve | solve | verify | report | export-series.

Every option can also be given as a ``TICKCEP_<OPTION>`` environment variable
(e.g. ``TICKCEP_BATCH_SIZE``); explicit flags win.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .datagen import GenConfig, validate_distribution, write_dataset
from .engine import Engine, EngineConfig, RetentionDisabled, SeriesRow
from .harness import Dataset, Harness, load_dataset
from .indicators import Advice, EmaPair
from .marketdata import Symbol, TickDataError
from .wireproto import (
    DEFAULT_PORT,
    BenchmarkConfig,
    Client,
    ConnectionFailed,
    LoopbackTransport,
    ProtocolError,
    TcpServer,
    TcpTransport,
)
from .windowing import WindowId, WindowSpec

log = logging.getLogger("tickcep")

ENV_PREFIX = "TICKCEP_"
_TRUE = ("1", "true", "yes", "on")


class UnknownSymbol(KeyError):
    pass


def _apply_env_defaults(parser: argparse.ArgumentParser) -> None:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                _apply_env_defaults(sub)
            continue
        if not action.option_strings or action.dest in ("help", "version"):
            continue
        value = os.environ.get(ENV_PREFIX + action.dest.upper())
        if value is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            action.default = value.lower() in _TRUE
        else:
            action.default = value  # argparse applies ``type`` to string defaults


def _engine_config(args: argparse.Namespace, retention: Optional[str] = None) -> EngineConfig:
    cfg = EngineConfig.load(args.config) if getattr(args, "config", None) else EngineConfig()
    if retention is not None:
        cfg.retention = retention
    return cfg


def _gen_config(args: argparse.Namespace, seed: int) -> GenConfig:
    return GenConfig(
        seed=seed,
        n_symbols=args.symbols,
        total_events=args.events,
        days=args.days,
        start_date=dt.date.fromisoformat(args.start_date),
        zipf_exponent=args.zipf,
        header=getattr(args, "header", False),
        full=getattr(args, "full", False),
    )


def _add_gen_flags(p: argparse.ArgumentParser) -> None:
    d = GenConfig()
    p.add_argument("--symbols", type=int, default=d.n_symbols, help="number of symbols")
    p.add_argument("--events", type=int, default=d.total_events, help="number of price events")
    p.add_argument("--days", type=int, default=d.days, help="number of days (one file per day)")
    p.add_argument("--start-date", default=d.start_date.isoformat(), help="first day, YYYY-MM-DD")
    p.add_argument("--zipf", type=float, default=d.zipf_exponent, help="symbol popularity exponent")


# commands


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _gen_config(args, args.seed)
    manifest = write_dataset(cfg, args.out)
    n = sum(f["records"] for f in manifest["files"])
    print(f"wrote {n} records to {args.out} ({len(manifest['files'])} files)")
    if args.validate:
        rep = validate_distribution(args.out)
        print(json.dumps({**rep.__dict__, "passed": rep.passed}, indent=2, sort_keys=True))
        return 0 if rep.passed else 1
    return 0


def _harness(args: argparse.Namespace, subscription_seed: int) -> Harness:
    if args.data:
        datasets = load_dataset(args.data, header=args.header)
        log.info("loaded %d price events over %d symbols from %s",
                 len(datasets), len(datasets.universe), args.data)
    else:
        cache: dict[int, Dataset] = {}

        def datasets(seed: int) -> Dataset:  # type: ignore[misc]
            if seed not in cache:
                from .datagen import generate

                cache[seed] = Dataset.from_records(generate(_gen_config(args, seed)), seed=seed)
            return cache[seed]

    return Harness(
        datasets,
        subscription_seed=subscription_seed,
        subscription_size=args.subscription_size,
        p_change=args.p_change,
        max_sessions=args.max_sessions,
        session_timeout_s=args.session_timeout,
        pace=args.pace,
        out_dir=args.out,
        batch_size_override=args.batch_size,
    )


def cmd_serve(args: argparse.Namespace) -> int:
    harness = _harness(args, args.seed)
    server = TcpServer(harness, args.host, args.port)
    log.info("serving on %s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_solve(args: argparse.Namespace) -> int:
    from .solver import run_session

    engine = Engine(_engine_config(args, "full" if args.dump else None))
    config = BenchmarkConfig(args.name, args.seed, args.batch_size, args.subscription_seed)
    if args.loopback:
        transport = LoopbackTransport(_harness(args, args.subscription_seed or 0))
    else:
        transport = TcpTransport(args.addr)
    client = Client(transport)
    try:
        summary = run_session(client, engine, config, max_batches=args.max_batches)
    finally:
        client.close()
        engine.close()
    if args.dump:
        engine.dump(args.dump)
        log.info("engine dump written to %s", args.dump)
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    from .oracle import diff, load_engine_dump, oracle_run
    from .solver import WireDecoder

    cfg = _engine_config(args)
    ds = load_dataset(args.data, header=args.header)
    dec = WireDecoder()
    expected = oracle_run((dec.event(e) for e in ds.events), cfg.window_minutes,
                          cfg.suppress_first_window_advice)
    problems = diff(expected, load_engine_dump(args.engine_dump), limit=args.max_report)
    for p in problems:
        print(p)
    windows = sum(len(v) for v in expected.values())
    print(f"{len(expected)} symbols, {windows} closed windows, {len(problems)} discrepancies"
          + (" (truncated)" if args.max_report and len(problems) >= args.max_report else ""))
    return 0 if not problems else 1


def cmd_report(args: argparse.Namespace) -> int:
    from .report import render_report

    written = render_report(args.summaries, args.out)
    for kind, path in written.items():
        print(f"{kind}: {path}")
    return 0


def _series_from_dump(path: str, symbol: str) -> Optional[list[SeriesRow]]:
    with open(path) as fh:
        for line in fh:
            obj = json.loads(line)
            if obj["symbol"] == symbol:
                return [
                    SeriesRow(WindowId(d, s), c, EmaPair(e38, e100), Advice(a) if a else None)
                    for d, s, c, e38, e100, a in obj["series"]
                ]
    return None


def cmd_export_series(args: argparse.Namespace) -> int:
    from .report import plot_series, write_series_csv
    from .solver import WireDecoder

    cfg = _engine_config(args, None if args.dump else args.retention)
    if args.dump:
        rows = _series_from_dump(args.dump, args.symbol)
    else:
        engine = Engine(cfg)
        dec = WireDecoder()
        ds = load_dataset(args.data, header=args.header)
        engine.ingest([dec.event(e) for e in ds.events])
        sym = Symbol.parse(args.symbol)
        rows = engine.snapshot_series(sym) if engine.state(sym) is not None else None
    if rows is None:
        raise UnknownSymbol(args.symbol)
    n = write_series_csv(rows, args.out, WindowSpec(cfg.window_minutes))
    print(f"{n} windows written to {args.out}")
    if args.plot:
        png = Path(args.out).with_suffix(".png")
        plot_series(rows, args.symbol, png)
        print(f"figure: {png}")
    return 0


# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tickcep", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tickcep {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    _add_gen_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--header", action="store_true", help="write a column header line")
    p.add_argument("--full", action="store_true", help="also emit non-price rows")
    p.add_argument("--validate", action="store_true", help="check the output distribution")
    p.set_defaults(func=cmd_generate)

    def harness_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--data", help="dataset file or directory (default: generate per dataset seed)")
        p.add_argument("--header", action="store_true", help="dataset files start with a header line")
        _add_gen_flags(p)
        p.add_argument("--subscription-size", type=int, default=100)
        p.add_argument("--p-change", type=float, default=0.1)
        p.add_argument("--max-sessions", type=int, default=64)
        p.add_argument("--session-timeout", type=float, default=600.0, help="seconds")
        p.add_argument("--pace", type=float, default=None,
                       help="replay at event-time gaps scaled by this factor (1.0 = realtime)")
        p.add_argument("--out", help="directory for session summaries, ledgers and manifests")

    p = sub.add_parser("serve", help="run the benchmark harness over TCP")
    harness_flags(p)
    p.add_argument("--seed", type=int, default=0, help="subscription seed")
    p.add_argument("--batch-size", type=int, default=None,
                   help="force this batch size for every session")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("solve", help="run the engine against a harness")
    p.add_argument("--addr", default=None, help=f"host:port (default 127.0.0.1:{DEFAULT_PORT})")
    p.add_argument("--name", default="tickcep")
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--subscription-seed", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--config", help="engine config file (key = value)")
    p.add_argument("--dump", help="write the engine's per-window series here for verify")
    p.add_argument("--max-batches", type=int, default=None)
    p.add_argument("--loopback", action="store_true", help="run an in-process harness instead")
    harness_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="compare an engine dump against the reference oracle")
    p.add_argument("--data", required=True)
    p.add_argument("--engine-dump", required=True)
    p.add_argument("--header", action="store_true")
    p.add_argument("--config", help="engine config file the dump was produced with")
    p.add_argument("--max-report", type=int, default=50, help="stop after this many discrepancies")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="leaderboard CSV and latency figure from harness output")
    p.add_argument("--summaries", required=True, help="summaries.jsonl or the harness --out directory")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-series", help="plot-ready per-window series of one symbol")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset to run the engine over")
    src.add_argument("--dump", help="engine dump written by solve --dump")
    p.add_argument("--symbol", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--plot", action="store_true", help="also render a PNG next to the CSV")
    p.add_argument("--header", action="store_true")
    p.add_argument("--config")
    p.add_argument("--retention", default="full", choices=("off", "full"))
    p.set_defaults(func=cmd_export_series)

    _apply_env_defaults(parser)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConnectionFailed as exc:
        log.error("connection failed: %s", exc)
        return 2
    except ProtocolError as exc:
        log.error("protocol error %s: %s", type(exc).__name__, exc)
        return 3
    except RetentionDisabled as exc:
        log.error("%s", exc)
        return 4
    except UnknownSymbol as exc:
        log.error("unknown symbol %s", exc)
        return 5
    except (TickDataError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
