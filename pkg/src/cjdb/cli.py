"""``cjdb`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 database/transport
error. Logs go to stderr as ``LEVEL module message``; data goes to stdout or
the ``--output`` file. The password is taken from ``CJDB_PASSWORD`` only.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import psycopg

from . import __version__
from . import schema as sch
from .db import ENV_CONFIG, ENV_DSN, ENV_PASSWORD, config_path, connect, load_config, redact
from .errors import CjdbError, DataError, TransportError

log = logging.getLogger("cjdb.cli")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRANSPORT = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _RedactingFilter(logging.Filter):
    def filter(self, record):
        record.msg = redact(record.getMessage())
        record.args = None
        return True


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s %(message)s"))
    handler.addFilter(_RedactingFilter())
    root = logging.getLogger("cjdb")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def _count(minimum: int):
    def parse(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}")
        return value

    return parse


def _connection_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group(
        "connection",
        f"flag > {ENV_DSN} > config file; the password is read from {ENV_PASSWORD} only",
    )
    g.add_argument("--host")
    g.add_argument("--port", type=int)
    g.add_argument("--user")
    g.add_argument("--database", "--dbname", dest="database")
    g.add_argument("--schema", help="target schema (default: cjdb)")
    g.add_argument("--config", help=f"config file (default: ${ENV_CONFIG} or ~/.config/cjdb/cjdb.ini)")


def _index_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--attr-index", action="append", default=[], metavar="PATH",
                   help="add a BTree index on attribute PATH (dotted for nested keys); repeatable")
    p.add_argument("--partial", action="store_true",
                   help="make --attr-index indexes partial (rows holding the attribute only)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cjdb", description="Store CityJSONL in a three-table PostGIS schema.")
    parser.add_argument("--version", action="version", version=f"cjdb {__version__}")
    levels = dict(choices=["DEBUG", "INFO", "WARNING", "ERROR"], type=str.upper)
    parser.add_argument("--log-level", default="INFO", **levels)
    # also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=argparse.SUPPRESS, **levels)
    sub = parser.add_subparsers(dest="command", metavar="{init,import,export,bench,synth}", parser_class=_Parser)

    p = sub.add_parser("init", parents=[common], help="create the schema, tables and indexes")
    _connection_flags(p)
    p.add_argument("--srid", type=int, default=7415, help="SRID of the footprint column (default 7415)")
    _index_flags(p)
    p.add_argument("--dump-sql", action="store_true", help="print the DDL and exit without connecting")

    p = sub.add_parser("import", parents=[common], help="import a CityJSONL file")
    p.add_argument("input", help="CityJSONL file, or - for stdin")
    _connection_flags(p)
    p.add_argument("--srid", type=int, help="override the SRID from the header")
    p.add_argument("--batch-size", type=_count(1), default=1000)
    _index_flags(p)
    p.add_argument("--on-conflict", choices=["error", "skip"], default="error",
                   help="existing (object_id, file) pair: fail, or skip the object")
    p.add_argument("--strict", action="store_true", help="fail on the first malformed feature line")
    p.add_argument("--no-cluster", action="store_true", help="skip CLUSTER/ANALYZE after the import")
    p.add_argument("--dump-sql", action="store_true", help="print the SQL and exit without connecting")

    p = sub.add_parser("export", parents=[common], help="export city objects as CityJSONL")
    sel = p.add_mutually_exclusive_group(required=True)
    sel.add_argument("--query", help=f"SQL returning an id column, e.g. over the {sch.FILTER_VIEW} view")
    sel.add_argument("--all", action="store_true", help="export every object")
    p.add_argument("--output", "-o", default="-", help="output file, or - for stdout (default)")
    _connection_flags(p)

    p = sub.add_parser("bench", parents=[common], help="run the eight benchmark queries")
    _connection_flags(p)
    p.add_argument("--params", help="JSON params file, or - for stdin")
    p.add_argument("--warmup", type=_count(0), default=2)
    p.add_argument("--runs", type=_count(1), default=5)
    p.add_argument("--format", choices=["table", "json"], default="table")
    p.add_argument("--timing", choices=["client", "server"], default="client",
                   help="client: wall clock per query; server: EXPLAIN ANALYZE execution time")
    p.add_argument("--output", "-o", default="-")
    p.add_argument("--dump-sql", action="store_true", help="print the query SQL and exit without connecting")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic city as CityJSONL")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--buildings", type=_count(0), default=1000)
    p.add_argument("--parts-ratio", type=float, default=0.0)
    p.add_argument("--parts-total", type=int)
    p.add_argument("--lods", default="1.2,2.2", help="comma separated (default 1.2,2.2)")
    p.add_argument("--vegetation", type=int, default=0, help="number of trees")
    p.add_argument("--output", "-o", default="-")

    # hidden: compare database answers with the in-memory oracle
    p = sub.add_parser("verify", parents=[common])
    p.add_argument("input")
    _connection_flags(p)
    p.add_argument("--params")
    return parser


def _schema(args, cfg) -> str:
    return args.schema or cfg.schema or "cjdb"


def _config(args):
    return load_config(args.config, host=args.host, port=args.port, user=args.user,
                       database=args.database, schema=args.schema)


def _attr_indexes(args) -> list:
    return [sch.partial_index(a) if args.partial else sch.AttributeIndex(a) for a in args.attr_index]


def _read_params(path):
    from .bench import QueryParams
    from .seq import open_input

    if not path:
        return QueryParams()
    with open_input(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"params file {path}: {exc}") from exc
    return QueryParams.from_json(doc)


def cmd_init(args) -> int:
    cfg = _config(args)
    plan = sch.SchemaPlan(_schema(args, cfg), args.srid, _attr_indexes(args))
    if args.dump_sql:
        sys.stdout.write(";\n\n".join(sch.ddl_statements(plan)) + ";\n")
        return EXIT_OK
    with connect(cfg) as conn:
        log.info("connected to %s", cfg.describe())
        sch.create_schema(conn, plan)
    log.info("schema %s ready (SRID %d)", plan.schema_name, plan.srid)
    return EXIT_OK


def cmd_import(args) -> int:
    from .importer import ImportOptions, import_file, insert_sql

    cfg = _config(args)
    plan = sch.SchemaPlan(_schema(args, cfg), args.srid or 7415, _attr_indexes(args))
    if args.dump_sql:
        stmts = sch.ddl_statements(plan) + [insert_sql(plan, "error")] + sch.cluster_statements(plan)
        sys.stdout.write(";\n\n".join(stmts) + ";\n")
        return EXIT_OK
    if args.input != "-" and not Path(args.input).is_file():
        raise DataError(f"input file not found: {args.input}")
    options = ImportOptions(
        batch_size=args.batch_size,
        on_conflict=args.on_conflict,
        on_malformed="raise" if args.strict else "skip",
        srid=args.srid,
        cluster=not args.no_cluster,
    )
    with connect(cfg) as conn:
        log.info("connected to %s", cfg.describe())
        stats = import_file(args.input, conn, plan, options)
    log.info(
        "imported %s: %d features, %d objects, %d relationships, %d skipped, %d duplicates in %.2fs",
        args.input, stats.features_in, stats.objects_written, stats.relationships_written,
        stats.skipped, stats.duplicates, stats.seconds,
    )
    if stats.fallback_footprints:
        log.warning("%d footprints fell back to the XY bounding box", stats.fallback_footprints)
    return EXIT_OK


def cmd_export(args) -> int:
    from .exporter import export
    from .seq import open_output

    cfg = _config(args)
    with connect(cfg) as conn, open_output(args.output) as sink:
        log.info("connected to %s", cfg.describe())
        stats = export(conn, None if args.all else args.query, sink, _schema(args, cfg))
    log.info("exported %d features, %d objects in %.2fs", stats.features_out, stats.objects_out, stats.seconds)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import dump_sql, emit_report, run_benchmark
    from .seq import open_output

    cfg = _config(args)
    params = _read_params(args.params)
    if args.dump_sql:
        sys.stdout.write(dump_sql(_schema(args, cfg), params))
        return EXIT_OK
    with connect(cfg) as conn:
        log.info("connected to %s", cfg.describe())
        report = run_benchmark(conn, params, args.warmup, args.runs, _schema(args, cfg), args.timing)
    with open_output(args.output) as sink:
        sink.write(emit_report(report, args.format))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .seq import open_output
    from .synth import write_city

    lods = [x.strip() for x in args.lods.split(",") if x.strip()]
    try:
        with open_output(args.output) as sink:
            n = write_city(sink, args.seed, args.buildings, parts_ratio=args.parts_ratio, lods=lods,
                           vegetation=args.vegetation, parts_total=args.parts_total)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    log.info("wrote %d features", n)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .bench import derive_params, run_query
    from .oracle import Oracle
    from .seq import open_input, read_sequence

    cfg = _config(args)
    params = _read_params(args.params)
    with open_input(args.input) as fh:
        seq = read_sequence(fh)
        oracle = Oracle(seq, seq.header.metadata.transform)
    s = _schema(args, cfg)
    failed = 0
    with connect(cfg) as conn:
        params = derive_params(conn, s, params)
        for name, spec in params.specs().items():
            got, want = run_query(conn, name, params, s), oracle.eval(spec)
            ok = got == want
            failed += not ok
            print(f"{name} {'ok' if ok else 'MISMATCH'} db={len(got)} oracle={len(want)}")
    return EXIT_OK if not failed else EXIT_DATA


COMMANDS = {
    "init": cmd_init,
    "import": cmd_import,
    "export": cmd_export,
    "bench": cmd_bench,
    "synth": cmd_synth,
    "verify": cmd_verify,
}


def _silence_stdout():
    import os

    try:
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
    except (OSError, ValueError):
        pass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    _setup_logging(args.log_level)
    if args.command != "synth":
        log.debug("config file %s", config_path(getattr(args, "config", None)))
    try:
        return COMMANDS[args.command](args)
    except BrokenPipeError:
        # downstream closed early (e.g. | head); not an error
        _silence_stdout()
        return EXIT_OK
    except TransportError as exc:
        log.error("%s", exc)
        return EXIT_TRANSPORT
    except CjdbError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except psycopg.OperationalError as exc:
        log.error("%s", exc)
        return EXIT_TRANSPORT
    except psycopg.Error as exc:
        # e.g. a syntax error in an --query filter
        log.error("database rejected the request: %s", exc)
        return EXIT_DATA
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
