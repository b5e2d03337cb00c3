"""``pachyderm`` command-line tool.

Exit status: 0 on success, 1 on domain errors (unknown class or oid, parse
errors, locked store...), 2 when ``verify`` reports findings.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import graph
from .errors import PachydermError
from .schema import class_diff, descriptors_equal, format_slot, format_value, parse_schema_text
from .store import open_store


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _oid(text: str) -> int:
    try:
        value = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid oid {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"invalid oid {text!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pachyderm", description="Inspect, evolve and verify pachyderm stores.")
    parser.add_argument("--force-unlock", action="store_true", help="ignore an existing lock sentinel")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("init", help="create an empty store")
    p.add_argument("path")
    p = sub.add_parser("info", help="summary counts")
    p.add_argument("path")
    p = sub.add_parser("classes", help="list classes and their current slots")
    p.add_argument("path")
    p = sub.add_parser("extent", help="list oids of a class")
    p.add_argument("path")
    p.add_argument("class_name")
    p = sub.add_parser("show", help="print one stored record")
    p.add_argument("path")
    p.add_argument("oid", type=_oid)
    p = sub.add_parser("set-schema", help="define or redefine classes from a schema file")
    p.add_argument("path")
    p.add_argument("schemafile")
    p = sub.add_parser("migrate", help="upgrade every instance of a class")
    p.add_argument("path")
    p.add_argument("class_name")
    p.add_argument("--eager", action="store_true")
    p = sub.add_parser("export", help="write the closure of some objects to a graph file")
    p.add_argument("path")
    p.add_argument("out")
    p.add_argument("oids", nargs="*", type=_oid)
    p = sub.add_parser("import", help="add the objects of a graph file under fresh oids")
    p.add_argument("path")
    p.add_argument("infile")
    p = sub.add_parser("compact", help="rewrite the log without superseded records")
    p.add_argument("path")
    p = sub.add_parser("verify", help="audit checksums, references and indexes")
    p.add_argument("path")
    return parser


def _existing(args):
    if not os.path.exists(args.path):
        raise PachydermError(f"no store at {args.path}")
    return open_store(args.path, force_unlock=args.force_unlock)


def cmd_init(args, out, err):
    if os.path.exists(args.path):
        raise PachydermError(f"{args.path} already exists")
    open_store(args.path, force_unlock=args.force_unlock).close()
    print(f"initialized {args.path}", file=out)
    return 0


def cmd_info(args, out, err):
    with _existing(args) as s:
        info = s.info()
    print(f"store: {args.path}", file=out)
    print(f"classes: {info['classes']}", file=out)
    print(f"objects: {info['objects']}", file=out)
    print(f"commits: {info['commits']}", file=out)
    return 0


def cmd_classes(args, out, err):
    with _existing(args) as s:
        for name in s.class_names():
            desc = s.registry.current(name)
            print(f"{name} v{desc.version} slots={','.join(desc.slot_names) or '-'}", file=out)
    return 0


def cmd_extent(args, out, err):
    with _existing(args) as s:
        for oid in s.extent(args.class_name):
            print(oid, file=out)
    return 0


def cmd_show(args, out, err):
    with _existing(args) as s:
        record = s._record_of(args.oid)
        current = s.registry.current(record.class_name).version
        print(f"oid: {record.oid}", file=out)
        print(f"class: {record.class_name}", file=out)
        print(f"version: {record.version} (current {current})", file=out)
        for name in sorted(record.slots):
            print(f"slot {name} = {format_value(record.slots[name])}", file=out)
    return 0


def cmd_set_schema(args, out, err):
    try:
        with open(args.schemafile, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise PachydermError(f"cannot read {args.schemafile}: {exc.strerror}") from None
    classes = parse_schema_text(text)
    with _existing(args) as s:
        for name, slots in classes:
            if name not in s.registry:
                desc = s.define_class(name, slots)
                print(f"defined {name} v{desc.version}", file=out)
                continue
            current = s.registry.current(name)
            proposed = type(current)(name, current.version, tuple(slots))
            if descriptors_equal(current, proposed):
                print(f"unchanged {name} v{current.version}", file=out)
                continue
            desc, diff = s.redefine_class(name, slots)
            added = ",".join(sorted(diff.added)) or "-"
            discarded = ",".join(sorted(diff.discarded)) or "-"
            print(f"redefined {name} v{desc.version} added={added} discarded={discarded}", file=out)
            if diff.discarded:
                print(
                    f"warning: {name} v{desc.version} discards {discarded}; their values are dropped "
                    "on migration (migration hooks need the library API)",
                    file=err,
                )
        s.commit()
    return 0


def cmd_migrate(args, out, err):
    if not args.eager:
        raise PachydermError("only eager migration is available here; pass --eager")
    with _existing(args) as s:
        count = s.migrate_eager(args.class_name)
        s.commit()
    print(f"upgraded {count}", file=out)
    return 0


def cmd_export(args, out, err):
    with _existing(args) as s:
        blob = graph.export_subgraph(s, args.oids)
        count = len(graph.parse_blob(blob)[1])
    with open(args.out, "wb") as fh:
        fh.write(blob)
    print(f"exported {count} objects", file=out)
    return 0


def cmd_import(args, out, err):
    try:
        with open(args.infile, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise PachydermError(f"cannot read {args.infile}: {exc.strerror}") from None
    with _existing(args) as s:
        mapping = graph.import_subgraph(s, blob)
        s.commit()
    print(f"imported {len(mapping)} objects", file=out)
    for dense, oid in sorted(mapping.items()):
        print(f"{dense} -> {oid}", file=out)
    return 0


def cmd_compact(args, out, err):
    with _existing(args) as s:
        old, new = s.compact()
    print(f"compacted {old} -> {new} bytes", file=out)
    return 0


def cmd_verify(args, out, err):
    with _existing(args) as s:
        report = s.verify()
    if report.ok:
        print("ok", file=out)
        return 0
    for finding in report:
        print(finding, file=out)
    return 2


COMMANDS = {
    "init": cmd_init,
    "info": cmd_info,
    "classes": cmd_classes,
    "extent": cmd_extent,
    "show": cmd_show,
    "set-schema": cmd_set_schema,
    "migrate": cmd_migrate,
    "export": cmd_export,
    "import": cmd_import,
    "compact": cmd_compact,
    "verify": cmd_verify,
}


def run_cli(argv, out=None, err=None) -> int:
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=err)
        return 1
    handler = logging.StreamHandler(err)
    handler.setFormatter(logging.Formatter("warning: %(message)s"))
    handler.setLevel(logging.WARNING)
    logger = logging.getLogger("pachyderm")
    logger.addHandler(handler)
    try:
        return COMMANDS[args.verb](args, out, err)
    except PachydermError as exc:
        print(f"error: {exc}", file=err)
        return 1
    finally:
        logger.removeHandler(handler)


def main(argv=None) -> int:
    return run_cli(sys.argv[1:] if argv is None else argv)
