"""Command-line interface.

Exit codes: 0 success, 1 chain verification failure, 2 usage or parse error.
``run`` writes four text artifacts into the output directory (chain.txt,
credits.txt, trace.txt, metrics.txt); ``credits``, ``roles`` and ``audit``
read them back. The default output directory comes from the GRIDLEDGER_OUT
environment variable, falling back to ./out.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import chain as chain_mod
from . import simnet

CHAIN_FILE = "chain.txt"
CREDITS_FILE = "credits.txt"
TRACE_FILE = "trace.txt"
METRICS_FILE = "metrics.txt"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridledger")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario and write report files")
    run_p.add_argument("scenario", help="scenario file path")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--out", default=os.environ.get("GRIDLEDGER_OUT", "out"))
    run_p.add_argument("--nodes", type=int, default=6, help="node count when the scenario declares none")
    run_p.add_argument("--recorders", type=int, default=simnet.SimConfig.r_max)
    run_p.add_argument("--supervisors", type=int, default=simnet.SimConfig.s_max)
    run_p.add_argument("--interval", type=int, default=simnet.SimConfig.block_interval_ticks)
    run_p.add_argument("--epoch", type=int, default=simnet.SimConfig.epoch_length_blocks)
    run_p.add_argument("--replicas", type=int, default=simnet.SimConfig.replication_factor)
    run_p.add_argument("--units", type=int, default=simnet.SimConfig.storage_unit_count)
    run_p.add_argument("--delay", type=int, default=simnet.SimConfig.message_delay_ticks)

    inspect_p = sub.add_parser("inspect", help="summarize an exported chain")
    inspect_p.add_argument("chain", help="chain export path")
    inspect_p.add_argument("--tick-seconds", type=int, default=1)

    verify_p = sub.add_parser("verify", help="verify an exported chain")
    verify_p.add_argument("chain", help="chain export path")

    trace_p = sub.add_parser("trace", help="list the lineage of a digest or key")
    trace_p.add_argument("chain", help="chain export path")
    trace_p.add_argument("--digest", help="payload digest, hex")
    trace_p.add_argument("--key", help="uploader public key, hex")

    for name in ("credits", "roles", "audit"):
        table_p = sub.add_parser(name, help=f"dump the {name} table from a run directory")
        table_p.add_argument("report_dir")
    return parser


def _read_file(path: str) -> str | None:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        print(f"error: cannot read {path}: {exc.strerror}", file=sys.stderr)
        return None


def _cmd_run(args) -> int:
    text = _read_file(args.scenario)
    if text is None:
        return 2
    try:
        scenario = simnet.parse_scenario(text)
    except simnet.ScenarioError as exc:
        print(f"error: {args.scenario}: {exc}", file=sys.stderr)
        return 2
    config = simnet.SimConfig(
        seed=args.seed,
        node_count=args.nodes,
        r_max=args.recorders,
        s_max=args.supervisors,
        block_interval_ticks=args.interval,
        epoch_length_blocks=args.epoch,
        replication_factor=args.replicas,
        storage_unit_count=args.units,
        message_delay_ticks=args.delay,
    )
    try:
        sim = simnet.new_sim(config, scenario)
    except simnet.ScenarioError as exc:
        print(f"error: {args.scenario}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if scenario.run_until is None:
        print(f"error: {args.scenario}: missing 'run until <tick>' directive", file=sys.stderr)
        return 2
    report = sim.run()
    os.makedirs(args.out, exist_ok=True)
    outputs = {
        CHAIN_FILE: report.chain_export_text(),
        CREDITS_FILE: report.credit_log_text(),
        TRACE_FILE: report.trace_text(),
        METRICS_FILE: report.metrics_text(),
    }
    for name, content in outputs.items():
        with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
            fh.write(content)
    print(
        f"run complete: {report.blocks_committed} blocks committed,"
        f" {report.records_committed} records, outputs in {args.out}"
    )
    return 0


def _load_chain(path: str) -> tuple[chain_mod.Chain | None, int]:
    """Returns (chain, exit_code); chain None when loading failed."""
    text = _read_file(path)
    if text is None:
        return None, 2
    try:
        return chain_mod.import_chain(text), 0
    except chain_mod.BlockDecodeError as exc:
        print(f"violation at block {exc.index}: undecodable ({exc})")
        return None, 1
    except chain_mod.ExportFormatError as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return None, 2


def _cmd_verify(args) -> int:
    chain, code = _load_chain(args.chain)
    if chain is None:
        return code
    violation = chain_mod.verify_chain(chain)
    if violation is None:
        print(f"ok: {len(chain)} blocks verified")
        return 0
    print(f"violation at block {violation.index}: {violation.reason}")
    return 1


def _cmd_inspect(args) -> int:
    chain, code = _load_chain(args.chain)
    if chain is None:
        return 2
    print("block\ttick\ttime\trecords\tmerkle_root\trecorder")
    for i, block in enumerate(chain.blocks):
        h = block.header
        seconds = h.timestamp_tick * args.tick_seconds
        minutes = f"{seconds // 60}m{seconds % 60:02d}s"
        print(
            f"{i}\t{h.timestamp_tick}\t{minutes}\t{len(block.records)}"
            f"\t{h.merkle_root[:8].hex()}\t{h.recorder_public_key[:8].hex()}"
        )
    return 0


def _cmd_trace(args) -> int:
    if bool(args.digest) == bool(args.key):
        print("error: exactly one of --digest or --key is required", file=sys.stderr)
        return 2
    selector = args.digest or args.key
    try:
        query = bytes.fromhex(selector)
    except ValueError:
        print("error: selector is not hex", file=sys.stderr)
        return 2
    chain, code = _load_chain(args.chain)
    if chain is None:
        return code
    try:
        rows = chain_mod.trace(chain, query)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not rows:
        print("no records")
        return 0
    print("block\trecord\ttick\tkind\tuploader\tdata_class")
    for bi, ri, record in rows:
        print(
            f"{bi}\t{ri}\t{record.metadata.created_tick}\t{record.metadata.kind.label}"
            f"\t{record.uploader_public_key[:8].hex()}\t{record.metadata.data_class}"
        )
    return 0


def _metrics_section(text: str, name: str) -> list[str] | None:
    lines = text.splitlines()
    try:
        start = lines.index(f"[{name}]") + 1
    except ValueError:
        return None
    out = []
    for line in lines[start:]:
        if line.startswith("["):
            break
        if line.strip():
            out.append(line)
    return out


def _cmd_credits(args) -> int:
    text = _read_file(os.path.join(args.report_dir, CREDITS_FILE))
    if text is None:
        return 2
    credits: dict[int, int] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        _, node_id, delta, _ = line.split("\t")
        credits[int(node_id)] = credits.get(int(node_id), 0) + int(delta)
    print("node_id\tcredit")
    for nid in sorted(credits):
        print(f"{nid}\t{credits[nid]}")
    return 0


def _cmd_roles(args) -> int:
    text = _read_file(os.path.join(args.report_dir, METRICS_FILE))
    if text is None:
        return 2
    rows = _metrics_section(text, "roles")
    if rows is None:
        print("error: metrics file has no [roles] section", file=sys.stderr)
        return 2
    print("node_id\trole\tcredit\tassessment")
    for row in rows:
        print(row)
    return 0


def _cmd_audit(args) -> int:
    text = _read_file(os.path.join(args.report_dir, METRICS_FILE))
    if text is None:
        return 2
    rows = _metrics_section(text, "datastore")
    if rows is None:
        print("error: metrics file has no [datastore] section", file=sys.stderr)
        return 2
    print("digest\texpected\tlive\tunits\tstatus")
    flagged = 0
    for row in rows:
        if row.endswith("under-replicated"):
            flagged += 1
        print(row)
    print(f"# {len(rows)} objects, {flagged} under-replicated")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "inspect": _cmd_inspect,
    "verify": _cmd_verify,
    "trace": _cmd_trace,
    "credits": _cmd_credits,
    "roles": _cmd_roles,
    "audit": _cmd_audit,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
