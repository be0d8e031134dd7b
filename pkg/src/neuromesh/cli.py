"""Command-line entry point.

Subcommands::

    neuromesh run --system SYS --network NET --steps N --out REPORT.json
                  [--csv SERIES.csv] [--raster RASTER.csv] [--workers N]
                  [--seed U64] [--trace-cap N] [--checkpoint-out F] [--resume F]
    neuromesh capacity SYS_A SYS_B
    neuromesh validate --system SYS [--network NET]
    neuromesh dump-tables --system SYS --network NET [--out FILE]

Exit status: 0 success, 1 invalid input or usage, 2 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from .config import SystemConfig, parse_system_config
from .errors import NeuromeshError
from .fabric import build_routing_tables, dump_tables
from .kernel import InvariantViolation, Simulation, capacity_ratio
from .network import NetworkDesc, parse_network
from .placement import place_and_build
from .report import dumps_stable, emit_report

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTERNAL = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2; usage errors are input errors here
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return value


def _nonneg(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"{text} must be >= 0")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="neuromesh", description="Many-core neuromorphic machine simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate a network and write reports")
    r.add_argument("--system", required=True, type=Path)
    r.add_argument("--network", required=True, type=Path)
    r.add_argument("--steps", required=True, type=_nonneg)
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--csv", type=Path)
    r.add_argument("--raster", type=Path)
    r.add_argument("--workers", type=_positive, default=1)
    r.add_argument("--seed", type=_u64, help="overrides the seed in the system config")
    r.add_argument("--trace-cap", type=_nonneg)
    r.add_argument("--checkpoint-out", type=Path, help="write a resumable snapshot after the run")
    r.add_argument("--resume", type=Path, help="continue from a snapshot written by --checkpoint-out")

    c = sub.add_parser("capacity", help="modeled capacity of SYS_B relative to SYS_A")
    c.add_argument("system_a", type=Path)
    c.add_argument("system_b", type=Path)

    v = sub.add_parser("validate", help="check config and network documents")
    v.add_argument("--system", required=True, type=Path)
    v.add_argument("--network", type=Path)

    d = sub.add_parser("dump-tables", help="print the routing tables built for a network")
    d.add_argument("--system", required=True, type=Path)
    d.add_argument("--network", required=True, type=Path)
    d.add_argument("--out", type=Path)
    return p


def _read(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise NeuromeshError(f"{path}: {exc.strerror or exc}") from None


def load_system(path: Path, seed: int | None = None) -> SystemConfig:
    try:
        sys_cfg = parse_system_config(_read(path), source=str(path))
    except NeuromeshError as exc:
        raise NeuromeshError(f"{path}: {exc}") from None
    return sys_cfg if seed is None else sys_cfg.with_seed(seed)


def load_network(path: Path, sys_cfg: SystemConfig) -> NetworkDesc:
    try:
        return parse_network(
            _read(path),
            source=str(path),
            membrane_format=sys_cfg.accel.membrane_format,
            weight_format=sys_cfg.accel.weight_format,
        )
    except NeuromeshError as exc:
        raise NeuromeshError(f"{path}: {exc}") from None


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cli_run(args: argparse.Namespace) -> int:
    sys_cfg = load_system(args.system, args.seed)
    net = load_network(args.network, sys_cfg)
    trace = args.raster is not None
    with Simulation(sys_cfg, net, workers=args.workers, trace=trace, trace_cap=args.trace_cap) as sim:
        if args.resume is not None:
            try:
                snap = json.loads(_read(args.resume))
                sim.restore(snap)
            except (ValueError, KeyError, TypeError) as exc:
                raise NeuromeshError(f"{args.resume}: cannot resume: {exc}") from None
            sim.trace = trace
        sim.run(args.steps)
        report = sim.report()
        emit_report(report, args.out, args.csv, args.raster)
        if args.checkpoint_out is not None:
            _atomic_write(args.checkpoint_out, dumps_stable(sim.snapshot()))
    return EXIT_OK


def cli_capacity(args: argparse.Namespace) -> int:
    a = load_system(args.system_a)
    b = load_system(args.system_b)
    rep = capacity_ratio(a, b)
    sys.stdout.write(dumps_stable(rep.to_dict()))
    sys.stdout.write(rep.summary() + "\n")
    return EXIT_OK


def cli_validate(args: argparse.Namespace) -> int:
    sys_cfg = load_system(args.system)
    msg = f"{args.system}: ok ({sys_cfg.n_cores} cores)"
    if args.network is not None:
        net = load_network(args.network, sys_cfg)
        build = place_and_build(net, sys_cfg)
        tables = build_routing_tables(build)
        msg += (
            f"\n{args.network}: ok ({net.n_neurons} neurons, {build.edges_src.size} synapses, "
            f"{sum(len(t) for t in tables.values())} routing entries)"
        )
    print(msg)
    return EXIT_OK


def cli_dump_tables(args: argparse.Namespace) -> int:
    sys_cfg = load_system(args.system)
    net = load_network(args.network, sys_cfg)
    text = dump_tables(build_routing_tables(place_and_build(net, sys_cfg)))
    if args.out is not None:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "run": cli_run,
    "capacity": cli_capacity,
    "validate": cli_validate,
    "dump-tables": cli_dump_tables,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (NeuromeshError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InvariantViolation, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
