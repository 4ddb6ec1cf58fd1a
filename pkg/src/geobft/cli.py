"""Command-line front end.

Verbs: ``run``, ``compare``, ``sweep``, ``verify-ledger`` and ``trace``.
Output is one ``key=value`` record per line. Exit codes: 0 success,
1 invariant breach or rejected ledger, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .codec import DecodeError
from .execution import Ledger, verify_ledger
from .harness import (
    AXES,
    InvariantBreach,
    check_invariants,
    compare,
    format_table,
    metrics_from_record,
    run_experiment,
    run_once,
    sweep,
)
from .sim.engine import Simulator
from .sim.scenario import MODES, Scenario, ScenarioError, load_scenario

EXIT_OK, EXIT_BREACH, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep argparse's exit code 2, add our prefix
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"error: {message}\n")


def _scenario(args) -> Scenario:
    sc = load_scenario(args.scenario)
    if getattr(args, "mode", None):
        sc = sc.with_mode(args.mode)
    if getattr(args, "jitter", None) is not None:
        sc = sc.with_jitter(args.jitter)
    if getattr(args, "seed", None) is not None:
        sc = sc.with_seed(args.seed)
    return sc


def _emit(lines, out: str | None) -> None:
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out:
        Path(out).write_text(text)


def _dump_breach(exc: InvariantBreach, out: str | None) -> str:
    path = Path(out or ".").with_suffix(".trace") if out else Path("geobft-breach.trace")
    lines = [f"problem: {p}" for p in exc.problems]
    if exc.result is not None and exc.result.trace:
        lines += exc.result.trace
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def cmd_run(args) -> int:
    sc = _scenario(args)
    try:
        runs, avg = run_experiment(sc, args.repetitions, args.seed)
    except InvariantBreach as exc:
        # Re-run the failing seed with tracing for the diagnostic file.
        seed = exc.result.seed if exc.result is not None else sc.config.seed
        traced = Simulator(sc, seed, trace=True).run()
        path = _dump_breach(InvariantBreach(exc.problems, traced), args.out)
        print(f"record=breach problems={len(exc.problems)} trace={path}")
        for p in exc.problems[:10]:
            print(f"# {p}", file=sys.stderr)
        return EXIT_BREACH
    lines = [m.record("run") for m in runs] + [avg.record("average")]
    _emit(lines, args.out)
    if args.export_ledger:
        _, result = run_once(sc, runs[0].seed, check=False)
        first = min(result.correct)
        Path(args.export_ledger).write_text(result.correct[first].executor.ledger.export())
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.records:
        if len(args.records) != 2:
            print("error: compare takes exactly two metrics files", file=sys.stderr)
            return EXIT_USAGE
        ms = []
        for path in args.records:
            lines = [l for l in Path(path).read_text().splitlines() if "record=average" in l]
            if not lines:
                print(f"error: {path} has no average record", file=sys.stderr)
                return EXIT_USAGE
            ms.append(metrics_from_record(lines[-1]))
        if ms[0].scenario != ms[1].scenario:
            print("error: records come from different scenarios", file=sys.stderr)
            return EXIT_USAGE
        _emit([compare(ms[0], ms[1], z=args.clusters).record()], args.out)
        return EXIT_OK
    if not args.scenario:
        print("error: compare needs --scenario or two metrics files", file=sys.stderr)
        return EXIT_USAGE
    sc = _scenario(args)
    try:
        _, geo = run_experiment(sc.with_mode("geobft"), args.repetitions, args.seed)
        _, flat = run_experiment(sc.with_mode("flat-pbft"), args.repetitions, args.seed)
    except InvariantBreach as exc:
        print(f"record=breach problems={len(exc.problems)}")
        return EXIT_BREACH
    report = compare(geo, flat, sc.comparable_key(), sc.comparable_key(), sc.config.z)
    _emit([geo.record("geobft"), flat.record("flat-pbft"), report.record()], args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        print(f"error: bad --values {args.values!r}", file=sys.stderr)
        return EXIT_USAGE
    modes = [args.mode] if args.mode else ["geobft", "flat-pbft"]
    try:
        rows = sweep(sc, args.axis, values, modes, args.repetitions, args.seed)
    except InvariantBreach as exc:
        print(f"record=breach problems={len(exc.problems)}")
        return EXIT_BREACH
    lines = [m.record(f"sweep {args.axis}={v}") for v, _, m in rows]
    lines.append(format_table(rows, args.axis))
    _emit(lines, args.out)
    return EXIT_OK


def cmd_verify_ledger(args) -> int:
    sc = _scenario(args)
    try:
        ledger = Ledger.load(Path(args.ledger).read_text())
    except (OSError, DecodeError) as exc:
        print(f"record=verify-ledger accepted=False height=- reason=unreadable:{exc}")
        return EXIT_BREACH
    sim = Simulator(sc)  # rebuilds the scenario's key material
    verdict = verify_ledger(ledger, sim.config, sim.keyring)
    height = verdict.height if verdict.height is not None else "-"
    reason = verdict.reason.value.replace(" ", "_") if verdict.reason else "-"
    _emit([f"record=verify-ledger accepted={verdict.accepted} blocks={len(ledger)} height={height} reason={reason}"], args.out)
    return EXIT_OK if verdict else EXIT_BREACH


def cmd_trace(args) -> int:
    sc = _scenario(args)
    result = Simulator(sc, trace=True).run()
    lines = list(result.trace or [])
    lines.append(f"record=trace events={result.events} digest={result.trace_digest} completed={result.completed}")
    _emit(lines, args.out)
    return EXIT_OK if not check_invariants(result) else EXIT_BREACH


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geobft", description="GeoBFT simulation harness")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required, help="scenario INI file")
        sp.add_argument("--seed", type=int, default=None, help="base seed (u64)")
        sp.add_argument("--mode", choices=MODES, default=None)
        sp.add_argument("--jitter", type=float, default=None, help="jitter percent of inter-region delay")
        sp.add_argument("--out", default=None, help="also write output here")

    sp = sub.add_parser("run", help="run a scenario")
    common(sp)
    sp.add_argument("--repetitions", type=int, default=1)
    sp.add_argument("--export-ledger", default=None, help="write the first correct replica's ledger")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="GeoBFT versus flat PBFT")
    common(sp, scenario_required=False)
    sp.add_argument("--repetitions", type=int, default=1)
    sp.add_argument("--clusters", type=int, default=1, help="z, when comparing metrics files")
    sp.add_argument("records", nargs="*", help="two metrics files from `run --out`")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("sweep", help="vary one parameter")
    common(sp)
    sp.add_argument("--axis", choices=AXES, required=True)
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--repetitions", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("verify-ledger", help="verify an exported ledger")
    common(sp)
    sp.add_argument("--ledger", required=True)
    sp.set_defaults(func=cmd_verify_ledger)

    sp = sub.add_parser("trace", help="dump the event trace of one seed")
    common(sp)
    sp.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "repetitions", 1) < 1:
        print("error: --repetitions must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
