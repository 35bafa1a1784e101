"""Command line entry point.

Exit codes: 0 success, 1 input error, 2 invariant violation during the run.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import NotUnitaryError
from .harness import (
    SCHEMA_VERSION,
    ConfigError,
    ExperimentConfig,
    InvariantViolation,
    StatsReport,
    _clean,
    audit_requirements,
    load_database,
    run_experiment,
)
from .nogo import (
    CommitmentScheme,
    NotConcealingError,
    OTInstance,
    bell_scheme,
    concealing_gap,
    delayed_choice_attack,
    onesided_via_spqpq,
    oot_as_1s2pc,
    spqpq_as_1s2pc,
)
from .protocol import DatabaseError

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2

RUN_DEFAULTS = {"db": "builtin:appendix", "strategy": "appendix-attack", "j": "all",
                "scenario": "random", "trials": 1000, "seed": 0, "mode": "exact",
                "workers": 1, "out": None}


def _dump(doc: dict, out: str | None):
    text = json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _merged(args, defaults: dict) -> dict:
    opts = dict(defaults)
    if getattr(args, "config", None):
        file_opts = json.loads(Path(args.config).read_text())
        unknown = set(file_opts) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        opts.update(file_opts)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return opts


def cmd_run_qpq(args) -> int:
    opts = _merged(args, RUN_DEFAULTS)
    config = ExperimentConfig(database=opts["db"], strategy=opts["strategy"], j=opts["j"],
                              scenario=opts["scenario"], trials=opts["trials"],
                              seed=opts["seed"], mode=opts["mode"])
    report = run_experiment(config, workers=int(opts["workers"]))
    _dump(report.to_json(), opts["out"])
    return EXIT_OK


def _load_scheme(source: str) -> CommitmentScheme:
    if source == "builtin:bell":
        return bell_scheme()
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"scheme {source!r} is neither a builtin nor a file")
    return CommitmentScheme.from_json(json.loads(path.read_text()))


def cmd_qbc_attack(args) -> int:
    scheme = _load_scheme(args.scheme)
    doc = {"schema_version": SCHEMA_VERSION, "scheme": args.scheme,
           "commit": args.commit, "open": args.open,
           "concealing_gap": concealing_gap(scheme)}
    try:
        u, fid = delayed_choice_attack(scheme, args.commit, args.open, args.eps)
    except NotConcealingError as exc:
        doc.update(status="not-concealing", eps_eq=exc.eps)
    else:
        doc.update(status="converted", opening_fidelity=fid,
                   unitary_registers=list(u.target_registers),
                   unitary=[[[float(x.real), float(x.imag)] for x in row] for row in u.matrix])
    _dump(doc, args.out)
    return EXIT_OK


def cmd_reduce(args) -> int:
    if args.oot is not None:
        m0, m1, k = args.oot
        f, value = oot_as_1s2pc(OTInstance(m0, m1, k), args.alphabet)
        _dump({"schema_version": SCHEMA_VERSION, "m0": m0, "m1": m1, "k": k,
               "output": value, "table_size": len(f.table)}, args.out)
        return EXIT_OK
    if not args.check_roundtrip or not args.db:
        raise ConfigError("reduce needs --oot M0 M1 K or --check-roundtrip --db FILE")
    db = load_database(args.db)
    f = spqpq_as_1s2pc(db)
    back = onesided_via_spqpq(f)
    ok = back == db
    _dump({"schema_version": SCHEMA_VERSION, "roundtrip_ok": ok,
           "function": f.to_json(), "database": db.to_json(),
           "reconstructed": back.to_json()}, args.out)
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_audit(args) -> int:
    report = StatsReport.from_json(json.loads(Path(args.report).read_text()))
    _dump({"schema_version": SCHEMA_VERSION, "list": args.list,
           "items": audit_requirements(report, args.list)}, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpqlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run-qpq", help="simulate QPQ rounds against a Bob strategy")
    run.add_argument("--config", help="JSON file with defaults for these flags")
    run.add_argument("--db", help="database file, builtin:appendix or builtin:appendix-deterministic")
    run.add_argument("--strategy", choices=["honest", "intercept", "appendix-attack"])
    run.add_argument("--j", help="query index or 'all'")
    run.add_argument("--scenario", choices=["a", "b", "random"])
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--mode", choices=["sampled", "exact", "exact-born"])
    run.add_argument("--workers", type=int, help="threads for sampled trials")
    run.add_argument("--out")
    run.set_defaults(func=cmd_run_qpq)

    qbc = sub.add_parser("qbc-attack", help="delayed-choice attack on a commitment scheme")
    qbc.add_argument("--scheme", default="builtin:bell")
    qbc.add_argument("--commit", type=int, choices=[0, 1], default=0)
    qbc.add_argument("--open", type=int, choices=[0, 1], default=1)
    qbc.add_argument("--eps", type=float, default=1e-8)
    qbc.add_argument("--out")
    qbc.set_defaults(func=cmd_qbc_attack)

    red = sub.add_parser("reduce", help="SpQPQ / 1S2PC / OT reductions")
    red.add_argument("--check-roundtrip", action="store_true")
    red.add_argument("--db")
    red.add_argument("--oot", nargs=3, type=int, metavar=("M0", "M1", "K"))
    red.add_argument("--alphabet", type=int)
    red.add_argument("--out")
    red.set_defaults(func=cmd_reduce)

    aud = sub.add_parser("audit", help="audit an exact report against a requirement list")
    aud.add_argument("--report", required=True)
    aud.add_argument("--list", choices=["pqpq", "spqpq"], required=True)
    aud.add_argument("--out")
    aud.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvariantViolation, NotUnitaryError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, DatabaseError, ValueError, KeyError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
