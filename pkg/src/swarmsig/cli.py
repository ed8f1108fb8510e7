"""Command-line surface: key operations, simulation, benchmarks, reports.

Exit codes: 0 success/accept, 1 verification reject, 2 usage error or
malformed input.  Absolute benchmark timings depend on the host; only
trends and ratios across sweep points are meaningful output.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import aggsig, bench, ibs, report, sim
from .ibs import ExtractionError, PROFILES, WireFormatError

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_USAGE = 2


def _rng(args) -> np.random.Generator:
    return np.random.default_rng(args.seed)


def _params(args):
    return PROFILES[args.profile]


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise WireFormatError(f"cannot read {path}: {exc}") from exc


def _write(path: str, data: bytes) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)


def cmd_keygen(args) -> int:
    mpk, msk = ibs.setup(_params(args), _rng(args))
    out = Path(args.out or ".")
    _write(out / "mpk.bin", mpk.serialize())
    _write(out / "msk.bin", msk.serialize())
    print(f"wrote {out / 'mpk.bin'} and {out / 'msk.bin'}")
    return EXIT_OK


def cmd_extract(args) -> int:
    params = _params(args)
    msk = ibs.MasterSecretKey.deserialize(params, _read(args.msk))
    usk = ibs.extract(msk, args.id.encode())
    out = args.out or "usk.bin"
    _write(out, usk.serialize(params))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sign(args) -> int:
    params = _params(args)
    mpk = ibs.MasterPublicKey.deserialize(params, _read(args.mpk))
    usk = ibs.UserSecretKey.deserialize(params, _read(args.usk))
    sig = ibs.sign(mpk, usk, _read(args.msg), _rng(args))
    out = args.out or "sig.bin"
    _write(out, sig.serialize(params))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    params = _params(args)
    mpk = ibs.MasterPublicKey.deserialize(params, _read(args.mpk))
    sig = ibs.IbsSignature.deserialize(params, _read(args.sig))
    res = ibs.verify(mpk, args.id.encode(), _read(args.msg), sig)
    print("accept" if res else f"reject ({res.reason})")
    return EXIT_OK if res else EXIT_REJECT


def _parse_members(params, specs):
    batch = []
    for spec in specs:
        parts = spec.split(":", 2)
        if len(parts) != 3:
            raise WireFormatError(f"member spec must be ID:MSGFILE:SIGFILE, got {spec!r}")
        signer_id, msg_path, sig_path = parts
        sig = ibs.IbsSignature.deserialize(params, _read(sig_path))
        batch.append(aggsig.SignedMessage(signer_id.encode(), _read(msg_path), sig))
    return batch


def cmd_agg_sign(args) -> int:
    params = _params(args)
    mpk = ibs.MasterPublicKey.deserialize(params, _read(args.mpk))
    agg_usk = ibs.UserSecretKey.deserialize(params, _read(args.agg_usk))
    batch = _parse_members(params, args.member)
    for sm in batch:
        if not aggsig.ls_ver(mpk, sm.signer_id, sm.msg, sm.sig):
            print(f"member signature invalid: {sm.signer_id.decode()}",
                  file=sys.stderr)
            return EXIT_REJECT
    agg = aggsig.la_sign(mpk, agg_usk, batch, _rng(args))
    out = args.out or "agg.bin"
    _write(out, ibs.MAGIC + params.header() + aggsig.serialize_aggregate(agg))
    print(f"wrote {out} ({len(batch)} members)")
    return EXIT_OK


def cmd_agg_verify(args) -> int:
    params = _params(args)
    mpk = ibs.MasterPublicKey.deserialize(params, _read(args.mpk))
    data = _read(args.agg)
    if data[:4] != ibs.MAGIC or data[4:20] != params.header():
        raise WireFormatError("bad aggregate header")
    agg = aggsig.deserialize_aggregate(params, data[20:])
    res = aggsig.la_ver(mpk, agg, deep=args.deep)
    print("accept" if res else f"reject ({res.reason})")
    return EXIT_OK if res else EXIT_REJECT


def _load_config(spec: str) -> sim.SimConfig:
    if spec == "fullscale":
        text = (resources.files("swarmsig") / "presets" / "fullscale.cfg").read_text()
    else:
        try:
            text = Path(spec).read_text()
        except OSError as exc:
            raise sim.ConfigError([f"cannot read config {spec}: {exc}"]) from exc
    return sim.parse_config(text)


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    script = None
    if args.faults:
        script = sim.FaultScript.parse(Path(args.faults).read_text())
    result = sim.run(cfg, script)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_text(result.trace_lines())
    result.metrics.write_csv(out / "metrics.csv")
    print(result.summary())
    return EXIT_OK


def cmd_bench(args) -> int:
    plan = bench.BenchPlan(
        sweep=args.sweep,
        values=[int(v) for v in args.values] if args.values else [],
        reps=args.reps,
        profile=args.profile,
        seed=args.seed if args.seed is not None else 1,
    )
    records = bench.run_plan(plan)
    out = args.out or f"bench_{args.sweep}.csv"
    bench.write_csv(records, out)
    print(f"wrote {out} ({len(records)} rows)")
    return EXIT_OK


def cmd_report(args) -> int:
    records = report.load_records(args.csv)
    print(report.comparison_table(records))
    fig_dir = args.fig_dir or (Path(args.csv[0]).parent if args.csv else ".")
    if not args.no_figures:
        for path in report.render_figures(records, fig_dir):
            print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    # the global flags are accepted both before and after the subcommand;
    # SUPPRESS keeps subparser defaults from clobbering pre-subcommand values
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--profile", choices=sorted(PROFILES),
                        default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="output path or directory")

    parser = argparse.ArgumentParser(
        prog="swarmsig",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("keygen", help="generate a master key pair", parents=[common])

    p = sub.add_parser("extract", help="issue a user secret key for an identity",
                       parents=[common])
    p.add_argument("--msk", required=True)
    p.add_argument("--id", required=True)

    p = sub.add_parser("sign", help="sign a message file", parents=[common])
    p.add_argument("--mpk", required=True)
    p.add_argument("--usk", required=True)
    p.add_argument("--msg", required=True)

    p = sub.add_parser("verify", help="verify a signature file", parents=[common])
    p.add_argument("--mpk", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--msg", required=True)
    p.add_argument("--sig", required=True)

    p = sub.add_parser("agg-sign", help="aggregate member signatures",
                       parents=[common])
    p.add_argument("--mpk", required=True)
    p.add_argument("--agg-usk", required=True, dest="agg_usk")
    p.add_argument("--member", action="append", required=True,
                   metavar="ID:MSGFILE:SIGFILE")

    p = sub.add_parser("agg-verify", help="verify an aggregate file",
                       parents=[common])
    p.add_argument("--mpk", required=True)
    p.add_argument("--agg", required=True)
    p.add_argument("--deep", action="store_true",
                   help="also re-verify every member signature")

    p = sub.add_parser("simulate", help="run the device->fog->cloud pipeline",
                       parents=[common])
    p.add_argument("--config", required=True,
                   help="config file path, or 'fullscale' for the packaged preset")
    p.add_argument("--faults", default=None, help="fault script file")

    p = sub.add_parser("bench", help="run a benchmark sweep to CSV",
                       parents=[common])
    p.add_argument("--sweep", choices=sorted(bench.PRESET_VALUES), required=True)
    p.add_argument("--values", nargs="*", default=None,
                   help="override the preset sweep points")
    p.add_argument("--reps", type=int, default=bench.MIN_REPS)

    p = sub.add_parser("report", help="summarize bench CSVs and render figures",
                       parents=[common])
    p.add_argument("csv", nargs="+")
    p.add_argument("--fig-dir", default=None, dest="fig_dir")
    p.add_argument("--no-figures", action="store_true")

    return parser


COMMANDS = {
    "keygen": cmd_keygen,
    "extract": cmd_extract,
    "sign": cmd_sign,
    "verify": cmd_verify,
    "agg-sign": cmd_agg_sign,
    "agg-verify": cmd_agg_verify,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, fallback in (("profile", "desk"), ("seed", None), ("out", None)):
        if not hasattr(args, name):
            setattr(args, name, fallback)
    try:
        return COMMANDS[args.command](args)
    except (WireFormatError, ExtractionError, report.ReportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except sim.ConfigError as exc:
        print("bad config:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
