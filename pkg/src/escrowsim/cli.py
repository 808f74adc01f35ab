"""Command-line entry point: ``escrowsim validate|run|report``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

from . import __version__, forensics
from .agents import ConfigInvalid, Scenario, ScenarioConfig
from .ledger import GWEI
from .trace import MalformedTrace, Trace

log = logging.getLogger("escrowsim")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DEFAULT_FIAT_RATE = 175.59


@dataclass
class RunManifest:
    config_digest: str
    seed: int
    trace_path: str
    trace_digest: str
    started_sim_time: float
    finished_sim_time: float
    tool_version: str


def default_config_text() -> str:
    return resources.files("escrowsim").joinpath("data/default.json").read_text()


def _key_line(text: str, field: str) -> int | None:
    key = field.split(".")[0]
    m = re.search(rf'"{re.escape(key)}"\s*:', text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


def load_config(path: str | Path, notices: list[str] | None = None) -> ScenarioConfig:
    text = Path(path).read_text(encoding="utf-8")
    return ScenarioConfig.from_json(text, notices)


def _diagnostics(path: str, text: str) -> tuple[int, list[str], list[str]]:
    notices: list[str] = []
    try:
        ScenarioConfig.from_json(text, notices)
    except json.JSONDecodeError as exc:
        return EXIT_USAGE, [f"{path}:{exc.lineno}: ParseError: {exc.msg}"], notices
    except ConfigInvalid as exc:
        out = []
        for fieldname, msg in exc.problems:
            line = _key_line(text, fieldname)
            where = f"{path}:{line}" if line else path
            out.append(f"{where}: SchemaViolation: {fieldname}: {msg}")
        return EXIT_USAGE, out, notices
    return EXIT_OK, [], notices


def cmd_validate(args) -> int:
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"{args.config}: IoError: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
    code, problems, notices = _diagnostics(args.config, text)
    for n in notices:
        print(f"{args.config}: notice: {n}", file=sys.stderr)
    for p in problems:
        print(p, file=sys.stderr)
    if code == EXIT_OK:
        print(f"{args.config}: ok")
    return code


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_one(config: ScenarioConfig, out_dir: Path) -> RunManifest:
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = Scenario(config)
    trace = scenario.run()
    trace_path = out_dir / "trace.ndjson"
    _atomic_write(trace_path, trace.to_ndjson())
    manifest = RunManifest(
        config_digest=config.digest().hex(),
        seed=config.seed,
        trace_path=str(trace_path),
        trace_digest=trace.digest().hex(),
        started_sim_time=trace.records[0].sim_time,
        finished_sim_time=trace.records[-1].sim_time,
        tool_version=__version__,
    )
    _atomic_write(out_dir / "manifest.json", json.dumps(asdict(manifest), indent=2) + "\n")
    return manifest


def cmd_run(args) -> int:
    configs = []
    for path in args.config:
        notices: list[str] = []
        try:
            configs.append((Path(path), load_config(path, notices)))
        except OSError as exc:
            print(f"{path}: IoError: {exc.strerror}", file=sys.stderr)
            return EXIT_USAGE
        except (json.JSONDecodeError, ConfigInvalid) as exc:
            print(f"{path}: ConfigInvalid: {exc}", file=sys.stderr)
            return EXIT_USAGE
        for n in notices:
            log.info("%s: %s", path, n)
    out = Path(args.out)
    jobs = [(cfg, out if len(configs) == 1 else out / p.stem) for p, cfg in configs]
    try:
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                manifests = list(pool.map(run_one, *zip(*jobs)))
        else:
            manifests = [run_one(cfg, d) for cfg, d in jobs]
    except OSError as exc:
        print(f"IoError: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for m in manifests:
        print(f"{m.trace_path} {m.trace_digest}")
    return EXIT_OK


def _read_complete_trace(path: str) -> Trace:
    trace = Trace.read(path)
    if not trace.records or (trace.records[-1].actor, trace.records[-1].action) != ("scenario", "end"):
        raise MalformedTrace("trace has no end record (truncated?)", len(trace.records) + 1)
    return trace


def build_report(trace: Trace, gas_price: int, fiat_rate: float) -> dict:
    graph = forensics.build_graph(trace)
    cost = forensics.cost_report(graph, gas_price, fiat_rate)
    revenue = forensics.revenue_report(graph)
    findings = forensics.detect_milestones(graph)
    return {"cost": cost, "revenue": revenue, "findings": findings, "graph": graph}


def cmd_report(args) -> int:
    try:
        trace = _read_complete_trace(args.trace)
        rep = build_report(trace, args.gas_price, args.fiat_rate)
    except OSError as exc:
        print(f"{args.trace}: IoError: {exc.strerror}", file=sys.stderr)
        return EXIT_RUNTIME
    except MalformedTrace as exc:
        print(f"{args.trace}: MalformedTrace: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except forensics.NoDeployment as exc:
        print(f"{args.trace}: NoDeployment: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    cost, revenue, findings = rep["cost"], rep["revenue"], rep["findings"]
    summary = (f"rho={cost.rho} delta={cost.delta} mu={cost.mu} "
               f"total_gas={cost.total_gas} total_fiat={cost.total_fiat:.2f}")
    if args.format == "json":
        doc = {
            "cost": {**cost.as_dict(), "total_fiat_rounded": f"{cost.total_fiat:.2f}"},
            "revenue": revenue.as_dict(),
            "findings": [asdict(f) for f in findings],
        }
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
        if args.out:
            out = Path(args.out)
            try:
                out.mkdir(parents=True, exist_ok=True)
                _atomic_write(out / "report.json", text)
            except OSError as exc:
                print(f"IoError: {exc}", file=sys.stderr)
                return EXIT_RUNTIME
            print(summary)
        else:
            sys.stdout.write(text)
            print(summary, file=sys.stderr)
        return EXIT_OK
    out = Path(args.out) if args.out else Path(args.trace).parent
    try:
        out.mkdir(parents=True, exist_ok=True)
        _atomic_write(out / "cost.csv", forensics.cost_csv(cost))
        _atomic_write(out / "revenue.csv", forensics.revenue_csv(revenue))
        _atomic_write(out / "findings.csv", forensics.findings_csv(findings))
    except OSError as exc:
        print(f"IoError: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="escrowsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario config")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run one or more scenarios and write traces")
    p.add_argument("config", nargs="+")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for batch runs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="forensic reports from a trace file")
    p.add_argument("trace")
    p.add_argument("--gas-price", type=int, default=GWEI, help="wei per gas unit")
    p.add_argument("--fiat-rate", type=float, default=DEFAULT_FIAT_RATE,
                   help="fiat currency per ether")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", help="directory for report files")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("ESCROWSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
