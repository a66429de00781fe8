"""Command-line front end.

Subcommands:

    run       execute one scenario, write events.jsonl / metrics.json / figure
    mc        Monte Carlo batch, optionally sweeping follower range
    serve     paced run with the TCP/WebSocket control channel attached
    analyze   summarize an event log (text or JSON)
    validate  check a scenario or an event log without writing anything

Exit codes: 0 success, 1 configuration or validation error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import time
from datetime import datetime
from pathlib import Path

from . import engine
from .engine import ConfigError

log = logging.getLogger(__name__)


def _load_raw(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"scenario file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: scenario must be a JSON object")
    return raw


def _prepare_cfg(args) -> engine.ScenarioConfig:
    raw = _load_raw(args.scenario)
    engine.apply_overrides(raw, args.overrides)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    return engine.parse_scenario(raw, Path(args.scenario).parent)


def _out_dir(args) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path("out") / datetime.now().strftime("%Y%m%d-%H%M%S")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _counts_line(metrics: engine.RunMetrics) -> str:
    b = metrics.phases["baseline"]
    o = metrics.phases["optimized"]
    return f"baseline: {b.received}/{b.sent}  optimized: {o.received}/{o.sent}"


def _write_run_artifacts(out: Path, lines: list[str], metrics: engine.RunMetrics,
                         figures: bool) -> None:
    (out / "events.jsonl").write_text("\n".join(lines) + "\n")
    (out / "metrics.json").write_text(
        json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    if figures:
        from . import report

        events = [json.loads(line) for line in lines]
        report.save_figure(report.timeline_figure(events), out / "timeline.png")


def cmd_run(args) -> int:
    cfg = _prepare_cfg(args)
    lines, metrics = engine.run(cfg)
    out = _out_dir(args)
    _write_run_artifacts(out, lines, metrics, not args.no_figures)
    print(_counts_line(metrics))
    print(f"wrote {out}")
    return 0


def _parse_sweep(text: str) -> list[float]:
    key, _, values = text.partition("=")
    if key != "range":
        raise ConfigError(f"unsupported sweep key: {key!r} (only 'range')")
    try:
        ranges = [float(v) for v in values.split(",") if v]
    except ValueError as e:
        raise ConfigError(f"sweep values: {e}") from e
    if not ranges:
        raise ConfigError("sweep needs at least one value")
    return ranges


def cmd_mc(args) -> int:
    raw = _load_raw(args.scenario)
    engine.apply_overrides(raw, args.overrides)
    base_dir = Path(args.scenario).parent

    results: dict[float, dict] = {}
    t0 = time.perf_counter()
    if args.sweep:
        for r in _parse_sweep(args.sweep):
            variant = engine.set_follower_range(copy.deepcopy(raw), r)
            cfg = engine.parse_scenario(variant, base_dir)
            results[r] = engine.monte_carlo(cfg, args.runs, args.seed_base, args.workers)
    else:
        cfg = engine.parse_scenario(copy.deepcopy(raw), base_dir)
        leader = next(n for n in cfg.nodes if n.role == "leader")
        follower = next(n for n in cfg.nodes if n.role == "follower")
        r = ((follower.x - leader.x) ** 2 + (follower.y - leader.y) ** 2) ** 0.5
        results[r] = engine.monte_carlo(cfg, args.runs, args.seed_base, args.workers)
    elapsed = time.perf_counter() - t0

    out = _out_dir(args)
    rows = ["range_m,phase,min,q1,median,q3,max"]
    for r in sorted(results):
        for phase in ("baseline", "optimized"):
            s = results[r]["phases"][phase]["summary"]
            if s is None:
                continue
            rows.append(
                f"{r:g},{phase},{s['min']:.6f},{s['q1']:.6f},{s['median']:.6f},"
                f"{s['q3']:.6f},{s['max']:.6f}"
            )
    (out / "boxplot.csv").write_text("\n".join(rows) + "\n")
    summary = {
        "runs": args.runs,
        "elapsed_s": round(elapsed, 3),
        "ranges": {
            f"{r:g}": {
                "completed": res["completed"],
                "phases": {ph: res["phases"][ph]["summary"] for ph in res["phases"]},
            }
            for r, res in results.items()
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if not args.no_figures:
        from . import report

        report.save_figure(report.per_boxplot_figure(results), out / "boxplot.png")

    for r in sorted(results):
        res = results[r]
        parts = [f"range {r:g}:"]
        for phase in ("baseline", "optimized"):
            s = results[r]["phases"][phase]["summary"]
            parts.append(f"{phase} median {s['median']:.3f}" if s else f"{phase} n/a")
        parts.append(f"({res['completed']}/{args.runs} complete)")
        print(" ".join(parts))
    print(f"wrote {out} in {elapsed:.1f} s")
    return 0


def cmd_serve(args) -> int:
    cfg = _prepare_cfg(args)
    host, _, port_text = args.listen.rpartition(":")
    try:
        port = int(port_text)
    except ValueError:
        raise ConfigError(f"--listen expects host:port, got {args.listen!r}") from None

    from .control import SocketControl

    try:
        control = SocketControl(host or "127.0.0.1", port)
    except OSError as e:
        print(f"error: cannot listen on {args.listen}: {e}", file=sys.stderr)
        return 2
    pace = args.pace if args.pace is not None else cfg.pace_factor
    print(f"listening on {control.host}:{control.port} (pace x{pace:g})", flush=True)
    if args.on_ready is not None:  # test hook
        args.on_ready(control)
    try:
        lines, metrics = engine.paced_run(cfg, pace, control)
    finally:
        control.close()
    out = _out_dir(args)
    _write_run_artifacts(out, lines, metrics, not args.no_figures)
    print(_counts_line(metrics))
    print(f"wrote {out}")
    return 0


def cmd_analyze(args) -> int:
    p = Path(args.log)
    if not p.is_file():
        raise ConfigError(f"log file not found: {p}")
    rep = engine.analyze_timeline(p.read_text().splitlines())
    if args.format == "json":
        print(json.dumps(rep, indent=2, sort_keys=True))
        return 0
    mal = rep["malformed_lines"]
    print(f"events: {rep['events']}" + (f" ({len(mal)} malformed: {mal})" if mal else ""))
    for ph in ("baseline", "optimized"):
        s = rep["phases"][ph]
        per = f"{s['per']:.3f}" if s["per"] is not None else "n/a"
        span = f"{s['span_s']:.1f} s" if s["span_s"] is not None else "n/a"
        print(f"{ph:>9}: sent {s['sent']} received {s['received']} per {per} span {span}")
    d = rep["delays"]
    if d["count"]:
        print(f"   delays: n={d['count']} mean {d['mean_s']:.3f} s median {d['median_s']:.3f} s")
    coord = {k: v for k, v in rep["coordination"].items() if v is not None}
    if coord:
        print("  markers: " + "  ".join(f"{k}={v:.1f}" for k, v in coord.items()))
    return 0


def cmd_validate(args) -> int:
    if args.scenario:
        engine.load_scenario(args.scenario)
        print(f"scenario OK: {args.scenario}")
        return 0
    p = Path(args.log)
    if not p.is_file():
        raise ConfigError(f"log file not found: {p}")
    lines = p.read_text().splitlines()
    problems = engine.validate_log(lines)
    if problems:
        for prob in problems:
            print(prob)
        return 1
    print(f"log OK: {sum(1 for l in lines if l.strip())} events")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="auvnetsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a scenario key (dotted path)")
        p.add_argument("--out", default=None, help="output directory (default out/<timestamp>)")
        p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    p = sub.add_parser("run", help="execute one scenario")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("mc", help="Monte Carlo batch")
    common(p, seed=False)
    p.add_argument("--runs", type=int, required=True, help="runs per configuration")
    p.add_argument("--sweep", default=None, metavar="range=V1,V2,...",
                   help="sweep follower range over comma-separated values [m]")
    p.add_argument("--seed-base", type=int, default=None,
                   help="first seed (default: scenario seed)")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("serve", help="paced run with live control channel")
    common(p)
    p.add_argument("--pace", type=float, default=None,
                   help="sim seconds per wall second (default: scenario pace_factor)")
    p.add_argument("--listen", default="127.0.0.1:8765", metavar="HOST:PORT")
    p.set_defaults(func=cmd_serve, on_ready=None)

    p = sub.add_parser("analyze", help="summarize an event log")
    p.add_argument("--log", required=True, help="events.jsonl file")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate", help="check a scenario or log; writes nothing")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--scenario", default=None)
    group.add_argument("--log", default=None)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "mc" and args.runs < 1:
        print("error: --runs must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # anything else is a runtime failure
        import traceback

        traceback.print_exc()
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
