"""Command-line entry points.

Services (gateway, agent, hub) run as independently addressable processes
speaking the JSON-lines protocol over TCP. The harness command drives the
in-process virtual-clock simulation and its verification tools.

Exit codes: 0 pass, 1 verification failure, 2 configuration error,
3 component crash.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import harness
from .agent import AgentConfig, BackoffPolicy, run_agent_service
from .gateway import FaultPlan, GatewayConfig, SensorModel, run_gateway_service
from .hub import run_hub_service

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_CRASH = 3

ENV_PREFIX = "EDGEPARK_"

_DURATION_UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400}


def _setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def parse_duration_ms(text: str) -> int:
    """'90', '90s', '15m', '2h', or '7d' to milliseconds."""
    text = text.strip().lower()
    unit = 1
    if text and text[-1] in _DURATION_UNITS:
        unit = _DURATION_UNITS[text[-1]]
        text = text[:-1]
    try:
        value = float(text)
    except ValueError as exc:
        raise ValueError(f"bad duration {text!r}") from exc
    return int(value * unit * 1000)


def _parse_faults(specs: list[str]) -> FaultPlan:
    disconnects: list[tuple[int, int]] = []
    duplicate_updates = False
    delay_ms = 0
    mute_after: int | None = None
    for spec in specs:
        kind, _, rest = spec.partition(":")
        if kind == "disconnect":
            at_sec, _, dur_sec = rest.partition(":")
            disconnects.append((int(at_sec) * 1000, int(dur_sec) * 1000))
        elif kind == "duplicate-updates":
            duplicate_updates = True
        elif kind == "delay":
            delay_ms = int(rest)
        elif kind == "mute-pongs-after":
            mute_after = int(rest)
        else:
            raise ValueError(f"unknown fault {spec!r}")
    return FaultPlan(
        disconnects=tuple(disconnects),
        duplicate_updates=duplicate_updates,
        delay_ms=delay_ms,
        mute_pongs_after=mute_after,
    )


# ---------------------------------------------------------------------------
# gateway


def main_gateway(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="edgepark-gateway",
        description="Simulated parking-sensor gateway: snapshots, updates, pong echoes.",
    )
    parser.add_argument("--listen", default="127.0.0.1:9610", help="host:port to bind")
    parser.add_argument("--bays", type=int, default=22)
    parser.add_argument("--lot-id", default="LOT-A")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--mean-occupied-min", type=float, default=450.0)
    parser.add_argument("--mean-free-min", type=float, default=990.0)
    parser.add_argument("--duration", default="1d", help="e.g. 90s, 15m, 2h, 7d")
    parser.add_argument("--time-warp", type=float, default=1.0,
                        help="simulated seconds per real second")
    parser.add_argument("--inject", action="append", default=[], metavar="FAULT",
                        help="disconnect:<at_sec>:<dur_sec> | duplicate-updates | "
                             "delay:<ms> | mute-pongs-after:<seq>")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        config = GatewayConfig(
            listen_address=args.listen,
            lot_id=args.lot_id,
            bay_count=args.bays,
            model=SensorModel(args.mean_occupied_min, args.mean_free_min, args.seed),
            time_warp=args.time_warp,
            faults=_parse_faults(args.inject),
        )
        duration_ms = parse_duration_ms(args.duration)
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_gateway_service(config, duration_ms)
    except OSError as exc:
        print(f"gateway startup failed: {exc}", file=sys.stderr)
        return EXIT_CRASH
    return EXIT_OK


# ---------------------------------------------------------------------------
# agent


def _env_default(env: dict[str, str], name: str, fallback: str | None) -> str | None:
    return env.get(ENV_PREFIX + name, fallback)


def main_agent(argv: list[str] | None = None, env: dict[str, str] | None = None) -> int:
    env = dict(os.environ) if env is None else env
    parser = argparse.ArgumentParser(
        prog="edgepark-agent",
        description="Edge aggregation agent: logs gateway events, rolls up occupancy "
                    "to CSV, uploads to the cloud hub.",
    )
    parser.add_argument("--gateway", default=_env_default(env, "GATEWAY", "127.0.0.1:9610"))
    parser.add_argument("--cloud", default=_env_default(env, "CLOUD", "127.0.0.1:9611"))
    parser.add_argument("--poll-interval-sec", type=int,
                        default=int(_env_default(env, "POLL_INTERVAL_SEC", "60")))
    parser.add_argument("--rollup-period-sec", type=int,
                        default=int(_env_default(env, "ROLLUP_PERIOD_SEC", "86400")))
    parser.add_argument("--log", default=_env_default(env, "LOG", "agent-events.log"))
    parser.add_argument("--csv-dir", default=_env_default(env, "CSV_DIR", "rollups"))
    parser.add_argument("--clock", choices=["real", "virtual"],
                        default=_env_default(env, "CLOCK", "real"))
    parser.add_argument("--time-warp", type=float,
                        default=float(_env_default(env, "TIME_WARP", "1.0")))
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    if args.clock == "virtual":
        print(
            "configuration error: the virtual clock is driven by the simulation "
            "harness; use `edgepark run-sim`, or run with --clock real "
            "[--time-warp N] as a standalone process",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    try:
        config = AgentConfig(
            gateway_address=args.gateway,
            cloud_address=args.cloud,
            log_path=Path(args.log),
            csv_dir=Path(args.csv_dir),
            poll_interval_sec=args.poll_interval_sec,
            rollup_period_sec=args.rollup_period_sec,
            clock_mode=args.clock,
            reconnect_backoff=BackoffPolicy(),
        )
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_agent_service(config, warp=args.time_warp)
    except OSError as exc:
        print(f"agent crashed: {exc}", file=sys.stderr)
        return EXIT_CRASH
    return EXIT_OK


# ---------------------------------------------------------------------------
# hub


def main_hub(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="edgepark-hub",
        description="Cloud hub: stores uploaded roll-ups exactly once, serves reports.",
    )
    parser.add_argument("--listen", default="127.0.0.1:9611")
    parser.add_argument("--store-dir", default="hub-store")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        run_hub_service(args.listen, args.store_dir)
    except OSError as exc:
        print(f"hub startup failed: {exc}", file=sys.stderr)
        return EXIT_CRASH
    return EXIT_OK


# ---------------------------------------------------------------------------
# harness


def main_harness(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="edgepark",
        description="Deterministic smart-parking simulation harness.",
    )
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run-sim", help="run a scenario end to end under a virtual clock")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--out", required=True)

    p_replay = sub.add_parser("replay", help="regenerate CSVs from an event log")
    p_replay.add_argument("--log", required=True)
    p_replay.add_argument("--window-sec", type=int, required=True)
    p_replay.add_argument("--out", required=True)
    p_replay.add_argument("--epoch-ms", type=int, default=None)

    p_verify = sub.add_parser("verify", help="diff a run's artifacts against the oracle")
    p_verify.add_argument("--run", required=True)

    p_traffic = sub.add_parser("traffic-report", help="print the traffic ledger")
    p_traffic.add_argument("--run", required=True)

    p_export = sub.add_parser("export-report", help="emit per-day and per-bay tables")
    p_export.add_argument("--run", required=True)
    p_export.add_argument("--format", choices=["csv", "markdown"], required=True)

    args = parser.parse_args(argv)
    _setup_logging(args.verbose)

    if args.command == "run-sim":
        try:
            scenario = harness.parse_scenario(args.scenario)
        except harness.ScenarioError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        try:
            result = harness.run_sim(scenario, args.out)
        except harness.ScenarioError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except Exception as exc:  # component crash
            log.exception("run-sim failed")
            print(f"component crash: {exc}", file=sys.stderr)
            return EXIT_CRASH
        print(result.summary_path.read_text(encoding="utf-8"))
        print(f"run artifacts in {result.out_dir}")
        return EXIT_OK

    if args.command == "replay":
        try:
            result = harness.replay_log(
                args.log, args.window_sec, args.out, epoch_ms=args.epoch_ms
            )
        except (ValueError, OSError) as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(
            f"replayed {len(result.windows)} window(s), "
            f"{result.skipped_lines} torn/undecodable line(s) skipped"
        )
        for path in result.csv_paths:
            print(path)
        return EXIT_OK

    if args.command == "verify":
        report = harness.verify_run(args.run)
        print(report.render(), end="")
        return EXIT_OK if report.ok else EXIT_VERIFY_FAILED

    if args.command == "traffic-report":
        try:
            ledger = harness.load_ledger(args.run)
        except (OSError, ValueError, KeyError) as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        ratio = ledger.reduction_ratio
        print(f"rawForwardBytes   {ledger.raw_forward_bytes}")
        print(f"aggregatedBytes   {ledger.aggregated_bytes}")
        print(f"eventCount        {ledger.event_count}")
        print(f"envelopeSends     {ledger.envelope_sends}")
        print("reductionRatio    " + (f"{ratio:.6f}" if ratio is not None else "undefined"))
        return EXIT_OK

    if args.command == "export-report":
        try:
            paths = harness.export_report(args.run, args.format)
        except (OSError, ValueError) as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        for path in paths:
            print(path)
        return EXIT_OK

    return EXIT_CONFIG  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main_harness())
