"""Operator command line: spawn simulated worlds and run the full workflow.

Each invocation builds a virtual environment from an environment file (see
docs/ENVFILE.md), performs one action against it, and exits.  All behavior is
a deterministic function of the file plus --seed.

Exit codes: 0 ok, 2 usage, 3 device/link error, 4 integrity error.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from pathlib import Path

import numpy as np

from ringkit import dsp, hostkit, proto
from ringkit.ringsim import sensors
from ringkit.hostkit import CrcMismatch, HostError
from ringkit.proto import Mode, ProtocolError
from ringkit.ringsim import Scenario, VirtualRing, load_scenario
from ringkit.ringsim.ring import RingError
from ringkit.ringsim.scenario import ScenarioError
from ringkit.transport import Environment, LinkParams, TransportError

US = 1_000_000

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DEVICE = 3
EXIT_INTEGRITY = 4


# ---------------------------------------------------------------- env files

def load_environment(path: str | Path, *, seed_override: int | None = None) -> Environment:
    """Build a world from an environment file; missing file means empty world."""
    cp = configparser.ConfigParser()
    if path:
        read = cp.read(str(path))
        if not read:
            raise FileNotFoundError(path)
    seed = seed_override if seed_override is not None else cp.getint("env", "seed", fallback=0)
    params = LinkParams.from_section(cp["link"]) if cp.has_section("link") else None
    env = Environment(seed=seed, params=params)
    prelog_until = 0
    base = Path(path).parent if path else Path(".")
    for section in cp.sections():
        if not section.startswith("ring"):
            continue
        sec = cp[section]
        name = section.split(None, 1)[1] if " " in section else section
        if "scenario" in sec:
            scn = load_scenario(base / sec["scenario"])
        else:
            scn = Scenario.constant(name, seed=seed + proto.crc32(name.encode()) % 1000,
                                    hr_bpm=sec.getfloat("hr_bpm", 75.0))
        battery_pct = sec.getfloat("battery_pct", 100.0)
        ring = VirtualRing(
            name, scn,
            mac=sec.get("mac", None),
            rtc_offset_us=round(sec.getfloat("rtc_offset_s", 0.0) * US),
            rtc_drift_ppm=sec.getfloat("rtc_drift_ppm", 0.0),
            battery_mah=15.0 * battery_pct / 100.0,
        )
        rssi = sec.getfloat("rssi_dbm", None) if "rssi_dbm" in sec else None
        env.add_ring(ring, rssi_dbm=rssi)
        total = sec.getint("prelog_total_s", 0)
        segment = sec.getint("prelog_segment_s", total)
        if total > 0:
            resp, _ = ring.apply_command(proto.command(
                proto.Opcode.SCHEDULE_OFFLINE, start_delay_s=0,
                total_s=total, segment_s=segment))
            if not resp.ok:
                raise RingError(f"{name}: prelog rejected ({resp.status.name})")
            prelog_until = max(prelog_until, (total + 1) * US)
    if prelog_until:
        env.run_until(prelog_until)
    return env


# ---------------------------------------------------------------- output

def emit_table(headers, rows, fmt: str, file=None) -> None:
    file = file or sys.stdout
    rows = [[str(c) for c in row] for row in rows]
    if fmt == "tsv":
        print("\t".join(headers), file=file)
        for row in rows:
            print("\t".join(row), file=file)
        return
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    print("  ".join(h.ljust(w) for h, w in zip(headers, widths)), file=file)
    for row in rows:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)), file=file)


# ---------------------------------------------------------------- commands

def cmd_sim(env: Environment, args) -> int:
    rows = []
    for ring in env.rings():
        rows.append([ring.name, ring.mac, ring.fw_version,
                     f"{ring.battery.pct_at(ring.cursor_us)}%",
                     len(ring.flash.segments), ring.scenario.name])
    emit_table(["name", "mac", "fw", "battery", "logs", "scenario"], rows, args.format)
    if args.run > 0:
        env.run_for(round(args.run * US))
        print(f"advanced {args.run:.3f} s of virtual time")
    return EXIT_OK


def cmd_scan(env: Environment, args) -> int:
    found = hostkit.discover(env, args.duration)
    emit_table(
        ["name", "mac", "rssi_dbm", "battery", "fw"],
        [[a.name, a.mac, a.rssi_dbm, f"{a.battery_pct}%", a.fw_version] for a in found],
        args.format)
    return EXIT_OK


def cmd_info(env: Environment, args) -> int:
    link = env.connect(args.mac)
    d = hostkit.device_info(link)
    rows = [
        ["mac", d.mac], ["mode", d.mode.name.lower()], ["health", d.health],
        ["battery", f"{d.battery_pct}%"],
        ["flash_free", f"{d.flash_free} B of {d.flash_capacity} B"],
        ["fw", d.fw_version],
    ]
    for name, s in d.sensors.items():
        state = f"{s['rate_hz']} Hz" if s["enabled"] else "off"
        rows.append([name, state])
    emit_table(["field", "value"], rows, args.format)
    return EXIT_OK


def cmd_calibrate(env: Environment, args) -> int:
    link = env.connect(args.mac)
    report = hostkit.calibrate(link)
    emit_table(
        ["iter", "rtt_ms", "offset_est_ms", "trimmed"],
        [[i + 1, f"{it.rtt_us / 1000:.2f}", f"{it.offset_estimate_us / 1000:.3f}",
          "yes" if it.trimmed else "no"]
         for i, it in enumerate(report.iterations)],
        args.format)
    print(f"final offset: {report.final_offset_us / 1000:.3f} ms "
          f"after {len(report.iterations)} iterations (converged)")
    return EXIT_OK


def _parse_tags(specs):
    out = []
    for spec in specs or []:
        t, _, label = spec.partition(":")
        out.append((float(t), label or "mark"))
    return sorted(out)


def _config_kw(args):
    kw = {}
    mask = 0
    for name, bit in (("ppg", proto.PRESENT_PPG), ("imu", proto.PRESENT_IMU),
                      ("temp", proto.PRESENT_TEMP)):
        val = getattr(args, name)
        if val != "off":
            mask |= bit
            if val is not None:
                kw[f"{name}_rate"] = int(val)
    kw["enabled_mask"] = mask
    if args.led is not None:
        kw["led"] = (args.led, args.led, args.led)
    return kw


def _run_stream(env, args, tags) -> int:
    link = env.connect(args.mac)
    session = hostkit.start_session(link, **_config_kw(args))
    start = env.now_us
    for t_s, label in tags:
        target = start + round(t_s * US)
        if target > env.now_us:
            env.run_until(min(target, start + round(args.duration * US)))
        if env.now_us < start + round(args.duration * US):
            hostkit.annotate(session, label)
    env.run_until(start + round(args.duration * US))
    hostkit.stop_session(link, session)
    out = Path(args.out) if args.out else Path(f"session_{args.mac.replace(':', '')}")
    hostkit.export_session(session, out, fmt=args.export_format)
    gaps = sum(b - a + 1 for a, b in session.gaps)
    print(f"session {session.session_id}: {len(session.samples)} records, "
          f"{session.packet_count} packets, {gaps} lost, "
          f"{len(session.annotations)} annotations -> {out}")
    return EXIT_OK


def cmd_stream(env: Environment, args) -> int:
    return _run_stream(env, args, _parse_tags(args.tag))


def cmd_annotate(env: Environment, args) -> int:
    tags = []
    for line in sys.stdin:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        t, _, label = line.partition(" ")
        tags.append((float(t), label.strip() or "mark"))
    return _run_stream(env, args, sorted(tags))


def cmd_offline(env: Environment, args) -> int:
    link = env.connect(args.mac)
    ring = env.ring(args.mac)
    planned = hostkit.configure_offline(link, args.total, args.segment,
                                        start_delay_s=args.delay)
    print(f"armed: {planned} segment(s) planned")
    if args.wait:
        horizon = env.now_us + (args.delay + args.total + 3) * US
        env.run_until(horizon)
        if ring.mode != Mode.IDLE:
            print("error: logging did not complete in time", file=sys.stderr)
            return EXIT_DEVICE
        link = env.connect(args.mac)
        entries = hostkit.list_files(link)
        emit_table(["file_id", "start_time_s", "size_B", "crc32"],
                   [[e.file_id, e.start_time_s, e.size, f"{e.crc:08x}"] for e in entries],
                   args.format)
    return EXIT_OK


def cmd_files(env: Environment, args) -> int:
    link = env.connect(args.mac)
    entries = hostkit.list_files(link)
    emit_table(["file_id", "start_time_s", "size_B", "crc32"],
               [[e.file_id, e.start_time_s, e.size, f"{e.crc:08x}"] for e in entries],
               args.format)
    return EXIT_OK


def cmd_fetch(env: Environment, args) -> int:
    link = env.connect(args.mac)
    if args.inject_corrupt_chunk is not None:
        link.inject_bulk_corruption(args.inject_corrupt_chunk)
    entries = {e.file_id: e for e in hostkit.list_files(link)}
    if args.file_id not in entries:
        print(f"error: NoSuchFile: {args.file_id}", file=sys.stderr)
        return EXIT_DEVICE
    entry = entries[args.file_id]
    received = b""
    while True:
        try:
            payload, records = hostkit.fetch_file(
                link, args.file_id, resume_from=len(received), prefix=received)
            break
        except hostkit.FetchInterrupted as exc:
            if not args.resume:
                print(f"error: Disconnected: {exc}", file=sys.stderr)
                return EXIT_DEVICE
            received = exc.received
            link = env.connect(args.mac)
    out = Path(args.out) if args.out else Path("logs")
    hostkit.save_log_segment(out, entry, payload)
    print(f"file {args.file_id}: {len(payload)} B, crc ok, "
          f"{len(records)} records -> {out}")
    return EXIT_OK


def cmd_hr_eval(env, args) -> int:
    scenarios = []
    for spec in args.scenario:
        scn = load_scenario(spec)
        if args.noise is not None:
            scn.noise_on = True
            scn.ppg_snr_db = args.noise
        scenarios.append(scn)
    fs = 100.0
    rows = []
    for scn in scenarios:
        t = np.arange(0, round(args.duration * US), round(US / fs), dtype=np.int64)
        signal = sensors.ppg_synth(scn, t, (32, 32, 32))[:, 0].astype(float)
        result = dsp.evaluate_against_scenario(scn, signal, fs)
        noise = "off" if not scn.noise_on else (
            f"snr{scn.ppg_snr_db:g}" if scn.ppg_snr_db is not None else "on")
        rows.append([scn.name, noise, f"{result.mae_bpm:.3f}"])
    if args.out:
        with open(args.out, "w") as fh:
            emit_table(["scenario", "noise", "mae_bpm"], rows, "tsv", file=fh)
        print(f"wrote {args.out}")
    else:
        emit_table(["scenario", "noise", "mae_bpm"], rows, args.format)
    return EXIT_OK


def cmd_gateway(env: Environment, args) -> int:
    import uvicorn

    from ringkit.gateway import create_app

    static = Path(args.static) if args.static else Path("frontend/dist")
    app = create_app(env, static_dir=static if static.is_dir() else None)
    print(f"gateway on http://{args.host}:{args.port}"
          + (f" (console from {static})" if static.is_dir() else ""))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ringkit",
        description="virtual smart-ring acquisition toolkit")
    p.add_argument("--env", metavar="FILE", default=None,
                   help="environment file describing rings and link faults")
    p.add_argument("--seed", type=int, default=None, help="override the world seed")
    p.add_argument("--format", choices=("table", "tsv"), default="table")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("sim", help="print the simulated roster").add_argument(
        "--run", type=float, default=0.0, metavar="S")

    sp = sub.add_parser("scan", help="discover advertising rings")
    sp.add_argument("--duration", type=float, default=1.0)

    sp = sub.add_parser("info", help="device dashboard")
    sp.add_argument("mac")

    sp = sub.add_parser("calibrate", help="clock offset calibration")
    sp.add_argument("mac")

    for name, help_text in (("stream", "run a live session"),
                            ("annotate", "live session with tags from stdin")):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("mac")
        sp.add_argument("--duration", type=float, default=10.0, metavar="S")
        sp.add_argument("--ppg", default=None, metavar="RATE|off")
        sp.add_argument("--imu", default=None, metavar="RATE|off")
        sp.add_argument("--temp", default=None, metavar="RATE|off")
        sp.add_argument("--led", type=int, default=None, metavar="CODE")
        sp.add_argument("--out", default=None, metavar="DIR")
        sp.add_argument("--export-format", choices=("csv", "bin"), default="csv")
        if name == "stream":
            sp.add_argument("--tag", action="append", metavar="T:LABEL",
                            help="annotation at T seconds into the session")

    sp = sub.add_parser("offline", help="schedule offline logging")
    sp.add_argument("mac")
    sp.add_argument("--total", type=int, required=True, metavar="S")
    sp.add_argument("--segment", type=int, required=True, metavar="S")
    sp.add_argument("--delay", type=int, default=1, metavar="S")
    sp.add_argument("--wait", action="store_true",
                    help="fast-forward to completion and list the recordings")

    sp = sub.add_parser("files", help="list stored recordings")
    sp.add_argument("mac")

    sp = sub.add_parser("fetch", help="download and verify a recording")
    sp.add_argument("mac")
    sp.add_argument("file_id", type=int)
    sp.add_argument("--out", default=None, metavar="DIR")
    sp.add_argument("--resume", action="store_true",
                    help="resume from the received byte count after drops")
    sp.add_argument("--inject-corrupt-chunk", type=int, default=None, metavar="N")

    sp = sub.add_parser("hr-eval", help="score the HR pipeline on scenarios")
    sp.add_argument("--scenario", action="append", required=True, metavar="FILE")
    sp.add_argument("--noise", type=float, default=None, metavar="SNR_DB")
    sp.add_argument("--duration", type=float, default=60.0, metavar="S")
    sp.add_argument("--out", default=None, metavar="FILE")

    sp = sub.add_parser("gateway", help="serve the console API")
    sp.add_argument("--port", type=int,
                    default=int(os.environ.get("RINGKIT_GATEWAY_PORT", 8765)))
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--static", default=None, metavar="DIR",
                    help="console assets to serve at / (default frontend/dist)")
    return p


_HANDLERS = {
    "sim": cmd_sim, "scan": cmd_scan, "info": cmd_info, "calibrate": cmd_calibrate,
    "stream": cmd_stream, "annotate": cmd_annotate, "offline": cmd_offline,
    "files": cmd_files, "fetch": cmd_fetch, "hr-eval": cmd_hr_eval,
    "gateway": cmd_gateway,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        env = load_environment(args.env, seed_override=args.seed) \
            if args.command != "hr-eval" else None
        return _HANDLERS[args.command](env, args)
    except (CrcMismatch, ProtocolError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (TransportError, HostError, RingError, ScenarioError,
            FileNotFoundError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DEVICE


if __name__ == "__main__":
    sys.exit(main())
