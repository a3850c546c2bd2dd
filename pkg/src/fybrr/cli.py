"""Command-line entry point: ``fybrr {serve,simulate,compare,replay,validate}``.

Flags win over ``FYBRR_*`` environment variables, which win over the config
file.  Exit codes: 0 success, 1 invalid input, 2 I/O error (argparse also
uses 2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .errors import CorruptLogError, FybrrError, InvalidConfigError
from .model import validate_room
from .sim.compare import compare, write_run
from .sim.config import SCHEMES, SimConfig, dump_config, load_config
from .sim.engine import run_simulation
from .sim.io import write_atomic

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

ENV = {
    "config": "FYBRR_CONFIG",
    "seed": "FYBRR_SEED",
    "seeds": "FYBRR_SEEDS",
    "scheme": "FYBRR_SCHEME",
    "out_dir": "FYBRR_OUT_DIR",
    "listen": "FYBRR_LISTEN",
    "log_dir": "FYBRR_LOG_DIR",
    "heartbeat_interval": "FYBRR_HEARTBEAT_INTERVAL",
    "heartbeat_misses": "FYBRR_HEARTBEAT_MISSES",
}


def parse_seeds(text: str) -> list[int]:
    """``"0-9"``, ``"1,2,5"`` or a mix like ``"0-3,10"``."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"no seeds in {text!r}")
    return out


def _seeds_arg(text: str) -> list[int]:
    try:
        return parse_seeds(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _set_arg(text: str) -> tuple[str, object]:
    key, sep, val = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), yaml.safe_load(val)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fybrr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sim=True):
        sp.add_argument("--config", help="YAML file with scoring/heartbeat/simulation sections")
        sp.add_argument("--heartbeat-interval", type=float)
        sp.add_argument("--heartbeat-misses", type=int)
        if sim:
            sp.add_argument("--set", dest="overrides", action="append", type=_set_arg, default=[],
                            metavar="KEY=VALUE", help="override any simulation field")

    sp = sub.add_parser("serve", help="run the signaling server")
    common(sp, sim=False)
    sp.add_argument("--listen", help="HOST:PORT (default 127.0.0.1:7400)")
    sp.add_argument("--log-dir", help="directory for per-room event logs")
    sp.add_argument("--streaming-rate", type=float, default=2.5)
    sp.add_argument("--trust-client", action="store_true", help="accept client-supplied score/slots")

    sp = sub.add_parser("simulate", help="run one simulation")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--scheme", choices=[s.lower() for s in SCHEMES] + list(SCHEMES))
    sp.add_argument("--out-dir")

    sp = sub.add_parser("compare", help="run all schemes on shared seeds")
    common(sp)
    sp.add_argument("--seeds", type=_seeds_arg, help="e.g. 0-9 or 1,4,7 (default 0-9)")
    sp.add_argument("--out-dir")
    sp.add_argument("--jobs", type=int, default=1)

    sp = sub.add_parser("replay", help="rebuild rooms from an event log")
    sp.add_argument("log", help="event log file")

    sp = sub.add_parser("validate", help="check a config file or an event log")
    sp.add_argument("path")
    return p


def _env_defaults(args: argparse.Namespace) -> None:
    for attr, var in ENV.items():
        if hasattr(args, attr) and getattr(args, attr) is None and var in os.environ:
            raw = os.environ[var]
            conv = {
                "seed": int,
                "seeds": parse_seeds,
                "heartbeat_interval": float,
                "heartbeat_misses": int,
            }.get(attr, str)
            setattr(args, attr, conv(raw))


def _sim_config(args) -> SimConfig:
    overrides = dict(args.overrides)
    for key in ("seed", "scheme"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    return load_config(
        args.config,
        heartbeat_interval=args.heartbeat_interval,
        heartbeat_misses=args.heartbeat_misses,
        **overrides,
    )


def _prepare_out(out_dir: Optional[str]) -> Optional[Path]:
    if out_dir is None:
        return None
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".fybrr-write-test"
    probe.write_text("")
    probe.unlink()
    return path


def cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    out = _prepare_out(args.out_dir)
    result = run_simulation(cfg)
    summary = result.report.summary()
    if out is not None:
        write_run(result, out)
        write_atomic(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
        write_atomic(out / "config.yaml", dump_config(cfg))
    print(json.dumps({"seed": cfg.seed, "scheme": cfg.scheme, **summary}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _sim_config(args)
    seeds = args.seeds if args.seeds is not None else list(range(10))
    out = _prepare_out(args.out_dir)
    cmp = compare(cfg, seeds, out, jobs=max(1, args.jobs))
    print(f"{'scheme':<8} {'latency_ms':>11} {'jitter_ms':>10} {'pdr':>8} {'height':>7} {'util':>6}")
    for scheme, lat, jit, pdr, h, util in cmp.table():
        print(f"{scheme:<8} {lat:>11.3f} {jit:>10.4f} {pdr:>8.5f} {h:>7.2f} {util:>6.3f}")
    print(cmp.verdict_text(), end="")
    return EXIT_OK if cmp.height_verdict else EXIT_INVALID


def _room_view(room) -> dict:
    return {
        "room_id": room.room_id,
        "source": room.source,
        "peers": {
            pid: {"parent": r.parent, "children": r.children, "slots": r.slots, "score": r.score,
                  "state": r.state.value, "num_of_failure": r.num_of_failure}
            for pid, r in sorted(room.peers.items())
        },
        "problems": validate_room(room),
    }


def cmd_replay(args) -> int:
    from .signaling.eventlog import read_log, replay_event_log

    rooms = replay_event_log(read_log(args.log))
    print(json.dumps({rid: _room_view(r) for rid, r in sorted(rooms.items())}, indent=2))
    return EXIT_OK


def cmd_validate(args) -> int:
    from .signaling.eventlog import read_log, replay_event_log

    path = Path(args.path)
    if path.suffix in (".yaml", ".yml"):
        cfg = load_config(path)
        print(f"{path}: valid config (scheme {cfg.scheme}, {cfg.num_peers} peers, seed {cfg.seed})")
        return EXIT_OK
    records = read_log(path)
    rooms = replay_event_log(records)
    bad = {rid: validate_room(r) for rid, r in rooms.items() if validate_room(r)}
    if bad:
        for rid, probs in bad.items():
            for msg in probs:
                print(f"{path}: room {rid}: {msg}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{path}: valid event log ({len(records)} records, {len(rooms)} open rooms)")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .signaling.server import run_server
    from .signaling.service import SignalingService

    cfg = load_config(args.config, heartbeat_interval=args.heartbeat_interval, heartbeat_misses=args.heartbeat_misses)
    listen = args.listen or "127.0.0.1:7400"
    host, _, port = listen.rpartition(":")
    try:
        port_no = int(port)
    except ValueError:
        raise InvalidConfigError(f"--listen must be HOST:PORT, got {listen!r}") from None
    if args.log_dir:
        Path(args.log_dir).mkdir(parents=True, exist_ok=True)
    service = SignalingService(
        params=cfg.score,
        heartbeat=cfg.heartbeat,
        log_dir=args.log_dir,
        streaming_rate=args.streaming_rate,
        trust_client=args.trust_client,
    )
    try:
        run_server(service, host or "127.0.0.1", port_no)
    except KeyboardInterrupt:
        pass
    return EXIT_OK


COMMANDS = {
    "serve": cmd_serve,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "replay": cmd_replay,
    "validate": cmd_validate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _env_defaults(args)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except OSError as exc:
        print(f"fybrr: io-error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InvalidConfigError, CorruptLogError) as exc:
        print(f"fybrr: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FybrrError as exc:
        print(f"fybrr: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
