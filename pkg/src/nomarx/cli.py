"""Command-line entry point.

``run`` executes sweeps locally, or posts them to a running ``serve``
instance when ``--server`` is given.  Exit codes: 0 success, 1 configuration
error (including unknown flags), 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import urllib.error
import urllib.request
from pathlib import Path

from .harness import (SNR_COMMENT, BlerRecord, ConfigurationError, ExperimentConfig, dump_config, emit_csv,
                      load_config, make_config, run_sweep)
from .messages import ContractError
from .presets import PRESETS, get_preset

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2



class _Parser(argparse.ArgumentParser):
    """argparse reports usage errors with exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _overrides(args) -> dict:
    values = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    if args.seed is not None:
        values["master_seed"] = args.seed
    if args.blocks is not None:
        values["n_blocks"] = args.blocks
    return values


def _configs(args) -> tuple[list[ExperimentConfig], list[str]]:
    overrides = _overrides(args)
    if args.config:
        return [load_config(args.config, overrides)], [SNR_COMMENT]
    preset = get_preset(args.preset)
    configs = []
    for cfg in preset.configs:
        values = cfg.model_dump(exclude_none=True)
        values.update(overrides)
        configs.append(make_config(values))
    return configs, preset.comments


def _remote_sweep(server: str, cfg: ExperimentConfig) -> list[BlerRecord]:
    url = server.rstrip("/") + "/sweep"
    body = json.dumps({"config": cfg.model_dump(mode="json")}).encode()
    req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as resp:
            payload = json.load(resp)
    except urllib.error.HTTPError as exc:
        detail = exc.read().decode(errors="replace")
        if exc.code in (400, 422):
            raise ConfigurationError(f"server rejected config: {detail}") from None
        raise OSError(f"{url}: HTTP {exc.code} {detail}") from None
    except urllib.error.URLError as exc:
        raise OSError(f"{url}: {exc.reason}") from None
    return [BlerRecord(**rec) for rec in payload["records"]]


def cmd_run(args) -> int:
    configs, comments = _configs(args)
    parent = Path(args.out).resolve().parent
    if not parent.is_dir():
        raise OSError(f"cannot write {args.out}: directory {parent} does not exist")
    records = []
    for cfg in configs:
        if args.server:
            records += _remote_sweep(args.server, cfg)
        else:
            records += run_sweep(cfg, progress=_progress if args.verbose else None)
    emit_csv(records, args.out, comments)
    print(f"wrote {len(records)} records to {args.out}")
    return EXIT_OK


def _progress(cfg, snr, errors):
    print(f"  {cfg.name}: snr {snr:g} dB, block errors per OL {errors.tolist()}", file=sys.stderr)


def cmd_presets(args) -> int:
    if args.show:
        preset = get_preset(args.show)
        for cfg in preset.configs:
            print(f"# {cfg.name}")
            print(dump_config(cfg))
        return EXIT_OK
    for preset in PRESETS.values():
        print(f"{preset.name}: {preset.description}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest(verbose=not args.quiet) else EXIT_CONFIG


def cmd_codebook(args) -> int:
    import numpy as np

    from .transmitter import build_scheme, read_codebook, write_codebook

    if args.dump:
        block = {"cb_ofdma": 1, "nls": args.spreading_length, "scma": 4}[args.scheme]
        layout = build_scheme(args.scheme, args.n_ue, block, order=args.order,
                              spreading_length=args.spreading_length)
        write_codebook(args.dump, layout.alphabets)
        print(f"wrote {layout.n_layers} x {layout.order} x {layout.block_size} codebook to {args.dump}")
        return EXIT_OK
    table = read_codebook(args.load)
    occ = np.any(table != 0, axis=1)
    print(f"{args.load}: {table.shape[0]} layers, M={table.shape[1]}, block size {table.shape[2]}, "
          f"occupied REs per layer {occ.sum(axis=1).tolist()}, unit energy ok")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nomarx", description="NoMA iterative receiver link-level simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a BLER sweep and write CSV")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="flat key = value config file")
    src.add_argument("--preset", choices=sorted(PRESETS), help="named desk-scale experiment")
    run.add_argument("--out", required=True, help="CSV destination")
    run.add_argument("--seed", type=int, help="override master_seed")
    run.add_argument("--blocks", type=int, help="override n_blocks")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    run.add_argument("--server", help="base URL of a running 'nomarx serve' to run the sweep on")
    run.set_defaults(func=cmd_run)

    pre = sub.add_parser("presets", help="list named experiments")
    pre.add_argument("--show", metavar="NAME", help="print the configs of one preset")
    pre.set_defaults(func=cmd_presets)

    st = sub.add_parser("selftest", help="run the built-in oracle checks")
    st.add_argument("-q", "--quiet", action="store_true")
    st.set_defaults(func=cmd_selftest)

    cb = sub.add_parser("codebook", help="write or validate codebook files")
    io_ = cb.add_mutually_exclusive_group(required=True)
    io_.add_argument("--dump", metavar="PATH", help="write the built-in codebook of --scheme")
    io_.add_argument("--load", metavar="PATH", help="read and validate a codebook file")
    cb.add_argument("--scheme", default="scma", choices=("cb_ofdma", "nls", "scma"))
    cb.add_argument("--n-ue", type=int, default=6)
    cb.add_argument("--order", type=int, default=4)
    cb.add_argument("--spreading-length", type=int, default=4)
    cb.set_defaults(func=cmd_codebook)

    srv = sub.add_parser("serve", help="serve the simulator over HTTP")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    srv.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        # keep the offending path in the message
        where = f"{exc.filename}: " if getattr(exc, "filename", None) and str(exc.filename) not in str(exc) else ""
        print(f"I/O error: {where}{exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
