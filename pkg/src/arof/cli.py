"""Command-line front end: ``arof run | sweep-bw | sweep-freq | dump-capture | validate-config``.

Results go to stdout (JSON or CSV) and, with ``--out-dir``, to files.  Any
failure prints a JSON error object and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import FIDELITIES, LinkConfig, dump_config, load_config
from .errors import ArofError, ConfigError
from .sim import simulate, sweep_bandwidth, sweep_carrier
from .waveform import write_waveform

EXIT_ERROR = 2


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file, or a packaged config name (paper_200GHz)")
    common.add_argument("--seed", type=int, help="override link.seed")
    common.add_argument("--fidelity", choices=FIDELITIES, help="override link.fidelity")
    common.add_argument("--out-dir", type=Path, help="also write outputs into this directory")

    ap = argparse.ArgumentParser(prog="arof", description="Optical-heterodyne sub-THz OFDM link simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="simulate one capture, print the JSON report")
    run.add_argument("--constellations", action="store_true",
                     help="write per-stage constellation CSV (needs --out-dir)")

    for name, hlp in (("sweep-bw", "EVM versus OFDM bandwidth"), ("sweep-freq", "EVM versus sub-THz carrier")):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("--n-seeds", type=int, default=20)
        sp.add_argument("--workers", type=int, default=1)
    sub.choices["sweep-bw"].add_argument(
        "--spacings-mhz", type=_float_list, default=[2, 10, 20, 40],
        help="subcarrier spacings in MHz (default 2,10,20,40)")
    sub.choices["sweep-freq"].add_argument(
        "--freqs-ghz", type=_float_list, default=list(np.arange(170, 261, 10.0)),
        help="signal frequencies in GHz (default 170..260 step 10)")
    sub.choices["sweep-freq"].add_argument("--spacing-mhz", type=float, default=20.0)

    sub.add_parser("dump-capture", parents=[common], help="write the ADC capture and a JSON sidecar")
    sub.add_parser("validate-config", parents=[common], help="check a config and print its fingerprint")
    return ap


def _config(args) -> LinkConfig:
    cfg = load_config(args.config) if args.config else LinkConfig()
    link = cfg.link
    if args.seed is not None:
        link = replace(link, seed=args.seed)
    if args.fidelity is not None:
        link = replace(link, fidelity=args.fidelity)
    return replace(cfg, link=link)


def _emit(text, out_dir, filename):
    sys.stdout.write(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / filename).write_text(text)


def _cmd_run(args, cfg):
    if args.constellations and args.out_dir is None:
        raise ConfigError("--constellations needs --out-dir", ["--out-dir"])
    result = simulate(cfg)
    _emit(result.report.to_json() + "\n", args.out_dir, "report.json")
    if args.constellations:
        (args.out_dir / "constellations.csv").write_text(result.report.constellation_csv())
    return 0 if result.report.status == "ok" else 1


def _cmd_sweep(args, cfg):
    if args.command == "sweep-bw":
        table = sweep_bandwidth(cfg, [v * 1e6 for v in args.spacings_mhz], args.n_seeds, args.workers)
        name = "sweep_bw.csv"
    else:
        table = sweep_carrier(cfg, [v * 1e9 for v in args.freqs_ghz], args.n_seeds, args.workers,
                              args.spacing_mhz * 1e6)
        name = "sweep_freq.csv"
    _emit(table.to_csv(), args.out_dir, name)
    return 0


def _cmd_dump(args, cfg):
    out = args.out_dir or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    result = simulate(cfg)
    write_waveform(out / "capture.arof", result.capture)
    sidecar = {
        "frame": result.meta.to_dict(),
        "config": dump_config(cfg),
        "config_fingerprint": cfg.fingerprint(),
        "ground_truth": result.report.ground_truth,
        "sample_rate_hz": result.capture.sample_rate_hz,
        "ref_freq_hz": result.capture.ref_freq_hz,
    }
    (out / "capture.json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    sys.stdout.write(json.dumps({"status": "ok", "capture": str(out / "capture.arof"),
                                 "sidecar": str(out / "capture.json")}, sort_keys=True) + "\n")
    return 0


def _cmd_validate(args, cfg):
    sys.stdout.write(json.dumps({"status": "ok", "fingerprint": cfg.fingerprint()}, sort_keys=True) + "\n")
    return 0


COMMANDS = {
    "run": _cmd_run,
    "sweep-bw": _cmd_sweep,
    "sweep-freq": _cmd_sweep,
    "dump-capture": _cmd_dump,
    "validate-config": _cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except ArofError as exc:
        err = {"status": "error", "kind": exc.kind, "message": str(exc)}
        if isinstance(exc, ConfigError):
            err["keys"] = list(exc.keys)
        sys.stdout.write(json.dumps(err, sort_keys=True) + "\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
