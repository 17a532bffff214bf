"""Command line entry point: ``sbspec <subcommand> --config FILE [--out DIR]``.

Exit codes: 0 on success, 1 when an experiment's verdict fails, 2 on
configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import sys

from . import harness

SUBCOMMANDS = {
    "resonant-set": "resonant-set",
    "perturbed-spectrum": "perturbed",
    "limit-spectrum": "limit",
    "correctors": "correctors",
    "converge": "converge",
    "divergence-probe": "divergence-probe",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sbspec",
        description="Spectra of fourth-order operators under squeezed "
                    "singular potentials",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="TOML experiment config")
        sp.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = harness.load_config(args.config)
    except (OSError, harness.ConfigError, ValueError) as exc:
        print(f"sbspec: config error: {exc}", file=sys.stderr)
        return 2
    cfg.mode = SUBCOMMANDS[args.command]
    try:
        report, files = harness.run_experiment(cfg, out_dir=args.out)
    except harness.ConfigError as exc:
        print(f"sbspec: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surface solver stage failures
        print(f"sbspec: {cfg.mode} failed: {exc}", file=sys.stderr)
        return 2
    for path in files:
        print(f"wrote {path}")
    verdict = report.get("verdict", "pass")
    print(f"{cfg.mode}: {verdict}")
    return 0 if verdict == "pass" else 1


if __name__ == "__main__":
    sys.exit(main())
