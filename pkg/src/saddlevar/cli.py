"""Command-line entry point: ``saddlevar experiment|spectra --config FILE``."""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import load_config, parse_config, run_experiment, run_spectral_study


def build_parser():
    ap = argparse.ArgumentParser(prog="saddlevar",
                                 description="Preconditioned saddle-point solves for weak-constraint 4D-Var.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("experiment", "solve every preconditioner cell and write experiment.csv"),
                        ("spectra", "run the spectral study and write spectra_*.csv")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="override the configured RNG seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    cfg = (load_config(args.config, seed=args.seed) if args.config
           else parse_config("", seed=args.seed))
    if args.command == "experiment":
        rows = run_experiment(cfg, args.out)
        bad = sum(not r["converged"] for r in rows)
        print(f"wrote {len(rows)} rows to {args.out}/experiment.csv"
              + (f" ({bad} not converged)" if bad else ""))
    else:
        m, t = run_spectral_study(cfg, args.out)
        print(f"wrote {len(m)} model-spectrum rows and {len(t)} interval rows to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
