"""Command line: ``cnnrf {analyze,fit,tune,export}``.

Exit codes: 0 success, 1 usage error, 2 ingestion/IO error, 3 numerical
failure of every unit in the batch.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Dict, List, Optional

from . import pipeline
from .config import RunConfig
from .formats import FormatError
from .netforward import ModelFormatError
from .stimulus import ConfigError, IngestionError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("cnnrf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _shared(p: argparse.ArgumentParser) -> None:
    a = p.add_argument
    a("--config", help="key = value file; explicit flags override it")
    a("--model", help="NNF1 model file (default: a synthetic unit)")
    a("--synthetic", help="synthetic unit: linear|energy|suppressed|zero[:ori=,sf=,sigma=,c=,phase=]")
    a("--shape", help="synthetic stimulus shape HxWxC (default 16x16x1)")
    a("--units", help="'all', 'layer:all' or comma-separated 'layer:index'")
    a("--seed", type=int)
    a("--samples", type=int, help="white-noise stimuli for analysis (default 200000)")
    a("--crop", help="centered analysis crop HxW, or 'full' (default 16x16)")
    a("--awc-form", choices=["as-written", "standard-stc"])
    a("--n-exc", type=int, help="excitatory AWC eigenvectors besides the AWA (default 9)")
    a("--n-sup", type=int, help="suppressive AWC eigenvectors (default 10)")
    a("--bank", choices=["full", "awa-only", "chance"])
    a("--fit-on", choices=["noise", "probes", "both"])
    a("--fit-samples", type=int)
    a("--nonlinearity", choices=["fullwave", "square"])
    a("--images", help="natural-image manifest (label<TAB>path per line)")
    a("--bins", type=int)
    a("--hist-samples", type=int)
    a("--alpha", type=float)
    a("--rectify", choices=["rectify-mean", "mean-rectify"])
    a("--threads", type=int)
    a("--chunk", type=int)
    a("--out")
    a("--memory-budget-mb", type=float)
    a("--force", action="store_true", default=None)
    a("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cnnrf", description="Reverse-correlation receptive fields of CNN units")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _shared(sub.add_parser("analyze", help="estimate AWA/AWC sub-filter banks"))
    p = sub.add_parser("fit", help="fit and score the LN cascade on an RFB1 bank")
    p.add_argument("rfb1")
    _shared(p)
    _shared(sub.add_parser("tune", help="grating tuning, category selectivity, histograms"))
    p = sub.add_parser("export", help="write RFB1 filters as per-channel P5 images")
    p.add_argument("rfb1")
    p.add_argument("out_dir")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


NON_CONFIG = {"command", "config", "verbose", "rfb1", "out_dir"}


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    flags: Dict[str, object] = {k: v for k, v in vars(ns).items()
                                if k not in NON_CONFIG and v is not None}
    if ns.config:
        try:
            return RunConfig.from_file(ns.config, flags)
        except OSError as exc:
            raise IngestionError(f"{ns.config}: {exc.strerror or exc}") from None
    return RunConfig.from_mapping(flags)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except UsageError as exc:
        print(f"cnnrf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if ns.command == "export":
            ranges = pipeline.run_export(ns.rfb1, ns.out_dir)
            print(f"wrote {len(ranges)} images to {ns.out_dir}")
            return EXIT_OK
        cfg = resolve_config(ns)
        if ns.command == "analyze":
            results = pipeline.run_analyze(cfg)
            for r in results:
                print(f"{r.unit_id}\t{r.status}\t{r.rfb_path or r.message}")
            if results and all(r.status == "error" for r in results):
                return EXIT_NUMERIC
            return EXIT_OK
        if ns.command == "fit":
            rep = pipeline.run_fit(cfg, ns.rfb1)
            for key in ("r_noise", "r_gratings", "r_natural"):
                print(f"{key} = {rep[key]}")
            return EXIT_OK
        rows = pipeline.run_tune(cfg)
        for row in rows:
            print(f"{row['unit_id']}\tpreferred={row['preferred']}\tprobes={row['probe_calls']}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"cnnrf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IngestionError, FormatError, ModelFormatError, OSError) as exc:
        print(f"cnnrf: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ArithmeticError as exc:
        print(f"cnnrf: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
