"""Run analyze, fit, tune and export on the three synthetic reference units.

Results land in ``--out`` (default ./demo_out). Takes about a minute at the
default sample count.
"""
import argparse
from pathlib import Path

from cnnrf.cli import main as cnnrf


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--samples", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    units = {"linear": "synthetic_linear_halfrect", "energy": "synthetic_energy",
             "suppressed": "synthetic_suppressed_energy"}
    for kind, uid in units.items():
        unit_dir = out / kind
        common = ["--synthetic", kind, "--seed", str(args.seed), "--out", str(unit_dir)]
        cnnrf(["analyze", *common, "--samples", str(args.samples), "--awc-form", "standard-stc"])
        rfb = str(unit_dir / f"{uid}.rfb1")
        for bank in ("full", "awa-only", "chance"):
            cnnrf(["fit", rfb, "--bank", bank, "--seed", str(args.seed), "--out", str(unit_dir)])
        cnnrf(["tune", *common])
        cnnrf(["export", rfb, str(unit_dir / "images")])


if __name__ == "__main__":
    main()
