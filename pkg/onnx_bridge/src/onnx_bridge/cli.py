"""Command line entry point: onnx-bridge convert / extract-weights."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import container
from .convert import ConvertError, convert, extract_weights


def cmd_convert(args) -> None:
    doc, weights = convert(args.model)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, args.stem + ".json")
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    if weights:
        container.write_container(os.path.join(args.out, args.stem + "_weights"),
                                  weights)
    print(f"wrote {path}: {len(doc['layers'])} layers, "
          f"{len(weights)} weight tensors")


def cmd_extract_weights(args) -> None:
    weights = extract_weights(args.model)
    os.makedirs(args.out, exist_ok=True)
    man, _ = container.write_container(os.path.join(args.out, args.stem), weights)
    print(f"wrote {man}: {len(weights)} weight tensors")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="onnx-bridge")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("convert", help="convert an ONNX model to IR + weights")
    p.add_argument("model")
    p.add_argument("--out", required=True)
    p.add_argument("--stem", default="graph")
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("extract-weights", help="emit only the weight container")
    p.add_argument("model")
    p.add_argument("--out", required=True)
    p.add_argument("--stem", default="weights")
    p.set_defaults(fn=cmd_extract_weights)

    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        args.fn(args)
    except (ConvertError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
