#!/usr/bin/env python3
"""Runs an exported classifier with onnxruntime on a raw float32 NCHW input
and prints the largest absolute difference from a raw float32 reference."""

import argparse

import numpy as np
import onnxruntime as ort


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("model")
    ap.add_argument("input")
    ap.add_argument("reference")
    ap.add_argument("--shape", type=int, nargs=4, required=True)
    args = ap.parse_args()

    sess = ort.InferenceSession(args.model, providers=["CPUExecutionProvider"])
    x = np.fromfile(args.input, dtype=np.float32).reshape(args.shape)
    (y,) = sess.run(None, {sess.get_inputs()[0].name: x})
    ref = np.fromfile(args.reference, dtype=np.float32).reshape(y.shape)
    print(f"{float(np.abs(y - ref).max()):.9g}")


if __name__ == "__main__":
    main()
