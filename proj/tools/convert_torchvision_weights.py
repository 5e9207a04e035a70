#!/usr/bin/env python3
"""Writes torchvision ImageNet backbone weights in the layout brainfusion loads.

    convert_torchvision_weights.py --backbone vgg16 --out ~/.cache/brainfusion

produces <out>/vgg16.pt (a pickled name -> tensor dict) and a .sha256
sidecar. With --random-init no download happens; the file then holds a
seeded random initialisation, which the test suite uses to check that both
implementations compute the same features.

--features-in/--features-out run the source network on a raw float32 NCHW
tensor in [0,1] and dump the target-layer activation, also as raw float32.
"""

import argparse
import hashlib
import pathlib
import sys

import numpy as np
import torch
import torchvision

MEAN = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
STD = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)


def build(name, random_init):
    weights = None if random_init else "DEFAULT"
    if name == "vgg16":
        return torchvision.models.vgg16(weights=weights)
    if name == "resnet50":
        return torchvision.models.resnet50(weights=weights)
    sys.exit(f"unsupported backbone {name!r}; xception weights must be converted from another source")


def backbone_state(name, model):
    drop = ("classifier.", "avgpool.") if name == "vgg16" else ("fc.",)
    return {k: v.detach().clone() for k, v in model.state_dict().items()
            if not k.startswith(drop) and not k.endswith("num_batches_tracked")}


def feature_map(name, model, x):
    x = (x - MEAN) / STD
    if name == "vgg16":
        return model.features[:30](x)
    m = model
    x = m.maxpool(m.relu(m.bn1(m.conv1(x))))
    return m.layer4(m.layer3(m.layer2(m.layer1(x))))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--backbone", required=True, choices=["vgg16", "resnet50"])
    ap.add_argument("--out", required=True, type=pathlib.Path)
    ap.add_argument("--random-init", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--features-in", type=pathlib.Path)
    ap.add_argument("--features-out", type=pathlib.Path)
    ap.add_argument("--shape", type=int, nargs=4, metavar=("N", "C", "H", "W"))
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    model = build(args.backbone, args.random_init).eval()
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{args.backbone}.pt"
    torch.save(backbone_state(args.backbone, model), path)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    (args.out / f"{args.backbone}.pt.sha256").write_text(digest + "\n")
    print(f"wrote {path} ({digest})")

    if args.features_in:
        if not (args.features_out and args.shape):
            sys.exit("--features-in needs --features-out and --shape")
        x = torch.from_numpy(np.fromfile(args.features_in, dtype=np.float32).reshape(args.shape))
        with torch.no_grad():
            f = feature_map(args.backbone, model, x)
        f.numpy().astype(np.float32).tofile(args.features_out)
        print("features", tuple(f.shape))


if __name__ == "__main__":
    main()
