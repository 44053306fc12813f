#!/usr/bin/env python3
"""Write torchvision DenseNet-121 ImageNet weights as an apam archive.

The result feeds `apam train --init-weights`; only tensors whose names exist
in the model are copied, so the classifier is ignored.

    python3 scripts/export_densenet121.py --out densenet121.ckpt
    python3 scripts/export_densenet121.py --state-dict densenet121.pth --out densenet121.ckpt
"""

import argparse
import json
import struct

import torch
import torchvision

MAGIC = b"APAMCKPT"
VERSION = 1
F64, BYTES = 0, 1


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def entry(name: str, dtype: int, shape, payload: bytes) -> bytes:
    raw = name.encode()
    out = struct.pack("<I", len(raw)) + raw + struct.pack("<BI", dtype, len(shape))
    out += b"".join(struct.pack("<q", d) for d in shape)
    return out + struct.pack("<Q", len(payload)) + payload


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--state-dict", help="local .pth instead of downloading the torchvision weights")
    args = ap.parse_args()

    if args.state_dict:
        model = torchvision.models.densenet121(weights=None)
        model.load_state_dict(torch.load(args.state_dict, map_location="cpu"))
    else:
        model = torchvision.models.densenet121(weights=torchvision.models.DenseNet121_Weights.DEFAULT)

    entries = []
    meta = json.dumps({"source": "torchvision densenet121"}).encode()
    entries.append(entry("metadata.json", BYTES, [len(meta)], meta))
    for name, t in model.state_dict().items():
        if not name.startswith("features.") or name.endswith("num_batches_tracked"):
            continue
        t = t.detach().to(torch.float64).contiguous()
        entries.append(entry("backbone/" + name, F64, list(t.shape), t.numpy().astype("<f8").tobytes()))

    body = MAGIC + struct.pack("<II", VERSION, len(entries)) + b"".join(entries)
    with open(args.out, "wb") as f:
        f.write(body + struct.pack("<Q", fnv1a64(body)))
    print(f"wrote {len(entries) - 1} tensors to {args.out}")


if __name__ == "__main__":
    main()
