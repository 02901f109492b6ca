#!/usr/bin/env python3
"""Writes activation fixtures for a DFIW weight file using a PyTorch reference.

Each image gets a fixture directory holding manifest.txt, a copy of the image
and one <layer>.f32 file per layer (ASCII "n c h w" line, then float32 LE).
Images must have a short side of at least 200 pixels, so the engine applies
no resize before the forward pass.
"""

import argparse
import hashlib
import shutil
import struct
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

LAYERS = ["conv3_1", "conv4_1", "conv5_1", "pool5"]
MIN_SIDE = 200


def read_dfiw(path):
    data = Path(path).read_bytes()
    pos = 0

    def take(fmt):
        nonlocal pos
        values = struct.unpack_from("<" + fmt, data, pos)
        pos += struct.calcsize("<" + fmt)
        return values

    if data[:4] != b"DFIW":
        raise ValueError(f"{path}: bad magic")
    pos = 4
    (version,) = take("I")
    if version != 1:
        raise ValueError(f"{path}: unsupported version {version}")
    (order,) = take("B")
    mean = take("3f")
    (count,) = take("I")
    convs = []
    for _ in range(count):
        (name_len,) = take("H")
        name = data[pos : pos + name_len].decode()
        pos += name_len
        n, c, h, w = take("4I")
        weights = np.frombuffer(data, "<f4", n * c * h * w, pos).reshape(n, c, h, w)
        pos += 4 * weights.size
        (nb,) = take("I")
        bias = np.frombuffer(data, "<f4", nb, pos)
        pos += 4 * nb
        convs.append((name, torch.from_numpy(weights.copy()), torch.from_numpy(bias.copy())))
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return order, mean, convs


def activations(order, mean, convs, rgb):
    x = torch.from_numpy(rgb.astype(np.float64)).permute(2, 0, 1)
    if order == 1:
        x = x.flip(0)
    x = (x - torch.tensor(mean, dtype=torch.float64).view(3, 1, 1)).unsqueeze(0)
    out = {}
    last_in_block = {}
    for name, _, _ in convs:
        block = name[4 : name.index("_")]
        last_in_block[block] = name
    for name, w, b in convs:
        x = F.relu(F.conv2d(x, w.double(), b.double(), padding=w.shape[-1] // 2))
        out[name] = x
        block = name[4 : name.index("_")]
        if last_in_block[block] == name:
            x = F.max_pool2d(x, 2, 2, ceil_mode=True)
            out["pool" + block] = x
    return out


def write_tensor(path, t):
    t = t.float().contiguous().numpy()
    n, c, h, w = t.shape
    with open(path, "wb") as f:
        f.write(f"{n} {c} {h} {w}\n".encode())
        f.write(t.astype("<f4").tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--weights", required=True)
    ap.add_argument("--images", nargs="+", required=True)
    ap.add_argument("--out", required=True, help="directory receiving one fixture set per image")
    ap.add_argument("--tolerance", default="1e-3")
    args = ap.parse_args()

    order, mean, convs = read_dfiw(args.weights)
    digest = hashlib.sha256(Path(args.weights).read_bytes()).hexdigest()
    for image in map(Path, args.images):
        rgb = np.asarray(Image.open(image).convert("RGB"))
        if min(rgb.shape[:2]) < MIN_SIDE:
            sys.exit(f"{image}: short side must be at least {MIN_SIDE}")
        acts = activations(order, mean, convs, rgb)
        missing = [l for l in LAYERS if l not in acts]
        if missing:
            sys.exit(f"{args.weights}: network has no layer {', '.join(missing)}")
        dest = Path(args.out) / image.stem
        dest.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(image, dest / image.name)
        for layer in LAYERS:
            write_tensor(dest / f"{layer}.f32", acts[layer])
        (dest / "manifest.txt").write_text(
            f"image={image.name}\n"
            f"layers={','.join(LAYERS)}\n"
            f"tolerance={args.tolerance}\n"
            f"reference=torch {torch.__version__} float64\n"
            f"weights_sha256={digest}\n"
        )
        print(f"wrote {dest}")


if __name__ == "__main__":
    main()
