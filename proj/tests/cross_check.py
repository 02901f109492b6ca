#!/usr/bin/env python3
"""Compares the engine with the PyTorch reference on three fixture images."""

import argparse
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image


def synthetic_image(seed, h, w):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:h, 0:w] / max(h, w)
    img = np.zeros((h, w, 3))
    for c in range(3):
        for _ in range(4):
            fy, fx, phase = rng.uniform(1, 9), rng.uniform(1, 9), rng.uniform(0, 6.3)
            img[..., c] += np.sin(fy * y * 6.3 + fx * x * 6.3 + phase)
    img += 0.3 * rng.standard_normal(img.shape)
    img = (img - img.min()) / (img.max() - img.min()) * 255
    return Image.fromarray(img.round().astype(np.uint8))


def run(cmd):
    print("+", " ".join(map(str, cmd)), flush=True)
    return subprocess.run(cmd).returncode


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dfi", required=True)
    ap.add_argument("--script", required=True)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        weights = tmp / "vgg19.dfiw"
        if run([args.dfi, "init-weights", "--out", weights, "--seed", "4"]) != 0:
            return 1
        images = []
        for i, (h, w) in enumerate([(200, 200), (200, 263), (231, 200)]):
            images.append(tmp / f"image{i}.png")
            synthetic_image(i, h, w).save(images[-1])
        fixtures = tmp / "fixtures"
        if run([sys.executable, args.script, "--weights", weights, "--out", fixtures,
                "--images", *images]) != 0:
            return 1
        return run([args.dfi, "verify-fixtures", "--weights", weights, "--fixtures",
                    *sorted(fixtures.iterdir())])


if __name__ == "__main__":
    sys.exit(main())
