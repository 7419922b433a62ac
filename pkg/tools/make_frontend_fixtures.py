#!/usr/bin/env python3
"""Regenerate the cross-language golden fixtures shared by the Python and
TypeScript test suites:

  frontend/test/fixtures/rle_golden.json      RLE masks + dense reference
  frontend/test/fixtures/review_manifest.json 5-item pending review manifest

Both suites read the committed files; regenerate only when the formats
change, then re-run both suites.
"""
import json
from pathlib import Path

import numpy as np

from groundforge.curation import assemble_benchmark
from groundforge.maskcore import BinaryMask, rle_encode

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "frontend" / "test" / "fixtures"


def rle_cases():
    cases = []

    def add(name, bits):
        mask = BinaryMask.from_array(bits)
        rle = rle_encode(mask)
        cases.append({
            "name": name,
            "mask": rle.to_json(),
            # dense reference in column-major order, matching the decode layout
            "dense_col_major": "".join(
                str(int(v)) for v in mask.bits.flatten(order="F")
            ),
        })

    add("empty_2x2", np.zeros((2, 2), bool))
    add("full_2x2", np.ones((2, 2), bool))
    center = np.zeros((3, 3), bool)
    center[1, 1] = True
    add("center_3x3", center)
    add("single_column", np.ones((5, 1), bool))
    tall = np.zeros((7, 3), bool)
    tall[0, 0] = tall[6, 2] = True
    add("corners_7x3", tall)

    rng = np.random.default_rng(2024)
    for i in range(12):
        h = int(rng.integers(1, 33))
        w = int(rng.integers(1, 33))
        add(f"random_{i:02d}_{w}x{h}", rng.random((h, w)) < rng.uniform(0, 1))
    return cases


def review_manifest():
    rng = np.random.default_rng(7)
    candidates = []
    for i, cat in enumerate(("stuff", "part", "multi", "single", "single")):
        bits = np.zeros((24, 24), bool)
        r, c = int(rng.integers(0, 14)), int(rng.integers(0, 14))
        bits[r:r + 8, c:c + 8] = True
        candidates.append({
            "sample_id": f"fix_{i:03d}",
            "image_id": f"img_fix_{i:03d}",
            "image_uri": "",
            "width": 24,
            "height": 24,
            "text": f"fixture item {i}, a {cat} example",
            "mask": rle_encode(BinaryMask.from_array(bits)).to_json(),
            "category": cat,
        })
    manifest = assemble_benchmark(
        candidates, {"stuff": 1, "part": 1, "multi": 1, "single": 2},
        name="fixture-bench")
    return manifest.to_json()


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)
    (FIXTURES / "rle_golden.json").write_text(
        json.dumps({"cases": rle_cases()}, indent=2) + "\n")
    (FIXTURES / "review_manifest.json").write_text(
        json.dumps(review_manifest(), sort_keys=True, indent=2) + "\n")
    print(f"wrote fixtures to {FIXTURES}")


if __name__ == "__main__":
    main()
