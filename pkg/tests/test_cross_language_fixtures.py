"""The browser client and this package decode the same RLE wire format;
the shared golden fixtures pin both sides to identical pixels."""
import json
from pathlib import Path

import pytest

from groundforge.curation import BenchmarkManifest
from groundforge.maskcore import RleMask, rle_decode, rle_encode

FIXTURES = Path(__file__).parent.parent / "frontend" / "test" / "fixtures"


@pytest.mark.skipif(not FIXTURES.exists(), reason="frontend fixtures not present")
def test_rle_golden_cases_match_maskcore():
    cases = json.loads((FIXTURES / "rle_golden.json").read_text())["cases"]
    assert len(cases) >= 15
    for case in cases:
        rle = RleMask.from_json(case["mask"])
        mask = rle_decode(rle)
        dense = "".join(str(int(v)) for v in mask.bits.flatten(order="F"))
        assert dense == case["dense_col_major"], case["name"]
        assert rle_encode(mask) == rle, case["name"]


@pytest.mark.skipif(not FIXTURES.exists(), reason="frontend fixtures not present")
def test_review_manifest_fixture_loads():
    manifest = BenchmarkManifest.load(FIXTURES / "review_manifest.json")
    assert len(manifest.items) == 5
    assert all(item.status == "pending" for item in manifest.items)
