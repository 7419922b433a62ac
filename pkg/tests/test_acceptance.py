"""Acceptance suite: one test per release criterion, each at its stated
tolerance. Run with -v to get a pass/fail line per criterion."""
import hashlib
import json
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import requests

from groundforge.cli import main
from groundforge.config import PipelineConfig
from groundforge.curation import (
    BenchmarkManifest,
    ReviewStore,
    apply_audit_log,
    assemble_benchmark,
    derive_bbox_benchmark,
    finalize_benchmark,
    ingest_review,
)
from groundforge.datastore import compute_stats, merge_stats
from groundforge.gateway import GatewayClient, ImageRef, StubBackend
from groundforge.maskcore import (
    BBox,
    BinaryMask,
    RleMask,
    rle_decode,
    rle_encode,
    tight_bbox,
)
from groundforge.metrics import BoxPair, MaskPair, acc_at, ciou, giou
from groundforge.pipeline import Pipeline, run_pipeline
from groundforge.review_service import ReviewServer

DATA = Path(__file__).parent / "data"


def tree_digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def write_manifest(path, image_ids, size=40):
    lines = [json.dumps({"image_id": i, "uri": f"file:///{i}.png",
                         "width": size, "height": size}) for i in image_ids]
    Path(path).write_text("\n".join(lines) + "\n")
    return str(path)


# -- criterion 1: metric oracle equivalence ------------------------------------------


def test_c01_metric_oracle_equivalence():
    """gIoU/cIoU over 200 random <=32x32 pairs match a brute-force
    pixel-count oracle within 1e-12, in under 5 s."""
    rng = np.random.default_rng(101)
    start = time.monotonic()
    pairs = []
    for i in range(200):
        h, w = int(rng.integers(1, 33)), int(rng.integers(1, 33))
        pred = BinaryMask.from_array(rng.random((h, w)) < rng.uniform(0, 1))
        gt = BinaryMask.from_array(rng.random((h, w)) < rng.uniform(0, 1))
        pairs.append(MaskPair(f"p{i}", pred, gt))

    total_inter = total_union = 0
    iou_sum = 0.0
    for pair in pairs:
        inter = union = 0
        a, b = pair.prediction.bits, pair.ground_truth.bits
        for r in range(a.shape[0]):
            for c in range(a.shape[1]):
                inter += bool(a[r, c] and b[r, c])
                union += bool(a[r, c] or b[r, c])
        total_inter += inter
        total_union += union
        iou_sum += 1.0 if union == 0 else inter / union

    assert giou(pairs) == pytest.approx(iou_sum / 200, abs=1e-12)
    assert ciou(pairs) == pytest.approx(total_inter / total_union, abs=1e-12)
    assert time.monotonic() - start < 5.0


# -- criterion 2: cIoU bias construction ----------------------------------------------


def test_c02_ciou_bias_construction():
    """(|inter|,|union|) of (100,100) and (0,10) give cIoU = 100/110 and
    gIoU = 0.5 exactly."""
    big = np.zeros((20, 20), bool)
    big[:10, :10] = True  # 100 px
    small = np.zeros((20, 20), bool)
    small[15:16, 0:10] = True  # 10 px
    pairs = [
        MaskPair("big", BinaryMask.from_array(big), BinaryMask.from_array(big)),
        MaskPair("small", BinaryMask.from_array(small), BinaryMask.zeros(20, 20)),
    ]
    assert ciou(pairs) == 100 / 110
    assert giou(pairs) == 0.5


# -- criterion 3: filter threshold exactness -------------------------------------------


def test_c03_filter_threshold_exactness(tmp_path):
    """Stub degradation pins sample IoU: 0.49 drops, 0.50 and 0.51 keep
    (inclusive 0.5 threshold); every reject-log IoU is < 0.5."""
    img = ImageRef("img_0001", "", 40, 40)  # 100-px object masks
    for shrink, iou, kept in ((51, 0.49, False), (50, 0.50, True), (49, 0.51, True)):
        config = PipelineConfig(stub_seed=1, stub_shrink=shrink)
        client = GatewayClient.for_stub(StubBackend(seed=1, shrink=shrink),
                                        sleep_fn=lambda _t: None)
        pipe = Pipeline(client, config)
        region = pipe.localize_entities(img)[0]
        verdict = pipe.filter_sample(img, "the object_a here", region.mask)
        assert verdict.iou == pytest.approx(iou, abs=1e-15)
        assert verdict.kept is kept

    manifest = write_manifest(tmp_path / "m.jsonl",
                              [f"img_{i:03d}" for i in range(8)])
    config = PipelineConfig(stub_seed=1, stub_shrink=51)
    report = run_pipeline(manifest, tmp_path / "out", config)
    assert report.kept == 0
    assert report.dropped == report.generated > 0
    rejects = [json.loads(l) for l in
               (tmp_path / "out" / "rejects.jsonl").read_text().splitlines()]
    assert rejects
    assert all(r["filter_iou"] < 0.5 for r in rejects
               if r["reason"] == "below_threshold")


# -- criterion 4: end-to-end determinism ------------------------------------------------


def test_c04_end_to_end_determinism(tmp_path):
    """annotate over a 20-image stub manifest is byte-identical across two
    fresh runs, an interrupted-then-resumed run, and concurrency 1 vs 8;
    each run under 30 s."""
    ids = [f"img_{i:03d}" for i in range(20)]
    manifest = write_manifest(tmp_path / "m.jsonl", ids)

    def annotate(out, concurrency=4):
        start = time.monotonic()
        code = main(["annotate", "--manifest", manifest, "--out", str(out),
                     "--seed", "7", "--set", f"concurrency={concurrency}"])
        assert code == 0
        assert time.monotonic() - start < 30.0

    annotate(tmp_path / "fresh1")
    annotate(tmp_path / "fresh2")
    reference = tree_digest(tmp_path / "fresh1")
    assert tree_digest(tmp_path / "fresh2") == reference  # (a) fresh x2

    annotate(tmp_path / "c1", concurrency=1)
    annotate(tmp_path / "c8", concurrency=8)
    assert tree_digest(tmp_path / "c1") == reference      # (c) concurrency
    assert tree_digest(tmp_path / "c8") == reference

    # (b) SIGKILL mid-run, then resume
    out = tmp_path / "killed"
    start = time.monotonic()
    proc = subprocess.Popen(
        [sys.executable, "-m", "groundforge.cli", "annotate",
         "--manifest", manifest, "--out", str(out), "--seed", "7",
         "--set", "concurrency=2"],
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    journal = out / "checkpoint" / "journal.jsonl"
    try:
        while True:
            if journal.exists() and len(journal.read_bytes().splitlines()) >= 10:
                break
            if proc.poll() is not None:
                break  # finished before we could kill it; resume is then a no-op
            assert time.monotonic() - start < 30.0, "subprocess too slow to journal"
            time.sleep(0.01)
    finally:
        if proc.poll() is None:
            proc.send_signal(signal.SIGKILL)
        proc.wait(timeout=10)
    annotate(out)  # resume to completion
    assert tree_digest(out) == reference


# -- criterion 5: RLE round-trip ----------------------------------------------------------


def test_c05_rle_roundtrip_1000_masks():
    rng = np.random.default_rng(105)
    for _ in range(1000):
        h = int(rng.integers(1, 48))
        w = int(rng.integers(1, 48))
        mask = BinaryMask.from_array(rng.random((h, w)) < rng.uniform(0, 1))
        rle = rle_encode(mask)
        assert rle_decode(rle) == mask
        wire = json.dumps(rle.to_json(), sort_keys=True)
        reparsed = RleMask.from_json(json.loads(wire))
        assert reparsed == rle
        assert json.dumps(reparsed.to_json(), sort_keys=True) == wire


# -- criterion 6: benchmark quotas ---------------------------------------------------------


def synthetic_pool(per_category=1600):
    categories = ("stuff", "part", "multi", "single")
    bits = np.zeros((16, 16), bool)
    bits[4:9, 4:9] = True
    mask_json = rle_encode(BinaryMask.from_array(bits)).to_json()
    pool = []
    n = 0
    for cat in categories:
        for _ in range(per_category):
            pool.append({
                "sample_id": f"cand_{n:06d}",
                "image_id": f"img_{n:06d}",
                "image_uri": "",
                "width": 16,
                "height": 16,
                "text": f"synthetic candidate {n}",
                "mask": mask_json,
                "category": cat,
            })
            n += 1
    return pool


def test_c06_benchmark_quotas():
    """Quotas {1000,500,800,1500} over a >=5000-candidate pool yield exactly
    3,800 unique-image items, deterministically."""
    pool = synthetic_pool()
    assert len(pool) >= 5000
    quotas = {"stuff": 1000, "part": 500, "multi": 800, "single": 1500}
    manifest = assemble_benchmark(pool, quotas)
    assert len(manifest.items) == 3800
    images = [i.image.image_id for i in manifest.items]
    assert len(set(images)) == 3800
    counts = manifest.category_counts(statuses=("pending",))
    assert counts == quotas
    shuffled = list(reversed(pool))
    again = assemble_benchmark(shuffled, quotas)
    assert [i.sample_id for i in again.items] == [i.sample_id for i in manifest.items]


# -- criterion 7: bbox derivation ------------------------------------------------------------


def test_c07_bbox_derivation():
    """Every derived box is tight (shrinking any side loses a pixel); multi
    items use the union-mask box; Acc@0.5 of the benchmark against itself
    is 1.0."""
    rng = np.random.default_rng(107)
    candidates = []
    for i, cat in enumerate(("stuff", "part", "multi", "single") * 6):
        bits = np.zeros((24, 24), bool)
        r, c = int(rng.integers(0, 12)), int(rng.integers(0, 12))
        bits[r:r + 5, c:c + 5] = True
        if cat == "multi":  # two disjoint members, stored as their union
            bits[20:23, 20:23] = True
        candidates.append({
            "sample_id": f"cand_{i:04d}", "image_id": f"img_{i:04d}",
            "image_uri": "", "width": 24, "height": 24,
            "text": f"item {i}", "category": cat,
            "mask": rle_encode(BinaryMask.from_array(bits)).to_json(),
        })
    quotas = {"stuff": 6, "part": 6, "multi": 6, "single": 6}
    manifest = assemble_benchmark(candidates, quotas)
    for item in manifest.items:
        ingest_review(manifest, {"sample_id": item.sample_id, "action": "accept",
                                 "reviewer_id": "r", "expected_version": 0})
    finalize_benchmark(manifest)
    records = derive_bbox_benchmark(manifest)
    assert len(records) == 24

    by_id = {i.sample_id: i for i in manifest.items}
    for record in records:
        box = BBox.from_list(record["bbox"])
        bits = rle_decode(by_id[record["sample_id"]].mask).bits
        assert bits[box.ymin:box.ymax, box.xmin].any()
        assert bits[box.ymin:box.ymax, box.xmax - 1].any()
        assert bits[box.ymin, box.xmin:box.xmax].any()
        assert bits[box.ymax - 1, box.xmin:box.xmax].any()
        outside = bits.copy()
        outside[box.ymin:box.ymax, box.xmin:box.xmax] = False
        assert not outside.any()
        if record["category"] == "multi":
            assert box.xmax == 23 and box.ymax == 23  # spans both members

    pairs = [BoxPair(r["sample_id"], BBox.from_list(r["bbox"]),
                     BBox.from_list(r["bbox"]), r["category"]) for r in records]
    assert acc_at(pairs, 0.5) == 1.0


# -- criterion 8: report shape -----------------------------------------------------------------


def test_c08_report_shape(tmp_path, capsys):
    """evaluate prints Stuff/Part/Multi/Single/All columns; with gt ==
    predictions every cell reads 100.0; golden-file compared."""
    rng = np.random.default_rng(108)
    gt = []
    for i, cat in enumerate(("stuff", "part", "multi", "single") * 2):
        bits = rng.random((20, 20)) < 0.4
        bits[0, 0] = True
        gt.append({
            "sample_id": f"s{i:02d}", "image_id": f"img_{i:02d}", "image_uri": "",
            "width": 20, "height": 20, "text": "t", "category": cat,
            "mask": rle_encode(BinaryMask.from_array(bits)).to_json(),
        })
    preds = [{"sample_id": r["sample_id"], "mask": r["mask"]} for r in gt]
    gt_path = tmp_path / "gt.jsonl"
    gt_path.write_text("".join(json.dumps(r) + "\n" for r in gt))
    pred_path = tmp_path / "pred.jsonl"
    pred_path.write_text("".join(json.dumps(r) + "\n" for r in preds))

    assert main(["evaluate", "--gt", str(gt_path), "--pred", str(pred_path),
                 "--name", "self"]) == 0
    out = capsys.readouterr().out
    assert out == (DATA / "evaluate_perfect_table.txt").read_text()
    header = out.splitlines()[0].split()
    assert header == ["Method", "Metric", "Stuff", "Part", "Multi", "Single", "All"]
    for row in out.splitlines()[2:]:
        assert row.split()[2:] == ["100.0"] * 5


# -- criterion 9: stats monoid -------------------------------------------------------------------


def synthetic_stats_record(i, words):
    # small fixed mask; area/centroid arithmetic still exercises the RLE path
    return {
        "sample_id": f"s{i:06d}",
        "text": " ".join(["word"] * words),
        "mask": {"size": [16, 16], "counts": [34, 6, 10, 6, 10, 6, 184]},
    }


def test_c09_stats_monoid():
    """Two-way sharded stats equal single-pass stats on 10k records; means
    match hand-computed fixtures; 100k records complete in under 60 s."""
    rng = np.random.default_rng(109)
    records = [synthetic_stats_record(i, int(rng.integers(1, 40)))
               for i in range(10_000)]
    whole = compute_stats(records)
    merged = merge_stats(compute_stats(records[:5_000]),
                         compute_stats(records[5_000:]))
    assert merged.to_json() == whole.to_json()

    hand = compute_stats([synthetic_stats_record(0, 10),
                          synthetic_stats_record(1, 16),
                          synthetic_stats_record(2, 22)])
    assert hand.mean_words == 16.0
    assert hand.median_words == 16.0

    start = time.monotonic()
    big = compute_stats(synthetic_stats_record(i, 16) for i in range(100_000))
    elapsed = time.monotonic() - start
    assert big.count == 100_000
    assert elapsed < 60.0


# -- criterion 10: review protocol ----------------------------------------------------------------


def test_c10_review_protocol(tmp_path):
    """Service API: stale decisions conflict, terminal states stay terminal,
    and the audit log replays to the same final manifest."""
    bits = np.zeros((12, 12), bool)
    bits[3:7, 3:7] = True
    candidates = [{
        "sample_id": f"cand_{i:03d}", "image_id": f"img_{i:03d}", "image_uri": "",
        "width": 12, "height": 12, "text": f"item {i}",
        "category": ("stuff", "part", "multi", "single")[i % 4],
        "mask": rle_encode(BinaryMask.from_array(bits)).to_json(),
    } for i in range(8)]
    manifest = assemble_benchmark(candidates,
                                  {"stuff": 2, "part": 2, "multi": 2, "single": 2})
    manifest.save(tmp_path / "base.json")
    store = ReviewStore(BenchmarkManifest.load(tmp_path / "base.json"),
                        tmp_path / "audit.jsonl")
    server = ReviewServer(store).start()
    try:
        base = server.base_url
        item = requests.get(f"{base}/review/next").json()["item"]
        ok = requests.post(f"{base}/review/decision", json={
            "sample_id": item["sample_id"], "action": "accept",
            "reviewer_id": "r1", "expected_version": item["version"]})
        assert ok.status_code == 200

        stale = requests.post(f"{base}/review/decision", json={
            "sample_id": item["sample_id"], "action": "reject",
            "reviewer_id": "r2", "expected_version": item["version"]})
        assert stale.status_code == 409
        assert stale.json()["error"]["code"] == "version_conflict"

        locked = requests.post(f"{base}/review/decision", json={
            "sample_id": item["sample_id"], "action": "reject",
            "reviewer_id": "r2",
            "expected_version": item["version"] + 1})
        assert locked.status_code == 409
        assert locked.json()["error"]["code"] == "invalid_transition"
        current = store.manifest.item(item["sample_id"])
        assert current.status == "accepted"  # never left the terminal state

        # drive the rest of the queue through mixed decisions
        actions = ["reject", "recategorize", "accept", "accept", "reject",
                   "recategorize", "accept"]
        for action in actions:
            nxt = requests.get(f"{base}/review/next").json()["item"]
            body = {"sample_id": nxt["sample_id"], "action": action,
                    "reviewer_id": "r1", "expected_version": nxt["version"]}
            if action == "recategorize":
                body["new_category"] = "multi"
            assert requests.post(f"{base}/review/decision", json=body).status_code == 200
        assert requests.get(f"{base}/review/next").json()["item"] is None
    finally:
        server.shutdown()

    audit = [json.loads(l) for l in (tmp_path / "audit.jsonl").read_text().splitlines()]
    replayed = apply_audit_log(BenchmarkManifest.load(tmp_path / "base.json"), audit)
    assert replayed.to_json() == store.manifest.to_json()
