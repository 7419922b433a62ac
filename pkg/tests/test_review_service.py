import json

import numpy as np
import pytest
import requests

from groundforge.curation import (
    BenchmarkManifest,
    ReviewStore,
    apply_audit_log,
    assemble_benchmark,
)
from groundforge.maskcore import BinaryMask, rle_encode
from groundforge.metrics import CATEGORIES
from groundforge.review_service import ReviewServer


def make_candidate(i, category):
    bits = np.zeros((16, 16), bool)
    bits[2:6, 2:6] = True
    return {
        "sample_id": f"cand_{i:05d}",
        "image_id": f"img_{i:05d}",
        "image_uri": "",
        "width": 16,
        "height": 16,
        "text": f"review item {i}",
        "mask": rle_encode(BinaryMask.from_array(bits)).to_json(),
        "category": category,
    }


@pytest.fixture
def server(tmp_path):
    candidates = [make_candidate(i, CATEGORIES[i % 4]) for i in range(8)]
    manifest = assemble_benchmark(candidates,
                                  {"stuff": 2, "part": 2, "multi": 2, "single": 2})
    manifest.save(tmp_path / "base.json")
    store = ReviewStore(manifest, tmp_path / "audit.jsonl")
    srv = ReviewServer(store).start()
    yield srv, store, tmp_path
    srv.shutdown()


def test_next_and_decide_cycle(server):
    srv, store, _ = server
    resp = requests.get(f"{srv.base_url}/review/next").json()
    assert resp["remaining"] == 8
    item = resp["item"]
    assert item["status"] == "pending"

    decided = requests.post(f"{srv.base_url}/review/decision", json={
        "sample_id": item["sample_id"], "action": "accept",
        "reviewer_id": "alice", "expected_version": item["version"],
    })
    assert decided.status_code == 200
    assert decided.json()["item"]["status"] == "accepted"
    assert requests.get(f"{srv.base_url}/review/next").json()["remaining"] == 7


def test_category_filter(server):
    srv, _, _ = server
    resp = requests.get(f"{srv.base_url}/review/next", params={"category": "part"}).json()
    assert resp["item"]["category"] == "part"
    assert resp["remaining"] == 2


def test_stale_version_409_with_current_item(server):
    srv, _, _ = server
    item = requests.get(f"{srv.base_url}/review/next").json()["item"]
    ok = requests.post(f"{srv.base_url}/review/decision", json={
        "sample_id": item["sample_id"], "action": "accept",
        "reviewer_id": "alice", "expected_version": item["version"]})
    assert ok.status_code == 200
    stale = requests.post(f"{srv.base_url}/review/decision", json={
        "sample_id": item["sample_id"], "action": "reject",
        "reviewer_id": "bob", "expected_version": item["version"]})
    assert stale.status_code == 409
    body = stale.json()
    assert body["error"]["code"] == "version_conflict"
    assert body["item"]["version"] == item["version"] + 1
    assert body["item"]["status"] == "accepted"  # unchanged by the stale write


def test_decide_terminal_item_conflict(server):
    srv, _, _ = server
    item = requests.get(f"{srv.base_url}/review/next").json()["item"]
    requests.post(f"{srv.base_url}/review/decision", json={
        "sample_id": item["sample_id"], "action": "reject",
        "reviewer_id": "a", "expected_version": 0})
    again = requests.post(f"{srv.base_url}/review/decision", json={
        "sample_id": item["sample_id"], "action": "accept",
        "reviewer_id": "a", "expected_version": 1})
    assert again.status_code == 409
    assert again.json()["error"]["code"] == "invalid_transition"


def test_unknown_sample_404(server):
    srv, _, _ = server
    resp = requests.post(f"{srv.base_url}/review/decision", json={
        "sample_id": "ghost", "action": "accept", "expected_version": 0})
    assert resp.status_code == 404


def test_recategorize_over_http(server):
    srv, store, _ = server
    item = requests.get(f"{srv.base_url}/review/next",
                        params={"category": "single"}).json()["item"]
    resp = requests.post(f"{srv.base_url}/review/decision", json={
        "sample_id": item["sample_id"], "action": "recategorize",
        "new_category": "multi", "reviewer_id": "a",
        "expected_version": item["version"]})
    assert resp.status_code == 200
    assert resp.json()["item"]["category"] == "multi"
    assert store.manifest.item(item["sample_id"]).status == "recategorized"


def test_progress_counts(server):
    srv, _, _ = server
    for _ in range(3):
        item = requests.get(f"{srv.base_url}/review/next").json()["item"]
        requests.post(f"{srv.base_url}/review/decision", json={
            "sample_id": item["sample_id"], "action": "accept",
            "reviewer_id": "a", "expected_version": item["version"]})
    progress = requests.get(f"{srv.base_url}/review/progress").json()
    assert progress["pending"] == 5
    assert progress["decided"] == 3
    total_accepted = sum(c["accepted"] for c in progress["categories"].values())
    assert total_accepted == 3


def test_empty_queue_returns_null(server):
    srv, _, _ = server
    while True:
        resp = requests.get(f"{srv.base_url}/review/next").json()
        if resp["item"] is None:
            assert resp["remaining"] == 0
            break
        requests.post(f"{srv.base_url}/review/decision", json={
            "sample_id": resp["item"]["sample_id"], "action": "accept",
            "reviewer_id": "a", "expected_version": resp["item"]["version"]})


def test_audit_survives_restart_and_replays(server):
    srv, store, tmp_path = server
    item = requests.get(f"{srv.base_url}/review/next").json()["item"]
    requests.post(f"{srv.base_url}/review/decision", json={
        "sample_id": item["sample_id"], "action": "accept",
        "reviewer_id": "a", "expected_version": 0})
    audit = [json.loads(l) for l in (tmp_path / "audit.jsonl").read_text().splitlines()]
    replayed = apply_audit_log(BenchmarkManifest.load(tmp_path / "base.json"), audit)
    assert replayed.to_json() == store.manifest.to_json()


def test_cors_preflight(server):
    srv, _, _ = server
    resp = requests.options(f"{srv.base_url}/review/decision")
    assert resp.status_code == 204
    assert resp.headers["Access-Control-Allow-Origin"] == "*"
