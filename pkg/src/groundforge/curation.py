"""Benchmark curation: category screening, trimap+matting boundary
refinement, quota-based assembly, human-review ingestion with optimistic
versioning, and bbox-benchmark derivation.
"""
from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from .datastore import atomic_write, dump_record
from .errors import (
    EmptyMaskError,
    GatewayError,
    InvalidTransitionError,
    QuotaUnmetError,
    UnknownCategoryError,
    UnknownSampleError,
    UnparseableVerdictError,
    VersionConflictError,
)
from .gateway import GatewayClient, ImageRef
from .maskcore import (
    RleMask,
    binarize_alpha,
    default_trimap_band,
    mask_iou,
    rle_decode,
    rle_encode,
    tight_bbox,
    trimap_from_mask,
)
from .metrics import CATEGORIES

logger = logging.getLogger(__name__)

PENDING = "pending"
ACCEPTED = "accepted"
REJECTED = "rejected"
RECATEGORIZED = "recategorized"
STATUSES = (PENDING, ACCEPTED, REJECTED, RECATEGORIZED)
# recategorized items count toward their new category's accepted pool
ACCEPT_STATUSES = (ACCEPTED, RECATEGORIZED)

ACTIONS = ("accept", "reject", "recategorize", "reset")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class ReviewItem:
    sample_id: str
    image: ImageRef
    referring_text: str
    mask: RleMask
    proposed_category: str
    category: str
    status: str = PENDING
    reviewer_id: "str | None" = None
    decided_at: "str | None" = None
    version: int = 0

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "image": self.image.to_json(),
            "referring_text": self.referring_text,
            "mask": self.mask.to_json(),
            "proposed_category": self.proposed_category,
            "category": self.category,
            "status": self.status,
            "reviewer_id": self.reviewer_id,
            "decided_at": self.decided_at,
            "version": self.version,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ReviewItem":
        return cls(
            sample_id=obj["sample_id"],
            image=ImageRef.from_json(obj["image"]),
            referring_text=obj["referring_text"],
            mask=RleMask.from_json(obj["mask"]),
            proposed_category=obj["proposed_category"],
            category=obj["category"],
            status=obj.get("status", PENDING),
            reviewer_id=obj.get("reviewer_id"),
            decided_at=obj.get("decided_at"),
            version=int(obj.get("version", 0)),
        )


@dataclass
class BenchmarkManifest:
    name: str
    quotas: dict[str, int]
    items: list[ReviewItem]
    finalized: bool = False

    def __post_init__(self):
        self._by_id = {item.sample_id: item for item in self.items}

    def item(self, sample_id: str) -> ReviewItem:
        found = self._by_id.get(sample_id)
        if found is None:
            raise UnknownSampleError(sample_id)
        return found

    def category_counts(self, statuses=ACCEPT_STATUSES) -> dict[str, int]:
        counts = {cat: 0 for cat in CATEGORIES}
        for item in self.items:
            if item.status in statuses:
                counts[item.category] += 1
        return counts

    def status_counts(self) -> dict[str, dict[str, int]]:
        counts = {cat: {s: 0 for s in STATUSES} for cat in CATEGORIES}
        for item in self.items:
            counts[item.category][item.status] += 1
        return counts

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "quotas": self.quotas,
            "finalized": self.finalized,
            "items": [item.to_json() for item in self.items],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BenchmarkManifest":
        return cls(
            name=obj["name"],
            quotas=dict(obj["quotas"]),
            items=[ReviewItem.from_json(i) for i in obj["items"]],
            finalized=bool(obj.get("finalized", False)),
        )

    def save(self, path: "str | Path") -> None:
        atomic_write(Path(path),
                     (json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n")
                     .encode("utf-8"))

    @classmethod
    def load(cls, path: "str | Path") -> "BenchmarkManifest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


# -- classification & screening ------------------------------------------------


def classify_and_screen(records: list[dict], client: GatewayClient):
    """Attach a category to every sample, or divert it: classifier says the
    referring text is wrong -> reject; classifier unusable -> quarantine.
    Returns (categorized, rejects, quarantined)."""
    categorized: list[dict] = []
    rejects: list[dict] = []
    quarantined: list[dict] = []
    for record in records:
        image = ImageRef(
            image_id=record["image_id"], uri=record.get("image_uri", ""),
            width=record["width"], height=record["height"],
        )
        try:
            category, valid = client.classify_category(
                image, record["text"], RleMask.from_json(record["mask"]))
        except (UnparseableVerdictError, GatewayError) as exc:
            quarantined.append({**record, "error": f"{type(exc).__name__}: {exc}"})
            continue
        if not valid:
            rejects.append({**record, "reason": "referring_incorrect"})
            continue
        categorized.append({**record, "category": category})
    return categorized, rejects, quarantined


# -- boundary refinement ----------------------------------------------------------


def refine_boundary(record: dict, client: GatewayClient,
                    band: "int | None" = None,
                    alpha_threshold: float = 0.5) -> dict:
    """trimap -> matting -> binarize. The refined mask replaces the coarse
    one; the original and an IoU audit value ride along. Gateway failures
    leave the original in place, flagged refine_skipped."""
    mask = RleMask.from_json(record["mask"])
    decoded = rle_decode(mask)
    if decoded.is_empty:
        raise EmptyMaskError(record["sample_id"])
    if band is None:
        band = default_trimap_band(decoded.width, decoded.height)
    image = ImageRef(
        image_id=record["image_id"], uri=record.get("image_uri", ""),
        width=record["width"], height=record["height"],
    )
    trimap = trimap_from_mask(decoded, band)
    try:
        alpha = client.matte(image, trimap)
    except GatewayError as exc:
        logger.warning("matting failed for %s: %s", record["sample_id"], exc)
        return {**record, "refine": {"flags": ["refine_skipped"],
                                     "error": f"{type(exc).__name__}: {exc}"}}
    refined = binarize_alpha(alpha, alpha_threshold)
    audit_iou = mask_iou(decoded, refined)
    flags = [] if audit_iou >= 0.5 else ["refine_divergent"]
    return {
        **record,
        "mask": rle_encode(refined).to_json(),
        "refine": {
            "original_mask": mask.to_json(),
            "iou": audit_iou,
            "band": band,
            "flags": flags,
        },
    }


# -- assembly ----------------------------------------------------------------------


def assemble_benchmark(candidates: list[dict], quotas: dict[str, int],
                       name: str = "benchmark",
                       allow_short: bool = False) -> BenchmarkManifest:
    """Deterministic selection: per category, candidates sorted by
    sample_id, at most one sample per image across the whole benchmark."""
    for cat in quotas:
        if cat not in CATEGORIES:
            raise UnknownCategoryError(cat)
    buckets: dict[str, list[dict]] = {cat: [] for cat in CATEGORIES}
    for record in candidates:
        category = record.get("category")
        if category is None:
            continue
        if category not in CATEGORIES:
            raise UnknownCategoryError(f"{record['sample_id']}: {category!r}")
        buckets[category].append(record)

    used_images: set[str] = set()
    items: list[ReviewItem] = []
    for cat in CATEGORIES:
        quota = quotas.get(cat, 0)
        picked = 0
        for record in sorted(buckets[cat], key=lambda r: r["sample_id"]):
            if picked >= quota:
                break
            if record["image_id"] in used_images:
                continue
            used_images.add(record["image_id"])
            picked += 1
            items.append(ReviewItem(
                sample_id=record["sample_id"],
                image=ImageRef(
                    image_id=record["image_id"], uri=record.get("image_uri", ""),
                    width=record["width"], height=record["height"],
                ),
                referring_text=record["text"],
                mask=RleMask.from_json(record["mask"]),
                proposed_category=cat,
                category=cat,
            ))
        if picked < quota and not allow_short:
            raise QuotaUnmetError(
                f"category {cat}: {picked} of {quota} candidates available"
            )
    return BenchmarkManifest(name=name, quotas=dict(quotas), items=items)


# -- review ingestion ---------------------------------------------------------------


def ingest_review(manifest: BenchmarkManifest, decision: dict) -> ReviewItem:
    """Apply one reviewer decision under optimistic concurrency. The decision
    carries {sample_id, action, new_category?, reviewer_id, expected_version}
    and optionally decided_at (audit replay supplies it)."""
    item = manifest.item(decision["sample_id"])
    expected = int(decision["expected_version"])
    if expected != item.version:
        raise VersionConflictError(item.sample_id, expected, item.version)
    action = decision["action"]
    if action not in ACTIONS:
        raise ValueError(f"unknown action {action!r}")

    if action == "reset":
        # audited admin escape hatch; the only path out of a terminal state
        item.status = PENDING
        item.category = item.proposed_category
        item.reviewer_id = decision.get("reviewer_id")
        item.decided_at = decision.get("decided_at") or _now()
        item.version += 1
        return item

    if item.status != PENDING:
        raise InvalidTransitionError(
            f"{item.sample_id} is {item.status}, not pending"
        )
    if action == "accept":
        item.status = ACCEPTED
    elif action == "reject":
        item.status = REJECTED
    else:  # recategorize
        new_category = decision.get("new_category")
        if new_category not in CATEGORIES:
            raise UnknownCategoryError(f"new_category {new_category!r}")
        item.status = RECATEGORIZED
        item.category = new_category
    item.reviewer_id = decision.get("reviewer_id")
    item.decided_at = decision.get("decided_at") or _now()
    item.version += 1
    return item


def apply_audit_log(manifest: BenchmarkManifest, audit_records: list[dict]) -> BenchmarkManifest:
    """Replay an audit log over a fresh manifest; by construction the result
    equals the live state the log was recorded from."""
    for record in audit_records:
        ingest_review(manifest, record)
    return manifest


class ReviewStore:
    """Serialized review state: a base manifest plus an append-only audit
    log. Every decision is durably logged before it is acknowledged."""

    def __init__(self, manifest: BenchmarkManifest, audit_path: "str | Path"):
        self._lock = threading.Lock()
        self.manifest = manifest
        self.audit_path = Path(audit_path)
        self._seq = 0
        if self.audit_path.exists():
            records = [json.loads(line) for line in
                       self.audit_path.read_text(encoding="utf-8").splitlines() if line]
            apply_audit_log(self.manifest, records)
            self._seq = len(records)

    def next_pending(self, category: "str | None" = None,
                     reviewer: "str | None" = None) -> "ReviewItem | None":
        with self._lock:
            for item in self.manifest.items:
                if item.status != PENDING:
                    continue
                if category is not None and item.category != category:
                    continue
                return item
        return None

    def pending_count(self, category: "str | None" = None) -> int:
        with self._lock:
            return sum(
                1 for i in self.manifest.items
                if i.status == PENDING and (category is None or i.category == category)
            )

    def decide(self, decision: dict) -> ReviewItem:
        with self._lock:
            decision = dict(decision)
            decision.setdefault("decided_at", _now())
            item = ingest_review(self.manifest, decision)
            self._seq += 1
            audit = {"seq": self._seq, **decision}
            with open(self.audit_path, "a", encoding="utf-8") as fh:
                fh.write(dump_record(audit))
                fh.flush()
            return item

    def progress(self) -> dict:
        with self._lock:
            status_counts = self.manifest.status_counts()
            return {
                "name": self.manifest.name,
                "quotas": self.manifest.quotas,
                "categories": status_counts,
                "pending": sum(c[PENDING] for c in status_counts.values()),
                "decided": sum(
                    c[ACCEPTED] + c[REJECTED] + c[RECATEGORIZED]
                    for c in status_counts.values()
                ),
            }

    def snapshot(self, path: "str | Path") -> None:
        with self._lock:
            self.manifest.save(path)


# -- finalization & export -----------------------------------------------------------


def finalize_benchmark(manifest: BenchmarkManifest) -> BenchmarkManifest:
    """A finalized manifest has exactly quota-many accepted items per
    category and unique images."""
    counts = manifest.category_counts()
    for cat, quota in manifest.quotas.items():
        if counts.get(cat, 0) != quota:
            raise QuotaUnmetError(
                f"category {cat}: {counts.get(cat, 0)} accepted, quota {quota}"
            )
    images = [i.image.image_id for i in manifest.items if i.status in ACCEPT_STATUSES]
    if len(images) != len(set(images)):
        raise ValueError("finalized benchmark reuses an image")
    manifest.finalized = True
    return manifest


def accepted_items(manifest: BenchmarkManifest) -> list[ReviewItem]:
    return [i for i in manifest.items if i.status in ACCEPT_STATUSES]


def benchmark_records(manifest: BenchmarkManifest) -> list[dict]:
    """Accepted items as dataset records (ground-truth mask form)."""
    records = []
    for item in accepted_items(manifest):
        records.append({
            "sample_id": item.sample_id,
            "image_id": item.image.image_id,
            "image_uri": item.image.uri,
            "width": item.image.width,
            "height": item.image.height,
            "text": item.referring_text,
            "mask": item.mask.to_json(),
            "category": item.category,
        })
    return records


def derive_bbox_benchmark(manifest: BenchmarkManifest) -> list[dict]:
    """Tight boxes from the accepted masks. Multi-object masks are already
    stored as union masks, so their tight box spans every member object."""
    if not manifest.finalized:
        raise ValueError("derive_bbox_benchmark requires a finalized manifest")
    records = []
    for item in accepted_items(manifest):
        box = tight_bbox(rle_decode(item.mask))
        records.append({
            "sample_id": item.sample_id,
            "image_id": item.image.image_id,
            "image_uri": item.image.uri,
            "width": item.image.width,
            "height": item.image.height,
            "text": item.referring_text,
            "category": item.category,
            "bbox": box.to_list(),
        })
    return records


def export_benchmark(manifest: BenchmarkManifest, out_dir: "str | Path") -> dict:
    """JSONL per category plus a combined file, and the bbox twin."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = benchmark_records(manifest)
    paths = {}
    for cat in CATEGORIES:
        cat_records = [r for r in records if r["category"] == cat]
        path = out_dir / f"{manifest.name}.{cat}.jsonl"
        atomic_write(path, "".join(dump_record(r) for r in cat_records).encode("utf-8"))
        paths[cat] = str(path)
    combined = out_dir / f"{manifest.name}.jsonl"
    atomic_write(combined, "".join(dump_record(r) for r in records).encode("utf-8"))
    paths["combined"] = str(combined)
    bbox_records = derive_bbox_benchmark(manifest)
    bbox_path = out_dir / f"{manifest.name}.bbox.jsonl"
    atomic_write(bbox_path, "".join(dump_record(r) for r in bbox_records).encode("utf-8"))
    paths["bbox"] = str(bbox_path)
    return paths
