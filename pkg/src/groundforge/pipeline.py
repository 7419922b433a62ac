"""Three-phase annotation orchestration: entity spatial localization,
referring-text generation, and IoU noise filtering.

Images are independent work units processed in parallel; results are
journaled in manifest order (buffered, torn-tail tolerant), which makes
the entire output tree — shards, reject log, run report and the journal
itself — a byte-deterministic function of (manifest, config, stub seed),
regardless of concurrency or interruption.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import PipelineConfig
from .datastore import ShardSet, atomic_write, dump_record, write_shards
from .errors import GatewayError, GroundforgeError
from .gateway import (
    BackendEndpoint,
    GatewayClient,
    ImageRef,
    default_templates,
    load_templates,
)
from .maskcore import BBox, RleMask, mask_iou, rle_decode, rle_encode

logger = logging.getLogger(__name__)

PIPELINE_VERSION = "0.1"


class EmptyGenerationError(GroundforgeError):
    """Text generation returned only whitespace."""


class ResumeMismatchError(GroundforgeError):
    """Checkpoint journal belongs to a different manifest or config."""


@dataclass(frozen=True)
class GroundedRegion:
    image: ImageRef
    ordinal: int
    phrase: str
    bbox: BBox
    mask: RleMask
    caption_excerpt: str
    confidence: "float | None" = None


@dataclass(frozen=True)
class FilterVerdict:
    kept: bool
    iou: float


@dataclass
class RunReport:
    images: int = 0
    done: int = 0
    no_entities: int = 0
    failed: int = 0
    regions: int = 0
    generated: int = 0
    kept: int = 0
    dropped: int = 0
    filter_errors: int = 0
    generation_errors: int = 0
    partial: bool = False
    # wall-clock only; kept out of the serialized report so re-runs stay
    # byte-identical
    timings: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "images": self.images,
            "done": self.done,
            "no_entities": self.no_entities,
            "failed": self.failed,
            "regions": self.regions,
            "generated": self.generated,
            "kept": self.kept,
            "dropped": self.dropped,
            "filter_errors": self.filter_errors,
            "generation_errors": self.generation_errors,
            "partial": self.partial,
        }


def make_client(config: PipelineConfig, sleep_fn=time.sleep) -> GatewayClient:
    endpoints = {
        role: BackendEndpoint(
            role=role,
            base_url=url,
            timeout=config.timeout,
            max_retries=config.max_retries,
            max_in_flight=config.max_in_flight,
        )
        for role, url in config.resolved_endpoints().items()
    }
    # jitter stays off under a fixed stub seed so runs are reproducible
    return GatewayClient(endpoints, sleep_fn=sleep_fn, jitter=config.stub_seed is None)


def load_manifest(path: "str | Path") -> list[ImageRef]:
    """JSONL of {"image_id","uri","width","height"}; sorted by image_id."""
    images: dict[str, ImageRef] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            ref = ImageRef(
                image_id=str(obj["image_id"]),
                uri=str(obj.get("uri", "")),
                width=int(obj["width"]),
                height=int(obj["height"]),
            )
            if ref.image_id in images:
                raise ValueError(f"{path}:{lineno}: duplicate image_id {ref.image_id!r}")
            images[ref.image_id] = ref
    return [images[k] for k in sorted(images)]


def _digest(obj) -> str:
    data = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(data).hexdigest()[:16]


class Pipeline:
    """Per-image stage logic; thread-safe, shares one gateway client."""

    def __init__(self, client: GatewayClient, config: PipelineConfig, templates=None):
        self.client = client
        self.config = config
        self.templates = templates or (
            load_templates(config.templates_path) if config.templates_path
            else default_templates()
        )
        self._timing_lock = threading.Lock()
        self.stage_seconds = {"localize": 0.0, "generate": 0.0, "filter": 0.0}

    def _timed(self, stage: str, started: float) -> None:
        with self._timing_lock:
            self.stage_seconds[stage] += time.monotonic() - started

    # -- stage 1 -----------------------------------------------------------

    def localize_entities(self, image: ImageRef) -> list[GroundedRegion]:
        """caption -> phrase grounding -> one region per (phrase, box),
        with case-folded phrase dedup inside the caption."""
        caption = self.client.caption(image, prompt=self.templates["caption"].text)
        phrases = self.client.ground_phrases(image, caption)
        regions: list[GroundedRegion] = []
        seen: set[str] = set()
        ordinal = 0
        for phrase in phrases:
            key = phrase.phrase.casefold()
            if key in seen:
                continue
            seen.add(key)
            for i, box in enumerate(phrase.boxes):
                mask = self.client.segment_box(image, box)
                regions.append(GroundedRegion(
                    image=image,
                    ordinal=ordinal,
                    phrase=phrase.phrase,
                    bbox=box,
                    mask=rle_encode(mask),
                    caption_excerpt=caption[:160],
                    confidence=(phrase.confidences[i] if phrase.confidences else None),
                ))
                ordinal += 1
        return regions

    # -- stage 2 -----------------------------------------------------------

    def generate_referring_text(self, image: ImageRef,
                                region: GroundedRegion) -> tuple[str, list[str]]:
        template = self.templates["refer_gen"]
        prompt = template.render(caption=region.caption_excerpt, referring=region.phrase)
        text = self.client.caption(image, prompt=prompt, phrase=region.phrase)
        if not text.strip():
            raise EmptyGenerationError(f"{image.image_id}#{region.ordinal}")
        words = len(text.split())
        flags = []
        if words < self.config.min_words:
            flags.append("short_text")
        if words > self.config.max_words:
            flags.append("long_text")
        return text, flags

    # -- stage 3 -----------------------------------------------------------

    def filter_sample(self, image: ImageRef, text: str, mask: RleMask) -> FilterVerdict:
        predicted = self.client.refer_segment(image, text)
        iou = mask_iou(rle_decode(mask), predicted)
        return FilterVerdict(kept=iou >= self.config.filter_iou_threshold, iou=iou)

    # -- step functions shared by the fused and global execution modes --------

    def _localize_step(self, image: ImageRef) -> tuple[dict, "list[GroundedRegion] | None"]:
        """Stage-1 unit: the journal entry shell plus this image's regions
        (None when the image reached a terminal state already)."""
        started = time.monotonic()
        counters = {k: 0 for k in ("regions", "generated", "kept", "dropped",
                                   "filter_errors", "generation_errors")}
        entry: dict = {"image_id": image.image_id, "state": "done",
                       "samples": [], "rejects": [], "counters": counters}
        try:
            regions = self.localize_entities(image)
        except GatewayError as exc:
            entry["state"] = "failed"
            entry["error"] = f"{type(exc).__name__}: {exc}"
            self._timed("localize", started)
            return entry, None
        self._timed("localize", started)
        if not regions:
            entry["state"] = "no_entities"
            return entry, None
        counters["regions"] = len(regions)
        return entry, regions

    def _generate_step(self, image: ImageRef, region: GroundedRegion) -> tuple:
        started = time.monotonic()
        template_version = self.templates["refer_gen"].version
        sample_id = f"{image.image_id}-{region.ordinal:03d}-{template_version}"
        try:
            text, flags = self.generate_referring_text(image, region)
        except (GatewayError, EmptyGenerationError) as exc:
            self._timed("generate", started)
            return ("generation_error", sample_id,
                    f"{type(exc).__name__}: {exc}")
        self._timed("generate", started)
        return ("generated", sample_id, text, flags)

    def _filter_step(self, image: ImageRef, region: GroundedRegion,
                     sample_id: str, text: str, flags: list[str]) -> tuple:
        started = time.monotonic()
        template_version = self.templates["refer_gen"].version
        try:
            verdict = self.filter_sample(image, text, region.mask)
        except GatewayError as exc:
            self._timed("filter", started)
            return ("filter_error", {
                "sample_id": sample_id,
                "reason": "filter_error",
                "error": f"{type(exc).__name__}: {exc}",
            })
        self._timed("filter", started)
        if verdict.kept:
            return ("kept", self._sample_record(
                sample_id, image, region, text, flags, verdict.iou,
                template_version))
        return ("dropped", {
            "sample_id": sample_id,
            "reason": "below_threshold",
            "filter_iou": verdict.iou,
        })

    @staticmethod
    def _apply_outcome(entry: dict, outcome: tuple) -> None:
        counters = entry["counters"]
        kind = outcome[0]
        if kind == "generation_error":
            counters["generation_errors"] += 1
            entry["rejects"].append({
                "sample_id": outcome[1],
                "reason": "generation_error",
                "error": outcome[2],
            })
        elif kind == "kept":
            counters["kept"] += 1
            entry["samples"].append(outcome[1])
        elif kind == "dropped":
            counters["dropped"] += 1
            entry["rejects"].append(outcome[1])
        elif kind == "filter_error":
            counters["filter_errors"] += 1
            entry["rejects"].append(outcome[1])
        else:
            raise AssertionError(f"unknown outcome {kind!r}")

    # -- per-image unit (fused mode) ---------------------------------------------

    def process_image(self, image: ImageRef) -> dict:
        entry, regions = self._localize_step(image)
        if regions is None:
            return entry
        for region in regions:
            generated = self._generate_step(image, region)
            if generated[0] != "generated":
                self._apply_outcome(entry, generated)
                continue
            entry["counters"]["generated"] += 1
            _tag, sample_id, text, flags = generated
            self._apply_outcome(entry, self._filter_step(
                image, region, sample_id, text, flags))
        return entry

    # -- whole-corpus passes (global mode) ------------------------------------------

    def process_images_global(self, images: list[ImageRef],
                              concurrency: int) -> list[dict]:
        """Three corpus-wide passes (localize all, generate all, filter all)
        for cache-friendly batch backends. Emits the exact entries the fused
        mode would, in input order."""
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            stage1 = list(pool.map(self._localize_step, images))
            gen_tasks = [(image, region)
                         for image, (_entry, regions) in zip(images, stage1)
                         for region in (regions or [])]
            generated = list(pool.map(
                lambda task: self._generate_step(*task), gen_tasks))
            filter_tasks = [
                (image, region, gen[1], gen[2], gen[3])
                for (image, region), gen in zip(gen_tasks, generated)
                if gen[0] == "generated"
            ]
            filtered = list(pool.map(
                lambda task: self._filter_step(*task), filter_tasks))

        filtered_iter = iter(filtered)
        outcomes_by_image: dict[str, list[tuple]] = {}
        generated_counts: dict[str, int] = {}
        for (image, _region), gen in zip(gen_tasks, generated):
            if gen[0] == "generated":
                generated_counts[image.image_id] = (
                    generated_counts.get(image.image_id, 0) + 1)
                outcome = next(filtered_iter)
            else:
                outcome = gen
            outcomes_by_image.setdefault(image.image_id, []).append(outcome)

        entries = []
        for image, (entry, regions) in zip(images, stage1):
            if regions is not None:
                entry["counters"]["generated"] = generated_counts.get(image.image_id, 0)
                for outcome in outcomes_by_image.get(image.image_id, []):
                    self._apply_outcome(entry, outcome)
            entries.append(entry)
        return entries

    def _sample_record(self, sample_id, image, region, text, flags, iou,
                       template_version) -> dict:
        provenance = {
            "pipeline_version": PIPELINE_VERSION,
            "template_version": template_version,
            "backends": self.client.backend_ids(),
            "phrase": region.phrase,
            "flags": flags,
        }
        if region.confidence is not None:
            provenance["grounder_confidence"] = region.confidence
        return {
            "sample_id": sample_id,
            "image_id": image.image_id,
            "image_uri": image.uri,
            "width": image.width,
            "height": image.height,
            "text": text,
            "mask": region.mask.to_json(),
            "bbox": region.bbox.to_list(),
            "filter_iou": iou,
            "provenance": provenance,
        }


# -- journal -----------------------------------------------------------------


def _replay_journal(path: Path, header: dict) -> dict[str, dict]:
    """Load terminal image states; truncate a torn trailing line. The header
    must match the current run's digests."""
    if not path.exists():
        return {}
    done: dict[str, dict] = {}
    good_end = 0
    data = path.read_bytes()
    offset = 0
    first = True
    for raw in data.splitlines(keepends=True):
        line = raw.strip()
        if not line:
            offset += len(raw)
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            if offset + len(raw) >= len(data):
                break  # torn tail from an interrupted write
            raise
        if not raw.endswith(b"\n"):
            break  # incomplete final line
        if first:
            first = False
            if "header" not in obj or obj["header"] != header:
                raise ResumeMismatchError(
                    f"checkpoint {path} was written for a different manifest/config"
                )
        else:
            done[obj["image_id"]] = obj
        offset += len(raw)
        good_end = offset
    if good_end < len(data):
        with open(path, "r+b") as fh:
            fh.truncate(good_end)
    return done


def run_pipeline(manifest_path, out_dir, config: PipelineConfig,
                 client: "GatewayClient | None" = None,
                 halt_after: "int | None" = None) -> RunReport:
    """Drive every manifest image to a terminal state and write the output
    tree: shards/, rejects.jsonl, run_report.json (plus the checkpoint
    journal). Resumable and byte-deterministic."""
    t0 = time.monotonic()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = load_manifest(manifest_path)
    journal_path = (Path(config.checkpoint_path) if config.checkpoint_path
                    else out_dir / "checkpoint" / "journal.jsonl")
    journal_path.parent.mkdir(parents=True, exist_ok=True)

    if client is None:
        client = make_client(config)
    pipeline = Pipeline(client, config)

    header = {
        "pipeline_version": PIPELINE_VERSION,
        "config_digest": _digest(config.canonical_dict()),
        "manifest_digest": _digest([img.to_json() for img in images]),
    }
    done = _replay_journal(journal_path, header)
    pending = [img for img in images if img.image_id not in done]
    if halt_after is not None:
        pending = pending[:halt_after]
    logger.info("pipeline: %d images, %d already journaled, %d to process",
                len(images), len(done), len(pending))

    t_process = time.monotonic()
    with open(journal_path, "ab") as journal:
        if journal.tell() == 0:
            journal.write(dump_record({"header": header}).encode("utf-8"))
            journal.flush()
            os.fsync(journal.fileno())

        def journal_entry(entry: dict) -> None:
            journal.write(dump_record(entry).encode("utf-8"))
            journal.flush()
            os.fsync(journal.fileno())
            done[entry["image_id"]] = entry

        if config.stage_mode == "global":
            # three corpus-wide passes; journaled once at the end, so resume
            # granularity is the whole invocation
            for entry in pipeline.process_images_global(pending, config.concurrency):
                journal_entry(entry)
        else:
            with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
                # map() yields in submission order, which keeps the journal in
                # manifest order no matter how scheduling interleaves
                for entry in pool.map(pipeline.process_image, pending):
                    journal_entry(entry)

    report = RunReport(images=len(images))
    for image in images:
        entry = done.get(image.image_id)
        if entry is None:
            continue
        state = entry["state"]
        if state == "done":
            report.done += 1
        elif state == "no_entities":
            report.no_entities += 1
        else:
            report.failed += 1
        for key in ("regions", "generated", "kept", "dropped",
                    "filter_errors", "generation_errors"):
            setattr(report, key, getattr(report, key) + entry["counters"].get(key, 0))

    if len(done) < len(images):
        report.partial = True
        report.timings = {"total_s": time.monotonic() - t0,
                          **{f"{k}_s": v for k, v in pipeline.stage_seconds.items()}}
        logger.info("pipeline halted early: %d/%d images journaled",
                    len(done), len(images))
        return report

    samples = [s for img in images for s in done[img.image_id]["samples"]]
    rejects = [r for img in images for r in done[img.image_id]["rejects"]]
    write_shards(samples, out_dir / "shards", config.shard_size)
    atomic_write(out_dir / "rejects.jsonl",
                 "".join(dump_record(r) for r in rejects).encode("utf-8"))
    report_obj = dict(report.to_json())
    report_obj.update(header)
    report_obj["backends"] = client.backend_ids()
    atomic_write(out_dir / "run_report.json",
                 (json.dumps(report_obj, sort_keys=True, indent=2) + "\n").encode("utf-8"))

    report.timings = {
        "total_s": time.monotonic() - t0,
        "process_s": time.monotonic() - t_process,
        **{f"{k}_s": v for k, v in pipeline.stage_seconds.items()},
    }
    logger.info("pipeline finished: %s (timings: %s)",
                report.to_json(), report.timings)
    return report


def open_output_shards(out_dir) -> ShardSet:
    return ShardSet.open(Path(out_dir) / "shards")
