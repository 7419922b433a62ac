"""Sharded JSONL dataset storage and corpus statistics.

Shards are plain JSONL with a tab-separated text index
(``name\tfirst_id\tcount\tsha256``), so everything stays greppable and
streamable. Writes are crash-safe (temp file + atomic rename) and the
index can always be rebuilt from a shard scan.

Record schema (field names are part of the interchange contract):
{"sample_id","image_id","image_uri","width","height","text",
 "mask":{"size":[h,w],"counts":[...]},"bbox":[x0,y0,x1,y1]?,
 "category"?,"filter_iou"?,"provenance":{...}}
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import BinMismatchError, ChecksumError, OutOfOrderError

INDEX_NAME = "shards.index"
SHARD_PATTERN = "shard-{:05d}.jsonl"


def dump_record(record: dict) -> str:
    """Canonical one-line serialization; keeps runs byte-reproducible."""
    return json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"


def atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


@dataclass(frozen=True)
class ShardEntry:
    name: str
    first_id: str
    count: int
    sha256: str


@dataclass
class ShardSet:
    root: Path
    entries: list[ShardEntry]

    @property
    def n_records(self) -> int:
        return sum(e.count for e in self.entries)

    def index_text(self) -> str:
        return "".join(
            f"{e.name}\t{e.first_id}\t{e.count}\t{e.sha256}\n" for e in self.entries
        )

    def write_index(self) -> None:
        atomic_write(self.root / INDEX_NAME, self.index_text().encode("utf-8"))

    @classmethod
    def open(cls, root: "str | Path") -> "ShardSet":
        """Open an existing shard set; a missing or stale index is rebuilt
        from a shard scan (the crash-recovery path)."""
        root = Path(root)
        index_path = root / INDEX_NAME
        names = sorted(p.name for p in root.glob("shard-*.jsonl"))
        if index_path.exists():
            entries = []
            for line in index_path.read_text(encoding="utf-8").splitlines():
                name, first_id, count, digest = line.split("\t")
                entries.append(ShardEntry(name, first_id, int(count), digest))
            if [e.name for e in entries] == names:
                return cls(root=root, entries=entries)
        shardset = cls(root=root, entries=[_scan_shard(root / n) for n in names])
        shardset.write_index()
        return shardset

    def iter_records(self, verify: bool = True) -> Iterator[dict]:
        for entry in self.entries:
            path = self.root / entry.name
            data = path.read_bytes()
            if verify and hashlib.sha256(data).hexdigest() != entry.sha256:
                raise ChecksumError(entry.name)
            for line in data.decode("utf-8").splitlines():
                if line:
                    yield json.loads(line)


def _scan_shard(path: Path) -> ShardEntry:
    data = path.read_bytes()
    lines = [ln for ln in data.decode("utf-8").splitlines() if ln]
    first_id = json.loads(lines[0])["sample_id"] if lines else ""
    return ShardEntry(
        name=path.name,
        first_id=first_id,
        count=len(lines),
        sha256=hashlib.sha256(data).hexdigest(),
    )


def write_shards(records: Iterable[dict], root: "str | Path",
                 shard_size: int) -> ShardSet:
    """Write records (already in strictly increasing sample_id order) into
    shards of at most shard_size, then the index. Each file lands via an
    atomic rename."""
    if shard_size < 1:
        raise ValueError(f"shard_size must be >= 1, got {shard_size}")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries: list[ShardEntry] = []
    buffer: list[str] = []
    first_id = ""
    last_id: "str | None" = None

    def flush():
        nonlocal buffer, first_id
        if not buffer:
            return
        name = SHARD_PATTERN.format(len(entries))
        data = "".join(buffer).encode("utf-8")
        atomic_write(root / name, data)
        entries.append(ShardEntry(
            name=name, first_id=first_id, count=len(buffer),
            sha256=hashlib.sha256(data).hexdigest(),
        ))
        buffer = []

    for record in records:
        sample_id = record["sample_id"]
        if last_id is not None and sample_id <= last_id:
            raise OutOfOrderError(f"{sample_id!r} after {last_id!r}")
        last_id = sample_id
        if not buffer:
            first_id = sample_id
        buffer.append(dump_record(record))
        if len(buffer) >= shard_size:
            flush()
    flush()
    shardset = ShardSet(root=root, entries=entries)
    shardset.write_index()
    return shardset


# -- corpus statistics ---------------------------------------------------------


@dataclass
class DatasetStats:
    """Mergeable (monoid) corpus statistics: referring-text word counts,
    mask area ratios, and a normalized centroid heatmap."""

    count: int = 0
    word_sum: int = 0
    word_hist: dict[int, int] = field(default_factory=dict)
    area_bins: int = 20
    area_hist: list[int] = field(default_factory=list)
    grid: int = 20
    centroid_grid: list[list[int]] = field(default_factory=list)
    empty_masks: int = 0

    def __post_init__(self):
        if not self.area_hist:
            self.area_hist = [0] * self.area_bins
        if not self.centroid_grid:
            self.centroid_grid = [[0] * self.grid for _ in range(self.grid)]

    @property
    def mean_words(self) -> float:
        return self.word_sum / self.count if self.count else 0.0

    @property
    def median_words(self) -> float:
        if not self.count:
            return 0.0
        ordered = sorted(self.word_hist.items())
        lo_rank = (self.count - 1) // 2
        hi_rank = self.count // 2
        lo = hi = None
        seen = 0
        for words, n in ordered:
            seen += n
            if lo is None and seen > lo_rank:
                lo = words
            if hi is None and seen > hi_rank:
                hi = words
                break
        return (lo + hi) / 2

    def add_record(self, record: dict) -> None:
        words = len(record["text"].split())
        self.count += 1
        self.word_sum += words
        self.word_hist[words] = self.word_hist.get(words, 0) + 1

        size = record["mask"]["size"]
        height, width = int(size[0]), int(size[1])
        runs = record["mask"]["counts"]
        area = sum(runs[1::2])
        ratio = area / (width * height)
        self.area_hist[min(int(ratio * self.area_bins), self.area_bins - 1)] += 1

        if area == 0:
            self.empty_masks += 1
            return
        row_sum, col_sum = _rle_centroid_sums(runs, height)
        r = (row_sum / area) / height
        c = (col_sum / area) / width
        gr = min(int(r * self.grid), self.grid - 1)
        gc = min(int(c * self.grid), self.grid - 1)
        self.centroid_grid[gr][gc] += 1

    def to_json(self) -> dict:
        return {
            "count": self.count,
            "word_count": {
                "mean": self.mean_words,
                "median": self.median_words,
                "histogram": {str(k): v for k, v in sorted(self.word_hist.items())},
            },
            "area_ratio_histogram": {"bins": self.area_bins, "counts": self.area_hist},
            "centroid_heatmap": {"grid": self.grid, "counts": self.centroid_grid},
            "empty_masks": self.empty_masks,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetStats":
        stats = cls(
            count=obj["count"],
            word_sum=0,
            word_hist={int(k): v for k, v in obj["word_count"]["histogram"].items()},
            area_bins=obj["area_ratio_histogram"]["bins"],
            area_hist=list(obj["area_ratio_histogram"]["counts"]),
            grid=obj["centroid_heatmap"]["grid"],
            centroid_grid=[list(row) for row in obj["centroid_heatmap"]["counts"]],
            empty_masks=obj.get("empty_masks", 0),
        )
        stats.word_sum = sum(k * v for k, v in stats.word_hist.items())
        return stats


def _rle_centroid_sums(runs, height: int) -> tuple[int, int]:
    """Sum of row and column indices over all foreground pixels, straight
    from the column-major runs in O(#runs) integer arithmetic."""

    def row_prefix(n: int) -> int:  # sum of (t % height) for t < n
        q, r = divmod(n, height)
        return q * (height * (height - 1) // 2) + r * (r - 1) // 2

    def col_prefix(n: int) -> int:  # sum of (t // height) for t < n
        q, r = divmod(n, height)
        return height * q * (q - 1) // 2 + r * q

    row_sum = col_sum = 0
    pos = 0
    for i, run in enumerate(runs):
        if i % 2 == 1 and run:
            row_sum += row_prefix(pos + run) - row_prefix(pos)
            col_sum += col_prefix(pos + run) - col_prefix(pos)
        pos += run
    return row_sum, col_sum


def compute_stats(records: Iterable[dict], area_bins: int = 20,
                  grid: int = 20) -> DatasetStats:
    stats = DatasetStats(area_bins=area_bins, grid=grid)
    for record in records:
        stats.add_record(record)
    return stats


def merge_stats(a: DatasetStats, b: DatasetStats) -> DatasetStats:
    """Associative, commutative merge equal to a single pass over the
    concatenated data."""
    if a.area_bins != b.area_bins or a.grid != b.grid:
        raise BinMismatchError(
            f"bins {a.area_bins}/{a.grid} vs {b.area_bins}/{b.grid}"
        )
    merged = DatasetStats(area_bins=a.area_bins, grid=a.grid)
    merged.count = a.count + b.count
    merged.word_sum = a.word_sum + b.word_sum
    merged.word_hist = dict(a.word_hist)
    for k, v in b.word_hist.items():
        merged.word_hist[k] = merged.word_hist.get(k, 0) + v
    merged.area_hist = [x + y for x, y in zip(a.area_hist, b.area_hist)]
    merged.centroid_grid = [
        [x + y for x, y in zip(ra, rb)]
        for ra, rb in zip(a.centroid_grid, b.centroid_grid)
    ]
    merged.empty_masks = a.empty_masks + b.empty_masks
    return merged
