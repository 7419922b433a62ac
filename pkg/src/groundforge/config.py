"""Flat key=value configuration with GF_* environment overrides.

The file format is a TOML-like subset: one `key = value` per line, `#`
comments, quoted strings, ints, floats and booleans. Dotted keys address
per-role endpoints (``endpoint.captioner``) and category quotas
(``quota.stuff``). Unknown keys are startup errors, never silently
ignored.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .gateway.wire import ROLES
from .metrics import CATEGORIES

DEFAULT_QUOTAS = {"stuff": 1000, "part": 500, "multi": 800, "single": 1500}

# key -> (type, default); None default means optional
_SCHEMA: dict[str, tuple[type, object]] = {
    "filter_iou_threshold": (float, 0.5),
    "min_words": (int, 3),
    "max_words": (int, 40),
    "shard_size": (int, 1000),
    "concurrency": (int, 4),
    "checkpoint_path": (str, None),
    "stub_seed": (int, None),
    "stub_shrink": (int, 0),
    "stub_multibox": (int, 1),
    "trimap_band": (int, None),
    "alpha_threshold": (float, 0.5),
    "timeout": (float, 30.0),
    "max_retries": (int, 2),
    "max_in_flight": (int, 4),
    "templates_path": (str, None),
    "stage_mode": (str, "fused"),
    "benchmark_name": (str, "benchmark"),
    "allow_short": (bool, False),
}
for _role in ROLES:
    _SCHEMA[f"endpoint.{_role}"] = (str, None)
for _cat in CATEGORIES:
    _SCHEMA[f"quota.{_cat}"] = (int, DEFAULT_QUOTAS[_cat])

_ENV_OVERRIDES = {f"GF_ENDPOINT_{r.upper()}": f"endpoint.{r}" for r in ROLES}
_ENV_OVERRIDES["GF_STUB_SEED"] = "stub_seed"


def parse_scalar(text: str):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def read_config_file(path: "str | Path") -> dict:
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        values[key.strip()] = parse_scalar(value)
    return values


def _coerce(key: str, value) -> object:
    expected, _default = _SCHEMA[key]
    if expected is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(key, f"expected a boolean, got {value!r}")
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    return str(value)


@dataclass
class PipelineConfig:
    """Every knob the annotate/curate/evaluate commands honor."""

    filter_iou_threshold: float = 0.5
    min_words: int = 3
    max_words: int = 40
    shard_size: int = 1000
    concurrency: int = 4
    checkpoint_path: "str | None" = None
    stub_seed: "int | None" = None
    stub_shrink: int = 0
    stub_multibox: int = 1
    trimap_band: "int | None" = None
    alpha_threshold: float = 0.5
    timeout: float = 30.0
    max_retries: int = 2
    max_in_flight: int = 4
    templates_path: "str | None" = None
    stage_mode: str = "fused"
    benchmark_name: str = "benchmark"
    allow_short: bool = False
    endpoints: dict = field(default_factory=dict)
    quotas: dict = field(default_factory=lambda: dict(DEFAULT_QUOTAS))

    def __post_init__(self):
        if not (0.0 < self.filter_iou_threshold < 1.0):
            raise ConfigError("filter_iou_threshold",
                              f"must be in (0,1), got {self.filter_iou_threshold}")
        if self.shard_size < 1:
            raise ConfigError("shard_size", "must be >= 1")
        if self.concurrency < 1:
            raise ConfigError("concurrency", "must be >= 1")
        if not (0.0 < self.alpha_threshold < 1.0):
            raise ConfigError("alpha_threshold", "must be in (0,1)")
        if self.stage_mode not in ("fused", "global"):
            raise ConfigError("stage_mode",
                              f"must be fused or global, got {self.stage_mode!r}")

    def resolved_endpoints(self) -> dict[str, str]:
        """One URL per role; roles without an explicit endpoint fall back to
        the seeded stub. Raises naming the missing key when neither is
        configured."""
        resolved = {}
        for role in ROLES:
            url = self.endpoints.get(role)
            if url is None:
                if self.stub_seed is None:
                    raise ConfigError(
                        f"endpoint.{role}",
                        "no endpoint configured and no stub_seed fallback",
                    )
                url = (f"stub://?seed={self.stub_seed}&shrink={self.stub_shrink}"
                       f"&multibox={self.stub_multibox}")
            resolved[role] = url
        return resolved

    def canonical_dict(self) -> dict:
        """Fields that affect outputs (excludes scheduling-only knobs), used
        for run digests."""
        return {
            "filter_iou_threshold": self.filter_iou_threshold,
            "min_words": self.min_words,
            "max_words": self.max_words,
            "shard_size": self.shard_size,
            "stub_seed": self.stub_seed,
            "stub_shrink": self.stub_shrink,
            "stub_multibox": self.stub_multibox,
            "trimap_band": self.trimap_band,
            "alpha_threshold": self.alpha_threshold,
            "templates_path": self.templates_path,
            "endpoints": dict(sorted(self.endpoints.items())),
        }


def load_config(path: "str | Path | None" = None,
                overrides: "list[str] | None" = None,
                env: "dict | None" = None) -> PipelineConfig:
    """Merge file < env < explicit key=value overrides, validating every key."""
    env = os.environ if env is None else env
    values: dict = {}
    if path is not None:
        values.update(read_config_file(path))
    for env_name, key in _ENV_OVERRIDES.items():
        if env_name in env:
            values[key] = parse_scalar(env[env_name])
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, _, value = item.partition("=")
        values[key.strip()] = parse_scalar(value)

    unknown = [k for k in values if k not in _SCHEMA]
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration key")

    kwargs: dict = {}
    endpoints: dict = {}
    quotas = dict(DEFAULT_QUOTAS)
    for key, value in values.items():
        coerced = _coerce(key, value)
        if key.startswith("endpoint."):
            endpoints[key.split(".", 1)[1]] = coerced
        elif key.startswith("quota."):
            quotas[key.split(".", 1)[1]] = coerced
        else:
            kwargs[key] = coerced
    return PipelineConfig(endpoints=endpoints, quotas=quotas, **kwargs)
