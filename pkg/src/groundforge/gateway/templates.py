"""Prompt templates for the model-facing requests.

Templates are editable config (JSON file), keyed by slot. Each slot has a
fixed set of required placeholders that must appear exactly once in the
template text; rendering with a missing or duplicated placeholder is a
startup error, not a runtime one.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigError

# slot -> (role, required placeholders)
SLOTS: dict[str, tuple[str, frozenset]] = {
    "caption": ("captioner", frozenset()),
    "refer_gen": ("captioner", frozenset({"caption", "referring"})),
    "classify": ("classifier", frozenset({"referring", "category_list"})),
}

_DEFAULT_TEXTS = {
    "caption": (
        "Describe this image completely. Mention every salient object, "
        "region and background element and where it sits in the frame."
    ),
    "refer_gen": (
        "Image context: {caption}\n"
        "Write exactly one natural sentence that uniquely identifies "
        "{referring}, using spatial relationships, distinctive visual "
        "features and contextual cues. The sentence must match no other "
        "region in the image."
    ),
    "classify": (
        "First decide whether the expression \"{referring}\" correctly and "
        "unambiguously describes the highlighted region; answer valid or "
        "invalid. Then classify the expression into exactly one of: "
        "{category_list}."
    ),
}

DEFAULT_VERSION = "v1"


@dataclass(frozen=True)
class PromptTemplate:
    slot: str
    role: str
    text: str
    version: str = DEFAULT_VERSION

    def __post_init__(self):
        required = SLOTS.get(self.slot)
        if required is None:
            raise ConfigError(self.slot, "unknown template slot")
        _, placeholders = required
        for name in placeholders:
            count = self.text.count("{" + name + "}")
            if count != 1:
                raise ConfigError(
                    f"templates.{self.slot}",
                    f"placeholder {{{name}}} must appear exactly once, found {count}",
                )

    def render(self, **values: str) -> str:
        _, placeholders = SLOTS[self.slot]
        missing = placeholders - values.keys()
        if missing:
            raise ConfigError(f"templates.{self.slot}", f"missing values {sorted(missing)}")
        out = self.text
        for name in placeholders:
            out = out.replace("{" + name + "}", str(values[name]))
        return out


def default_templates() -> dict[str, PromptTemplate]:
    return {
        slot: PromptTemplate(slot=slot, role=SLOTS[slot][0], text=_DEFAULT_TEXTS[slot])
        for slot in SLOTS
    }


def load_templates(path: "str | Path") -> dict[str, PromptTemplate]:
    """Load template overrides from a JSON file; unspecified slots keep the
    built-in defaults."""
    templates = default_templates()
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("templates", f"{path}: expected an object of slots")
    for slot, entry in data.items():
        if slot not in SLOTS:
            raise ConfigError(f"templates.{slot}", "unknown template slot")
        templates[slot] = PromptTemplate(
            slot=slot,
            role=SLOTS[slot][0],
            text=str(entry["text"]),
            version=str(entry.get("version", DEFAULT_VERSION)),
        )
    return templates
