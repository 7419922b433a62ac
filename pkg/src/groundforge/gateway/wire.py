"""Wire-level payload helpers shared by clients, the stub backend, and the
stub server: image references, alpha-grid encoding, and response schema
checks. Every backend reply is validated here before use; violations
surface as MalformedResponseError, never as silent coercion.
"""
from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np

from ..errors import MalformedResponseError

ROLES = ("captioner", "grounder", "segmenter", "referrer", "classifier", "matter")


@dataclass(frozen=True)
class ImageRef:
    """Image identity plus dimensions; pixels travel by URI (or base64)."""

    image_id: str
    uri: str
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be >= 1, got {self.width}x{self.height}")

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "uri": self.uri,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ImageRef":
        return cls(
            image_id=str(obj["image_id"]),
            uri=str(obj.get("uri", "")),
            width=int(obj["width"]),
            height=int(obj["height"]),
        )


def encode_alpha(alpha: np.ndarray) -> dict:
    """Alpha grid as base64 float32, column-major (matches the mask RLE
    traversal order)."""
    alpha = np.asarray(alpha, dtype=np.float32)
    if alpha.ndim != 2:
        raise ValueError(f"expected 2-d alpha grid, got shape {alpha.shape}")
    payload = alpha.flatten(order="F").tobytes()
    return {
        "size": [alpha.shape[0], alpha.shape[1]],
        "dtype": "f4",
        "order": "F",
        "data_b64": base64.b64encode(payload).decode("ascii"),
    }


def decode_alpha(obj: dict) -> np.ndarray:
    try:
        h, w = (int(v) for v in obj["size"])
        if obj["dtype"] != "f4" or obj["order"] != "F":
            raise MalformedResponseError(f"unsupported alpha encoding: {obj['dtype']}/{obj['order']}")
        raw = base64.b64decode(obj["data_b64"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedResponseError(f"bad alpha payload: {exc}") from exc
    flat = np.frombuffer(raw, dtype=np.float32)
    if flat.size != w * h:
        raise MalformedResponseError(f"alpha payload holds {flat.size} values, expected {w * h}")
    return flat.reshape((h, w), order="F").astype(np.float64)


def expect_keys(obj: dict, keys: tuple, context: str) -> None:
    if not isinstance(obj, dict):
        raise MalformedResponseError(f"{context}: expected an object, got {type(obj).__name__}")
    missing = [k for k in keys if k not in obj]
    if missing:
        raise MalformedResponseError(f"{context}: missing keys {missing}")
