"""Deterministic stub backend for all six model roles.

Every piece of synthetic content derives from a stable 64-bit hash of
(seed, image_id, ...), so identical requests yield byte-identical replies
across processes and runs.

Contract (also the reference for tests):

* Each image holds k in 1..4 objects, k = 1 + hash64(seed, image_id,
  "captioner") % 4. Object i uses token ``object_a``..``object_d`` and
  occupies a fixed rectangular box inside quadrant i (quadrant insets by a
  quarter of the quadrant side). Its mask is exactly the box interior.
* captioner: "scene {image_id}: {token} {position}, ..." — one clause per
  object. With a "phrase" field in the request it instead returns the
  referring sentence for that object: "the {token} on the {position} side
  of the scene, next to the {noun}" where the noun is hash-chosen from a
  16-word table spanning the four categories.
* grounder: one phrase per token found in the caption, one box each; with
  ``multibox`` > 1 the first phrase additionally receives the unused
  quadrant boxes (up to the configured count).
* referrer: returns the object's box mask when (and only when) its token
  appears in the query text, else an empty mask. With ``shrink`` = e the
  trailing e foreground pixels in column-major order are removed first,
  so IoU against the original mask is exactly (area-e)/area.
* classifier: category from the first table noun appearing in the text
  (word-boundary match, default "single"); valid unless the text contains
  "ambiguous".
* matter: alpha = 1.0 on trimap foreground, 0.5 on unknown, 0.0 on
  background.

Special image-id markers (still pure functions of the payload):
ids containing "noent" caption to a tokenless sentence; ids containing
"broken" fail every role with a server error.
"""
from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass, field
from urllib.parse import parse_qs, urlparse

import numpy as np

from ..maskcore import BBox, BinaryMask, RleMask, Trimap, rle_decode, rle_encode
from .wire import ImageRef, ROLES, encode_alpha

OBJECT_TOKENS = ("object_a", "object_b", "object_c", "object_d")
POSITIONS = ("left", "right", "lower-left", "lower-right")

# noun -> category; 4 nouns per category, order fixed for hash indexing
NOUN_TABLE = {
    "sky": "stuff", "sea": "stuff", "grass": "stuff", "sand": "stuff",
    "beard": "part", "camera": "part", "wheel": "part", "handle": "part",
    "flock": "multi", "herd": "multi", "pair": "multi", "crowd": "multi",
    "cat": "single", "parrot": "single", "bench": "single", "kite": "single",
}
NOUNS = tuple(NOUN_TABLE)

_TOKEN_RE = re.compile(r"object_[a-d]")


class StubUnavailableError(Exception):
    """Simulated transient backend failure (maps to HTTP 503)."""


class StubBadRequestError(Exception):
    """Request the stub cannot serve (maps to HTTP 400)."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def stable_hash64(*parts) -> int:
    data = ":".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "big")


def shave_mask(mask: BinaryMask, pixels: int) -> BinaryMask:
    """Remove the trailing `pixels` foreground pixels in column-major order."""
    if pixels <= 0:
        return mask
    flat = mask.bits.flatten(order="F").copy()
    fg = np.flatnonzero(flat)
    if fg.size:
        flat[fg[max(0, fg.size - pixels):]] = False
    return BinaryMask(mask.width, mask.height, flat.reshape((mask.height, mask.width), order="F"))


@dataclass
class StubBackend:
    """In-process implementation of the full wire protocol."""

    seed: int = 0
    shrink: int = 0
    multibox: int = 1
    fail_first: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _failures_left: dict = field(default=None, repr=False)

    def __post_init__(self):
        self._failures_left = dict(self.fail_first)

    @classmethod
    def from_url(cls, url: str) -> "StubBackend":
        """Parse options from a stub:// endpoint URL, e.g. stub://?seed=7&shrink=51."""
        query = parse_qs(urlparse(url).query)
        def get_int(name, default):
            return int(query[name][0]) if name in query else default
        return cls(seed=get_int("seed", 0), shrink=get_int("shrink", 0),
                   multibox=get_int("multibox", 1))

    def describe(self) -> str:
        extra = ""
        if self.shrink:
            extra += f",shrink={self.shrink}"
        if self.multibox != 1:
            extra += f",multibox={self.multibox}"
        return f"stub:seed={self.seed}{extra}"

    # -- derived content ------------------------------------------------------

    def object_count(self, image_id: str) -> int:
        return 1 + stable_hash64(self.seed, image_id, "captioner") % 4

    def slot_box(self, image: ImageRef, slot: int) -> BBox:
        if image.width < 2 or image.height < 2:
            return BBox(0, 0, image.width, image.height)
        qw, qh = image.width // 2, image.height // 2
        col, row = slot % 2, slot // 2
        mx, my = qw // 4, qh // 4
        return BBox(col * qw + mx, row * qh + my,
                    col * qw + qw - mx, row * qh + qh - my)

    def slot_mask(self, image: ImageRef, slot: int) -> BinaryMask:
        return self.slot_box(image, slot).to_mask(image.width, image.height)

    def noun_for(self, image_id: str, token: str) -> str:
        return NOUNS[stable_hash64(self.seed, image_id, token, "noun") % len(NOUNS)]

    def caption_text(self, image: ImageRef) -> str:
        if "noent" in image.image_id:
            return f"scene {image.image_id}: nothing notable"
        k = self.object_count(image.image_id)
        if image.width < 2 or image.height < 2:
            k = 1
        clauses = [f"{OBJECT_TOKENS[i]} {POSITIONS[i]}" for i in range(k)]
        return f"scene {image.image_id}: " + ", ".join(clauses)

    def referring_text(self, image: ImageRef, token: str) -> str:
        slot = OBJECT_TOKENS.index(token)
        noun = self.noun_for(image.image_id, token)
        return (f"the {token} on the {POSITIONS[slot]} side of the scene, "
                f"next to the {noun}")

    # -- protocol --------------------------------------------------------------

    def handle(self, role: str, payload: dict) -> dict:
        """Single entry point used by both the in-process transport and the
        HTTP server, so the two paths are bit-identical."""
        if role not in ROLES:
            raise StubBadRequestError("unknown_role", f"no such role: {role}")
        with self._lock:
            left = self._failures_left.get(role, 0)
            if left > 0:
                self._failures_left[role] = left - 1
                raise StubUnavailableError(f"{role}: simulated failure ({left} left)")
        try:
            image = ImageRef.from_json(payload["image"])
        except (KeyError, TypeError, ValueError) as exc:
            raise StubBadRequestError("bad_image", f"bad image field: {exc}") from exc
        if "broken" in image.image_id:
            raise StubUnavailableError(f"{role}: image {image.image_id} marked broken")
        handler = getattr(self, f"_handle_{role}")
        return handler(image, payload)

    def _handle_captioner(self, image: ImageRef, payload: dict) -> dict:
        phrase = payload.get("phrase")
        if phrase:
            match = _TOKEN_RE.search(phrase)
            if match is None:
                # unknown phrase: echo a generic but deterministic sentence
                return {"caption": f"the {phrase} in scene {image.image_id}"}
            return {"caption": self.referring_text(image, match.group(0))}
        return {"caption": self.caption_text(image)}

    def _handle_grounder(self, image: ImageRef, payload: dict) -> dict:
        caption = payload.get("caption", "")
        if not caption:
            raise StubBadRequestError("empty_caption", "caption is required")
        k = self.object_count(image.image_id)
        seen: list[str] = []
        for match in _TOKEN_RE.finditer(caption):
            token = match.group(0)
            if token not in seen and OBJECT_TOKENS.index(token) < k:
                seen.append(token)
        phrases = []
        for order, token in enumerate(seen):
            slot = OBJECT_TOKENS.index(token)
            slots = [slot]
            if order == 0 and self.multibox > 1:
                free = [s for s in range(4) if s >= k]
                slots.extend(free[: self.multibox - 1])
            boxes = [self.slot_box(image, s).to_list() for s in slots]
            confidences = [
                0.8 + (stable_hash64(self.seed, image.image_id, "conf", token, s) % 200) / 1000
                for s in slots
            ]
            phrases.append({"phrase": token, "boxes": boxes, "confidences": confidences})
        return {"phrases": phrases}

    def _handle_segmenter(self, image: ImageRef, payload: dict) -> dict:
        try:
            box = BBox.from_list(payload["bbox"])
        except (KeyError, TypeError, ValueError) as exc:
            raise StubBadRequestError("invalid_prompt", f"bad bbox: {exc}") from exc
        clipped = box.clip(image.width, image.height)
        if clipped is None:
            raise StubBadRequestError("invalid_prompt", "box clips to zero area")
        mask = clipped.to_mask(image.width, image.height)
        return {"mask": rle_encode(mask).to_json()}

    def _handle_referrer(self, image: ImageRef, payload: dict) -> dict:
        text = payload.get("text", "")
        if not text:
            raise StubBadRequestError("empty_text", "text is required")
        k = self.object_count(image.image_id)
        mask = BinaryMask.zeros(image.width, image.height)
        for slot in range(k):
            if OBJECT_TOKENS[slot] in text:
                mask = shave_mask(self.slot_mask(image, slot), self.shrink)
                break
        return {"mask": rle_encode(mask).to_json()}

    def _handle_classifier(self, image: ImageRef, payload: dict) -> dict:
        text = payload.get("text", "")
        if not text:
            raise StubBadRequestError("empty_text", "text is required")
        if "mask_rle" in payload:
            rle_decode(RleMask.from_json(payload["mask_rle"]))  # validate only
        category = "single"
        for noun in NOUNS:
            if re.search(rf"\b{noun}\b", text):
                category = NOUN_TABLE[noun]
                break
        return {"category": category, "valid": "ambiguous" not in text}

    def _handle_matter(self, image: ImageRef, payload: dict) -> dict:
        try:
            trimap = Trimap.from_rle3(payload["trimap_rle3"])
        except (KeyError, TypeError, ValueError) as exc:
            raise StubBadRequestError("bad_trimap", f"bad trimap: {exc}") from exc
        if trimap.width != image.width or trimap.height != image.height:
            raise StubBadRequestError(
                "bad_trimap",
                f"trimap {trimap.width}x{trimap.height} vs image {image.width}x{image.height}",
            )
        alpha = np.zeros((trimap.height, trimap.width), np.float32)
        alpha[trimap.labels == 2] = 1.0
        alpha[trimap.labels == 1] = 0.5
        return {"alpha": encode_alpha(alpha)}
