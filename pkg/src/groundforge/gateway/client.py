"""Clients for the six model roles behind a uniform JSON-over-HTTP protocol.

One endpoint per role; the stub backend plugs in through the same interface
(``stub://`` URLs or an explicit StubBackend), so offline runs and real GPU
servers are interchangeable. Every reply is schema-checked before use.
"""
from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from ..errors import (
    BackendTimeoutError,
    BackendUnavailableError,
    InvalidPromptError,
    MalformedResponseError,
    UnparseableVerdictError,
)
from ..maskcore import BBox, BinaryMask, RleMask, Trimap, rle_decode
from ..metrics import CATEGORIES
from .stub import StubBackend, StubBadRequestError, StubUnavailableError
from .wire import ImageRef, ROLES, decode_alpha, expect_keys

BACKOFF_BASE = 0.5
BACKOFF_FACTOR = 2.0


@dataclass(frozen=True)
class BackendEndpoint:
    role: str
    base_url: str
    timeout: float = 30.0
    max_retries: int = 2
    max_in_flight: int = 4

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class GroundedPhrase:
    phrase: str
    boxes: tuple[BBox, ...]
    confidences: "tuple[float, ...] | None" = None


def normalize_coords(boxes: list[list[float]], width: int, height: int) -> list[list[float]]:
    """Disambiguate pixel vs normalized replies: when every coordinate is
    <= 1.5 and the image's max dimension is > 2, treat the coordinates as
    normalized (0-1) and scale to pixels. (A 1-px box at the origin is
    indistinguishable from a normalized full-image box; the scale wins,
    as everywhere else in the ecosystem.)
    """
    flat = [c for box in boxes for c in box]
    if flat and max(flat) <= 1.5 and max(width, height) > 2:
        return [[x0 * width, y0 * height, x1 * width, y1 * height]
                for x0, y0, x1, y1 in boxes]
    return boxes


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


class _StubTransport:
    def __init__(self, backend: StubBackend):
        self.backend = backend

    def describe(self) -> str:
        return self.backend.describe()

    def post(self, role: str, payload: dict) -> dict:
        try:
            return self.backend.handle(role, payload)
        except StubUnavailableError as exc:
            raise BackendUnavailableError(str(exc)) from exc
        except StubBadRequestError as exc:
            if exc.code == "invalid_prompt":
                raise InvalidPromptError(str(exc)) from exc
            raise MalformedResponseError(str(exc)) from exc


class _HttpTransport:
    def __init__(self, base_url: str, timeout: float, bearer_token: "str | None" = None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = requests.Session()
        if bearer_token:
            self.session.headers["Authorization"] = f"Bearer {bearer_token}"

    def describe(self) -> str:
        return self.base_url

    def post(self, role: str, payload: dict) -> dict:
        url = f"{self.base_url}/v1/{role}"
        try:
            resp = self.session.post(url, json=payload, timeout=self.timeout)
        except requests.Timeout as exc:
            raise BackendTimeoutError(f"{role}: timeout after {self.timeout}s") from exc
        except requests.RequestException as exc:
            raise BackendUnavailableError(f"{role}: {exc}") from exc
        if resp.status_code >= 500:
            raise BackendUnavailableError(f"{role}: HTTP {resp.status_code}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise MalformedResponseError(f"{role}: non-JSON reply") from exc
        if resp.status_code != 200:
            code = (body.get("error") or {}).get("code", "")
            message = (body.get("error") or {}).get("message", f"HTTP {resp.status_code}")
            if code == "invalid_prompt":
                raise InvalidPromptError(f"{role}: {message}")
            raise MalformedResponseError(f"{role}: {message}")
        return body


@dataclass
class _RoleState:
    transport: object
    endpoint: BackendEndpoint
    semaphore: threading.BoundedSemaphore
    calls: int = 0
    attempts: int = 0


class GatewayClient:
    """Thread-safe client bundle for all six roles."""

    def __init__(self, endpoints: dict[str, BackendEndpoint],
                 stub: "StubBackend | None" = None,
                 sleep_fn=time.sleep, jitter: bool = False,
                 bearer_token: "str | None" = None):
        self._sleep = sleep_fn
        self._jitter = jitter
        self._rng = np.random.default_rng()  # jitter only; never under test seeds
        self._lock = threading.Lock()
        self._roles: dict[str, _RoleState] = {}
        shared_stub = stub
        for role, endpoint in endpoints.items():
            url = endpoint.base_url
            if url.startswith("stub"):
                if shared_stub is None:
                    shared_stub = StubBackend.from_url(url)
                transport: object = _StubTransport(shared_stub)
            else:
                transport = _HttpTransport(url, endpoint.timeout, bearer_token)
            self._roles[role] = _RoleState(
                transport=transport,
                endpoint=endpoint,
                semaphore=threading.BoundedSemaphore(endpoint.max_in_flight),
            )

    @classmethod
    def for_stub(cls, stub: StubBackend, max_retries: int = 2, **kwargs) -> "GatewayClient":
        endpoints = {
            role: BackendEndpoint(role=role, base_url="stub://", max_retries=max_retries)
            for role in ROLES
        }
        return cls(endpoints, stub=stub, **kwargs)

    @classmethod
    def for_base_url(cls, base_url: str, **endpoint_kwargs) -> "GatewayClient":
        endpoints = {
            role: BackendEndpoint(role=role, base_url=base_url, **endpoint_kwargs)
            for role in ROLES
        }
        return cls(endpoints)

    def backend_ids(self) -> dict[str, str]:
        return {role: state.transport.describe() for role, state in self._roles.items()}

    def call_stats(self) -> dict[str, dict]:
        with self._lock:
            return {role: {"calls": s.calls, "attempts": s.attempts}
                    for role, s in self._roles.items()}

    def _call(self, role: str, payload: dict) -> dict:
        state = self._roles.get(role)
        if state is None:
            raise BackendUnavailableError(f"no endpoint configured for role {role!r}")
        last_exc: "Exception | None" = None
        with state.semaphore:
            with self._lock:
                state.calls += 1
            for attempt in range(state.endpoint.max_retries + 1):
                with self._lock:
                    state.attempts += 1
                try:
                    return state.transport.post(role, payload)
                except (BackendUnavailableError, BackendTimeoutError) as exc:
                    last_exc = exc
                    if attempt < state.endpoint.max_retries:
                        delay = BACKOFF_BASE * (BACKOFF_FACTOR ** attempt)
                        if self._jitter:
                            delay *= 1.0 + 0.25 * float(self._rng.random())
                        self._sleep(delay)
        raise BackendUnavailableError(
            f"{role}: retries exhausted after {state.endpoint.max_retries + 1} attempts"
        ) from last_exc

    # -- operations -------------------------------------------------------------

    def caption(self, image: ImageRef, prompt: "str | None" = None,
                phrase: "str | None" = None) -> str:
        payload: dict = {"image": image.to_json()}
        if prompt:
            payload["prompt"] = prompt
        if phrase:
            payload["phrase"] = phrase
        body = self._call("captioner", payload)
        expect_keys(body, ("caption",), "captioner reply")
        caption = body["caption"]
        if not isinstance(caption, str) or not caption.strip():
            raise MalformedResponseError("captioner reply: empty caption")
        return caption

    def ground_phrases(self, image: ImageRef, caption: str) -> list[GroundedPhrase]:
        if not caption:
            raise ValueError("caption must be non-empty")
        body = self._call("grounder", {"image": image.to_json(), "caption": caption})
        expect_keys(body, ("phrases",), "grounder reply")
        entries = body["phrases"]
        if not isinstance(entries, list):
            raise MalformedResponseError("grounder reply: phrases is not a list")

        # normalization is decided over the whole reply, not per box
        raw_boxes: list[list[float]] = []
        for entry in entries:
            expect_keys(entry, ("phrase", "boxes"), "grounder phrase")
            for box in entry["boxes"]:
                if not isinstance(box, (list, tuple)) or len(box) != 4:
                    raise MalformedResponseError(f"grounder reply: bad box {box!r}")
                raw_boxes.append([float(v) for v in box])
        scaled = normalize_coords(raw_boxes, image.width, image.height)

        phrases: list[GroundedPhrase] = []
        cursor = 0
        for entry in entries:
            phrase = entry["phrase"]
            if not isinstance(phrase, str) or not phrase.strip():
                raise MalformedResponseError("grounder reply: empty phrase")
            confidences = entry.get("confidences")
            boxes: list[BBox] = []
            kept_conf: list[float] = []
            for i in range(len(entry["boxes"])):
                x0, y0, x1, y1 = scaled[cursor]
                cursor += 1
                xi0, yi0 = _round_half_up(x0), _round_half_up(y0)
                xi1, yi1 = _round_half_up(x1), _round_half_up(y1)
                if xi0 >= xi1 or yi0 >= yi1:
                    continue
                clipped = BBox(max(0, xi0), max(0, yi0), xi1, yi1).clip(image.width, image.height)
                if clipped is None:
                    continue
                boxes.append(clipped)
                if confidences is not None:
                    kept_conf.append(float(confidences[i]))
            if boxes:
                phrases.append(GroundedPhrase(
                    phrase=phrase,
                    boxes=tuple(boxes),
                    confidences=tuple(kept_conf) if confidences is not None else None,
                ))
        return phrases

    def segment_box(self, image: ImageRef, box: BBox) -> BinaryMask:
        if box.clip(image.width, image.height) is None:
            raise InvalidPromptError(f"box {box.to_list()} clips to zero area")
        body = self._call("segmenter", {"image": image.to_json(), "bbox": box.to_list()})
        return self._mask_reply(body, image, "segmenter")

    def refer_segment(self, image: ImageRef, text: str) -> BinaryMask:
        if not text:
            raise ValueError("text must be non-empty")
        body = self._call("referrer", {"image": image.to_json(), "text": text})
        return self._mask_reply(body, image, "referrer")

    def classify_category(self, image: ImageRef, text: str,
                          mask: "RleMask | None" = None) -> tuple[str, bool]:
        if not text:
            raise ValueError("text must be non-empty")
        payload: dict = {"image": image.to_json(), "text": text}
        if mask is not None:
            payload["mask_rle"] = mask.to_json()
        body = self._call("classifier", payload)
        expect_keys(body, ("category", "valid"), "classifier reply")
        raw = body["category"]
        if not isinstance(raw, str):
            raise MalformedResponseError("classifier reply: category is not a string")
        category = raw.strip().lower()
        if category not in CATEGORIES:
            raise UnparseableVerdictError(f"classifier reply {raw!r} matches no category")
        valid = body["valid"]
        if not isinstance(valid, bool):
            raise MalformedResponseError("classifier reply: valid is not a bool")
        return category, valid

    def matte(self, image: ImageRef, trimap: Trimap) -> np.ndarray:
        if trimap.width != image.width or trimap.height != image.height:
            raise ValueError(
                f"trimap {trimap.width}x{trimap.height} does not match "
                f"image {image.width}x{image.height}"
            )
        body = self._call("matter", {"image": image.to_json(),
                                     "trimap_rle3": trimap.to_rle3()})
        expect_keys(body, ("alpha",), "matter reply")
        alpha = decode_alpha(body["alpha"])
        if alpha.shape != (image.height, image.width):
            raise MalformedResponseError(
                f"matter reply: alpha shape {alpha.shape} vs image "
                f"{image.height}x{image.width}"
            )
        if alpha.min() < 0.0 or alpha.max() > 1.0:
            raise MalformedResponseError("matter reply: alpha outside [0,1]")
        return alpha

    def _mask_reply(self, body: dict, image: ImageRef, context: str) -> BinaryMask:
        expect_keys(body, ("mask",), f"{context} reply")
        try:
            rle = RleMask.from_json(body["mask"])
        except (ValueError, TypeError) as exc:
            raise MalformedResponseError(f"{context} reply: bad mask: {exc}") from exc
        if rle.width != image.width or rle.height != image.height:
            raise MalformedResponseError(
                f"{context} reply: mask {rle.width}x{rle.height} vs image "
                f"{image.width}x{image.height}"
            )
        return rle_decode(rle)
