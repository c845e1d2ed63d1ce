"""Wire-level codecs shared by every endpoint.

Rasters travel as base64 binary P6; embeddings and probability stacks as
base64 little-endian float64. Canonical JSON (sorted keys, compact
separators, UTF-8) is the byte form every handler emits and every fixture
stores, so a recorded response and its replay are the same bytes.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json

import numpy as np

SCHEMA_VERSION = 1
EMBEDDING_DIM = 768

# appended to every segmentation request, in this order, skipping names the
# caller already sent
BACKGROUND_PROMPTS = ("background", "sky", "nothing")


class DecodeError(ValueError):
    """Request payload bytes that cannot be decoded into a raster."""


def canonical_json_bytes(obj) -> bytes:
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def request_key(endpoint: str, body: dict) -> str:
    """Fixture/cache key: digest of the endpoint plus the canonical body."""
    h = hashlib.sha256()
    h.update(endpoint.encode("ascii"))
    h.update(b"\n")
    h.update(canonical_json_bytes(body))
    return h.hexdigest()


def decode_image_b64(text: str, max_bytes: int) -> np.ndarray:
    """Base64 P6 string to (H, W, 3) uint8, enforcing the payload cap."""
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError, ValueError) as exc:
        raise DecodeError(f"invalid base64 image payload ({exc})") from exc
    if len(raw) > max_bytes:
        raise PayloadTooLarge(len(raw), max_bytes)
    return ppm_to_rgb(raw)


class PayloadTooLarge(ValueError):
    def __init__(self, size: int, cap: int) -> None:
        super().__init__(f"image payload {size} bytes exceeds cap {cap}")
        self.size = size
        self.cap = cap


def ppm_to_rgb(data: bytes) -> np.ndarray:
    """Binary P6 raster to (H, W, 3) uint8."""
    if not data.startswith(b"P6"):
        raise DecodeError("raster is not binary P6")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise DecodeError(f"bad P6 header token {token!r}")
        fields.append(int(token))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise DecodeError(f"unsupported maxval {maxval}")
    if w < 1 or h < 1:
        raise DecodeError(f"degenerate raster {w}x{h}")
    body = data[pos : pos + w * h * 3]
    if len(body) != w * h * 3:
        raise DecodeError(f"raster body truncated: {len(body)} of {w * h * 3} bytes")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def rgb_to_ppm(rgb: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(np.asarray(rgb, dtype=np.uint8))
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"rgb shape {arr.shape}, expected (H, W, 3)")
    h, w = arr.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def floats_to_b64(values: np.ndarray) -> str:
    return base64.b64encode(
        np.ascontiguousarray(values, dtype="<f8").tobytes()
    ).decode("ascii")


def floats_from_b64(text: str) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"))
    return np.frombuffer(raw, dtype="<f8").copy()


def extend_with_backgrounds(labels: tuple[str, ...]) -> tuple[str, ...]:
    present = set(labels)
    return labels + tuple(b for b in BACKGROUND_PROMPTS if b not in present)
