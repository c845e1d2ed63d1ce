"""Response fixture store for record/replay.

One file per request, named by the request key (sha256 over endpoint and
canonical body). The stored value is the exact byte string the service
emitted, so replaying returns responses byte-identical to the recorded
run. Files are JSON for diffability; the response rides base64 to keep
byte-exactness independent of any JSON re-serialization.
"""

from __future__ import annotations

import base64
import json
import os
from pathlib import Path


class FixtureMiss(KeyError):
    def __init__(self, endpoint: str, key: str) -> None:
        super().__init__(key)
        self.endpoint = endpoint
        self.key = key


class FixtureStore:
    def __init__(self, root: str | os.PathLike) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def __contains__(self, key: str) -> bool:
        return self._path(key).is_file()

    def __len__(self) -> int:
        return sum(1 for _ in self.root.glob("*.json"))

    def save(self, endpoint: str, key: str, request_body: dict, response: bytes) -> None:
        doc = {
            "endpoint": endpoint,
            "key": key,
            "request": request_body,
            "response_b64": base64.b64encode(response).decode("ascii"),
        }
        tmp = self._path(key).with_suffix(".tmp")
        tmp.write_text(
            json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        os.replace(tmp, self._path(key))

    def load(self, endpoint: str, key: str) -> bytes:
        path = self._path(key)
        if not path.is_file():
            raise FixtureMiss(endpoint, key)
        doc = json.loads(path.read_text(encoding="utf-8"))
        return base64.b64decode(doc["response_b64"].encode("ascii"))
