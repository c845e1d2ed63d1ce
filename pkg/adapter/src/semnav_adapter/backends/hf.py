"""Live backend: local vision models plus a chat-completions reasoner.

Heavy imports happen inside __init__ so merely importing this module stays
cheap; construction fails with BackendUnavailable when torch/transformers
or the model weights are missing, or when no reasoner URL is configured.
Inference is serialized behind a lock (the torch modules are not
thread-safe), matching the one-request-at-a-time behavior the engine's
in-flight bound expects.
"""

from __future__ import annotations

import base64
import io
import json
import os
import threading
import urllib.error
import urllib.request

import numpy as np

from semnav_adapter.backends.base import (
    BackendError,
    BackendRefusal,
    BackendUnavailable,
    ReasonerCall,
)
from semnav_adapter.config import AdapterConfig


class HfBackend:
    def __init__(self, config: AdapterConfig) -> None:
        if not config.reasoner_url:
            raise BackendUnavailable("hf backend requires --reasoner-url")
        try:
            import torch
            from transformers import (
                AutoProcessor,
                CLIPModel,
                CLIPSegForImageSegmentation,
            )
        except ImportError as exc:
            raise BackendUnavailable(f"torch/transformers unavailable ({exc})") from exc
        self._torch = torch
        self.config = config
        self._lock = threading.Lock()
        try:
            self._clip = CLIPModel.from_pretrained(config.embedder_id)
            self._clip_proc = AutoProcessor.from_pretrained(config.embedder_id)
            self._seg = CLIPSegForImageSegmentation.from_pretrained(config.segmenter_id)
            self._seg_proc = AutoProcessor.from_pretrained(config.segmenter_id)
        except Exception as exc:
            raise BackendUnavailable(f"model load failed: {exc}") from exc
        self._clip.to(config.device).eval()
        self._seg.to(config.device).eval()

    def identifiers(self) -> dict:
        return {
            "embedder": self.config.embedder_id,
            "segmenter": self.config.segmenter_id,
            "reasoner": self.config.reasoner_id,
            "device": self.config.device,
        }

    def _pil(self, rgb: np.ndarray):
        from PIL import Image

        return Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB")

    def embed(self, rgb: np.ndarray) -> np.ndarray:
        with self._lock, self._torch.no_grad():
            inputs = self._clip_proc(images=self._pil(rgb), return_tensors="pt").to(
                self.config.device
            )
            feats = self._clip.get_image_features(**inputs)
        return feats.squeeze(0).double().cpu().numpy()

    def segment_logits(self, rgb: np.ndarray, prompts: tuple[str, ...]) -> np.ndarray:
        image = self._pil(rgb)
        with self._lock, self._torch.no_grad():
            inputs = self._seg_proc(
                text=list(prompts),
                images=[image] * len(prompts),
                padding=True,
                return_tensors="pt",
            ).to(self.config.device)
            logits = self._seg(**inputs).logits
        if logits.ndim == 2:  # single prompt collapses the batch axis
            logits = logits.unsqueeze(0)
        return logits.double().cpu().numpy()

    def _data_uri(self, rgb: np.ndarray) -> str:
        buf = io.BytesIO()
        self._pil(rgb).save(buf, format="PNG")
        return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")

    def complete(self, call: ReasonerCall) -> str:
        content = [{"type": "text", "text": part} for part in call.text_parts]
        content.append(
            {"type": "image_url", "image_url": {"url": self._data_uri(call.image)}}
        )
        payload = {
            "model": self.config.reasoner_id,
            "temperature": call.temperature,
            "messages": [{"role": "user", "content": content}],
        }
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env)
            if not key:
                raise BackendError(
                    f"api key environment variable {self.config.api_key_env!r} is unset"
                )
            headers["Authorization"] = f"Bearer {key}"
        url = self.config.reasoner_url.rstrip("/") + "/chat/completions"
        req = urllib.request.Request(
            url, data=json.dumps(payload).encode("utf-8"), headers=headers
        )
        try:
            with urllib.request.urlopen(
                req, timeout=self.config.timeout_for(call.kind)
            ) as resp:
                doc = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, json.JSONDecodeError) as exc:
            raise BackendError(f"reasoner request failed: {exc}") from exc
        try:
            choice = doc["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"reasoner reply malformed: {exc}") from exc
        if not text or choice.get("finish_reason") == "content_filter":
            raise BackendRefusal("reasoner returned no usable completion")
        return text
