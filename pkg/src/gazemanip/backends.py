"""Reasoning-backend transports: remote JSON-over-HTTP, recording, replay.

The core speaks one vendor-neutral wire format: POST {model, temperature,
text, images, video} and read {"text": ...} back. Vendor envelopes belong in
adapters outside this module. The deterministic oracle never goes through a
transport; it lives with the prompt logic.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field

import httpx

from .errors import BackendFailureError, UnsupportedStyleError

JSON_ONLY_SUFFIX = "\n\nRespond only in JSON."


@dataclass(frozen=True)
class BackendConfig:
    kind: str                       # "remote" or "oracle"
    endpoint: str = ""
    model: str = ""
    api_key_env: str = ""
    timeout_s: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    video_capable: bool = True

    def __post_init__(self):
        if self.kind not in ("remote", "oracle"):
            raise ValueError(f"backend kind must be remote or oracle, got {self.kind!r}")
        if self.kind == "remote" and (not self.endpoint or not self.api_key_env):
            raise ValueError("remote backend requires endpoint and api_key_env")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "endpoint": self.endpoint, "model": self.model,
                "api_key_env": self.api_key_env, "timeout_s": self.timeout_s,
                "max_retries": self.max_retries, "temperature": self.temperature,
                "video_capable": self.video_capable}

    @classmethod
    def from_dict(cls, d: dict) -> "BackendConfig":
        return cls(**d)


@dataclass(frozen=True)
class BackendRequest:
    """One completion request; images and video frames are PNG bytes."""

    text: str
    images: tuple = ()
    video_frames: tuple = ()

    def wire(self, cfg: BackendConfig) -> dict:
        import base64

        doc = {"model": cfg.model, "temperature": cfg.temperature, "text": self.text}
        if self.images:
            doc["images"] = [base64.b64encode(b).decode("ascii") for b in self.images]
        if self.video_frames:
            doc["video"] = [base64.b64encode(b).decode("ascii") for b in self.video_frames]
        return doc

    def digest(self) -> str:
        """Content hash keying record/replay; independent of model/temperature."""
        h = hashlib.sha256()
        h.update(self.text.encode("utf-8"))
        for blob in self.images:
            h.update(b"\x00img")
            h.update(blob)
        for blob in self.video_frames:
            h.update(b"\x00vid")
            h.update(blob)
        return h.hexdigest()


class RemoteBackend:
    """Thin thread-safe HTTP client for the vendor-neutral completion wire."""

    def __init__(self, cfg: BackendConfig, client: httpx.Client | None = None):
        if cfg.kind != "remote":
            raise ValueError("RemoteBackend requires a remote BackendConfig")
        self.cfg = cfg
        self._client = client or httpx.Client(timeout=cfg.timeout_s)
        self._lock = threading.Lock()

    def complete(self, req: BackendRequest) -> str:
        if req.video_frames and not self.cfg.video_capable:
            raise UnsupportedStyleError(
                f"backend {self.cfg.model or self.cfg.endpoint} does not accept video prompts")
        key = os.environ.get(self.cfg.api_key_env, "")
        if not key:
            raise BackendFailureError(
                f"API key environment variable {self.cfg.api_key_env!r} is not set")
        headers = {"Authorization": f"Bearer {key}"}
        last_exc = None
        for _ in range(self.cfg.max_retries):
            try:
                with self._lock:
                    resp = self._client.post(self.cfg.endpoint, json=req.wire(self.cfg),
                                             headers=headers)
                resp.raise_for_status()
                body = resp.json()
                if "text" not in body:
                    raise BackendFailureError(f"reply lacks 'text' field: {body!r}")
                return str(body["text"])
            except (httpx.HTTPError, ValueError) as exc:
                last_exc = exc
        raise BackendFailureError(f"remote backend failed after "
                                  f"{self.cfg.max_retries} attempts: {last_exc}")

    def close(self):
        self._client.close()


@dataclass
class RecordingBackend:
    """Tees every request/reply through to a JSONL transcript."""

    inner: object
    path: str
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def complete(self, req: BackendRequest) -> str:
        reply = self.inner.complete(req)
        cfg = getattr(self.inner, "cfg", None)
        record = {
            "sha256": req.digest(),
            "request": req.wire(cfg) if cfg else {"text": req.text},
            "reply": reply,
        }
        with self._lock:
            with open(self.path, "a") as f:
                f.write(json.dumps(record) + "\n")
        return reply

    def close(self):
        close = getattr(self.inner, "close", None)
        if close:
            close()


class ReplayBackend:
    """Replays a recorded transcript, keyed by request hash, bit-exact.

    Repeated identical requests consume recorded replies in order.
    """

    def __init__(self, path: str):
        self._queues: dict = {}
        self._lock = threading.Lock()
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                self._queues.setdefault(rec["sha256"], []).append(rec["reply"])

    def complete(self, req: BackendRequest) -> str:
        with self._lock:
            queue = self._queues.get(req.digest())
            if not queue:
                raise BackendFailureError(
                    f"transcript has no reply for request {req.digest()[:12]}...")
            return queue.pop(0)

    def close(self):
        pass


def extract_json_block(reply: str) -> dict:
    """First balanced {...} block, then fenced-block fallback.

    Tolerates chat-style wrappers while staying deterministic. Raises
    ValueError when no parseable object is found.
    """
    start = reply.find("{")
    while start != -1:
        depth = 0
        in_str = False
        escape = False
        for i in range(start, len(reply)):
            ch = reply[i]
            if in_str:
                if escape:
                    escape = False
                elif ch == "\\":
                    escape = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        return json.loads(reply[start:i + 1])
                    except json.JSONDecodeError:
                        break
        start = reply.find("{", start + 1)
    # fenced fallback: ```json ... ``` or bare fences
    for fence in ("```json", "```"):
        lo = reply.find(fence)
        if lo != -1:
            lo += len(fence)
            hi = reply.find("```", lo)
            if hi != -1:
                try:
                    return json.loads(reply[lo:hi].strip())
                except json.JSONDecodeError:
                    continue
    raise ValueError("no JSON object found in reply")


def complete_json(backend, req: BackendRequest, validate=None, max_retries: int = 3) -> dict:
    """Query until the reply parses (and validates); collect raw replies.

    After the first failure the prompt gains a "respond only in JSON" suffix.
    Exhausted retries raise BackendFailureError carrying every raw reply.
    """
    replies = []
    current = req
    for attempt in range(max_retries):
        reply = backend.complete(current)
        replies.append(reply)
        try:
            doc = extract_json_block(reply)
            if validate is not None:
                validate(doc)
            return doc
        except (ValueError, KeyError, TypeError):
            if attempt == 0 and not current.text.endswith(JSON_ONLY_SUFFIX):
                current = BackendRequest(current.text + JSON_ONLY_SUFFIX,
                                         current.images, current.video_frames)
    raise BackendFailureError(
        f"no schema-valid JSON after {max_retries} attempts", replies=replies)
