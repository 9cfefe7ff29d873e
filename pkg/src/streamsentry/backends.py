"""Pluggable inference backends: captioner, summarizer, and reasoner.

Mock backends are pure functions of (script, inputs) with an injectable
latency model, so the whole pipeline runs deterministically without any
model weights. Remote backends speak a small HTTP/JSON protocol:

    POST /caption      {frame_id, payload}                  -> {text}
    POST /summarize    {prompt, descriptions[], previous}   -> {summary}
    POST /discriminate {instruction, identifier, summary,
                        frames: [{frame_id, ts_us, payload}]}
                       -> {subject, location, cause, score}

Latency draws and content are separable (``draw_latency`` / ``respond_*``)
so the virtual-clock engine can charge service time without sleeping.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Optional, Sequence

import requests

from .core import FrameRef, StreamSentryError

if TYPE_CHECKING:
    from .agents import DiscriminationRequest

CAPTIONER = "captioner"
SUMMARIZER = "summarizer"
REASONER = "reasoner"
BACKEND_KINDS = (CAPTIONER, SUMMARIZER, REASONER)

DEFAULT_TIMEOUT_S = 2.0
DEFAULT_RETRIES = 1


class BackendError(StreamSentryError):
    pass


class BackendTimeout(BackendError):
    pass


class BackendProtocolError(BackendError):
    """Transport-level failure or schema-invalid response."""


@dataclass(frozen=True)
class ReasonerResponse:
    subject: str
    location: str
    cause: str
    score: float


def validate_reasoner_payload(d: dict) -> ReasonerResponse:
    """Parse a raw reasoner response, rejecting schema violations."""
    for key in ("subject", "location", "cause", "score"):
        if key not in d:
            raise BackendProtocolError(f"reasoner response missing field {key!r}")
    try:
        score = float(d["score"])
    except (TypeError, ValueError) as e:
        raise BackendProtocolError(f"reasoner score not numeric: {d['score']!r}") from e
    if not 0.0 <= score <= 1.0:
        raise BackendProtocolError(f"reasoner score {score} outside [0,1]")
    return ReasonerResponse(
        subject=str(d["subject"]),
        location=str(d["location"]),
        cause=str(d["cause"]),
        score=score,
    )


@dataclass(frozen=True)
class LatencyModel:
    """Injected service time: fixed seconds or uniform(lo, hi)."""

    kind: str = "fixed"
    seconds: float = 0.0
    lo: float = 0.0
    hi: float = 0.0

    def __post_init__(self):
        if self.kind not in ("fixed", "uniform"):
            raise ValueError(f"latency kind must be fixed|uniform, got {self.kind!r}")
        if min(self.seconds, self.lo, self.hi) < 0:
            raise ValueError("latency must be >= 0")
        if self.kind == "uniform" and self.hi < self.lo:
            raise ValueError("uniform latency needs lo <= hi")

    def draw(self, rng: random.Random) -> float:
        if self.kind == "fixed":
            return self.seconds
        return rng.uniform(self.lo, self.hi)

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "LatencyModel":
        if not d:
            return cls()
        return cls(
            kind=str(d.get("kind", "fixed")),
            seconds=float(d.get("seconds", 0.0)),
            lo=float(d.get("lo", 0.0)),
            hi=float(d.get("hi", 0.0)),
        )

    def to_dict(self) -> dict:
        if self.kind == "fixed":
            return {"kind": "fixed", "seconds": self.seconds}
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


class _MockBase:
    def __init__(self, latency: LatencyModel = LatencyModel(), seed: int = 0,
                 sleep: Callable[[float], None] = time.sleep):
        self.latency = latency
        self._rng = random.Random(seed)
        self._sleep = sleep

    def draw_latency(self) -> float:
        return self.latency.draw(self._rng)

    def _charge(self) -> None:
        d = self.draw_latency()
        if d > 0:
            self._sleep(d)


class MockCaptioner(_MockBase):
    """Scripted captioner: script[frame_id], else a templated fallback."""

    def __init__(self, script: Optional[dict[int, str]] = None,
                 fallback: str = "frame {frame_id}", **kw):
        super().__init__(**kw)
        self.script = dict(script or {})
        self.fallback = fallback

    def respond_caption(self, frame: FrameRef) -> str:
        text = self.script.get(frame.frame_id)
        if text is None:
            text = self.fallback.format(frame_id=frame.frame_id, ts_us=frame.ts_us)
        if not text:
            raise BackendProtocolError(f"empty caption for frame {frame.frame_id}")
        return text

    def caption(self, frame: FrameRef) -> str:
        self._charge()
        return self.respond_caption(frame)


class MockSummarizer(_MockBase):
    """Deterministic summarizer: prev + "|" + space-joined caption texts."""

    def __init__(self, rule: Optional[Callable[[str, Sequence[str], str], str]] = None, **kw):
        super().__init__(**kw)
        self._rule = rule

    def respond_summary(self, prompt: str, captions: Sequence[str], previous: str) -> str:
        if not prompt:
            raise BackendProtocolError("summarize requires a non-empty prompt")
        if self._rule is not None:
            return self._rule(prompt, captions, previous)
        return previous + "|" + " ".join(captions)

    def summarize(self, prompt: str, captions: Sequence[str], previous: str) -> str:
        self._charge()
        return self.respond_summary(prompt, captions, previous)


DEFAULT_NEGATIVE = {"subject": "none", "location": "none", "cause": "none", "score": 0.1}


class MockReasoner(_MockBase):
    """Scripted discriminator.

    Resolution order: exact script key (summary text, frozen frame-id set),
    then the onset rule (positive once the newest request frame reaches
    ``positive_after_us``), then the default response. Responses go through
    schema validation, so a scripted out-of-range score raises
    BackendProtocolError just like a misbehaving live service.
    """

    def __init__(
        self,
        script: Optional[dict[tuple[str, frozenset[int]], dict]] = None,
        positive_after_us: Optional[int] = None,
        positive: Optional[dict] = None,
        default: Optional[dict] = None,
        **kw,
    ):
        super().__init__(**kw)
        self.script = dict(script or {})
        self.positive_after_us = positive_after_us
        self.positive = dict(
            positive
            or {"subject": "person", "location": "scene", "cause": "suspicious behavior",
                "score": 0.9}
        )
        self.default = dict(default or DEFAULT_NEGATIVE)

    def respond_discriminate(self, request: "DiscriminationRequest") -> ReasonerResponse:
        frame_ids = frozenset(f.frame_id for f in request.frames)
        raw = self.script.get((request.summary, frame_ids))
        if raw is None and self.positive_after_us is not None and request.frames:
            newest = max(f.ts_us for f in request.frames)
            if newest >= self.positive_after_us:
                raw = self.positive
        if raw is None:
            raw = self.default
        return validate_reasoner_payload(raw)

    def discriminate(self, request: "DiscriminationRequest") -> ReasonerResponse:
        self._charge()
        return self.respond_discriminate(request)


class _RemoteBase:
    def __init__(self, endpoint: str, timeout_s: float = DEFAULT_TIMEOUT_S,
                 retries: int = DEFAULT_RETRIES, session: Optional[requests.Session] = None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout_s = timeout_s
        self.retries = retries
        self._session = session or requests.Session()
        self.latency = LatencyModel()

    def draw_latency(self) -> float:
        return 0.0

    def _post(self, path: str, body: dict) -> dict:
        last_timeout: Optional[BackendTimeout] = None
        for _attempt in range(self.retries + 1):
            try:
                resp = self._session.post(
                    f"{self.endpoint}{path}", json=body, timeout=self.timeout_s
                )
            except requests.Timeout as e:
                last_timeout = BackendTimeout(f"{path} timed out after {self.timeout_s}s")
                last_timeout.__cause__ = e
                continue
            except requests.RequestException as e:
                raise BackendProtocolError(f"{path} transport failure: {e}") from e
            if resp.status_code != 200:
                raise BackendProtocolError(f"{path} returned HTTP {resp.status_code}")
            try:
                return resp.json()
            except ValueError as e:
                raise BackendProtocolError(f"{path} returned invalid JSON") from e
        raise last_timeout  # type: ignore[misc]


class RemoteCaptioner(_RemoteBase):
    def caption(self, frame: FrameRef) -> str:
        d = self._post("/caption", {"frame_id": frame.frame_id, "payload": frame.payload})
        text = d.get("text")
        if not text or not isinstance(text, str):
            raise BackendProtocolError("caption response missing non-empty 'text'")
        return text


class RemoteSummarizer(_RemoteBase):
    def summarize(self, prompt: str, captions: Sequence[str], previous: str) -> str:
        d = self._post(
            "/summarize",
            {"prompt": prompt, "descriptions": list(captions), "previous": previous},
        )
        text = d.get("summary")
        if not text or not isinstance(text, str):
            raise BackendProtocolError("summarize response missing non-empty 'summary'")
        return text


class RemoteReasoner(_RemoteBase):
    def discriminate(self, request: "DiscriminationRequest") -> ReasonerResponse:
        d = self._post(
            "/discriminate",
            {
                "instruction": request.instruction,
                "identifier": request.identifier,
                "summary": request.summary,
                "frames": [f.to_dict() for f in request.frames],
            },
        )
        return validate_reasoner_payload(d)


MOCK = "mock"
REMOTE = "remote"


@dataclass(frozen=True)
class BackendSpec:
    """Declarative backend description; see ``build_backend``."""

    kind: str
    mode: str = MOCK
    endpoint: str = ""
    script: dict = field(default_factory=dict)
    latency: LatencyModel = LatencyModel()
    timeout_s: float = DEFAULT_TIMEOUT_S
    retries: int = DEFAULT_RETRIES
    positive_after_s: Optional[float] = None

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"kind must be one of {BACKEND_KINDS}, got {self.kind!r}")
        if self.mode not in (MOCK, REMOTE):
            raise ValueError(f"mode must be mock|remote, got {self.mode!r}")
        if self.mode == REMOTE and not self.endpoint:
            raise ValueError(f"remote {self.kind} needs an endpoint")

    @classmethod
    def from_dict(cls, kind: str, d: dict) -> "BackendSpec":
        return cls(
            kind=kind,
            mode=str(d.get("mode", MOCK)),
            endpoint=str(d.get("endpoint", "")),
            script=dict(d.get("script", {})),
            latency=LatencyModel.from_dict(d.get("latency")),
            timeout_s=float(d.get("timeout_s", DEFAULT_TIMEOUT_S)),
            retries=int(d.get("retries", DEFAULT_RETRIES)),
            positive_after_s=(
                float(d["positive_after_s"]) if d.get("positive_after_s") is not None else None
            ),
        )

    def to_dict(self) -> dict:
        d: dict = {"mode": self.mode, "latency": self.latency.to_dict(),
                   "timeout_s": self.timeout_s, "retries": self.retries}
        if self.endpoint:
            d["endpoint"] = self.endpoint
        if self.script:
            d["script"] = dict(self.script)
        if self.positive_after_s is not None:
            d["positive_after_s"] = self.positive_after_s
        return d


def build_backend(spec: BackendSpec, seed: int = 0,
                  sleep: Callable[[float], None] = time.sleep):
    """Instantiate the backend described by ``spec``."""
    if spec.mode == REMOTE:
        remote_cls = {
            CAPTIONER: RemoteCaptioner,
            SUMMARIZER: RemoteSummarizer,
            REASONER: RemoteReasoner,
        }[spec.kind]
        return remote_cls(spec.endpoint, timeout_s=spec.timeout_s, retries=spec.retries)

    common = {"latency": spec.latency, "seed": seed, "sleep": sleep}
    if spec.kind == CAPTIONER:
        script = {int(k): str(v) for k, v in spec.script.items()}
        return MockCaptioner(script=script, **common)
    if spec.kind == SUMMARIZER:
        return MockSummarizer(**common)
    positive_after_us = (
        int(spec.positive_after_s * 1_000_000) if spec.positive_after_s is not None else None
    )
    return MockReasoner(
        script=_parse_reasoner_script(spec.script),
        positive_after_us=positive_after_us,
        positive=spec.script.get("positive") if isinstance(spec.script, dict) else None,
        default=spec.script.get("default") if isinstance(spec.script, dict) else None,
        **common,
    )


def _parse_reasoner_script(raw: dict) -> dict[tuple[str, frozenset[int]], dict]:
    """Config-file form: {"cases": [{summary, frame_ids, response}, ...]}."""
    script: dict[tuple[str, frozenset[int]], dict] = {}
    for case in raw.get("cases", []):
        key = (str(case["summary"]), frozenset(int(i) for i in case["frame_ids"]))
        script[key] = dict(case["response"])
    return script
