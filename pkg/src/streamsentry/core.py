"""Domain types shared by every stage of the pipeline.

Timestamps are fixed-point integers in microseconds since stream start
(``*_us`` fields), so spacing arithmetic such as the 0.1 s adjacent-frame
grid is exact and serialization is canonical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Optional

US_PER_SECOND = 1_000_000

DECISION_SCHEMA_VERSION = 1


class StreamSentryError(Exception):
    """Base class for all package errors."""


class ManifestError(StreamSentryError):
    """Raised when a stream manifest violates its invariants."""

    def __init__(self, message: str, frame_id: Optional[int] = None):
        super().__init__(message)
        self.frame_id = frame_id


class SchemaError(StreamSentryError):
    """Raised when a serialized record does not match its schema."""


def seconds_to_us(seconds: float | int | str | Fraction) -> int:
    """Convert seconds to integer microseconds, rounding half away from zero."""
    frac = Fraction(seconds) * US_PER_SECOND
    sign = -1 if frac < 0 else 1
    return sign * int(abs(frac) + Fraction(1, 2))


def us_to_seconds(us: int) -> float:
    return us / US_PER_SECOND


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and no whitespace; stable across runs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass(frozen=True)
class FrameRef:
    """A timestamped handle to one image frame. Immutable; safe to share."""

    frame_id: int
    ts_us: int
    payload: str
    stream_id: str = ""

    def to_dict(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "ts_us": self.ts_us,
            "payload": self.payload,
            "stream_id": self.stream_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrameRef":
        return cls(
            frame_id=int(d["frame_id"]),
            ts_us=int(d["ts_us"]),
            payload=str(d["payload"]),
            stream_id=str(d.get("stream_id", "")),
        )


@dataclass(frozen=True)
class Caption:
    """Frame-level semantic description of one sampled frame."""

    text: str
    frame_id: int
    ts_us: int
    window_seq: int
    entities: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "frame_id": self.frame_id,
            "ts_us": self.ts_us,
            "window_seq": self.window_seq,
            "entities": list(self.entities),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Caption":
        return cls(
            text=str(d["text"]),
            frame_id=int(d["frame_id"]),
            ts_us=int(d["ts_us"]),
            window_seq=int(d["window_seq"]),
            entities=tuple(d.get("entities", ())),
        )


FIRST_SUMMARY_PREV_SEQ = -1


@dataclass(frozen=True)
class Summary:
    """One link of the causal summary chain.

    ``prev_seq`` is ``summary_seq - 1`` for every summary after the first,
    which uses the -1 sentinel. ``carried`` marks a degraded link that
    re-emits its predecessor's text after a summarizer failure.
    """

    summary_seq: int
    text: str
    prev_seq: int
    source_window_seq: int
    created_ts_us: int
    carried: bool = False

    def __post_init__(self):
        if self.summary_seq < 0:
            raise ValueError("summary_seq must be >= 0")
        expected_prev = FIRST_SUMMARY_PREV_SEQ if self.summary_seq == 0 else self.summary_seq - 1
        if self.prev_seq != expected_prev:
            raise ValueError(
                f"summary {self.summary_seq} must link to {expected_prev}, got {self.prev_seq}"
            )

    def to_dict(self) -> dict:
        return {
            "summary_seq": self.summary_seq,
            "text": self.text,
            "prev_seq": self.prev_seq,
            "source_window_seq": self.source_window_seq,
            "created_ts_us": self.created_ts_us,
            "carried": self.carried,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Summary":
        return cls(
            summary_seq=int(d["summary_seq"]),
            text=str(d["text"]),
            prev_seq=int(d["prev_seq"]),
            source_window_seq=int(d["source_window_seq"]),
            created_ts_us=int(d["created_ts_us"]),
            carried=bool(d.get("carried", False)),
        )


DEFAULT_DECISION_THRESHOLD = 0.5

DECISION_FIELDS = (
    "v",
    "decision_id",
    "stream_id",
    "summary_seq",
    "frame_ids",
    "subject",
    "location",
    "cause",
    "is_anomalous",
    "score",
    "emitted_ts_us",
)


@dataclass(frozen=True)
class Decision:
    """Structured discrimination result for one reasoning step.

    ``summary_seq`` is -1 when the request ran cold (no summary yet).
    """

    decision_id: int
    summary_seq: int
    frame_ids: tuple[int, ...]
    subject: str
    location: str
    cause: str
    is_anomalous: bool
    score: float
    emitted_ts_us: int
    stream_id: str = ""

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0,1], got {self.score}")

    def to_dict(self) -> dict:
        return {
            "v": DECISION_SCHEMA_VERSION,
            "decision_id": self.decision_id,
            "stream_id": self.stream_id,
            "summary_seq": self.summary_seq,
            "frame_ids": list(self.frame_ids),
            "subject": self.subject,
            "location": self.location,
            "cause": self.cause,
            "is_anomalous": self.is_anomalous,
            "score": self.score,
            "emitted_ts_us": self.emitted_ts_us,
        }

    def to_jsonl(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Decision":
        missing = [k for k in DECISION_FIELDS if k not in d]
        if missing:
            raise SchemaError(f"decision record missing fields: {missing}")
        if int(d["v"]) != DECISION_SCHEMA_VERSION:
            raise SchemaError(f"unsupported decision schema version {d['v']}")
        return cls(
            decision_id=int(d["decision_id"]),
            summary_seq=int(d["summary_seq"]),
            frame_ids=tuple(int(i) for i in d["frame_ids"]),
            subject=str(d["subject"]),
            location=str(d["location"]),
            cause=str(d["cause"]),
            is_anomalous=bool(d["is_anomalous"]),
            score=float(d["score"]),
            emitted_ts_us=int(d["emitted_ts_us"]),
            stream_id=str(d["stream_id"]),
        )

    @classmethod
    def from_jsonl(cls, line: str) -> "Decision":
        try:
            d = json.loads(line)
        except json.JSONDecodeError as e:
            raise SchemaError(f"invalid decision JSON: {e}") from e
        return cls.from_dict(d)


@dataclass(frozen=True)
class Marker:
    """Ground-truth marker on a stream (e.g. anomaly_onset, crime_onset)."""

    ts_us: int
    label: str


ANOMALY_ONSET = "anomaly_onset"
CRIME_ONSET = "crime_onset"


@dataclass
class StreamManifest:
    """Ordered frame listing plus optional ground-truth markers.

    ``frames`` entries are (frame_id, ts_us, payload locator) tuples with
    strictly increasing frame_id and non-decreasing ts.
    """

    stream_id: str
    fps: float = 30.0
    frames: list[tuple[int, int, str]] = field(default_factory=list)
    markers: list[Marker] = field(default_factory=list)

    def validate(self) -> None:
        if self.fps <= 0:
            raise ManifestError(f"fps must be > 0, got {self.fps}")
        seen: set[int] = set()
        prev_id: Optional[int] = None
        prev_ts: Optional[int] = None
        for frame_id, ts_us, _payload in self.frames:
            if frame_id in seen:
                raise ManifestError(f"duplicate frame_id {frame_id}", frame_id=frame_id)
            seen.add(frame_id)
            if prev_id is not None and frame_id <= prev_id:
                raise ManifestError(
                    f"frame_id {frame_id} not increasing after {prev_id}", frame_id=frame_id
                )
            if prev_ts is not None and ts_us < prev_ts:
                raise ManifestError(
                    f"ts {ts_us} decreases after {prev_ts} at frame {frame_id}", frame_id=frame_id
                )
            prev_id, prev_ts = frame_id, ts_us

    def frame_refs(self) -> list[FrameRef]:
        return [
            FrameRef(frame_id=f, ts_us=t, payload=p, stream_id=self.stream_id)
            for f, t, p in self.frames
        ]

    def marker_ts(self, label: str) -> Optional[int]:
        for m in self.markers:
            if m.label == label:
                return m.ts_us
        return None

    def to_dict(self) -> dict:
        return {
            "stream_id": self.stream_id,
            "fps": self.fps,
            "frames": [
                {"frame_id": f, "ts_us": t, "payload": p} for f, t, p in self.frames
            ],
            "markers": [{"ts_us": m.ts_us, "label": m.label} for m in self.markers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StreamManifest":
        try:
            frames = [
                (int(f["frame_id"]), int(f["ts_us"]), str(f["payload"]))
                for f in d["frames"]
            ]
            markers = [
                Marker(ts_us=int(m["ts_us"]), label=str(m["label"]))
                for m in d.get("markers", [])
            ]
            return cls(
                stream_id=str(d["stream_id"]),
                fps=float(d.get("fps", 30.0)),
                frames=frames,
                markers=markers,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"malformed manifest document: {e}") from e

    @classmethod
    def load(cls, path) -> "StreamManifest":
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
        manifest = cls.from_dict(d)
        manifest.validate()
        return manifest

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def synthetic_manifest(
    stream_id: str,
    n_frames: int,
    fps: float = 30.0,
    markers: Iterable[tuple[float, str]] = (),
    payload_template: str = "frames/{frame_id:06d}.jpg",
) -> StreamManifest:
    """Build a contiguous fixture manifest; frame i sits at round(i/fps) us."""
    frames = [
        (i, seconds_to_us(Fraction(i) / Fraction(fps)), payload_template.format(frame_id=i))
        for i in range(n_frames)
    ]
    marks = [Marker(ts_us=seconds_to_us(ts), label=label) for ts, label in markers]
    return StreamManifest(stream_id=stream_id, fps=fps, frames=frames, markers=marks)
