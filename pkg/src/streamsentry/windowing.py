"""Sampling schedules: overlapping caption windows and the adjacent-frame grid.

Two independent schedules feed the pipeline:

* caption windows of ``window_len`` frames advancing by ``stride`` frames,
  with ``samples_per_window`` frames picked uniformly inside each window;
* the short-term buffer of ``adjacent_count`` frames spaced
  ``adjacent_spacing_us`` apart, ending at "now".
"""

from __future__ import annotations

from bisect import bisect_left
from collections import deque
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

from .core import FrameRef, StreamSentryError, seconds_to_us


class NotReady(StreamSentryError):
    """Signal that a computation lacks history; the caller retries later."""


@dataclass(frozen=True)
class WindowConfig:
    window_len: int = 100
    stride: int = 70
    samples_per_window: int = 5
    adjacent_count: int = 8
    adjacent_spacing_us: int = 100_000

    def __post_init__(self):
        if not 0 < self.stride <= self.window_len:
            raise ValueError(f"stride must satisfy 0 < stride <= window_len, got {self.stride}")
        if not 1 <= self.samples_per_window <= self.window_len:
            raise ValueError(
                f"samples_per_window must be in [1, window_len], got {self.samples_per_window}"
            )
        if self.adjacent_count < 1:
            raise ValueError(f"adjacent_count must be >= 1, got {self.adjacent_count}")
        if self.adjacent_spacing_us <= 0:
            raise ValueError(f"adjacent_spacing_us must be > 0, got {self.adjacent_spacing_us}")

    @property
    def overlap(self) -> int:
        return self.window_len - self.stride

    @classmethod
    def from_dict(cls, d: dict) -> "WindowConfig":
        spacing = d.get("adjacent_spacing_s")
        return cls(
            window_len=int(d.get("window_len", 100)),
            stride=int(d.get("stride", 70)),
            samples_per_window=int(d.get("samples_per_window", 5)),
            adjacent_count=int(d.get("adjacent_count", 8)),
            adjacent_spacing_us=seconds_to_us(spacing) if spacing is not None else 100_000,
        )

    def to_dict(self) -> dict:
        return {
            "window_len": self.window_len,
            "stride": self.stride,
            "samples_per_window": self.samples_per_window,
            "adjacent_count": self.adjacent_count,
            "adjacent_spacing_s": self.adjacent_spacing_us / 1_000_000,
        }


def window_bounds(window_seq: int, cfg: WindowConfig) -> tuple[int, int]:
    """Half-open frame-id interval [start, end) of window ``window_seq``."""
    if window_seq < 0:
        raise ValueError(f"window_seq must be >= 0, got {window_seq}")
    start = window_seq * cfg.stride
    return start, start + cfg.window_len


def uniform_sample(start: int, end: int, k: int) -> list[int]:
    """Pick k ids from [start, end): start + floor(j*(end-start)/k), j = 0..k-1."""
    width = end - start
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if width < k:
        raise ValueError(f"cannot sample {k} frames from a window of {width}")
    return [start + (j * width) // k for j in range(k)]


def adjacent_frames(
    buffer: Sequence[FrameRef], now_ts_us: int, cfg: WindowConfig
) -> list[FrameRef]:
    """Pick the frames nearest the grid now - j*spacing, j = count-1 .. 0.

    ``buffer`` must be ordered by timestamp. Nearest-neighbor selection
    breaks ties toward the earlier frame; duplicates appear when the
    stream is slower than the grid. Raises NotReady until the buffer
    spans (count-1)*spacing before ``now_ts_us``.
    """
    if not buffer:
        raise NotReady("adjacent buffer is empty")
    span_needed = (cfg.adjacent_count - 1) * cfg.adjacent_spacing_us
    if buffer[0].ts_us > now_ts_us - span_needed:
        raise NotReady(
            f"buffer starts at {buffer[0].ts_us} us, needs history back to "
            f"{now_ts_us - span_needed} us"
        )
    timestamps = [f.ts_us for f in buffer]
    picked: list[FrameRef] = []
    for j in range(cfg.adjacent_count - 1, -1, -1):
        target = now_ts_us - j * cfg.adjacent_spacing_us
        i = bisect_left(timestamps, target)
        if i == 0:
            best = 0
        elif i >= len(timestamps):
            best = len(timestamps) - 1
        else:
            # tie (equal distance) resolves to the earlier frame
            if target - timestamps[i - 1] <= timestamps[i] - target:
                best = i - 1
            else:
                best = i
        picked.append(buffer[best])
    return picked


class FrameRing:
    """Bounded arrival-order buffer of recent frames; single writer."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._frames: deque[FrameRef] = deque(maxlen=capacity)

    def push(self, frame: FrameRef) -> None:
        self._frames.append(frame)

    def __len__(self) -> int:
        return len(self._frames)

    @property
    def latest(self) -> Optional[FrameRef]:
        return self._frames[-1] if self._frames else None

    def select_adjacent(self, now_ts_us: int, cfg: WindowConfig) -> list[FrameRef]:
        return adjacent_frames(list(self._frames), now_ts_us, cfg)

    @staticmethod
    def capacity_for(fps: float, cfg: WindowConfig) -> int:
        span_s = cfg.adjacent_count * cfg.adjacent_spacing_us / 1_000_000
        return max(16, int(fps * span_s * 2) + 2)


class WindowTracker:
    """Closes caption windows as frames arrive.

    Window w covers frame ids [w*stride, w*stride + window_len) and closes
    when a frame with id >= end - 1 arrives; partial windows at stream end
    never close. Sampled ids follow ``uniform_sample``; with contiguous ids
    the picked frames match the formula exactly, and with gaps each sample
    falls to the next stored id inside the window.
    """

    def __init__(self, cfg: WindowConfig):
        self.cfg = cfg
        self._next_seq = 0
        self._frames: dict[int, FrameRef] = {}

    def push(self, frame: FrameRef) -> Iterator[tuple[int, list[FrameRef]]]:
        self._frames[frame.frame_id] = frame
        while True:
            start, end = window_bounds(self._next_seq, self.cfg)
            if frame.frame_id < end - 1:
                break
            picked = self._pick(start, end)
            seq = self._next_seq
            self._next_seq += 1
            self._prune()
            if picked:
                yield seq, picked

    def _pick(self, start: int, end: int) -> list[FrameRef]:
        ids = sorted(i for i in self._frames if start <= i < end)
        if not ids:
            return []
        picked = []
        for want in uniform_sample(start, end, self.cfg.samples_per_window):
            pos = bisect_left(ids, want)
            if pos >= len(ids):
                pos = len(ids) - 1
            picked.append(self._frames[ids[pos]])
        return picked

    def _prune(self) -> None:
        keep_from, _ = window_bounds(self._next_seq, self.cfg)
        for i in [i for i in self._frames if i < keep_from]:
            del self._frames[i]
