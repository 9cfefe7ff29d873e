"""Frame-source replay of stream manifests at wall-clock or accelerated speed."""

from __future__ import annotations

import math
import time
from typing import Callable, Iterator

from .core import FrameRef, StreamManifest, us_to_seconds

INFINITE_SPEED = math.inf


def open_stream(
    manifest: StreamManifest,
    speed: float = INFINITE_SPEED,
    sleep: Callable[[float], None] = time.sleep,
    now: Callable[[], float] = time.monotonic,
) -> Iterator[FrameRef]:
    """Yield the manifest's frames in timestamp order.

    At finite ``speed`` the generator paces frames against absolute
    deadlines (start + ts/speed) so sleep overhead does not accumulate;
    at infinite speed it never sleeps. The returned iterator is
    single-consumer.
    """
    if not (speed > 0):
        raise ValueError(f"speed must be > 0, got {speed}")
    manifest.validate()
    frames = manifest.frame_refs()

    def _generate() -> Iterator[FrameRef]:
        if math.isinf(speed):
            yield from frames
            return
        start = now()
        first_ts = frames[0].ts_us if frames else 0
        for ref in frames:
            deadline = start + us_to_seconds(ref.ts_us - first_ts) / speed
            delay = deadline - now()
            if delay > 0:
                sleep(delay)
            yield ref

    return _generate()
